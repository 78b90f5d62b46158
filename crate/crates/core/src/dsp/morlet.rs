//! Band power from complex Morlet wavelets.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct BandPowerSpec {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub wavelet_cycles: f64,
    pub freq_step_hz: f64,
}

impl Default for BandPowerSpec {
    /// The mu band, 9–11 Hz.
    fn default() -> Self {
        BandPowerSpec {
            lo_hz: 9.0,
            hi_hz: 11.0,
            wavelet_cycles: 7.0,
            freq_step_hz: 0.5,
        }
    }
}

impl BandPowerSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(0.0 < self.lo_hz && self.lo_hz < self.hi_hz && self.hi_hz < fs / 2.0) {
            return Err(Error::domain(format!(
                "band must satisfy 0 < lo < hi < fs/2, got {}–{} Hz",
                self.lo_hz, self.hi_hz
            )));
        }
        if !(self.wavelet_cycles > 0.0 && self.freq_step_hz > 0.0) {
            return Err(Error::domain(
                "wavelet cycles and frequency step must be positive",
            ));
        }
        Ok(())
    }

    /// `lo, lo + step, …` up to and including `hi`.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = ((self.hi_hz - self.lo_hz) / self.freq_step_hz + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| self.lo_hz + k as f64 * self.freq_step_hz)
            .collect()
    }

    /// Shortest window the band-power estimate accepts, in seconds.
    pub fn min_window(&self) -> f64 {
        self.wavelet_cycles / self.lo_hz
    }
}

/// Taps of a complex Morlet wavelet centered on index `half_width`, scaled so a
/// unit-amplitude sinusoid at `freq` produces |coefficient|² = 0.5.
pub fn morlet_taps(freq: f64, fs: f64, cycles: f64) -> Vec<Complex64> {
    let sigma = cycles / (2.0 * PI * freq);
    let half = (5.0 * sigma * fs).ceil() as i64;
    let envelope: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 / fs;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let scale = SQRT_2 / envelope.iter().sum::<f64>();
    (-half..=half)
        .zip(envelope)
        .map(|(k, g)| Complex64::from_polar(scale * g, 2.0 * PI * freq * k as f64 / fs))
        .collect()
}

/// FFT-based wavelet filter bank for signals of one fixed length.
pub struct MorletBank {
    n: usize,
    fft_len: usize,
    spectra: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl MorletBank {
    pub fn new(fs: f64, spec: &BandPowerSpec, n: usize) -> Result<Self> {
        spec.validate(fs)?;
        let taps: Vec<Vec<Complex64>> = spec
            .frequencies()
            .iter()
            .map(|&f| morlet_taps(f, fs, spec.wavelet_cycles))
            .collect();
        let widest = taps.iter().map(Vec::len).max().unwrap_or(1);
        let fft_len = (n + widest).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let spectra = taps
            .into_iter()
            .map(|t| {
                // Tap k (relative to the center) goes to index k mod fft_len.
                let half = t.len() / 2;
                let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
                for (i, v) in t.into_iter().enumerate() {
                    let k = i as i64 - half as i64;
                    buf[k.rem_euclid(fft_len as i64) as usize] = v;
                }
                forward.process(&mut buf);
                buf
            })
            .collect();
        Ok(MorletBank {
            n,
            fft_len,
            spectra,
            forward,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Per-sample |coefficient|², averaged over the bank's frequencies.
    pub fn power_envelope(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::shape(format!(
                "bank built for {} samples, got {}",
                self.n,
                x.len()
            )));
        }
        let mut spectrum: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        spectrum.resize(self.fft_len, Complex64::new(0.0, 0.0));
        self.forward.process(&mut spectrum);

        let norm = 1.0 / self.fft_len as f64;
        let mut acc = vec![0.0; self.n];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for w in &self.spectra {
            for ((b, s), h) in buf.iter_mut().zip(&spectrum).zip(w) {
                *b = s * h;
            }
            self.inverse.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += (c * norm).norm_sqr();
            }
        }
        let k = self.spectra.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }
}

/// Sample range `[round(t0·fs), round(t1·fs))` of a window, validated against the
/// signal length and the band's minimum window.
pub fn window_range(
    n: usize,
    fs: f64,
    spec: &BandPowerSpec,
    window: (f64, f64),
) -> Result<(usize, usize)> {
    let (t0, t1) = window;
    let duration = n as f64 / fs;
    if !(t0 >= 0.0 && t0 < t1 && t1 <= duration + 1e-9) {
        return Err(Error::domain(format!(
            "window ({t0}, {t1}) s outside the {duration} s signal"
        )));
    }
    if t1 - t0 < spec.min_window() - 1e-9 {
        return Err(Error::domain(format!(
            "window of {} s shorter than {} cycles at {} Hz",
            t1 - t0,
            spec.wavelet_cycles,
            spec.lo_hz
        )));
    }
    let a = (t0 * fs).round() as usize;
    let b = ((t1 * fs).round() as usize).min(n);
    Ok((a, b))
}

/// Mean of an envelope over a window.
pub fn window_mean(
    envelope: &[f64],
    fs: f64,
    spec: &BandPowerSpec,
    window: (f64, f64),
) -> Result<f64> {
    let (a, b) = window_range(envelope.len(), fs, spec, window)?;
    Ok(envelope[a..b].iter().sum::<f64>() / (b - a) as f64)
}

/// Mean band power (µV² for µV input) of `x` over `window` seconds.
pub fn morlet_band_power(
    x: &[f64],
    fs: f64,
    spec: &BandPowerSpec,
    window: (f64, f64),
) -> Result<f64> {
    window_range(x.len(), fs, spec, window)?;
    let bank = MorletBank::new(fs, spec, x.len())?;
    window_mean(&bank.power_envelope(x)?, fs, spec, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    /// Direct time-domain convolution, independent of the FFT path.
    fn direct_envelope(x: &[f64], fs: f64, spec: &BandPowerSpec) -> Vec<f64> {
        let freqs = spec.frequencies();
        let mut acc = vec![0.0; x.len()];
        for &f in &freqs {
            let taps = morlet_taps(f, fs, spec.wavelet_cycles);
            let half = (taps.len() / 2) as i64;
            for (n, a) in acc.iter_mut().enumerate() {
                let mut c = Complex64::new(0.0, 0.0);
                for (i, t) in taps.iter().enumerate() {
                    let m = n as i64 - (i as i64 - half);
                    if m >= 0 && (m as usize) < x.len() {
                        c += t * x[m as usize];
                    }
                }
                *a += c.norm_sqr();
            }
        }
        acc.iter().map(|a| a / freqs.len() as f64).collect()
    }

    #[test]
    fn fft_path_matches_direct_convolution() {
        let fs = 250.0;
        let x: Vec<f64> = (0..600)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 10.0)
            .collect();
        let spec = BandPowerSpec::default();
        let bank = MorletBank::new(fs, &spec, x.len()).unwrap();
        let fast = bank.power_envelope(&x).unwrap();
        let slow = direct_envelope(&x, fs, &spec);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_frequency_calibration() {
        // A band holding only the 10 Hz wavelet: amplitude 2 gives A²/2 = 2.
        let spec = BandPowerSpec {
            lo_hz: 10.0,
            hi_hz: 10.4,
            ..BandPowerSpec::default()
        };
        assert_eq!(spec.frequencies(), vec![10.0]);
        let x = sine(10.0, 2.0, 6000, 1000.0);
        let p = morlet_band_power(&x, 1000.0, &spec, (2.0, 3.5)).unwrap();
        assert!((p - 2.0).abs() < 0.05 * 2.0, "{p}");
    }

    #[test]
    fn mu_band_power_of_sinusoid_matches_gaussian_response() {
        // Analytic oracle: a wavelet at f with c cycles passes a sinusoid at f0 with
        // power gain exp(-(c·(f - f0)/f)²); the band estimate averages those gains.
        let spec = BandPowerSpec::default();
        let amp: f64 = 2.0;
        let expected = amp * amp / 2.0
            * spec
                .frequencies()
                .iter()
                .map(|f| (-(spec.wavelet_cycles * (f - 10.0) / f).powi(2)).exp())
                .sum::<f64>()
            / spec.frequencies().len() as f64;
        let x = sine(10.0, amp, 6000, 1000.0);
        let p = morlet_band_power(&x, 1000.0, &spec, (2.0, 3.5)).unwrap();
        assert!((p - expected).abs() < 0.05 * expected, "{p} vs {expected}");
    }

    #[test]
    fn zero_signal_has_zero_power() {
        let p =
            morlet_band_power(&[0.0; 3000], 1000.0, &BandPowerSpec::default(), (0.5, 2.0)).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn window_errors() {
        let spec = BandPowerSpec::default();
        let x = vec![1.0; 2000];
        assert!(morlet_band_power(&x, 1000.0, &spec, (1.0, 2.5)).is_err());
        assert!(morlet_band_power(&x, 1000.0, &spec, (-0.1, 1.5)).is_err());
        assert!(morlet_band_power(&x, 1000.0, &spec, (0.5, 0.6)).is_err());
        assert!(morlet_band_power(&x, 1000.0, &spec, (0.5, 2.0)).is_ok());
    }

    #[test]
    fn quadratic_homogeneity_and_non_negativity() {
        let spec = BandPowerSpec::default();
        let x: Vec<f64> = (0..3000)
            .map(|i| ((i * 7919 % 1009) as f64 - 504.0) / 100.0)
            .collect();
        let p = morlet_band_power(&x, 1000.0, &spec, (0.5, 2.5)).unwrap();
        assert!(p >= 0.0);
        for a in [0.5, 3.0, -2.0] {
            let xa: Vec<f64> = x.iter().map(|v| a * v).collect();
            let pa = morlet_band_power(&xa, 1000.0, &spec, (0.5, 2.5)).unwrap();
            assert!((pa - a * a * p).abs() <= 1e-9 * pa.abs());
        }
    }

    #[test]
    fn frequencies_of_default_band() {
        assert_eq!(
            BandPowerSpec::default().frequencies(),
            vec![9.0, 9.5, 10.0, 10.5, 11.0]
        );
    }
}
