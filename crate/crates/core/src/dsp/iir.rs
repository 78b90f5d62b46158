//! Second-order-section IIR filters: Butterworth band-pass design via the bilinear
//! transform, and a second-order notch.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::{Error, Result};

/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn pole_radius(&self) -> f64 {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        p1.norm().max(p2.norm())
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Transposed direct form II state for a constant input of 1 held forever.
    fn step_state(&self) -> [f64; 2] {
        let dc = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        let s2 = self.b2 - self.a2 * dc;
        let s1 = self.b1 - self.a1 * dc + s2;
        [s1, s2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    description: String,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>, description: impl Into<String>) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::domain("a cascade needs at least one section"));
        }
        if let Some(i) = sections.iter().position(|s| !s.is_stable()) {
            return Err(Error::domain(format!("section {i} is unstable")));
        }
        Ok(BiquadCascade {
            sections,
            description: description.into(),
        })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Number of delay elements across all sections.
    pub fn state_len(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let omega = 2.0 * PI * f / fs;
        self.sections.iter().map(|s| s.response(omega)).product()
    }

    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        self.response(f, fs).norm()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .map(Biquad::pole_radius)
            .fold(0.0, f64::max)
    }

    /// Samples for the slowest pole to decay by 10⁻⁶.
    pub fn settle_len(&self) -> usize {
        let r = self.max_pole_radius();
        if r <= 0.0 {
            return 1;
        }
        ((1e-6f64).ln() / r.ln()).ceil().max(1.0) as usize
    }

    /// Per-section states that make the cascade start in steady state for a constant
    /// input equal to `x0`.
    pub fn steady_state(&self, x0: f64) -> Vec<[f64; 2]> {
        let mut level = x0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * level, st[1] * level];
                level *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal single pass from a given initial state.
    pub fn filter_from(&self, x: &[f64], mut state: Vec<[f64; 2]>) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, st) in self.sections.iter().zip(state.iter_mut()) {
            let [mut z1, mut z2] = *st;
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * out + z2;
                z2 = s.b2 * input - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Causal single pass from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.filter_from(x, vec![[0.0; 2]; self.sections.len()])
    }
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Butterworth band-pass of the given prototype order (2·order poles), bilinear
/// transform with both band edges prewarped, as `order` second-order sections.
pub fn design_butterworth_bandpass(
    fs: f64,
    lo: f64,
    hi: f64,
    order: usize,
) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::domain("filter order must be at least 1"));
    }
    if !(fs > 0.0 && lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::domain(format!(
            "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo} hi={hi} fs={fs}"
        )));
    }
    let wl = prewarp(lo, fs);
    let wh = prewarp(hi, fs);
    let bw = wh - wl;
    let w0_sq = wl * wh;
    let center = (w0_sq.sqrt() / (2.0 * fs)).atan() * 2.0;

    // Prototype poles in the upper half plane plus the real pole of odd orders; each
    // maps to two band-pass poles, whose conjugates come from the mirrored pole.
    let mut pole_pairs: Vec<(Complex64, Complex64)> = Vec::with_capacity(order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        if p.im < -1e-12 {
            continue;
        }
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        let s1 = half + disc;
        let s2 = half - disc;
        if p.im > 1e-12 {
            pole_pairs.push((s1, s1.conj()));
            pole_pairs.push((s2, s2.conj()));
        } else if disc.im.abs() > 1e-12 * disc.norm() {
            let s = if s1.im > 0.0 { s1 } else { s2 };
            pole_pairs.push((s, s.conj()));
        } else {
            pole_pairs.push((Complex64::new(s1.re, 0.0), Complex64::new(s2.re, 0.0)));
        }
    }

    let sections = pole_pairs
        .into_iter()
        .map(|(sa, sb)| {
            let za = bilinear(sa, fs);
            let zb = bilinear(sb, fs);
            // One zero at z = 1 (s = 0) and one at z = -1 (s = ∞) per section.
            let mut bq = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -(za + zb).re,
                a2: (za * zb).re,
            };
            let g = 1.0 / bq.response(center).norm();
            bq.b0 *= g;
            bq.b2 *= g;
            bq
        })
        .collect();
    BiquadCascade::new(
        sections,
        format!("butterworth bandpass order {order} {lo}-{hi} Hz @ {fs} Hz"),
    )
}

/// Second-order notch at `f0` with quality factor `q`; unity gain at DC and Nyquist.
pub fn design_notch(fs: f64, f0: f64, q: f64) -> Result<BiquadCascade> {
    if !(fs > 0.0 && f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::domain(format!(
            "notch frequency {f0} must lie in (0, fs/2)"
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::domain("notch quality factor must be positive"));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    let bq = Biquad {
        b0: 1.0 / a0,
        b1: c / a0,
        b2: 1.0 / a0,
        a1: c / a0,
        a2: (1.0 - alpha) / a0,
    };
    BiquadCascade::new(vec![bq], format!("notch {f0} Hz q={q} @ {fs} Hz"))
}
