//! Labeled synthetic EEG trials.
//!
//! Each channel is 1/f background plus white noise, a 10 Hz mu oscillation whose
//! spatial gain peaks over the motor strip, and common-phase 50 Hz line noise. From
//! movement onset to 1.5 s before the end of the trial the mu amplitude around the
//! motor site contralateral to the moving hand is suppressed (event-related
//! desynchronization), with cosine ramps at both ends.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::montage::Montage;
use crate::{par, seed, Error, Hand, Result};

pub const SAMPLE_RATE: u32 = 1000;

/// Seconds from trial start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialTimeline {
    pub fixation_start: f64,
    pub arrow_at: f64,
    pub movement_start: f64,
    pub trial_len: f64,
    /// End of the desynchronization, measured back from the end of the trial.
    pub erd_tail: f64,
    pub ramp: f64,
}

impl Default for TrialTimeline {
    fn default() -> Self {
        TrialTimeline {
            fixation_start: 0.0,
            arrow_at: 2.0,
            movement_start: 3.5,
            trial_len: 10.0,
            erd_tail: 1.5,
            ramp: 0.25,
        }
    }
}

impl TrialTimeline {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.fixation_start
            && self.fixation_start < self.arrow_at
            && self.arrow_at < self.movement_start
            && self.movement_start < self.trial_len;
        if !ordered {
            return Err(Error::domain("timeline events must be strictly ordered"));
        }
        if self.erd_end() - self.movement_start < 2.0 * self.ramp || self.ramp <= 0.0 {
            return Err(Error::domain(
                "desynchronization period shorter than its ramps",
            ));
        }
        Ok(())
    }

    pub fn erd_end(&self) -> f64 {
        self.trial_len - self.erd_tail
    }

    /// 0 outside the movement period, 1 inside, raised-cosine ramps at both edges.
    pub fn erd_envelope(&self, t: f64) -> f64 {
        let (start, end) = (self.movement_start, self.erd_end());
        if t <= start || t >= end {
            0.0
        } else if t < start + self.ramp {
            0.5 * (1.0 - (PI * (t - start) / self.ramp).cos())
        } else if t > end - self.ramp {
            0.5 * (1.0 - (PI * (end - t) / self.ramp).cos())
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SynthConfig {
    pub n_subjects: u32,
    pub trials_per_hand: u32,
    pub mu_freq: f64,
    /// Peak mu amplitude (µV) at the motor sites.
    pub mu_amp: f64,
    /// Fractional amplitude suppression at the contralateral motor site.
    pub erd_depth: f64,
    /// Standard deviation (µV) of the white component, clipped at ±6σ.
    pub noise_amp: f64,
    /// RMS (µV) of the 1/f component, clipped at ±5 RMS.
    pub pink_amp: f64,
    pub line_noise_amp: f64,
    pub seed: u64,
    pub timeline: TrialTimeline,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 15,
            trials_per_hand: 20,
            mu_freq: 10.0,
            mu_amp: 10.0,
            erd_depth: 0.5,
            noise_amp: 5.0,
            pink_amp: 8.0,
            line_noise_amp: 20.0,
            seed: 0,
            timeline: TrialTimeline::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.erd_depth > 0.0 && self.erd_depth <= 1.0) {
            return Err(Error::domain(format!(
                "erdDepth must lie in (0, 1], got {}",
                self.erd_depth
            )));
        }
        let amps = [
            self.mu_amp,
            self.noise_amp,
            self.pink_amp,
            self.line_noise_amp,
        ];
        if amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::domain("amplitudes must be finite and non-negative"));
        }
        if !(self.mu_freq > 0.0 && self.mu_freq < SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::domain("muFreq must lie below Nyquist"));
        }
        self.timeline.validate()
    }

    /// Upper bound on |sample| implied by the amplitudes.
    pub fn amplitude_bound(&self) -> f64 {
        self.mu_amp + 6.0 * self.noise_amp + self.line_noise_amp + 5.0 * self.pink_amp
    }
}

/// One labeled trial; `channels[c]` follows the montage order.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrial {
    pub subject_id: u32,
    pub trial_id: u32,
    pub label: Hand,
    pub fs: u32,
    pub channels: Vec<Vec<f64>>,
}

impl EegTrial {
    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.fs as f64
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.channels.len() != n_channels {
            return Err(Error::shape(format!(
                "trial has {} channels, montage has {n_channels}",
                self.channels.len()
            )));
        }
        let n = self.n_samples();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::shape("ragged channel lengths"));
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("trial contains non-finite samples"));
        }
        Ok(())
    }
}

// Paul Kellet's refined pink-noise filter: six leaky integrators plus direct terms,
// roughly -10 dB/decade over the audio-to-EEG range.
const PINK_POLES: [f64; 6] = [0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616];
const PINK_GAINS: [f64; 6] = [
    0.0555179, 0.0750759, 0.1538520, 0.3104856, 0.5329522, -0.0168980,
];
const PINK_DIRECT: f64 = 0.5362;
const PINK_DELAYED: f64 = 0.115926;
const PINK_WARMUP: usize = 5000;

#[derive(Default)]
struct PinkFilter {
    state: [f64; 6],
    delayed: f64,
}

impl PinkFilter {
    fn step(&mut self, white: f64) -> f64 {
        let mut out = white * PINK_DIRECT + self.delayed;
        for ((s, p), g) in self.state.iter_mut().zip(PINK_POLES).zip(PINK_GAINS) {
            *s = p * *s + white * g;
            out += *s;
        }
        self.delayed = white * PINK_DELAYED;
        out
    }
}

/// RMS of the pink filter's output for unit-variance white input.
fn pink_rms_gain() -> f64 {
    static GAIN: OnceLock<f64> = OnceLock::new();
    *GAIN.get_or_init(|| {
        let mut f = PinkFilter::default();
        let mut energy = f.step(1.0).powi(2);
        for _ in 0..50_000 {
            energy += f.step(0.0).powi(2);
        }
        energy.sqrt()
    })
}

const MOTOR_SITES: [&str; 3] = ["C3", "Cz", "C4"];
const MU_SPREAD: f64 = 0.3;
const MU_FLOOR: f64 = 0.2;
const ERD_SPREAD: f64 = 0.25;

/// Spatial mu gain per channel: `floor + (1-floor)·max over motor sites of a Gaussian
/// in head-disc distance`. In (0, 1].
pub fn mu_spatial_gain(montage: &Montage) -> Vec<f64> {
    let sites: Vec<(f64, f64)> = MOTOR_SITES
        .iter()
        .map(|n| montage.find(n).expect("motor site in montage").pos2d)
        .collect();
    montage
        .electrodes()
        .iter()
        .map(|e| {
            let peak = sites
                .iter()
                .map(|s| gaussian(dist(e.pos2d, *s), MU_SPREAD))
                .fold(0.0, f64::max);
            MU_FLOOR + (1.0 - MU_FLOOR) * peak
        })
        .collect()
}

/// Motor site contralateral to the moving hand.
pub fn contralateral_site(hand: Hand) -> &'static str {
    match hand {
        Hand::Left => "C4",
        Hand::Right => "C3",
    }
}

/// Desynchronization weight per channel: 1 at the contralateral site, Gaussian falloff.
pub fn erd_spatial_weight(montage: &Montage, hand: Hand) -> Vec<f64> {
    let site = montage
        .find(contralateral_site(hand))
        .expect("motor site in montage")
        .pos2d;
    montage
        .electrodes()
        .iter()
        .map(|e| gaussian(dist(e.pos2d, site), ERD_SPREAD))
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn gaussian(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Precomputed spatial structure shared by all trials of a cohort.
pub struct Synthesizer {
    cfg: SynthConfig,
    mu_gain: Vec<f64>,
    erd_left: Vec<f64>,
    erd_right: Vec<f64>,
}

impl Synthesizer {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let montage = Montage::builtin32();
        Ok(Synthesizer {
            cfg: cfg.clone(),
            mu_gain: mu_spatial_gain(&montage),
            erd_left: erd_spatial_weight(&montage, Hand::Left),
            erd_right: erd_spatial_weight(&montage, Hand::Right),
        })
    }

    pub fn trial(&self, subject_id: u32, trial_id: u32, label: Hand) -> EegTrial {
        let cfg = &self.cfg;
        let fs = SAMPLE_RATE as f64;
        let n = (cfg.timeline.trial_len * fs).round() as usize;

        let mut subject_rng = seed::rng(cfg.seed, &[0x5b, subject_id as u64]);
        let subject_gain: f64 = subject_rng.random_range(0.75..=1.0);
        let subject_freq: f64 = subject_rng.random_range(-0.5..=0.5);

        let mut rng = seed::rng(
            cfg.seed,
            &[
                0x7a,
                subject_id as u64,
                trial_id as u64,
                label.label() as u64,
            ],
        );
        let freq = cfg.mu_freq + subject_freq + rng.random_range(-0.3..=0.3);
        let common_phase: f64 = rng.random_range(0.0..TAU);
        let wax_rate: f64 = rng.random_range(0.2..=0.5);
        let wax_phase: f64 = rng.random_range(0.0..TAU);
        let erd = (cfg.erd_depth * rng.random_range(0.8..=1.2)).min(1.0);
        let line_phase: f64 = rng.random_range(0.0..TAU);
        let erd_weight = match label {
            Hand::Left => &self.erd_left,
            Hand::Right => &self.erd_right,
        };

        let envelope: Vec<f64> = (0..n)
            .map(|i| cfg.timeline.erd_envelope(i as f64 / fs))
            .collect();
        let line: Vec<f64> = (0..n)
            .map(|i| cfg.line_noise_amp * (TAU * 50.0 * i as f64 / fs + line_phase).sin())
            .collect();
        let wax: Vec<f64> = (0..n)
            .map(|i| 0.85 + 0.15 * (TAU * wax_rate * i as f64 / fs + wax_phase).sin())
            .collect();
        let pink_norm = pink_rms_gain();

        let channels = (0..self.mu_gain.len())
            .map(|c| {
                let phase = common_phase + 0.3 * rng.sample::<f64, _>(StandardNormal);
                let amp =
                    cfg.mu_amp * self.mu_gain[c] * subject_gain * rng.random_range(0.85..=1.0);
                let depth = erd * erd_weight[c];
                let mut pink = PinkFilter::default();
                for _ in 0..PINK_WARMUP {
                    pink.step(rng.sample(StandardNormal));
                }
                (0..n)
                    .map(|i| {
                        let t = i as f64 / fs;
                        let mu = amp
                            * wax[i]
                            * (1.0 - depth * envelope[i])
                            * (TAU * freq * t + phase).sin();
                        let white: f64 = rng.sample::<f64, _>(StandardNormal).clamp(-6.0, 6.0);
                        let p =
                            (pink.step(rng.sample(StandardNormal)) / pink_norm).clamp(-5.0, 5.0);
                        mu + cfg.noise_amp * white + cfg.pink_amp * p + line[i]
                    })
                    .collect()
            })
            .collect();

        EegTrial {
            subject_id,
            trial_id,
            label,
            fs: SAMPLE_RATE,
            channels,
        }
    }
}

/// One trial, deterministic in `(cfg.seed, subject_id, trial_id, label)`.
pub fn generate_trial(
    cfg: &SynthConfig,
    subject_id: u32,
    trial_id: u32,
    label: Hand,
) -> Result<EegTrial> {
    Ok(Synthesizer::new(cfg)?.trial(subject_id, trial_id, label))
}

/// `n_subjects × 2 × trials_per_hand` trials ordered by (subject, hand, index).
/// Right-hand trials take ids `0..m`, left-hand trials `m..2m`.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Vec<EegTrial>> {
    if cfg.n_subjects == 0 {
        return Err(Error::domain("nSubjects must be at least 1"));
    }
    let synth = Synthesizer::new(cfg)?;
    let per_hand = cfg.trials_per_hand;
    let mut keys = Vec::new();
    for subject in 0..cfg.n_subjects {
        for hand in [Hand::Right, Hand::Left] {
            for i in 0..per_hand {
                keys.push((subject, hand.label() as u32 * per_hand + i, hand));
            }
        }
    }
    Ok(par::map_slice(&keys, |&(s, t, h)| synth.trial(s, t, h)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 1,
            trials_per_hand: 1,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn trial_shape_and_label() {
        let t = generate_trial(&small(), 0, 3, Hand::Left).unwrap();
        assert_eq!(t.channels.len(), 32);
        assert_eq!(t.n_samples(), 10_000);
        assert_eq!(t.label.label(), 1);
        t.validate(32).unwrap();
    }

    #[test]
    fn trials_are_deterministic() {
        let cfg = small();
        let a = generate_trial(&cfg, 2, 5, Hand::Right).unwrap();
        let b = generate_trial(&cfg, 2, 5, Hand::Right).unwrap();
        assert_eq!(a, b);
        let c = generate_trial(&cfg, 2, 6, Hand::Right).unwrap();
        assert_ne!(a.channels, c.channels);
    }

    #[test]
    fn samples_respect_amplitude_bound() {
        let cfg = small();
        let bound = cfg.amplitude_bound();
        for trial in generate_cohort(&cfg).unwrap() {
            let max = trial
                .channels
                .iter()
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max <= bound, "{max} > {bound}");
        }
    }

    #[test]
    fn cohort_shape() {
        let cohort = generate_cohort(&small()).unwrap();
        assert_eq!(cohort.len(), 2);
        assert_eq!(cohort[0].label, Hand::Right);
        assert_eq!(cohort[1].label, Hand::Left);

        let cfg = SynthConfig {
            n_subjects: 2,
            trials_per_hand: 3,
            ..small()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        assert_eq!(cohort.len(), 12);
        let left = cohort.iter().filter(|t| t.label == Hand::Left).count();
        assert_eq!(left, 6);
        let keys: Vec<_> = cohort.iter().map(|t| (t.subject_id, t.trial_id)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn full_cohort_count() {
        // Counting only; generation of 600 trials is exercised elsewhere.
        let cfg = SynthConfig::default();
        assert_eq!(cfg.n_subjects * 2 * cfg.trials_per_hand, 600);
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            erd_depth: 0.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            noise_amp: -1.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(generate_cohort(&SynthConfig {
            n_subjects: 0,
            ..SynthConfig::default()
        })
        .is_err());
    }

    #[test]
    fn envelope_ramps() {
        let tl = TrialTimeline::default();
        assert_eq!(tl.erd_envelope(3.0), 0.0);
        assert!((tl.erd_envelope(3.625) - 0.5).abs() < 1e-12);
        assert_eq!(tl.erd_envelope(6.0), 1.0);
        assert!((tl.erd_envelope(8.375) - 0.5).abs() < 1e-12);
        assert_eq!(tl.erd_envelope(9.0), 0.0);
    }

    #[test]
    fn spatial_weights() {
        let m = Montage::builtin32();
        let gain = mu_spatial_gain(&m);
        for site in MOTOR_SITES {
            assert!((gain[m.index_of(site).unwrap()] - 1.0).abs() < 1e-12);
        }
        assert!(gain.iter().all(|g| *g > 0.0 && *g <= 1.0));
        let w = erd_spatial_weight(&m, Hand::Left);
        assert_eq!(w[m.index_of("C4").unwrap()], 1.0);
        assert!(w[m.index_of("C3").unwrap()] < 1e-3);
    }
}
