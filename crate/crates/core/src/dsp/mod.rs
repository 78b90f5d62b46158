//! Filtering and mu-band power.

pub mod filtfilt;
pub mod iir;
pub mod morlet;

use serde::{Deserialize, Serialize};

pub use filtfilt::filtfilt;
pub use iir::{design_butterworth_bandpass, design_notch, Biquad, BiquadCascade};
pub use morlet::{morlet_band_power, BandPowerSpec, MorletBank};

use crate::synth::EegTrial;
use crate::{par, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct DspConfig {
    pub notch_hz: f64,
    pub notch_q: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub butterworth_order: usize,
    pub band_power: BandPowerSpec,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            notch_hz: 50.0,
            notch_q: 35.0,
            band_lo_hz: 1.0,
            band_hi_hz: 100.0,
            butterworth_order: 5,
            band_power: BandPowerSpec::default(),
        }
    }
}

/// The two filters applied to every channel, designed once per sample rate.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub notch: BiquadCascade,
    pub bandpass: BiquadCascade,
}

impl Preprocessor {
    pub fn new(cfg: &DspConfig, fs: f64) -> Result<Self> {
        Ok(Preprocessor {
            notch: design_notch(fs, cfg.notch_hz, cfg.notch_q)?,
            bandpass: design_butterworth_bandpass(
                fs,
                cfg.band_lo_hz,
                cfg.band_hi_hz,
                cfg.butterworth_order,
            )?,
        })
    }

    pub fn channel(&self, x: &[f64]) -> Result<Vec<f64>> {
        filtfilt(&self.bandpass, &filtfilt(&self.notch, x)?)
    }

    /// Notch, then band-pass, each zero phase, on every channel.
    pub fn trial(&self, trial: &EegTrial) -> Result<EegTrial> {
        let channels = par::map_slice(&trial.channels, |ch| self.channel(ch))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(EegTrial {
            subject_id: trial.subject_id,
            trial_id: trial.trial_id,
            label: trial.label,
            fs: trial.fs,
            channels,
        })
    }

    /// Coefficient table: one row per section, 12 significant digits.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("filter,section,b0,b1,b2,a1,a2\n");
        for (name, f) in [("notch", &self.notch), ("bandpass", &self.bandpass)] {
            for (i, s) in f.sections().iter().enumerate() {
                out.push_str(&format!(
                    "{name},{i},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}\n",
                    s.b0, s.b1, s.b2, s.a1, s.a2
                ));
            }
        }
        out
    }
}

/// [`Preprocessor::trial`] with filters designed from `cfg` for the trial's rate.
pub fn preprocess_trial(trial: &EegTrial, cfg: &DspConfig) -> Result<EegTrial> {
    Preprocessor::new(cfg, trial.fs as f64)?.trial(trial)
}
