//! Analysis windows and baseline correction.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct WindowPlan {
    pub windows: Vec<(f64, f64)>,
    pub excluded: Vec<(f64, f64)>,
    pub baseline_interval: (f64, f64),
}

impl Default for WindowPlan {
    fn default() -> Self {
        WindowPlan {
            windows: vec![(5.5, 7.0), (6.0, 7.5), (6.5, 8.0), (7.0, 8.5)],
            excluded: vec![(5.0, 5.5), (8.5, 10.0)],
            baseline_interval: (1.0, 4.5),
        }
    }
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

impl WindowPlan {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::domain("window plan has no windows"));
        }
        for &w in &self.windows {
            if !(w.0 >= 0.0 && w.0 < w.1) {
                return Err(Error::domain(format!("window {w:?} is not an interval")));
            }
            if let Some(x) = self.excluded.iter().find(|&&x| overlaps(w, x)) {
                return Err(Error::domain(format!(
                    "window {w:?} intersects excluded {x:?}"
                )));
            }
        }
        let (b0, b1) = self.baseline_interval;
        if !(b0 > 0.0 && b0 < b1) {
            return Err(Error::domain(
                "baseline interval must be a positive interval",
            ));
        }
        if self
            .windows
            .iter()
            .any(|&w| overlaps(w, self.baseline_interval))
        {
            return Err(Error::domain(
                "baseline interval overlaps an analysis window",
            ));
        }
        Ok(())
    }

    /// Latest end time of any window.
    pub fn end(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| w.1)
            .fold(self.baseline_interval.1, f64::max)
    }

    /// The plan's windows for a trial of `trial_len` seconds.
    pub fn slice_windows(&self, trial_len: f64) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        if trial_len < self.end() {
            return Err(Error::domain(format!(
                "trial of {trial_len} s ends before the last window ({} s)",
                self.end()
            )));
        }
        Ok(self.windows.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Absolute,
    Relative,
}

impl BaselineMode {
    pub const BOTH: [BaselineMode; 2] = [BaselineMode::Absolute, BaselineMode::Relative];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Absolute => "absolute",
            BaselineMode::Relative => "relative",
        }
    }
}

/// Absolute subtracts the baseline, Relative divides by it.
pub fn baseline_correct(power: &[f64], baseline: &[f64], mode: BaselineMode) -> Result<Vec<f64>> {
    if power.len() != baseline.len() {
        return Err(Error::shape(format!(
            "{} power values against {} baseline values",
            power.len(),
            baseline.len()
        )));
    }
    match mode {
        BaselineMode::Absolute => Ok(power.iter().zip(baseline).map(|(p, b)| p - b).collect()),
        BaselineMode::Relative => {
            if let Some(b) = baseline.iter().find(|b| b.is_nan() || **b <= 0.0) {
                return Err(Error::domain(format!(
                    "relative baseline needs positive power, got {b}"
                )));
            }
            Ok(power.iter().zip(baseline).map(|(p, b)| p / b).collect())
        }
    }
}
