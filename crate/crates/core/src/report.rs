//! Confusion matrices and report files.
//!
//! Class 0 is the right hand, class 1 the left hand. `counts[t][p]` counts test images
//! of true class `t` predicted as `p`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::topomap::GrayImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Confusion {
    pub counts: [[u64; 2]; 2],
}

impl Confusion {
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("truth and prediction lists differ in length"));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t > 1 || p > 1 {
                return Err(Error::domain(format!(
                    "class labels must be 0 or 1, got ({t}, {p})"
                )));
            }
            c.counts[t as usize][p as usize] += 1;
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Trace over total.
    pub fn accuracy(&self) -> f64 {
        (self.counts[0][0] + self.counts[1][1]) as f64 / self.total().max(1) as f64
    }

    pub fn recall(&self, class: usize) -> f64 {
        let row = self.counts[class];
        row[class] as f64 / (row[0] + row[1]).max(1) as f64
    }

    /// Mean of the per-class recalls.
    pub fn balanced_accuracy(&self) -> f64 {
        (self.recall(0) + self.recall(1)) / 2.0
    }

    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        format!(
            "true\\pred,0,1\n0,{},{}\n1,{},{}\n",
            c[0][0], c[0][1], c[1][0], c[1][1]
        )
    }

    /// Inverse of [`Confusion::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != 3 || lines[0].trim() != "true\\pred,0,1" {
            return Err(Error::format(
                "confusion CSV must have a header and two rows",
            ));
        }
        let mut c = Confusion::default();
        for (t, line) in lines[1..].iter().enumerate() {
            let cells: Vec<&str> = line.trim().split(',').collect();
            if cells.len() != 3 || cells[0] != t.to_string() {
                return Err(Error::format(format!("bad confusion row `{line}`")));
            }
            for p in 0..2 {
                c.counts[t][p] = cells[p + 1]
                    .parse()
                    .map_err(|_| Error::format(format!("bad count `{}`", cells[p + 1])))?;
            }
        }
        Ok(c)
    }

    /// 2×2 grid of `cell`-pixel squares, each grey level proportional to its count
    /// (the largest count is 255).
    pub fn heatmap(&self, cell: usize) -> GrayImage {
        let max = self
            .counts
            .iter()
            .flatten()
            .copied()
            .max()
            .unwrap_or(0)
            .max(1);
        let side = 2 * cell;
        let mut img = GrayImage::filled(side, side, 0);
        for r in 0..side {
            for c in 0..side {
                let n = self.counts[r / cell][c / cell];
                img.pixels[r * side + c] = (n as f64 / max as f64 * 255.0).round() as u8;
            }
        }
        img
    }
}

/// Anything written by [`emit_report`].
pub trait Report: Serialize {
    fn confusion(&self) -> &Confusion;
}

pub const HEATMAP_CELL: usize = 32;

/// Writes `path` (JSON), `<stem>.confusion.csv` and `<stem>.confusion.pgm` beside it.
/// Returns the three paths.
pub fn emit_report<R: Report>(report: &R, path: &Path) -> Result<[PathBuf; 3]> {
    if report.confusion().total() == 0 {
        return Err(Error::domain("report has an empty confusion matrix"));
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::domain(format!("report path {} has no file name", path.display())))?;
    let csv = path.with_file_name(format!("{stem}.confusion.csv"));
    let pgm = path.with_file_name(format!("{stem}.confusion.pgm"));
    fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(&csv, report.confusion().to_csv())?;
    report.confusion().heatmap(HEATMAP_CELL).save_pgm(&pgm)?;
    Ok([path.to_path_buf(), csv, pgm])
}
