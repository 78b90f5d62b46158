//! Trials to labeled scalp images, and the train/test dataset built from them.

pub mod dataset;
pub mod image;
pub mod interp;
pub mod window;

use serde::{Deserialize, Serialize};

pub use dataset::{
    build_dataset, split_groups, Dataset, DatasetManifest, ImageMeta, ImageSet, ManifestEntry,
    Split, SplitUnit,
};
pub use image::{
    block_mean, downsample, render_topogram, resize_bilinear, GrayImage, FULL_HEIGHT, FULL_WIDTH,
    NET_HEIGHT, NET_WIDTH,
};
pub use interp::{interpolate_scalp, Interpolator, ScalarField};
pub use window::{baseline_correct, BaselineMode, WindowPlan};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TopomapConfig {
    pub plan: WindowPlan,
    pub train_fraction: f64,
    pub split_unit: SplitUnit,
    /// Also write the 840×630 renders next to the network-size images.
    pub write_full_images: bool,
}

impl Default for TopomapConfig {
    fn default() -> Self {
        TopomapConfig {
            plan: WindowPlan::default(),
            train_fraction: 0.8,
            split_unit: SplitUnit::Trial,
            write_full_images: false,
        }
    }
}

impl TopomapConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::domain("trainFraction must lie in (0, 1)"));
        }
        Ok(())
    }
}
