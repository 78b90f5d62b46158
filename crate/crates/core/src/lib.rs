//! EEG motor-activity classification toolkit.
//!
//! The crate covers the whole path from labeled EEG trials to trained classifiers:
//!
//! ```text
//! synth      labeled 32-channel trials with contralateral mu desynchronization
//!   │
//! dsp        50 Hz notch + 1–100 Hz Butterworth (zero phase), Morlet mu-band power
//!   │
//! topomap    slicing windows × {absolute, relative} baseline → IDW scalp images,
//!   │        840×630 render, 84×63 network input, stratified 80/20 manifest
//!   │
//! cnn        4× (conv5×5 → relu → maxpool2) → 3 dense layers → softmax
//! aae        generator/discriminator autoencoders on pixel-wise L1 objectives,
//!            used as an anomaly-score classifier
//! ```
//!
//! Both networks run on [`tensor`], a small reverse-mode autodiff engine generic over
//! `f32` (training) and `f64` (finite-difference gradient checks).
//!
//! With the default `parallel` feature, per-trial maps, image rendering and the
//! per-sample parts of the convolution kernels run on rayon. Every reduction has a
//! fixed order, so results are bitwise identical for any thread count.

pub mod aae;
pub mod cnn;
pub mod config;
pub mod dsp;
mod error;
pub mod montage;
pub mod par;
pub mod report;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod topomap;
pub mod trial_io;

pub use error::{Error, Result};

/// Label of a movement trial. The numeric encoding is part of every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hand {
    Right = 0,
    Left = 1,
}

impl Hand {
    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            0 => Ok(Hand::Right),
            1 => Ok(Hand::Left),
            other => Err(Error::domain(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Hand::Right => Hand::Left,
            Hand::Left => Hand::Right,
        }
    }
}
