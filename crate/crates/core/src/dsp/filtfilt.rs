//! Forward-backward (zero-phase) application of a biquad cascade.

use super::iir::BiquadCascade;
use crate::{Error, Result};

/// Odd-reflection pad length for a filter on a signal of `len` samples.
pub fn pad_len(filter: &BiquadCascade, len: usize) -> usize {
    (3 * filter.settle_len()).min(len.saturating_sub(1))
}

/// Zero-phase filtering: pad both ends by odd reflection, run the cascade forward,
/// reverse, run it again, reverse, and trim the padding. Each pass starts from the
/// steady state for its first sample. The magnitude response is squared and the net
/// phase is zero.
pub fn filtfilt(filter: &BiquadCascade, x: &[f64]) -> Result<Vec<f64>> {
    let min_len = 3 * filter.state_len();
    if x.len() < min_len {
        return Err(Error::domain(format!(
            "signal of {} samples is shorter than 3 × filter state ({min_len})",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("signal contains non-finite samples"));
    }
    let n = x.len();
    let pad = pad_len(filter, n);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (x[0], x[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    let mut y = filter.filter_from(&ext, filter.steady_state(ext[0]));
    y.reverse();
    let mut y = filter.filter_from(&y, filter.steady_state(y[0]));
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}
