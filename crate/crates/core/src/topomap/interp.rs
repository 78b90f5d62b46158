//! Inverse-distance-weighted scalp interpolation.

use crate::montage::{HeadCircle, Montage};
use crate::{Error, Result};

/// A real-valued image over the head disc. Pixels outside the disc hold 0 and are
/// flagged in `inside`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
}

impl ScalarField {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// `(min, max)` over in-disc pixels, `None` if the disc is empty.
    pub fn inside_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &m)| m)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Same mask, values mapped through `f` inside the disc.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let values = self
            .values
            .iter()
            .zip(&self.inside)
            .map(|(&v, &m)| if m { f(v) } else { 0.0 })
            .collect();
        ScalarField {
            values,
            ..self.clone()
        }
    }
}

const NO_NODE: u32 = u32::MAX;

/// IDW (power 2) weights for every in-disc pixel of one image size, computed once
/// and reused for every image.
///
/// Electrodes are placed at the pixel [`HeadCircle::pixel_of`] assigns them; a pixel
/// holding an electrode takes that electrode's value exactly. When two electrodes
/// share a pixel (only at very small image sizes) the first in montage order wins.
pub struct Interpolator {
    width: usize,
    height: usize,
    circle: HeadCircle,
    n_channels: usize,
    electrode_pixels: Vec<(usize, usize)>,
    /// Linear index of every in-disc pixel, row-major.
    pixels: Vec<u32>,
    /// Electrode index for pixels that hold one, else `NO_NODE`.
    node: Vec<u32>,
    /// Normalized weights, `n_channels` per in-disc pixel.
    weights: Vec<f64>,
}

impl Interpolator {
    pub fn new(montage: &Montage, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain("image dimensions must be positive"));
        }
        let circle = montage.head_circle(width, height);
        let electrode_pixels: Vec<(usize, usize)> = montage
            .electrodes()
            .iter()
            .map(|e| circle.pixel_of(e.pos2d))
            .collect();
        let n_channels = electrode_pixels.len();
        let mut pixels = Vec::new();
        let mut node = Vec::new();
        let mut weights = Vec::new();
        let mut w = vec![0.0; n_channels];
        for row in 0..height {
            for col in 0..width {
                if !circle.contains(col, row) {
                    continue;
                }
                pixels.push((row * width + col) as u32);
                if let Some(k) = electrode_pixels.iter().position(|&p| p == (col, row)) {
                    node.push(k as u32);
                    weights.resize(weights.len() + n_channels, 0.0);
                    continue;
                }
                node.push(NO_NODE);
                let mut total = 0.0;
                for (wk, &(ec, er)) in w.iter_mut().zip(&electrode_pixels) {
                    let dx = col as f64 - ec as f64;
                    let dy = row as f64 - er as f64;
                    *wk = 1.0 / (dx * dx + dy * dy);
                    total += *wk;
                }
                weights.extend(w.iter().map(|x| x / total));
            }
        }
        Ok(Interpolator {
            width,
            height,
            circle,
            n_channels,
            electrode_pixels,
            pixels,
            node,
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn circle(&self) -> &HeadCircle {
        &self.circle
    }

    /// Pixel `(col, row)` of each electrode, montage order.
    pub fn electrode_pixels(&self) -> &[(usize, usize)] {
        &self.electrode_pixels
    }

    pub fn interpolate(&self, values: &[f64]) -> Result<ScalarField> {
        if values.len() != self.n_channels {
            return Err(Error::shape(format!(
                "{} values for {} electrodes",
                values.len(),
                self.n_channels
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("scalp values must be finite"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = self.width * self.height;
        let mut field = vec![0.0; n];
        let mut inside = vec![false; n];
        for (i, (&p, &node)) in self.pixels.iter().zip(&self.node).enumerate() {
            let p = p as usize;
            inside[p] = true;
            field[p] = if node != NO_NODE {
                values[node as usize]
            } else {
                let w = &self.weights[i * self.n_channels..(i + 1) * self.n_channels];
                // Rounding can push a convex combination an ulp past the hull.
                w.iter()
                    .zip(values)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .clamp(lo, hi)
            };
        }
        Ok(ScalarField {
            width: self.width,
            height: self.height,
            values: field,
            inside,
        })
    }
}

/// One-off interpolation; build an [`Interpolator`] when rendering many images.
pub fn interpolate_scalp(
    values: &[f64],
    montage: &Montage,
    width: usize,
    height: usize,
) -> Result<ScalarField> {
    Interpolator::new(montage, width, height)?.interpolate(values)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn constant_values_give_constant_disc() {
        let m = Montage::builtin32();
        let f = interpolate_scalp(&[5.0; 32], &m, 84, 63).unwrap();
        for (v, inside) in f.values.iter().zip(&f.inside) {
            assert_eq!(*v, if *inside { 5.0 } else { 0.0 });
        }
    }

    #[test]
    fn electrode_pixels_are_exact() {
        let m = Montage::builtin32();
        let interp = Interpolator::new(&m, 840, 630).unwrap();
        let values: Vec<f64> = (0..32)
            .map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0)
            .collect();
        let f = interp.interpolate(&values).unwrap();
        for (k, &(c, r)) in interp.electrode_pixels().iter().enumerate() {
            assert_eq!(f.get(c, r), values[k], "{}", m.electrodes()[k].name);
        }
        let c3 = m.index_of("C3").unwrap();
        let (c, r) = interp.electrode_pixels()[c3];
        assert_eq!(f.get(c, r), values[c3]);
    }

    #[test]
    fn outside_disc_is_zero_and_flagged() {
        let m = Montage::builtin32();
        let f = interpolate_scalp(&[9.0; 32], &m, 84, 63).unwrap();
        assert!(!f.inside[0]);
        assert_eq!(f.values[0], 0.0);
        let circle = m.head_circle(84, 63);
        let count = f.inside.iter().filter(|&&b| b).count();
        let expected = (0..63)
            .flat_map(|r| (0..84).map(move |c| (c, r)))
            .filter(|&(c, r)| circle.contains(c, r))
            .count();
        assert_eq!(count, expected);
    }

    #[test]
    fn rejects_bad_input() {
        let m = Montage::builtin32();
        let mut v = vec![1.0; 32];
        v[4] = f64::INFINITY;
        assert!(matches!(
            interpolate_scalp(&v, &m, 84, 63),
            Err(Error::Domain(_))
        ));
        assert!(interpolate_scalp(&[1.0; 31], &m, 84, 63).is_err());
        assert!(interpolate_scalp(&[1.0; 32], &m, 0, 63).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn in_disc_values_stay_in_hull(values in proptest::collection::vec(-1e3f64..1e3, 32)) {
            let m = Montage::builtin32();
            let f = interpolate_scalp(&values, &m, 84, 63).unwrap();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (v, inside) in f.values.iter().zip(&f.inside) {
                if *inside {
                    prop_assert!(*v >= lo && *v <= hi);
                }
            }
        }
    }
}
