//! 8-bit grayscale images: rendering, resampling and PGM I/O.

use std::fs;
use std::path::Path;

use super::interp::ScalarField;
use crate::{Error, Result};

pub const FULL_WIDTH: usize = 840;
pub const FULL_HEIGHT: usize = 630;
pub const NET_WIDTH: usize = 84;
pub const NET_HEIGHT: usize = 63;

/// Row-major 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        // Header: magic, width, height, maxval, separated by whitespace, with `#`
        // comments allowed; exactly one whitespace byte precedes the raster.
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::format(format!(
                "expected PGM magic P5, found `{}`",
                fields[0]
            )));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::format(format!("bad PGM header number `{s}`")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::format(format!(
                "only maxval 255 is supported, got {maxval}"
            )));
        }
        let raster = bytes.get(pos + 1..).unwrap_or(&[]);
        if raster.len() != width * height {
            return Err(Error::format(format!(
                "PGM raster has {} bytes, expected {}",
                raster.len(),
                width * height
            )));
        }
        GrayImage::new(width, height, raster.to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        GrayImage::from_pgm(&fs::read(path)?)
    }

    /// Mean intensity over pixels within `radius` of `(col, row)`.
    pub fn disc_mean(&self, col: usize, row: usize, radius: f64) -> f64 {
        let (mut sum, mut count) = (0u64, 0u64);
        for r in 0..self.height {
            for c in 0..self.width {
                let dx = c as f64 - col as f64;
                let dy = r as f64 - row as f64;
                if dx * dx + dy * dy <= radius * radius {
                    sum += self.get(c, r) as u64;
                    count += 1;
                }
            }
        }
        sum as f64 / count.max(1) as f64
    }
}

const TIE_NUDGE: f64 = 1e-7;

/// Min-max normalization of the in-disc values to 0–255, rounding half away from
/// zero; pixels outside the disc are 0.
pub fn render_topogram(field: &ScalarField) -> Result<GrayImage> {
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("field contains non-finite values"));
    }
    let (lo, hi) = field
        .inside_range()
        .ok_or_else(|| Error::domain("field has no in-disc pixels"))?;
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return Err(Error::domain("constant field cannot be normalized"));
    }
    // Values that sit on a rounding tie in exact arithmetic can land an ulp either
    // side of it after an affine rescaling of the field. Nudging by far more than
    // that rounding error, and far less than a grey level, keeps such ties rounding
    // up so the image does not depend on the field's offset and scale.
    let pixels = field
        .values
        .iter()
        .zip(&field.inside)
        .map(|(&v, &m)| {
            if m {
                ((v - lo) / span * 255.0 + TIE_NUDGE).round().min(255.0) as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(field.width, field.height, pixels)
}

/// Non-overlapping `factor`×`factor` block means, rounded half away from zero.
pub fn block_mean(img: &GrayImage, factor: usize) -> Result<GrayImage> {
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::domain(format!(
            "{}×{} is not divisible into {factor}×{factor} blocks",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let area = (factor * factor) as u32;
    let mut out = Vec::with_capacity(w * h);
    for br in 0..h {
        for bc in 0..w {
            let mut sum = 0u32;
            for r in br * factor..(br + 1) * factor {
                let row =
                    &img.pixels[r * img.width + bc * factor..r * img.width + (bc + 1) * factor];
                sum += row.iter().map(|&p| p as u32).sum::<u32>();
            }
            out.push(((sum + area / 2) / area) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

/// 840×630 render to the 84×63 network input.
pub fn downsample(img: &GrayImage) -> Result<GrayImage> {
    if (img.width, img.height) != (FULL_WIDTH, FULL_HEIGHT) {
        return Err(Error::domain(format!(
            "downsample expects {FULL_WIDTH}×{FULL_HEIGHT}, got {}×{}",
            img.width, img.height
        )));
    }
    block_mean(img, FULL_WIDTH / NET_WIDTH)
}

/// Bilinear resampling with pixel-center alignment; intensities stay on 0–255.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Vec<f32> {
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let coord = |i: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        let (r0, r1, fy) = coord(r, sy, img.height);
        for c in 0..width {
            let (c0, c1, fx) = coord(c, sx, img.width);
            let p = |cc, rr| img.get(cc, rr) as f64;
            let top = p(c0, r0) * (1.0 - fx) + p(c1, r0) * fx;
            let bottom = p(c0, r1) * (1.0 - fx) + p(c1, r1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}
