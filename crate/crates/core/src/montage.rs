//! The 32-channel 10-10 electrode set and its projection onto the 2D head disc.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use crate::{Error, Result};

pub const CHANNEL_COUNT: usize = 32;

/// Fraction of `min(width, height)` used as the head-disc radius in rendered images.
pub const HEAD_RADIUS_FRACTION: f64 = 0.48;

#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub name: String,
    /// Radians, clockwise from the nose (+y) toward the right ear (+x).
    pub azimuth: f64,
    /// Radians above the head's equator; the vertex (Cz) is at π/2.
    pub elevation: f64,
    /// Azimuthal-equidistant projection, inside the unit disc. +x is right, +y is front.
    pub pos2d: (f64, f64),
}

/// Pixel-space head circle for an image of a given size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadCircle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl HeadCircle {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        let dx = col as f64 - self.cx;
        let dy = row as f64 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Pixel holding a head-disc position. Offsets from the center are truncated toward
    /// zero, so rim electrodes stay inside the disc and mirror pairs stay mirrored.
    pub fn pixel_of(&self, pos: (f64, f64)) -> (usize, usize) {
        let col = self.cx + (pos.0 * self.radius).trunc();
        let row = self.cy - (pos.1 * self.radius).trunc();
        (col as usize, row as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    electrodes: Vec<Electrode>,
}

/// Map (azimuth, elevation) onto the unit disc, azimuthal-equidistant about the vertex.
pub fn project(azimuth: f64, elevation: f64) -> Result<(f64, f64)> {
    if !(0.0..=FRAC_PI_2).contains(&elevation) {
        return Err(Error::domain(format!(
            "elevation {elevation} rad outside [0, π/2]"
        )));
    }
    let radius = (FRAC_PI_2 - elevation) / FRAC_PI_2;
    Ok((radius * azimuth.sin(), radius * azimuth.cos()))
}

// (name, azimuth°, elevation°). Standard spherical 10-10 positions; the equator ring
// sits at elevation 0. Left/right partners carry negated azimuths.
const LAYOUT: [(&str, f64, f64); CHANNEL_COUNT] = [
    ("Fp1", -18.0, 0.0),
    ("Fp2", 18.0, 0.0),
    ("F7", -54.0, 0.0),
    ("F3", -39.0, 30.0),
    ("Fz", 0.0, 44.0),
    ("F4", 39.0, 30.0),
    ("F8", 54.0, 0.0),
    ("FC5", -69.0, 18.0),
    ("FC1", -45.0, 58.0),
    ("FCz", 0.0, 67.0),
    ("FC2", 45.0, 58.0),
    ("FC6", 69.0, 18.0),
    ("T7", -90.0, 0.0),
    ("C3", -90.0, 44.0),
    ("Cz", 0.0, 90.0),
    ("C4", 90.0, 44.0),
    ("T8", 90.0, 0.0),
    ("TP7", -108.0, 0.0),
    ("CP5", -111.0, 18.0),
    ("CP1", -135.0, 58.0),
    ("CPz", 180.0, 67.0),
    ("CP2", 135.0, 58.0),
    ("CP6", 111.0, 18.0),
    ("TP8", 108.0, 0.0),
    ("P7", -126.0, 0.0),
    ("P3", -141.0, 30.0),
    ("Pz", 180.0, 44.0),
    ("P4", 141.0, 30.0),
    ("P8", 126.0, 0.0),
    ("O1", -162.0, 0.0),
    ("Oz", 180.0, 0.0),
    ("O2", 162.0, 0.0),
];

/// Left/right partner pairs of the layout.
pub const MIRROR_PAIRS: [(&str, &str); 13] = [
    ("Fp1", "Fp2"),
    ("F7", "F8"),
    ("F3", "F4"),
    ("FC5", "FC6"),
    ("FC1", "FC2"),
    ("T7", "T8"),
    ("C3", "C4"),
    ("TP7", "TP8"),
    ("CP5", "CP6"),
    ("CP1", "CP2"),
    ("P7", "P8"),
    ("P3", "P4"),
    ("O1", "O2"),
];

impl Montage {
    /// The fixed 32-channel montage. Its order is the channel order of every trial.
    pub fn builtin32() -> Self {
        let electrodes = LAYOUT
            .iter()
            .map(|&(name, az, el)| {
                let azimuth = az.to_radians();
                let elevation = el.to_radians();
                let pos2d = project(azimuth, elevation).expect("layout elevations are in range");
                Electrode {
                    name: name.to_string(),
                    azimuth,
                    elevation,
                    pos2d,
                }
            })
            .collect();
        Montage { electrodes }
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.electrodes.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.electrodes.iter().position(|e| e.name == name)
    }

    pub fn find(&self, name: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.name == name)
    }

    pub fn head_circle(&self, width: usize, height: usize) -> HeadCircle {
        HeadCircle {
            cx: (width / 2) as f64,
            cy: (height / 2) as f64,
            radius: HEAD_RADIUS_FRACTION * width.min(height) as f64,
        }
    }

    /// `name,azimuth,elevation,x,y` with six decimals; angles in radians.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,azimuth,elevation,x,y\n");
        for e in &self.electrodes {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.name, e.azimuth, e.elevation, e.pos2d.0, e.pos2d.1
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::f64::consts::{FRAC_PI_4, PI};

    use super::*;

    #[test]
    fn has_32_unique_channels() {
        let m = Montage::builtin32();
        assert_eq!(m.len(), 32);
        let names: HashSet<_> = m.names().into_iter().collect();
        assert_eq!(names.len(), 32);
        for motor in ["C3", "Cz", "C4"] {
            assert!(m.find(motor).is_some());
        }
    }

    #[test]
    fn vertex_is_disc_center() {
        let m = Montage::builtin32();
        assert_eq!(m.find("Cz").unwrap().pos2d, (0.0, 0.0));
        assert_eq!(project(1.234, FRAC_PI_2).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn projection_examples() {
        let (x, y) = project(0.0, 0.0).unwrap();
        assert_eq!((x, y), (0.0, 1.0));
        let (x, y) = project(FRAC_PI_2, FRAC_PI_4).unwrap();
        assert!((x - 0.5).abs() < 1e-12);
        assert!(y.abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_out_of_range_elevation() {
        assert!(matches!(project(0.0, -0.01), Err(Error::Domain(_))));
        assert!(matches!(project(0.0, PI), Err(Error::Domain(_))));
    }

    #[test]
    fn all_positions_inside_unit_disc() {
        for e in Montage::builtin32().electrodes() {
            let (x, y) = e.pos2d;
            assert!(x.hypot(y) <= 1.0 + 1e-15, "{} outside disc", e.name);
        }
    }

    #[test]
    fn mirror_pairs_are_exact() {
        let m = Montage::builtin32();
        for (l, r) in MIRROR_PAIRS {
            let a = m.find(l).unwrap().pos2d;
            let b = m.find(r).unwrap().pos2d;
            assert_eq!(a.0, -b.0, "{l}/{r} x");
            assert_eq!(a.1, b.1, "{l}/{r} y");
            assert!(a.0 < 0.0, "{l} should be on the left");
        }
    }

    #[test]
    fn rim_pixels_stay_inside_disc() {
        let m = Montage::builtin32();
        for (w, h) in [(840, 630), (84, 63), (64, 48), (17, 13)] {
            let circle = m.head_circle(w, h);
            for e in m.electrodes() {
                let (c, r) = circle.pixel_of(e.pos2d);
                assert!(c < w && r < h);
                assert!(circle.contains(c, r), "{} at {w}x{h}", e.name);
            }
        }
    }

    #[test]
    fn csv_has_header_and_fixed_decimals() {
        let csv = Montage::builtin32().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 33);
        assert_eq!(lines[0], "name,azimuth,elevation,x,y");
        assert!(lines.contains(&"Cz,0.000000,1.570796,0.000000,0.000000"));
    }
}
