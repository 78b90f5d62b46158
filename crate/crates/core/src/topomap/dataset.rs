//! Image generation over a cohort, the stratified split, and the manifest format.
//!
//! On disk a dataset directory holds `manifest.jsonl` (one entry per image, in
//! (subject, trial, window, baseline) order), `dataset.json` with the split seed and
//! counts, and the 84×63 images under `images/`. Optional 840×630 renders go under
//! `full/` with the same file names.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::image::{downsample, render_topogram, GrayImage, FULL_HEIGHT, FULL_WIDTH};
use super::interp::Interpolator;
use super::window::{baseline_correct, BaselineMode, WindowPlan};
use super::TopomapConfig;
use crate::dsp::morlet::{window_mean, BandPowerSpec, MorletBank};
use crate::montage::Montage;
use crate::synth::EegTrial;
use crate::{par, seed, Error, Hand, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "dataset.json";
pub const MANIFEST_FORMAT: &str = "manifest JSON-lines v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// What the 80/20 split assigns: whole trials (all eight images of a trial land in the
/// same split) or individual images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    #[default]
    Trial,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ImageMeta {
    pub subject: u32,
    pub trial: u32,
    pub window: usize,
    pub baseline: BaselineMode,
    pub label: Hand,
}

impl ImageMeta {
    pub fn file_name(&self) -> String {
        format!(
            "s{:03}_t{:03}_w{}_{}.pgm",
            self.subject,
            self.trial,
            self.window,
            self.baseline.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u8,
    pub split: Split,
    pub subject: u32,
    pub trial: u32,
    pub window: usize,
    pub baseline: BaselineMode,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    format: String,
    seed: u64,
    images: usize,
    train: usize,
    test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, seed: u64) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str::<ManifestEntry>(l)
                    .map_err(|e| Error::format(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        for e in &entries {
            Hand::from_label(e.label)
                .map_err(|_| Error::format(format!("{}: bad label {}", e.path, e.label)))?;
        }
        Ok(DatasetManifest { entries, seed })
    }

    /// Writes `manifest.jsonl` and `dataset.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_jsonl())?;
        let meta = DatasetMeta {
            format: MANIFEST_FORMAT.into(),
            seed: self.seed,
            images: self.entries.len(),
            train: self.count(Split::Train),
            test: self.count(Split::Test),
        };
        fs::write(
            dir.join(META_FILE),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        Ok(path)
    }

    /// Reads a manifest and the `dataset.json` beside it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let meta_path = path.with_file_name(META_FILE);
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        if meta.format != MANIFEST_FORMAT {
            return Err(Error::format(format!(
                "unsupported manifest format `{}`",
                meta.format
            )));
        }
        let manifest = DatasetManifest::from_jsonl(&text, meta.seed)?;
        if manifest.entries.len() != meta.images {
            return Err(Error::format(format!(
                "{} lists {} images, manifest has {}",
                META_FILE,
                meta.images,
                manifest.entries.len()
            )));
        }
        Ok(manifest)
    }
}

/// Images of one split with their labels, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Vec<GrayImage>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads the images of `split` listed in the manifest at `manifest_path`.
    pub fn load(manifest_path: &Path, manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let entries: Vec<&ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.split == split)
            .collect();
        let images = par::map_slice(&entries, |e| GrayImage::load_pgm(&base.join(&e.path)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageSet {
            images,
            labels: entries.iter().map(|e| e.label).collect(),
        })
    }
}

/// A built dataset: the manifest plus the 84×63 image of every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

impl Dataset {
    pub fn split_set(&self, split: Split) -> ImageSet {
        let (images, labels) = self
            .manifest
            .entries
            .iter()
            .zip(&self.images)
            .filter(|(e, _)| e.split == split)
            .map(|(e, img)| (img.clone(), e.label))
            .unzip();
        ImageSet { images, labels }
    }

    /// Writes images and manifest under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir.join("images"))?;
        for (e, img) in self.manifest.entries.iter().zip(&self.images) {
            img.save_pgm(&dir.join(&e.path))?;
        }
        self.manifest.write(dir)
    }
}

/// Mean mu-band power per channel over the baseline interval and each window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPowers {
    pub baseline: Vec<f64>,
    pub windows: Vec<Vec<f64>>,
}

pub fn trial_powers(
    trial: &EegTrial,
    bank: &MorletBank,
    spec: &BandPowerSpec,
    plan: &WindowPlan,
) -> Result<TrialPowers> {
    let fs = trial.fs as f64;
    let windows = plan.slice_windows(trial.duration())?;
    let mut baseline = Vec::with_capacity(trial.channels.len());
    let mut per_window = vec![Vec::with_capacity(trial.channels.len()); windows.len()];
    for ch in &trial.channels {
        let env = bank.power_envelope(ch)?;
        baseline.push(window_mean(&env, fs, spec, plan.baseline_interval)?);
        for (out, &w) in per_window.iter_mut().zip(&windows) {
            out.push(window_mean(&env, fs, spec, w)?);
        }
    }
    Ok(TrialPowers {
        baseline,
        windows: per_window,
    })
}

/// Called with every full-resolution render; used to stream them to disk.
pub type FullImageSink<'a> = &'a (dyn Fn(&ImageMeta, &GrayImage) -> Result<()> + Sync);

/// Assigns each group to train or test. Per class, groups are shuffled with a
/// seeded generator and the first `quota` go to train. The train total is
/// `round(fraction · G)`, shared between classes by largest remainder, so each
/// class is within one group of its proportional share.
pub fn split_groups(labels: &[Hand], fraction: f64, seed_value: u64) -> Result<Vec<Split>> {
    let total = labels.len();
    let train_total = (fraction * total as f64).round() as usize;
    let classes = [Hand::Right, Hand::Left];
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..total).filter(|&i| labels[i] == c).collect())
        .collect();
    if let Some(c) = classes.iter().zip(&members).find(|(_, m)| m.is_empty()) {
        return Err(Error::domain(format!(
            "class {} has no images",
            c.0.label()
        )));
    }
    let ideal: Vec<f64> = members.iter().map(|m| fraction * m.len() as f64).collect();
    let mut quota: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    // Stable sort keeps class order on equal remainders.
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders")
    });
    let mut missing = train_total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(2 * classes.len()) {
        if missing == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }
    let mut out = vec![Split::Test; total];
    for (k, (c, m)) in classes.iter().zip(members).enumerate() {
        let mut m = m;
        m.shuffle(&mut seed::rng(seed_value, &[0x5917, c.label() as u64]));
        for &i in &m[..quota[k]] {
            out[i] = Split::Train;
        }
    }
    Ok(out)
}

/// Renders `|trials| × |windows| × 2` images and splits them.
///
/// Trials must already be filtered. Images come out in (subject, trial, window,
/// baseline) order whatever the input order or thread count.
pub fn build_dataset(
    trials: &[EegTrial],
    montage: &Montage,
    cfg: &TopomapConfig,
    spec: &BandPowerSpec,
    seed_value: u64,
    full_sink: Option<FullImageSink>,
) -> Result<Dataset> {
    cfg.validate()?;
    if trials.is_empty() {
        return Err(Error::domain("no trials to build a dataset from"));
    }
    let mut order: Vec<&EegTrial> = trials.iter().collect();
    order.sort_by_key(|t| (t.subject_id, t.trial_id));
    if let Some(w) = order
        .windows(2)
        .find(|w| (w[0].subject_id, w[0].trial_id) == (w[1].subject_id, w[1].trial_id))
    {
        return Err(Error::domain(format!(
            "duplicate trial s{} t{}",
            w[0].subject_id, w[0].trial_id
        )));
    }
    for t in &order {
        t.validate(montage.len())?;
    }

    let mut banks = BTreeMap::new();
    for t in &order {
        let key = (t.fs, t.n_samples());
        if let std::collections::btree_map::Entry::Vacant(v) = banks.entry(key) {
            v.insert(MorletBank::new(t.fs as f64, spec, t.n_samples())?);
        }
    }
    let interp = Interpolator::new(montage, FULL_WIDTH, FULL_HEIGHT)?;

    let per_trial = par::map_slice(&order, |t| -> Result<Vec<(ImageMeta, GrayImage)>> {
        let powers = trial_powers(t, &banks[&(t.fs, t.n_samples())], spec, &cfg.plan)?;
        let mut out = Vec::with_capacity(powers.windows.len() * 2);
        for (w, p) in powers.windows.iter().enumerate() {
            for mode in BaselineMode::BOTH {
                let meta = ImageMeta {
                    subject: t.subject_id,
                    trial: t.trial_id,
                    window: w,
                    baseline: mode,
                    label: t.label,
                };
                let values = baseline_correct(p, &powers.baseline, mode)?;
                let full = render_topogram(&interp.interpolate(&values)?)?;
                if let Some(sink) = full_sink {
                    sink(&meta, &full)?;
                }
                out.push((meta, downsample(&full)?));
            }
        }
        Ok(out)
    });

    let mut metas = Vec::new();
    let mut images = Vec::new();
    let mut group_of = Vec::new();
    for (g, r) in per_trial.into_iter().enumerate() {
        for (m, img) in r? {
            metas.push(m);
            images.push(img);
            group_of.push(g);
        }
    }

    let splits = match cfg.split_unit {
        SplitUnit::Trial => {
            let labels: Vec<Hand> = order.iter().map(|t| t.label).collect();
            let by_trial = split_groups(&labels, cfg.train_fraction, seed_value)?;
            group_of.iter().map(|&g| by_trial[g]).collect()
        }
        SplitUnit::Image => {
            let labels: Vec<Hand> = metas.iter().map(|m| m.label).collect();
            split_groups(&labels, cfg.train_fraction, seed_value)?
        }
    };

    let entries = metas
        .iter()
        .zip(splits)
        .map(|(m, split)| ManifestEntry {
            path: format!("images/{}", m.file_name()),
            label: m.label.label(),
            split,
            subject: m.subject,
            trial: m.trial,
            window: m.window,
            baseline: m.baseline,
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            entries,
            seed: seed_value,
        },
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(right: usize, left: usize) -> Vec<Hand> {
        let mut v = vec![Hand::Right; right];
        v.extend(vec![Hand::Left; left]);
        v
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        for (r, l) in [(470, 469), (5, 5), (120, 120), (3, 8), (1, 1)] {
            let labs = labels(r, l);
            let s = split_groups(&labs, 0.8, 3).unwrap();
            let n = r + l;
            let train = s.iter().filter(|&&x| x == Split::Train).count();
            assert_eq!(train, (0.8 * n as f64).round() as usize, "{r}+{l}");
            for (c, nc) in [(Hand::Right, r), (Hand::Left, l)] {
                let tc = (0..n)
                    .filter(|&i| labs[i] == c && s[i] == Split::Train)
                    .count();
                assert!((tc as f64 - 0.8 * nc as f64).abs() < 1.0 + 1e-9);
            }
        }
        let s = split_groups(&labels(470, 469), 0.8, 3).unwrap();
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 751);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 188);
    }

    #[test]
    fn split_is_seeded() {
        let labs = labels(50, 50);
        assert_eq!(
            split_groups(&labs, 0.8, 9).unwrap(),
            split_groups(&labs, 0.8, 9).unwrap()
        );
        assert_ne!(
            split_groups(&labs, 0.8, 9).unwrap(),
            split_groups(&labs, 0.8, 10).unwrap()
        );
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            split_groups(&labels(4, 0), 0.8, 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn manifest_line_format() {
        let m = DatasetManifest {
            entries: vec![ManifestEntry {
                path: "images/s001_t002_w3_relative.pgm".into(),
                label: 1,
                split: Split::Test,
                subject: 1,
                trial: 2,
                window: 3,
                baseline: BaselineMode::Relative,
            }],
            seed: 5,
        };
        let text = m.to_jsonl();
        assert_eq!(
            text,
            "{\"path\":\"images/s001_t002_w3_relative.pgm\",\"label\":1,\"split\":\"test\",\"subject\":1,\"trial\":2,\"window\":3,\"baseline\":\"relative\"}\n"
        );
        assert_eq!(DatasetManifest::from_jsonl(&text, 5).unwrap(), m);
        assert!(
            DatasetManifest::from_jsonl(&text.replace("\"label\":1", "\"label\":4"), 5).is_err()
        );
    }
}
