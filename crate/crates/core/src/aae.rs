//! Adversarial autoencoder pair used as a one-class anomaly detector.
//!
//! Two fully convolutional autoencoders of identical topology play generator `G`
//! and discriminator `D`. With `‖·‖` the per-image L1 norm averaged over the batch,
//!
//! ```text
//! lossD = ‖X − D(X)‖ − ‖G(X) − D(G(X))‖      (G held fixed)
//! lossG = ‖X − D(X)‖ + ‖G(X) − D(G(X))‖      (D held fixed)
//! ```
//!
//! Both are trained on images of the normal class only. The anomaly score of an
//! image is `lossG` on that image alone; a threshold picked on a small labeled part
//! of the training split turns scores into class predictions.
//!
//! Images are bilinearly resized to 64×48 and scaled to `[0, 1]`. The encoder halves
//! the resolution three times (4×4 convolutions, stride 2, padding 1); the decoder
//! doubles it three times with transposed convolutions of the same shape, then a
//! 3×3 convolution maps to one linear output channel.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::report::{Confusion, Report};
use crate::tensor::{checkpoint, Adam, Graph, Real, Tensor, Var};
use crate::topomap::{resize_bilinear, GrayImage, ImageSet};
use crate::{par, seed, Error, Result};

pub const AAE_WIDTH: usize = 64;
pub const AAE_HEIGHT: usize = 48;
const KERNEL: usize = 4;
const OUT_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct AaeConfig {
    /// Encoder widths; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub normal_class: u8,
    /// Share of the training split whose labels are used to pick the threshold.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for AaeConfig {
    fn default() -> Self {
        AaeConfig {
            channels: vec![16, 32, 64],
            epochs: 400,
            batch: 16,
            lr: 2e-4,
            normal_class: 0,
            labeled_fraction: 0.1,
            seed: 0,
        }
    }
}

impl AaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::domain(format!(
                "channels must be non-empty and positive, got {:?}",
                self.channels
            )));
        }
        let scale = 1usize << self.channels.len();
        if AAE_WIDTH % scale != 0 || AAE_HEIGHT % scale != 0 {
            return Err(Error::domain(format!(
                "{} stride-2 stages do not divide a {AAE_WIDTH}×{AAE_HEIGHT} input",
                self.channels.len()
            )));
        }
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::domain("batch must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::domain(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.normal_class > 1 {
            return Err(Error::domain(format!(
                "normalClass must be 0 or 1, got {}",
                self.normal_class
            )));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::domain(format!(
                "labeledFraction must lie in (0, 1], got {}",
                self.labeled_fraction
            )));
        }
        Ok(())
    }
}

/// One fully convolutional autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T: Real = f32> {
    stages: usize,
    params: Vec<(String, Tensor<T>)>,
}

/// Output widths of the decoder stages: the encoder widths in reverse, shifted by
/// one, ending at half the first encoder width.
fn decoder_widths(channels: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = channels.iter().rev().skip(1).copied().collect();
    out.push((channels[0] / 2).max(1));
    out
}

impl<T: Real> Autoencoder<T> {
    /// He-initialized weights with zero biases, named `{prefix}.enc{i}`,
    /// `{prefix}.dec{i}` and `{prefix}.out`.
    pub fn build(prefix: &str, channels: &[usize], seed_value: u64) -> Self {
        let mut params = Vec::new();
        let rng = |part: u64, i: usize| seed::rng(seed_value, &[part, i as u64]);
        let k2 = KERNEL * KERNEL;
        let mut cin = 1;
        for (i, &c) in channels.iter().enumerate() {
            let w = Tensor::he(&[c, cin, KERNEL, KERNEL], cin * k2, &mut rng(0xe0, i));
            params.push((format!("{prefix}.enc{i}.w"), w));
            params.push((format!("{prefix}.enc{i}.b"), Tensor::zeros(&[c])));
            cin = c;
        }
        for (i, &c) in decoder_widths(channels).iter().enumerate() {
            // A stride-2 transposed 4×4 kernel feeds each output pixel from 2×2 taps
            // per input channel.
            let w = Tensor::he(&[cin, c, KERNEL, KERNEL], cin * 4, &mut rng(0xd0, i));
            params.push((format!("{prefix}.dec{i}.w"), w));
            params.push((format!("{prefix}.dec{i}.b"), Tensor::zeros(&[c])));
            cin = c;
        }
        let w = Tensor::he(
            &[1, cin, OUT_KERNEL, OUT_KERNEL],
            cin * OUT_KERNEL * OUT_KERNEL,
            &mut rng(0x0f, 0),
        );
        params.push((format!("{prefix}.out.w"), w));
        params.push((format!("{prefix}.out.b"), Tensor::zeros(&[1])));
        Autoencoder {
            stages: channels.len(),
            params,
        }
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.params.iter().map(|(_, t)| t).collect()
    }

    /// Adds the weights to `g`, trainable or constant.
    pub fn insert(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// Reconstruction of `x: [N, 1, H, W]` using weights inserted by [`Self::insert`].
    /// Any `H`, `W` divisible by `2^stages` is accepted.
    pub fn apply(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let scale = 1usize << self.stages;
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] % scale != 0 || shape[3] % scale != 0 {
            return Err(Error::domain(format!(
                "autoencoder input must be [N, 1, H, W] with H and W divisible by {scale}, got {shape:?}"
            )));
        }
        let mut h = x;
        let mut p = 0;
        for layer in 0..2 * self.stages {
            h = if layer < self.stages {
                g.conv2d(h, vars[p], vars[p + 1], 2, 1)?
            } else {
                g.conv_transpose2d(h, vars[p], vars[p + 1], 2, 1)?
            };
            h = g.relu(h);
            p += 2;
        }
        g.conv2d(h, vars[p], vars[p + 1], 1, OUT_KERNEL / 2)
    }

    /// Reconstruction of a batch outside any training graph.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.insert(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.apply(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }

    fn cast<U: Real>(&self) -> Autoencoder<U> {
        Autoencoder {
            stages: self.stages,
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

/// Generator, discriminator and the calibrated decision rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AaeModel<T: Real = f32> {
    pub g: Autoencoder<T>,
    pub d: Autoencoder<T>,
    pub normal_class: u8,
    /// Scores above this are predicted as the other class; `None` before calibration.
    pub threshold: Option<f64>,
}

impl<T: Real> AaeModel<T> {
    pub fn build(cfg: &AaeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AaeModel {
            g: Autoencoder::build("g", &cfg.channels, seed::derive(cfg.seed, &[0x6])),
            d: Autoencoder::build("d", &cfg.channels, seed::derive(cfg.seed, &[0xd])),
            normal_class: cfg.normal_class,
            threshold: None,
        })
    }

    pub fn cast<U: Real>(&self) -> AaeModel<U> {
        AaeModel {
            g: self.g.cast(),
            d: self.d.cast(),
            normal_class: self.normal_class,
            threshold: self.threshold,
        }
    }

    /// Class predicted for a score under the calibrated threshold.
    pub fn classify(&self, score: f64) -> Result<u8> {
        let t = self
            .threshold
            .ok_or_else(|| Error::domain("model has no decision threshold; calibrate it first"))?;
        Ok(if score > t {
            1 - self.normal_class
        } else {
            self.normal_class
        })
    }
}

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AaeLosses {
    /// Batch mean of `‖X − D(X)‖₁`.
    pub real: f64,
    /// Batch mean of `‖G(X) − D(G(X))‖₁`.
    pub fake: f64,
    pub loss_d: f64,
    pub loss_g: f64,
}

/// Builds one adversarial objective on `x`. With `train_d` the discriminator's
/// weights are trainable and `lossD` is returned; otherwise the generator's weights
/// are trainable and `lossG` is returned. Returns the trainable handles, the loss
/// node and the `(real, fake)` batch-mean terms.
fn objective<T: Real>(
    model: &AaeModel<T>,
    g: &mut Graph<T>,
    x: &Tensor<T>,
    train_d: bool,
) -> Result<(Vec<Var>, Var, f64, f64)> {
    let gv = model.g.insert(g, !train_d);
    let dv = model.d.insert(g, train_d);
    let xv = g.constant(x.clone());
    let gx = model.g.apply(g, &gv, xv)?;
    let (loss, real, fake) = adversarial_terms(&model.d, g, &dv, xv, gx, train_d)?;
    Ok((if train_d { dv } else { gv }, loss, real, fake))
}

/// Given `X` and `G(X)` already in `g`, adds `D`'s two reconstruction terms and
/// their difference (`lossD`) or sum (`lossG`).
fn adversarial_terms<T: Real>(
    d: &Autoencoder<T>,
    g: &mut Graph<T>,
    dv: &[Var],
    xv: Var,
    gx: Var,
    train_d: bool,
) -> Result<(Var, f64, f64)> {
    let n = g.value(xv).shape()[0];
    if n == 0 {
        return Err(Error::domain("empty batch"));
    }
    let dx = d.apply(g, dv, xv)?;
    let dgx = d.apply(g, dv, gx)?;
    let real = g.l1(xv, dx)?;
    let real = g.scale(real, 1.0 / n as f64);
    let fake = g.l1(gx, dgx)?;
    let fake = g.scale(fake, 1.0 / n as f64);
    let loss = if train_d {
        g.sub(real, fake)?
    } else {
        g.add(real, fake)?
    };
    Ok((loss, g.value(real).item().f64(), g.value(fake).item().f64()))
}

/// One Adam step of D on `lossD`, then one of G on `lossG`. Returns `lossD`,
/// `lossG` and the two terms seen by the D step.
///
/// G does not change during the D step, so a single forward pass of G on the
/// G-step graph also provides the constant `G(X)` of the D step.
fn train_step(
    model: &mut AaeModel<f32>,
    opt_d: &mut Adam,
    opt_g: &mut Adam,
    x: &Tensor<f32>,
) -> Result<[f64; 4]> {
    let mut graph_g = Graph::new();
    let gv = model.g.insert(&mut graph_g, true);
    let xg = graph_g.constant(x.clone());
    let gx = model.g.apply(&mut graph_g, &gv, xg)?;

    let mut graph_d = Graph::new();
    let dv = model.d.insert(&mut graph_d, true);
    let xd = graph_d.constant(x.clone());
    let gx_data = graph_d.constant(graph_g.value(gx).clone());
    let (loss_d, real, fake) = adversarial_terms(&model.d, &mut graph_d, &dv, xd, gx_data, true)?;
    graph_d.backward(loss_d)?;
    let grads: Vec<_> = dv.iter().map(|&v| graph_d.grad(v)).collect();
    step(opt_d, &mut model.d, &grads)?;

    let dv = model.d.insert(&mut graph_g, false);
    let (loss_g, _, _) = adversarial_terms(&model.d, &mut graph_g, &dv, xg, gx, false)?;
    graph_g.backward(loss_g)?;
    let grads: Vec<_> = gv.iter().map(|&v| graph_g.grad(v)).collect();
    step(opt_g, &mut model.g, &grads)?;
    Ok([
        graph_d.value(loss_d).item().f64(),
        graph_g.value(loss_g).item().f64(),
        real,
        fake,
    ])
}

/// `lossD` and `lossG` of a batch `[N, 1, H, W]`, evaluated with the same graphs
/// used for training.
pub fn losses<T: Real>(model: &AaeModel<T>, x: &Tensor<T>) -> Result<AaeLosses> {
    let mut gd = Graph::new();
    let (_, ld, real, fake) = objective(model, &mut gd, x, true)?;
    let mut gg = Graph::new();
    let (_, lg, _, _) = objective(model, &mut gg, x, false)?;
    Ok(AaeLosses {
        real,
        fake,
        loss_d: gd.value(ld).item().f64(),
        loss_g: gg.value(lg).item().f64(),
    })
}

/// Gradients of `lossD` with respect to D's weights (`train_d`) or of `lossG` with
/// respect to G's weights.
pub fn objective_grads<T: Real>(
    model: &AaeModel<T>,
    x: &Tensor<T>,
    train_d: bool,
) -> Result<(f64, f64, f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let (vars, loss, real, fake) = objective(model, &mut g, x, train_d)?;
    g.backward(loss)?;
    let value = g.value(loss).item().f64();
    Ok((value, real, fake, vars.iter().map(|&v| g.grad(v)).collect()))
}

/// Resizes and scales images into `[N, 1, 48, 64]`.
pub fn aae_batch<T: Real>(images: &[&GrayImage]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(images.len() * AAE_WIDTH * AAE_HEIGHT);
    for img in images {
        if img.width < 2 || img.height < 2 {
            return Err(Error::domain(format!(
                "image {}×{} is too small to resize",
                img.width, img.height
            )));
        }
        data.extend(
            resize_bilinear(img, AAE_WIDTH, AAE_HEIGHT)
                .into_iter()
                .map(|v| T::of(v as f64 / 255.0)),
        );
    }
    Tensor::new(&[images.len(), 1, AAE_HEIGHT, AAE_WIDTH], data)
}

/// Per-image `lossG` of a batch `[N, 1, H, W]`. Each score depends only on its own
/// image.
pub fn anomaly_scores<T: Real>(model: &AaeModel<T>, x: &Tensor<T>) -> Result<Vec<f64>> {
    let dx = model.d.reconstruct(x)?;
    let gx = model.g.reconstruct(x)?;
    let dgx = model.d.reconstruct(&gx)?;
    let n = x.shape()[0];
    let len = x.len() / n.max(1);
    let l1 = |a: &[T], b: &[T]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p.f64() - q.f64()).abs())
            .sum::<f64>()
    };
    Ok((0..n)
        .map(|i| {
            let r = i * len..(i + 1) * len;
            l1(&x.data()[r.clone()], &dx.data()[r.clone()])
                + l1(&gx.data()[r.clone()], &dgx.data()[r])
        })
        .collect())
}

/// Anomaly score of one image.
pub fn anomaly_score(model: &AaeModel<f32>, img: &GrayImage) -> Result<f64> {
    Ok(anomaly_scores(model, &aae_batch(&[img])?)?[0])
}

const SCORE_BATCH: usize = 32;

/// Scores of every image of a set, computed in fixed batches.
pub fn score_images(model: &AaeModel<f32>, images: &[GrayImage]) -> Result<Vec<f64>> {
    let chunks = images.len().div_ceil(SCORE_BATCH);
    let parts = par::map_range(chunks, |c| -> Result<Vec<f64>> {
        let end = ((c + 1) * SCORE_BATCH).min(images.len());
        let refs: Vec<&GrayImage> = images[c * SCORE_BATCH..end].iter().collect();
        anomaly_scores(model, &aae_batch(&refs)?)
    });
    let mut out = Vec::with_capacity(images.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Threshold maximizing balanced accuracy of `score > t ⇒ anomalous`. Candidates
/// are the smallest score and the midpoints between consecutive distinct scores;
/// ties go to the smaller candidate.
pub fn choose_threshold(scores: &[f64], anomalous: &[bool]) -> Result<f64> {
    if scores.len() != anomalous.len() {
        return Err(Error::shape("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    let pos = anomalous.iter().filter(|&&a| a).count();
    let neg = anomalous.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::domain(
            "threshold selection needs labeled images of both classes",
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sweep the distinct values upward. After group j, every score ≤ v_j is
    // predicted normal, which is the effect of the candidate between v_j and
    // v_{j+1}. For j = 0 the smaller candidate min = v_0 has the same effect and wins
    // the tie.
    let (mut best_t, mut best_ba) = (scores[idx[0]], f64::NEG_INFINITY);
    let mut below = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let v = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == v {
            if anomalous[idx[i]] {
                below.1 += 1;
            } else {
                below.0 += 1;
            }
            i += 1;
        }
        let candidate = match idx.get(i) {
            _ if best_ba == f64::NEG_INFINITY => v,
            Some(&next) => (v + scores[next]) / 2.0,
            None => break,
        };
        let ba = balanced(below, pos, neg);
        if ba > best_ba {
            best_ba = ba;
            best_t = candidate;
        }
    }
    Ok(best_t)
}

/// Balanced accuracy when the given numbers of normal and anomalous items fall at or
/// below the threshold.
fn balanced((normals_below, anomalies_below): (usize, usize), pos: usize, neg: usize) -> f64 {
    let tnr = normals_below as f64 / neg as f64;
    let tpr = (pos - anomalies_below) as f64 / pos as f64;
    (tnr + tpr) / 2.0
}

/// Area under the ROC curve of `scores` for detecting `positive` items, via the
/// Mann–Whitney rank statistic with tied pairs counted as one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape("scores and labels differ in length"));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::domain("AUC needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * idx[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// Seeded, stratified choice of `round(fraction · n_c)` images (at least one) of
/// each class `c`. Returns sorted indices.
pub fn labeled_subset(labels: &[u8], fraction: f64, seed_value: u64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::domain(format!(
                "no training images of class {class} to calibrate on"
            )));
        }
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        members.shuffle(&mut seed::rng(seed_value, &[0x1ab, class as u64]));
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AaeEpoch {
    pub loss_d: f64,
    pub loss_g: f64,
    /// Mean `‖X − D(X)‖₁` seen by the discriminator steps.
    pub real: f64,
    /// Mean `‖G(X) − D(G(X))‖₁` seen by the discriminator steps.
    pub fake: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AaeHistory {
    pub seed: u64,
    pub normal_images: usize,
    pub labeled_images: usize,
    pub threshold: f64,
    pub per_epoch: Vec<AaeEpoch>,
}

/// Trains G and D on the normal-class images of `train`, then calibrates the
/// threshold on a labeled subset of `train`. Per batch: one Adam step of D on
/// `lossD`, then one Adam step of G on `lossG`.
pub fn train_aae(train: &ImageSet, cfg: &AaeConfig) -> Result<(AaeModel, AaeHistory)> {
    cfg.validate()?;
    let normals: Vec<&GrayImage> = train
        .images
        .iter()
        .zip(&train.labels)
        .filter(|(_, &l)| l == cfg.normal_class)
        .map(|(img, _)| img)
        .collect();
    if normals.len() < 2 {
        return Err(Error::domain(format!(
            "training needs at least 2 images of normal class {}, found {}",
            cfg.normal_class,
            normals.len()
        )));
    }
    let data: Tensor<f32> = aae_batch(&normals)?;
    let labeled = labeled_subset(&train.labels, cfg.labeled_fraction, cfg.seed)?;

    let mut model = AaeModel::<f32>::build(cfg)?;
    let mut opt_d = Adam::new(&model.d.tensors(), cfg.lr);
    let mut opt_g = Adam::new(&model.g.tensors(), cfg.lr);
    let mut order: Vec<usize> = (0..normals.len()).collect();
    let image_len = AAE_WIDTH * AAE_HEIGHT;
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &[0xaae, epoch as u64]));
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(cfg.batch) {
            let mut xs = Vec::with_capacity(batch.len() * image_len);
            for &i in batch {
                xs.extend_from_slice(&data.data()[i * image_len..][..image_len]);
            }
            let x = Tensor::new(&[batch.len(), 1, AAE_HEIGHT, AAE_WIDTH], xs)?;
            let terms = train_step(&mut model, &mut opt_d, &mut opt_g, &x)?;
            if !terms.iter().all(|v| v.is_finite()) {
                return Err(Error::domain(format!(
                    "training diverged in epoch {}",
                    epoch + 1
                )));
            }
            let w = batch.len() as f64;
            for (s, v) in sums.iter_mut().zip(terms) {
                *s += w * v;
            }
        }
        let n = normals.len() as f64;
        per_epoch.push(AaeEpoch {
            loss_d: sums[0] / n,
            loss_g: sums[1] / n,
            real: sums[2] / n,
            fake: sums[3] / n,
        });
    }

    let subset: Vec<GrayImage> = labeled.iter().map(|&i| train.images[i].clone()).collect();
    let scores = score_images(&model, &subset)?;
    let anomalous: Vec<bool> = labeled
        .iter()
        .map(|&i| train.labels[i] != cfg.normal_class)
        .collect();
    // Checkpoints store the threshold in 32 bits; use that value from the start.
    let threshold = choose_threshold(&scores, &anomalous)? as f32 as f64;
    model.threshold = Some(threshold);
    let history = AaeHistory {
        seed: cfg.seed,
        normal_images: normals.len(),
        labeled_images: labeled.len(),
        threshold,
        per_epoch,
    };
    Ok((model, history))
}

fn step(opt: &mut Adam, ae: &mut Autoencoder<f32>, grads: &[Tensor<f32>]) -> Result<()> {
    let mut params: Vec<&mut Tensor<f32>> = ae.params.iter_mut().map(|(_, t)| t).collect();
    opt.step(&mut params, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AaeReport {
    pub normal_class: u8,
    pub threshold: f64,
    pub test_images: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Absent when the split holds a single class.
    pub auc: Option<f64>,
    pub mean_score_normal: Option<f64>,
    pub mean_score_other: Option<f64>,
    pub confusion: Confusion,
}

impl Report for AaeReport {
    fn confusion(&self) -> &Confusion {
        &self.confusion
    }
}

/// Thresholded predictions, confusion matrix and score AUC on a labeled split.
pub fn evaluate_aae(model: &AaeModel<f32>, test: &ImageSet) -> Result<AaeReport> {
    if test.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty split"));
    }
    let threshold = model
        .threshold
        .ok_or_else(|| Error::domain("model has no decision threshold; calibrate it first"))?;
    let scores = score_images(model, &test.images)?;
    let predicted = scores
        .iter()
        .map(|&s| model.classify(s))
        .collect::<Result<Vec<u8>>>()?;
    let confusion = Confusion::from_predictions(&test.labels, &predicted)?;
    let other: Vec<bool> = test
        .labels
        .iter()
        .map(|&l| l != model.normal_class)
        .collect();
    let mean = |want: bool| {
        let v: Vec<f64> = scores
            .iter()
            .zip(&other)
            .filter(|(_, &o)| o == want)
            .map(|(s, _)| *s)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let both = other.iter().any(|&o| o) && other.iter().any(|&o| !o);
    Ok(AaeReport {
        normal_class: model.normal_class,
        threshold,
        test_images: test.len(),
        accuracy: confusion.accuracy(),
        balanced_accuracy: confusion.balanced_accuracy(),
        auc: if both {
            Some(auc(&scores, &other)?)
        } else {
            None
        },
        mean_score_normal: mean(false),
        mean_score_other: mean(true),
        confusion,
    })
}

const META_THRESHOLD: &str = "meta.threshold";
const META_NORMAL: &str = "meta.normal_class";

impl AaeModel<f32> {
    pub fn to_tensors(&self) -> Result<Vec<(String, Tensor<f32>)>> {
        let threshold = self
            .threshold
            .ok_or_else(|| Error::domain("only calibrated models can be saved"))?;
        let mut out: Vec<(String, Tensor<f32>)> = self
            .g
            .params
            .iter()
            .chain(&self.d.params)
            .cloned()
            .collect();
        out.push((META_THRESHOLD.into(), Tensor::scalar(threshold as f32)));
        out.push((META_NORMAL.into(), Tensor::scalar(self.normal_class as f32)));
        Ok(out)
    }

    pub fn from_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let mut channels = Vec::new();
        while let Some((_, w)) = tensors
            .iter()
            .find(|(n, _)| *n == format!("g.enc{}.w", channels.len()))
        {
            channels.push(w.shape()[0]);
        }
        let threshold = checkpoint::take(tensors, META_THRESHOLD, &[])?.item() as f64;
        let normal = checkpoint::take(tensors, META_NORMAL, &[])?.item();
        if normal != 0.0 && normal != 1.0 {
            return Err(Error::format(format!(
                "bad normal class {normal} in checkpoint"
            )));
        }
        let cfg = AaeConfig {
            channels,
            normal_class: normal as u8,
            ..AaeConfig::default()
        };
        cfg.validate().map_err(|e| {
            Error::format(format!("checkpoint is not an adversarial autoencoder: {e}"))
        })?;
        let mut model = AaeModel::<f32>::build(&cfg)?;
        for (name, t) in model.g.params.iter_mut().chain(model.d.params.iter_mut()) {
            *t = checkpoint::take(tensors, name, t.shape())?;
        }
        if tensors.len() != model.g.params.len() + model.d.params.len() + 2 {
            return Err(Error::format(
                "checkpoint holds tensors the model does not use",
            ));
        }
        model.threshold = Some(threshold);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensors()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&checkpoint::load(path)?)
    }
}
