//! Supervised topogram classifier.
//!
//! Input batches are `[N, 1, 63, 84]` (row-major image layout, intensities divided by
//! 255). Each stage is a same-padded `k×k` convolution, relu and 2×2 max pooling;
//! with the default widths the spatial chain is 63×84 → 31×42 → 15×21 → 7×10 → 3×5,
//! so the flattened feature vector has 64·3·5 = 960 entries. The dense head ends in
//! a softmax over the two classes.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::report::{Confusion, Report};
use crate::tensor::{checkpoint, Adam, Graph, Real, Tensor, Var};
use crate::topomap::{GrayImage, ImageSet, NET_HEIGHT, NET_WIDTH};
use crate::{par, seed, Error, Result};

pub const CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct CnnConfig {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Output widths of the dense layers; the last one is the class count.
    pub fc_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_channels: vec![8, 16, 32, 64],
            kernel: 5,
            fc_sizes: vec![128, 32, 2],
            epochs: 10,
            batch: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.conv_channels;
        if c.is_empty() || c[0] == 0 || c.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::domain(format!(
                "convChannels must be positive and strictly increasing, got {c:?}"
            )));
        }
        let f = &self.fc_sizes;
        if f.last() != Some(&CLASSES) || f.windows(2).any(|p| p[0] <= p[1]) {
            return Err(Error::domain(format!(
                "fcSizes must decrease strictly down to {CLASSES} classes, got {f:?}"
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::domain(format!(
                "kernel must be odd for same padding, got {}",
                self.kernel
            )));
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
        let (h, w) = self.feature_grid();
        if h == 0 || w == 0 {
            return Err(Error::domain(format!(
                "{} pooling stages shrink a {NET_HEIGHT}×{NET_WIDTH} input to nothing",
                c.len()
            )));
        }
        if self.flatten_len() <= f[0] {
            return Err(Error::domain(format!(
                "first dense layer ({}) must be narrower than the {} flattened features",
                f[0],
                self.flatten_len()
            )));
        }
        Ok(())
    }

    /// Spatial size after the last pooling stage.
    pub fn feature_grid(&self) -> (usize, usize) {
        let shrink = |d: usize| self.conv_channels.iter().fold(d, |d, _| d / 2);
        (shrink(NET_HEIGHT), shrink(NET_WIDTH))
    }

    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.feature_grid();
        self.conv_channels.last().copied().unwrap_or(0) * h * w
    }
}

/// Network weights. Parameter order: `conv{i}.w`, `conv{i}.b` per stage, then
/// `fc{i}.w` (`[in, out]`), `fc{i}.b` per dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn<T: Real = f32> {
    cfg: CnnConfig,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Cnn<T> {
    /// He-initialized weights (zero biases) drawn from `cfg.seed`.
    pub fn build(cfg: &CnnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = Vec::new();
        let k = cfg.kernel;
        let mut cin = 1;
        for (i, &f) in cfg.conv_channels.iter().enumerate() {
            let mut rng = seed::rng(cfg.seed, &[0xc0, i as u64]);
            params.push((
                format!("conv{i}.w"),
                Tensor::he(&[f, cin, k, k], cin * k * k, &mut rng),
            ));
            params.push((format!("conv{i}.b"), Tensor::zeros(&[f])));
            cin = f;
        }
        let mut inp = cfg.flatten_len();
        for (i, &o) in cfg.fc_sizes.iter().enumerate() {
            let mut rng = seed::rng(cfg.seed, &[0xfc, i as u64]);
            params.push((format!("fc{i}.w"), Tensor::he(&[inp, o], inp, &mut rng)));
            params.push((format!("fc{i}.b"), Tensor::zeros(&[o])));
            inp = o;
        }
        Ok(Cnn {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn cast<U: Real>(&self) -> Cnn<U> {
        Cnn {
            cfg: self.cfg.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Adds the weights to `g` (as trainable leaves when `trainable`) and returns
    /// their handles with the class-probability node `[N, 2]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<(Vec<Var>, Var)> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let stages = self.cfg.conv_channels.len();
        let pad = self.cfg.kernel / 2;
        let mut h = x;
        for i in 0..stages {
            h = g.conv2d(h, vars[2 * i], vars[2 * i + 1], 1, pad)?;
            h = g.relu(h);
            h = g.maxpool2(h)?;
        }
        let n = g.value(x).shape()[0];
        h = g.reshape(h, &[n, self.cfg.flatten_len()])?;
        let dense = self.cfg.fc_sizes.len();
        for j in 0..dense {
            let p = 2 * (stages + j);
            h = g.dense(h, vars[p], vars[p + 1])?;
            if j + 1 < dense {
                h = g.relu(h);
            }
        }
        let probs = g.softmax(h)?;
        Ok((vars, probs))
    }

    /// Class probabilities `[N, 2]` for a batch `[N, 1, 63, 84]`.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (_, probs) = self.forward(&mut g, xv, false)?;
        Ok(g.value(probs).clone())
    }

    /// Mean cross-entropy of a batch and the gradient of every parameter.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(f64, Tensor<T>, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (vars, probs) = self.forward(&mut g, xv, true)?;
        let loss = g.cross_entropy(probs, labels)?;
        g.backward(loss)?;
        let value = g.value(loss).item().f64();
        Ok((
            value,
            g.value(probs).clone(),
            vars.iter().map(|&v| g.grad(v)).collect(),
        ))
    }
}

impl Cnn<f32> {
    pub fn to_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.clone()
    }

    /// Rebuilds a model from checkpoint tensors; the architecture is read back from
    /// the weight shapes.
    pub fn from_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let mut cfg = CnnConfig {
            conv_channels: vec![],
            fc_sizes: vec![],
            ..CnnConfig::default()
        };
        let mut i = 0;
        while let Some((_, w)) = tensors.iter().find(|(n, _)| *n == format!("conv{i}.w")) {
            let [f, _, k, _] = w.shape()[..] else {
                return Err(Error::format(format!("conv{i}.w must be 4-D")));
            };
            cfg.conv_channels.push(f);
            cfg.kernel = k;
            i += 1;
        }
        let mut j = 0;
        while let Some((_, w)) = tensors.iter().find(|(n, _)| *n == format!("fc{j}.w")) {
            let [_, o] = w.shape()[..] else {
                return Err(Error::format(format!("fc{j}.w must be 2-D")));
            };
            cfg.fc_sizes.push(o);
            j += 1;
        }
        cfg.validate()
            .map_err(|e| Error::format(format!("checkpoint is not a classifier: {e}")))?;
        let mut model = Cnn::<f32>::build(&cfg)?;
        for (name, t) in &mut model.params {
            *t = checkpoint::take(tensors, name, t.shape())?;
        }
        if tensors.len() != model.params.len() {
            return Err(Error::format(
                "checkpoint holds tensors the classifier does not use",
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&checkpoint::load(path)?)
    }
}

/// Stacks images into `[N, 1, 63, 84]`, scaled to `[0, 1]`.
pub fn image_batch<T: Real>(images: &[&GrayImage]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(images.len() * NET_WIDTH * NET_HEIGHT);
    for img in images {
        if (img.width, img.height) != (NET_WIDTH, NET_HEIGHT) {
            return Err(Error::domain(format!(
                "classifier input must be {NET_WIDTH}×{NET_HEIGHT}, got {}×{}",
                img.width, img.height
            )));
        }
        data.extend(img.pixels.iter().map(|&p| T::of(p as f64 / 255.0)));
    }
    Tensor::new(&[images.len(), 1, NET_HEIGHT, NET_WIDTH], data)
}

fn argmax_rows<T: Real>(probs: &Tensor<T>) -> Vec<u8> {
    probs
        .data()
        .chunks(CLASSES)
        .map(|row| u8::from(row[1] > row[0]))
        .collect()
}

const EVAL_BATCH: usize = 64;

/// Predicted class of every image, evaluated in fixed-size batches.
pub fn predict(model: &Cnn<f32>, set: &ImageSet) -> Result<Vec<u8>> {
    let chunks = set.len().div_ceil(EVAL_BATCH);
    let parts = par::map_range(chunks, |c| -> Result<Vec<u8>> {
        let end = ((c + 1) * EVAL_BATCH).min(set.len());
        let refs: Vec<&GrayImage> = set.images[c * EVAL_BATCH..end].iter().collect();
        Ok(argmax_rows(&model.predict_proba(&image_batch(&refs)?)?))
    });
    let mut out = Vec::with_capacity(set.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Accuracy and confusion matrix over a labeled split.
pub fn evaluate(model: &Cnn<f32>, set: &ImageSet) -> Result<(f64, Confusion)> {
    if set.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty split"));
    }
    let confusion = Confusion::from_predictions(&set.labels, &predict(model, set)?)?;
    Ok((confusion.accuracy(), confusion))
}

/// Result of evaluating a trained model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub images: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub confusion: Confusion,
}

impl EvalReport {
    pub fn new(model: &Cnn<f32>, set: &ImageSet) -> Result<Self> {
        let (accuracy, confusion) = evaluate(model, set)?;
        Ok(EvalReport {
            images: set.len(),
            accuracy,
            balanced_accuracy: confusion.balanced_accuracy(),
            confusion,
        })
    }
}

impl Report for EvalReport {
    fn confusion(&self) -> &Confusion {
        &self.confusion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainReport {
    pub seed: u64,
    pub train_images: usize,
    pub test_images: usize,
    pub per_epoch: Vec<EpochStats>,
    pub final_confusion: Confusion,
    /// Not serialized, so that reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> f64 {
        self.final_confusion.accuracy()
    }
}

impl Report for TrainReport {
    fn confusion(&self) -> &Confusion {
        &self.final_confusion
    }
}

/// Trains `model` in place with Adam on seeded-shuffled minibatches, evaluating on
/// `test` after every epoch. Shuffling uses `cfg.seed`; `cfg.epochs`, `cfg.batch`
/// and `cfg.lr` override the values the model was built with.
pub fn train_cnn(
    model: &mut Cnn<f32>,
    train: &ImageSet,
    test: &ImageSet,
    cfg: &CnnConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::domain("training split is empty"));
    }
    if test.is_empty() {
        return Err(Error::domain("test split is empty"));
    }
    // Reject bad images before any work is done.
    image_batch::<f32>(&train.images.iter().chain(&test.images).collect::<Vec<_>>())?;
    let params: Vec<&Tensor<f32>> = model.params.iter().map(|(_, t)| t).collect();
    let mut opt = Adam::new(&params, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut confusion = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &[0x5b, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch) {
            let refs: Vec<&GrayImage> = batch.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i] as usize).collect();
            let (loss, probs, grads) = model.loss_and_grads(&image_batch(&refs)?, &labels)?;
            if !loss.is_finite() {
                return Err(Error::domain(format!(
                    "training diverged in epoch {}",
                    epoch + 1
                )));
            }
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(&probs)
                .iter()
                .zip(&labels)
                .filter(|(p, &l)| **p as usize == l)
                .count();
            opt.step(&mut model.params_mut().collect::<Vec<_>>(), &grads)?;
        }
        let (test_acc, c) = evaluate(model, test)?;
        confusion = Some(c);
        per_epoch.push(EpochStats {
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc,
        });
    }
    let final_confusion = match confusion {
        Some(c) => c,
        None => evaluate(model, test)?.1,
    };
    Ok(TrainReport {
        seed: cfg.seed,
        train_images: train.len(),
        test_images: test.len(),
        per_epoch,
        final_confusion,
        wall_time: start.elapsed(),
    })
}

/// Result of comparing backpropagated and finite-difference directional derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelCheck {
    pub tensor: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

pub const MODEL_FD_STEP: f64 = 1e-6;

/// Gradient check of the whole network in `f64` on a fixed batch: for every weight
/// tensor, the derivative of the loss along a random unit direction is compared with
/// a central difference of step [`MODEL_FD_STEP`].
pub fn check_model_gradients(
    model: &Cnn<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    rng_seed: u64,
) -> Result<Vec<ModelCheck>> {
    let (_, _, grads) = model.loss_and_grads(x, labels)?;
    let loss_at = |m: &Cnn<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (_, probs) = m.forward(&mut g, xv, false)?;
        let loss = g.cross_entropy(probs, labels)?;
        Ok(g.value(loss).item())
    };
    let mut out = Vec::new();
    for (i, (name, t)) in model.params.iter().enumerate() {
        let mut rng = seed::rng(rng_seed, &[i as u64]);
        let mut dir = Tensor::<f64>::randn(t.shape(), 1.0, &mut rng);
        let norm = dir.norm();
        dir.data_mut().iter_mut().for_each(|d| *d /= norm);
        let analytic: f64 = grads[i]
            .data()
            .iter()
            .zip(dir.data())
            .map(|(g, d)| g * d)
            .sum();
        let shifted = |sign: f64| {
            let mut m = model.clone();
            let p = &mut m.params[i].1;
            p.data_mut()
                .iter_mut()
                .zip(dir.data())
                .for_each(|(v, d)| *v += sign * MODEL_FD_STEP * d);
            loss_at(&m)
        };
        let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * MODEL_FD_STEP);
        let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        out.push(ModelCheck {
            tensor: name.clone(),
            analytic,
            numeric,
            rel_err,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rng: &mut impl Rng) -> GrayImage {
        GrayImage::new(
            NET_WIDTH,
            NET_HEIGHT,
            (0..NET_WIDTH * NET_HEIGHT).map(|_| rng.random()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_flatten_is_960() {
        let cfg = CnnConfig::default();
        assert_eq!(cfg.feature_grid(), (3, 5));
        assert_eq!(cfg.flatten_len(), 960);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            CnnConfig {
                conv_channels: vec![8, 8, 32, 64],
                ..Default::default()
            },
            CnnConfig {
                conv_channels: vec![],
                ..Default::default()
            },
            CnnConfig {
                fc_sizes: vec![128, 32, 3],
                ..Default::default()
            },
            CnnConfig {
                fc_sizes: vec![32, 128, 2],
                ..Default::default()
            },
            CnnConfig {
                kernel: 4,
                ..Default::default()
            },
            CnnConfig {
                conv_channels: vec![2, 4, 8, 16, 32, 64, 128],
                ..Default::default()
            },
            CnnConfig {
                lr: -1.0,
                ..Default::default()
            },
            CnnConfig {
                batch: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(Cnn::<f32>::build(&cfg), Err(Error::Domain(_))),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn forward_gives_distributions() {
        let model = Cnn::<f32>::build(&CnnConfig::default()).unwrap();
        let mut rng = seed::rng(1, &[]);
        let imgs: Vec<GrayImage> = (0..3).map(|_| random_image(&mut rng)).collect();
        let x = image_batch::<f32>(&imgs.iter().collect::<Vec<_>>()).unwrap();
        let p = model.predict_proba(&x).unwrap();
        assert_eq!(p.shape(), [3, 2]);
        for row in p.data().chunks(2) {
            assert!(((row[0] + row[1]) as f64 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_seeds_equal_weights() {
        let cfg = CnnConfig {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            Cnn::<f32>::build(&cfg).unwrap(),
            Cnn::<f32>::build(&cfg).unwrap()
        );
        let other = CnnConfig {
            seed: 10,
            ..Default::default()
        };
        assert_ne!(
            Cnn::<f32>::build(&cfg).unwrap(),
            Cnn::<f32>::build(&other).unwrap()
        );
    }

    #[test]
    fn wrong_image_size_is_a_domain_error() {
        let img = GrayImage::filled(10, 10, 0);
        assert!(matches!(image_batch::<f32>(&[&img]), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_split_is_rejected() {
        let model = Cnn::<f32>::build(&CnnConfig::default()).unwrap();
        let empty = ImageSet {
            images: vec![],
            labels: vec![],
        };
        assert!(matches!(evaluate(&model, &empty), Err(Error::Domain(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = Cnn::<f32>::build(&CnnConfig {
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let bytes = checkpoint::encode(&model.to_tensors()).unwrap();
        let back = Cnn::from_tensors(&checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.config().conv_channels, model.config().conv_channels);
    }

    #[test]
    fn single_image_is_memorized() {
        let mut rng = seed::rng(2, &[]);
        let set = ImageSet {
            images: vec![random_image(&mut rng)],
            labels: vec![1],
        };
        let cfg = CnnConfig {
            epochs: 50,
            seed: 3,
            ..Default::default()
        };
        let mut model = Cnn::<f32>::build(&cfg).unwrap();
        let report = train_cnn(&mut model, &set, &set, &cfg).unwrap();
        assert_eq!(report.per_epoch.last().unwrap().train_acc, 1.0);
        assert_eq!(report.final_confusion.counts, [[0, 0], [0, 1]]);
        assert!(report.per_epoch[49].train_loss < report.per_epoch[0].train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = seed::rng(5, &[]);
        let set = ImageSet {
            images: (0..6).map(|_| random_image(&mut rng)).collect(),
            labels: vec![0, 1, 0, 1, 0, 1],
        };
        let cfg = CnnConfig {
            epochs: 2,
            batch: 4,
            seed: 11,
            ..Default::default()
        };
        let run = || {
            let mut m = Cnn::<f32>::build(&cfg).unwrap();
            let r = train_cnn(&mut m, &set, &set, &cfg).unwrap();
            (m, serde_json::to_string(&r).unwrap())
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn whole_network_gradients_match_differences() {
        let mut rng = seed::rng(8, &[]);
        let imgs: Vec<GrayImage> = (0..2).map(|_| random_image(&mut rng)).collect();
        let x = image_batch::<f64>(&imgs.iter().collect::<Vec<_>>()).unwrap();
        let model = Cnn::<f32>::build(&CnnConfig {
            seed: 6,
            ..Default::default()
        })
        .unwrap()
        .cast::<f64>();
        let checks = check_model_gradients(&model, &x, &[0, 1], 21).unwrap();
        assert_eq!(checks.len(), 14);
        for c in checks {
            assert!(c.rel_err < 1e-4, "{c:?}");
        }
    }
}
