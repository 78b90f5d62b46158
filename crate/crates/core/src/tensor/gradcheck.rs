//! Finite-difference verification of every differentiable graph operation.
//!
//! Each case evaluates an operation in `f64` on random inputs, reduces the output to
//! a scalar with a fixed random weighting, and compares the reverse-mode gradient of
//! every input against central differences. The error of one case is the largest,
//! over its inputs, of `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
//! Inputs are drawn away from the kinks of relu, max-pooling and |·| so that the
//! difference quotient never straddles one.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::Tensor;
use crate::{seed, Result};

pub const FD_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Scalar objective: the op output itself if scalar, else its dot product with
/// `weights`.
fn objective(
    g: &mut Graph<f64>,
    inputs: &[Var],
    build: &Build,
    weights: &Tensor<f64>,
) -> Result<Var> {
    let out = build(g, inputs)?;
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let w = g.constant(weights.clone().reshape(g.value(out).shape())?);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn output_len(inputs: &[Tensor<f64>], build: &Build) -> Result<usize> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).len())
}

fn evaluate(inputs: &[Tensor<f64>], build: &Build, weights: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = objective(&mut g, &vars, build, weights)?;
    Ok(g.value(root).item())
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst norm-wise relative error over the inputs of one case.
pub fn check_case(inputs: &[Tensor<f64>], build: &Build, rng: &mut impl Rng) -> Result<f64> {
    let n_out = output_len(inputs, build)?;
    let weights = Tensor::from_fn(&[n_out], |_| rng.random_range(-1.0..1.0));

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = objective(&mut g, &vars, build, &weights)?;
    g.backward(root)?;

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v);
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut probe = inputs.to_vec();
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            probe[k].data_mut()[j] = x0 + FD_STEP;
            let plus = evaluate(&probe, build, &weights)?;
            probe[k].data_mut()[j] = x0 - FD_STEP;
            let minus = evaluate(&probe, build, &weights)?;
            probe[k].data_mut()[j] = x0;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative(analytic.data(), &numeric));
    }
    Ok(worst)
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Magnitudes in [0.05, 1] with random sign: at least 50 steps from zero.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values on a 0.01 grid in random order, so every pooling window has a
/// unique maximum separated from the runner-up by five steps.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("sized")
}

/// Random inputs of one case and the graph that consumes them.
type Case = (Vec<Tensor<f64>>, Box<Build>);

struct OpSpec {
    name: &'static str,
    make: fn(&mut ChaCha8Rng) -> Case,
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn specs() -> Vec<OpSpec> {
    vec![
        OpSpec {
            name: "add",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 4)];
                (
                    vec![uniform(&s, r), uniform(&s, r)],
                    Box::new(|g, v| g.add(v[0], v[1])),
                )
            },
        },
        OpSpec {
            name: "sub",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 4)];
                (
                    vec![uniform(&s, r), uniform(&s, r)],
                    Box::new(|g, v| g.sub(v[0], v[1])),
                )
            },
        },
        OpSpec {
            name: "mul",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 4)];
                (
                    vec![uniform(&s, r), uniform(&s, r)],
                    Box::new(|g, v| g.mul(v[0], v[1])),
                )
            },
        },
        OpSpec {
            name: "scale",
            make: |r| {
                let c = r.random_range(-3.0..3.0);
                (
                    vec![uniform(&[dims(r, 1, 6)], r)],
                    Box::new(move |g, v| Ok(g.scale(v[0], c))),
                )
            },
        },
        OpSpec {
            name: "sum",
            make: |r| {
                (
                    vec![uniform(&[dims(r, 1, 3), dims(r, 1, 5)], r)],
                    Box::new(|g, v| Ok(g.sum(v[0]))),
                )
            },
        },
        OpSpec {
            name: "mean",
            make: |r| {
                (
                    vec![uniform(&[dims(r, 1, 3), dims(r, 1, 5)], r)],
                    Box::new(|g, v| Ok(g.mean(v[0]))),
                )
            },
        },
        OpSpec {
            name: "reshape",
            make: |r| {
                let (a, b) = (dims(r, 1, 4), dims(r, 1, 4));
                (
                    vec![uniform(&[a, b], r)],
                    Box::new(move |g, v| g.reshape(v[0], &[b * a])),
                )
            },
        },
        OpSpec {
            name: "relu",
            make: |r| {
                (
                    vec![off_zero(&[dims(r, 1, 3), dims(r, 2, 6)], r)],
                    Box::new(|g, v| Ok(g.relu(v[0]))),
                )
            },
        },
        OpSpec {
            name: "softmax",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 2, 5)];
                (
                    vec![uniform(&s, r).map(|x| 2.0 * x)],
                    Box::new(|g, v| g.softmax(v[0])),
                )
            },
        },
        OpSpec {
            name: "conv2d",
            make: |r| {
                let (n, c, f) = (dims(r, 1, 2), dims(r, 1, 2), dims(r, 1, 2));
                let (h, w) = (dims(r, 5, 8), dims(r, 5, 8));
                let inputs = vec![
                    uniform(&[n, c, h, w], r),
                    uniform(&[f, c, 5, 5], r),
                    uniform(&[f], r),
                ];
                (inputs, Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 2)))
            },
        },
        OpSpec {
            name: "conv2d_s2",
            make: |r| {
                let (n, c, f) = (dims(r, 1, 2), dims(r, 1, 2), dims(r, 1, 2));
                let (h, w) = (2 * dims(r, 1, 4), 2 * dims(r, 1, 4));
                let inputs = vec![
                    uniform(&[n, c, h, w], r),
                    uniform(&[f, c, 4, 4], r),
                    uniform(&[f], r),
                ];
                (inputs, Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1)))
            },
        },
        OpSpec {
            name: "upconv2d",
            make: |r| {
                let (n, cin, cout) = (dims(r, 1, 2), dims(r, 1, 2), dims(r, 1, 2));
                let (h, w) = (dims(r, 1, 4), dims(r, 1, 4));
                let inputs = vec![
                    uniform(&[n, cin, h, w], r),
                    uniform(&[cin, cout, 4, 4], r),
                    uniform(&[cout], r),
                ];
                (
                    inputs,
                    Box::new(|g, v| g.conv_transpose2d(v[0], v[1], v[2], 2, 1)),
                )
            },
        },
        OpSpec {
            name: "maxpool2",
            make: |r| {
                let s = [dims(r, 1, 2), dims(r, 1, 2), dims(r, 2, 8), dims(r, 2, 8)];
                (vec![distinct(&s, r)], Box::new(|g, v| g.maxpool2(v[0])))
            },
        },
        OpSpec {
            name: "dense",
            make: |r| {
                let (n, i, o) = (dims(r, 1, 3), dims(r, 1, 5), dims(r, 1, 4));
                let inputs = vec![uniform(&[n, i], r), uniform(&[i, o], r), uniform(&[o], r)];
                (inputs, Box::new(|g, v| g.dense(v[0], v[1], v[2])))
            },
        },
        OpSpec {
            name: "cross_entropy",
            make: |r| {
                let (n, k) = (dims(r, 1, 3), dims(r, 2, 3));
                let mut p = Tensor::from_fn(&[n, k], |_| r.random_range(0.5..1.0));
                for row in p.data_mut().chunks_mut(k) {
                    let z: f64 = row.iter().sum();
                    row.iter_mut().for_each(|x| *x /= z);
                }
                let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
                (
                    vec![p],
                    Box::new(move |g, v| g.cross_entropy(v[0], &labels)),
                )
            },
        },
        OpSpec {
            name: "softmax_xent",
            make: |r| {
                let (n, k) = (dims(r, 1, 4), dims(r, 2, 4));
                let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
                (
                    vec![uniform(&[n, k], r).map(|x| 3.0 * x)],
                    Box::new(move |g, v| {
                        let p = g.softmax(v[0])?;
                        g.cross_entropy(p, &labels)
                    }),
                )
            },
        },
        OpSpec {
            name: "l1",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 6)];
                let a = uniform(&s, r);
                let gap = off_zero(&s, r);
                let b = Tensor::new(
                    &s,
                    a.data()
                        .iter()
                        .zip(gap.data())
                        .map(|(x, d)| x + d)
                        .collect(),
                )
                .expect("sized");
                (vec![a, b], Box::new(|g, v| g.l1(v[0], v[1])))
            },
        },
    ]
}

/// Names of the checked operations, in report order.
pub fn op_names() -> Vec<&'static str> {
    specs().iter().map(|s| s.name).collect()
}

/// Runs `seeds` random cases of every operation.
pub fn run_suite(base_seed: u64, seeds: usize) -> Result<Vec<OpReport>> {
    specs()
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut worst = 0.0f64;
            for s in 0..seeds {
                let mut rng = seed::rng(base_seed, &[0x6c, k as u64, s as u64]);
                let (inputs, build) = (spec.make)(&mut rng);
                worst = worst.max(check_case(&inputs, build.as_ref(), &mut rng)?);
            }
            Ok(OpReport {
                op: spec.name,
                cases: seeds,
                max_rel_err: worst,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_wrong_gradient_is_caught() {
        // `scale` by 2 checked against a function that is secretly 2x + x².
        let inputs = vec![Tensor::new(&[3], vec![0.3, -0.7, 0.9]).unwrap()];
        let build: Box<Build> = Box::new(|g, v| {
            let sq = g.constant(g.value(v[0]).map(|x| x * x));
            let two = g.scale(v[0], 2.0);
            g.add(two, sq)
        });
        let mut rng = seed::rng(1, &[]);
        assert!(check_case(&inputs, build.as_ref(), &mut rng).unwrap() > 1e-2);
    }

    #[test]
    fn every_op_passes_a_few_seeds() {
        for r in run_suite(3, 3).unwrap() {
            assert!(r.passed(), "{}: {}", r.op, r.max_rel_err);
        }
    }
}
