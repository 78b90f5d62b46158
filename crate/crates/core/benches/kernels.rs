//! One-thread pool versus all cores on the data-parallel hot spots.
//!
//! Every workload runs under `par::with_threads(1, ..)` and under a pool as wide as
//! the machine. Built without the `parallel` feature both variants are sequential,
//! which gives the baseline for the fallback path.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use neurotopo::cnn::{image_batch, Cnn, CnnConfig};
use neurotopo::dsp::{DspConfig, Preprocessor};
use neurotopo::montage::Montage;
use neurotopo::par;
use neurotopo::synth::{generate_cohort, SynthConfig};
use neurotopo::tensor::{Graph, Tensor};
use neurotopo::topomap::{build_dataset, GrayImage, TopomapConfig};

fn widths() -> Vec<usize> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    if all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = neurotopo::seed::rng(seed, &[]);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Forward and backward of one stride-2 4×4 convolution at the size of the second
/// autoencoder stage.
fn conv_layer(c: &mut Criterion) {
    let x = random(&[16, 16, 24, 32], 1);
    let w = random(&[32, 16, 4, 4], 2);
    let b = random(&[32], 3);
    let mut group = c.benchmark_group("conv2d_4x4_s2_fwd_bwd");
    for threads in widths() {
        group.bench_with_input(
            BenchmarkId::new("threads", threads),
            &threads,
            |bench, &t| {
                bench.iter(|| {
                    par::with_threads(t, || {
                        let mut g = Graph::new();
                        let (xv, wv, bv) =
                            (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
                        let y = g.conv2d(xv, wv, bv, 2, 1).unwrap();
                        let s = g.sum(y);
                        g.backward(s).unwrap();
                        black_box(g.grad(wv))
                    })
                })
            },
        );
    }
    group.finish();
}

fn cnn_batch(c: &mut Criterion) {
    let model = Cnn::<f32>::build(&CnnConfig::default()).unwrap();
    let mut rng = neurotopo::seed::rng(4, &[]);
    let images: Vec<GrayImage> = (0..32)
        .map(|_| GrayImage::new(84, 63, (0..84 * 63).map(|_| rng.random()).collect()).unwrap())
        .collect();
    let x = image_batch::<f32>(&images.iter().collect::<Vec<_>>()).unwrap();
    let labels: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let mut group = c.benchmark_group("cnn_loss_and_grads_batch32");
    group.sample_size(10);
    for threads in widths() {
        group.bench_with_input(
            BenchmarkId::new("threads", threads),
            &threads,
            |bench, &t| {
                bench.iter(|| {
                    par::with_threads(t, || {
                        black_box(model.loss_and_grads(&x, &labels).unwrap().0)
                    })
                })
            },
        );
    }
    group.finish();
}

/// Morlet power, interpolation and 840×630 rendering of four trials (32 images).
fn dataset_build(c: &mut Criterion) {
    let cfg = SynthConfig {
        n_subjects: 1,
        trials_per_hand: 2,
        ..SynthConfig::default()
    };
    let raw = generate_cohort(&cfg).unwrap();
    let pre = Preprocessor::new(&DspConfig::default(), raw[0].fs as f64).unwrap();
    let trials: Vec<_> = raw.iter().map(|t| pre.trial(t).unwrap()).collect();
    let montage = Montage::builtin32();
    let mut group = c.benchmark_group("dataset_build_4_trials");
    group
        .sample_size(10)
        .measurement_time(Duration::from_secs(20));
    for threads in widths() {
        group.bench_with_input(
            BenchmarkId::new("threads", threads),
            &threads,
            |bench, &t| {
                bench.iter(|| {
                    par::with_threads(t, || {
                        black_box(
                            build_dataset(
                                &trials,
                                &montage,
                                &TopomapConfig::default(),
                                &DspConfig::default().band_power,
                                0,
                                None,
                            )
                            .unwrap(),
                        )
                    })
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, conv_layer, cnn_batch, dataset_build);
criterion_main!(benches);
