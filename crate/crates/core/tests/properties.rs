use proptest::prelude::*;

use neurotopo::aae::{auc, choose_threshold};
use neurotopo::montage::Montage;
use neurotopo::report::Confusion;
use neurotopo::tensor::checkpoint;
use neurotopo::tensor::{Graph, Tensor};
use neurotopo::topomap::{
    baseline_correct, render_topogram, split_groups, BaselineMode, Interpolator, Split,
};
use neurotopo::Hand;

fn hands(bits: &[bool]) -> Vec<Hand> {
    bits.iter()
        .map(|&b| if b { Hand::Left } else { Hand::Right })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_total_and_class_shares(
        bits in prop::collection::vec(any::<bool>(), 2..200),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
        let labels = hands(&bits);
        let split = split_groups(&labels, fraction, seed).unwrap();
        let train = split.iter().filter(|&&s| s == Split::Train).count();
        prop_assert_eq!(train, (fraction * labels.len() as f64).round() as usize);
        for hand in [Hand::Right, Hand::Left] {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == hand).collect();
            let in_train = members.iter().filter(|&&i| split[i] == Split::Train).count() as f64;
            prop_assert!((in_train - fraction * members.len() as f64).abs() <= 1.0);
        }
        prop_assert_eq!(split, split_groups(&labels, fraction, seed).unwrap());
    }

    #[test]
    fn render_ignores_positive_affine_maps_of_the_values(
        values in prop::collection::vec(-100f64..100.0, 32),
        log_scale in -3f64..3.0,
        offset in -1e3f64..1e3,
    ) {
        let spread = values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let interp = Interpolator::new(&Montage::builtin32(), 84, 63).unwrap();
        let field = interp.interpolate(&values).unwrap();
        let a = 10f64.powf(log_scale);
        let moved = field.map(|v| a * v + offset);
        prop_assert_eq!(render_topogram(&moved).unwrap(), render_topogram(&field).unwrap());
    }

    #[test]
    fn relative_baseline_is_scale_free(
        pairs in prop::collection::vec((0.01f64..100.0, 0.01f64..100.0), 1..40),
        c in 0.01f64..100.0,
    ) {
        let (power, base): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let r1 = baseline_correct(&power, &base, BaselineMode::Relative).unwrap();
        let r2 = baseline_correct(&scaled(&power), &scaled(&base), BaselineMode::Relative).unwrap();
        for (x, y) in r1.iter().zip(&r2) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let a = baseline_correct(&power, &base, BaselineMode::Absolute).unwrap();
        for ((d, p), b) in a.iter().zip(&power).zip(&base) {
            prop_assert_eq!(*d, p - b);
        }
    }

    #[test]
    fn threshold_scales_with_scores(
        scored in prop::collection::vec((0.0f64..50.0, any::<bool>()), 2..60),
        c in 0.1f64..10.0,
    ) {
        let (scores, anomalous): (Vec<f64>, Vec<bool>) = scored.into_iter().unzip();
        prop_assume!(anomalous.iter().any(|&a| a) && anomalous.iter().any(|&a| !a));
        let t = choose_threshold(&scores, &anomalous).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let tc = choose_threshold(&scaled, &anomalous).unwrap();
        prop_assert!((tc - c * t).abs() <= 1e-9 * (c * t).abs().max(1.0));
        for (s, sc) in scores.iter().zip(&scaled) {
            prop_assert_eq!(s > &t, sc > &tc);
        }
    }

    #[test]
    fn auc_of_complementary_labels_sums_to_one(
        scored in prop::collection::vec((0u8..20, any::<bool>()), 2..80),
    ) {
        let scores: Vec<f64> = scored.iter().map(|(s, _)| *s as f64).collect();
        let positive: Vec<bool> = scored.iter().map(|(_, p)| *p).collect();
        prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
        let flipped: Vec<bool> = positive.iter().map(|p| !p).collect();
        let sum = auc(&scores, &positive).unwrap() + auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_accuracy_is_trace_over_total(
        pairs in prop::collection::vec((0u8..2, 0u8..2), 1..100),
    ) {
        let (truth, pred): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let c = Confusion::from_predictions(&truth, &pred).unwrap();
        let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        prop_assert_eq!(c.total(), truth.len() as u64);
        prop_assert!((c.accuracy() - hits as f64 / truth.len() as f64).abs() < 1e-15);
        prop_assert_eq!(Confusion::from_csv(&c.to_csv()).unwrap(), c);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        tensors in prop::collection::vec(
            (1usize..4, 1usize..5, prop::collection::vec(any::<f32>(), 20)),
            1..5,
        ),
    ) {
        let named: Vec<(String, Tensor<f32>)> = tensors
            .into_iter()
            .enumerate()
            .map(|(i, (a, b, data))| (format!("t{i}"), Tensor::new(&[a, b], data[..a * b].to_vec()).unwrap()))
            .collect();
        let back = checkpoint::decode(&checkpoint::encode(&named).unwrap()).unwrap();
        prop_assert_eq!(back.len(), named.len());
        for ((n1, t1), (n2, t2)) in named.iter().zip(&back) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(t1), bits(t2));
        }
    }

    /// `<conv(x; w), y> = <x, convT(y; w)>` with zero biases, whenever the transposed
    /// convolution maps back onto the shape of `x`.
    #[test]
    fn transposed_convolution_is_the_adjoint(
        n in 1usize..3, c in 1usize..4, f in 1usize..4,
        k in 1usize..5, s in 1usize..3, p in 0usize..3,
        h_extra in 0usize..4, w_extra in 0usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(p < k);
        // Sizes for which the strided windows tile the padded input exactly.
        let h = k + s * h_extra;
        let w = k + s * w_extra;
        prop_assume!(h > 2 * p && w > 2 * p);
        let (h, w) = (h - 2 * p, w - 2 * p);
        let mut rng = neurotopo::seed::rng(seed, &[]);
        let mut draw = |shape: &[usize]| {
            use rand::Rng;
            Tensor::<f64>::from_fn(shape, |_| rng.random_range(-1.0..1.0))
        };
        let x = draw(&[n, c, h, w]);
        let wt = draw(&[f, c, k, k]);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let y = draw(&[n, f, oh, ow]);

        let mut g = Graph::new();
        let (xv, wv, yv) = (g.constant(x.clone()), g.constant(wt), g.constant(y.clone()));
        let (bf, bc) = (g.constant(Tensor::zeros(&[f])), g.constant(Tensor::zeros(&[c])));
        let fwd = g.conv2d(xv, wv, bf, s, p).unwrap();
        let back = g.conv_transpose2d(yv, wv, bc, s, p).unwrap();
        prop_assert_eq!(g.value(back).shape(), x.shape());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let lhs = dot(g.value(fwd).data(), y.data());
        let rhs = dot(x.data(), g.value(back).data());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
