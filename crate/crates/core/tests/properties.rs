use proptest::prelude::*;

use spatial_ar::checkpoint::{load_checkpoint, save_checkpoint};
use spatial_ar::io::{decode_amap, decode_amsk, decode_fgrd, encode_amap, encode_amsk, encode_fgrd, FeatureSet, MaskSet};
use spatial_ar::metrics::{aupr, auroc, upsample_bilinear};
use spatial_ar::oracle::{causality_violations, pairwise_auroc, stepwise_ap};
use spatial_ar::{
    build_mask, conv2d_backward, conv2d_forward, AnomalyMap, ArModel, ConvWeights, Grid4, MaskKind, ModelConfig,
    Variant,
};

fn grid(dims: (usize, usize, usize, usize), vals: &[f64]) -> Grid4<f64> {
    let mut k = 0;
    Grid4::from_fn(dims, |_, _, _, _| {
        k += 1;
        vals[(k - 1) % vals.len()]
    })
}

fn conv_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, Vec<f64>)> {
    (1usize..3, 1usize..3, 2usize..6, 2usize..6, prop::sample::select(vec![1usize, 3, 5]), 1usize..3)
        .prop_flat_map(|(ci, co, h, w, k, d)| {
            (
                Just(ci),
                Just(co),
                Just(h),
                Just(w),
                Just(k),
                Just(d),
                prop::collection::vec(-1.0f64..1.0, 128),
            )
        })
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn conv_is_linear_in_input((ci, co, h, w, k, d, vals) in conv_case(), alpha in -2.0f64..2.0) {
        let x = grid((1, ci, h, w), &vals);
        let y = grid((1, ci, h, w), &vals[7..]);
        let wts = ConvWeights::new(co, ci, k, d, vals[3..3 + co * ci * k * k].to_vec(), vec![0.0; co]).unwrap();
        let combo = Grid4::from_fn((1, ci, h, w), |n, c, i, j| x.get(n, c, i, j) + alpha * y.get(n, c, i, j));
        let lhs = conv2d_forward(&combo, &wts).unwrap();
        let fx = conv2d_forward(&x, &wts).unwrap();
        let fy = conv2d_forward(&y, &wts).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
            prop_assert!(close(*l, a + alpha * b, 1e-12));
        }
    }

    #[test]
    fn input_gradient_is_adjoint((ci, co, h, w, k, d, vals) in conv_case()) {
        // <conv(x), g> = <x, conv^T(g)> for a bias-free convolution
        let x = grid((1, ci, h, w), &vals);
        let g = grid((1, co, h, w), &vals[11..]);
        let wts = ConvWeights::new(co, ci, k, d, vals[5..5 + co * ci * k * k].to_vec(), vec![0.0; co]).unwrap();
        let y = conv2d_forward(&x, &wts).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gx = conv2d_backward(&x, &wts, &g).unwrap().grad_x;
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn weight_gradient_is_adjoint((ci, co, h, w, k, d, vals) in conv_case()) {
        // conv is linear in w too: <conv_w(x), g> = <w, grad_w>
        let x = grid((1, ci, h, w), &vals);
        let g = grid((1, co, h, w), &vals[13..]);
        let wv = vals[2..2 + co * ci * k * k].to_vec();
        let wts = ConvWeights::new(co, ci, k, d, wv.clone(), vec![0.0; co]).unwrap();
        let y = conv2d_forward(&x, &wts).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gw = conv2d_backward(&x, &wts, &g).unwrap().grad_w;
        let rhs: f64 = wv.iter().zip(&gw).map(|(a, b)| a * b).sum();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn metrics_invariant_under_increasing_maps(
        raw in prop::collection::vec((0u8..20, 0u8..2), 2..200),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let mut scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
        let mut labels: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
        labels[0] = 0;
        labels[1] = 1;
        scores[0] = scores[0].min(4.0);
        let affine: Vec<f64> = scores.iter().map(|s| scale * s + shift).collect();
        let expo: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let base_roc = auroc(&scores, &labels).unwrap();
        let base_ap = aupr(&scores, &labels).unwrap();
        for t in [&affine, &expo] {
            prop_assert!((auroc(t, &labels).unwrap() - base_roc).abs() <= 1e-12);
            prop_assert!((aupr(t, &labels).unwrap() - base_ap).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_match_oracles(raw in prop::collection::vec((0u8..8, 0u8..2), 2..300)) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let mut labels: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
        labels[0] = 0;
        labels[1] = 1;
        prop_assert!((auroc(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels).unwrap()).abs() <= 1e-12);
        prop_assert!((aupr(&scores, &labels).unwrap() - stepwise_ap(&scores, &labels).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement(n in 2usize..200, seed in any::<u64>()) {
        // distinct scores: a permutation of 0..n
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let scores: Vec<f64> = order.iter().map(|&v| v as f64).collect();
        let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn upsampling_stays_within_range(
        h in 1usize..6, w in 1usize..6, oh in 1usize..20, ow in 1usize..20,
        vals in prop::collection::vec(-100.0f32..100.0, 36),
    ) {
        let map = AnomalyMap::new(h, w, vals[..h * w].to_vec()).unwrap();
        let (lo, hi) = map.min_max();
        let up = upsample_bilinear(&map, oh, ow).unwrap();
        for &v in up.scores() {
            prop_assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn files_round_trip(n in 1usize..4, h in 1usize..5, w in 1usize..5, d in 1usize..4, seed in any::<u32>()) {
        let data: Vec<f32> = (0..n * h * w * d).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e9).collect();
        let set = FeatureSet { n, h, w, d, data };
        prop_assert_eq!(decode_fgrd(&encode_fgrd(&set)).unwrap(), set.clone());
        let grids = set.to_grids();
        prop_assert_eq!(FeatureSet::from_grids(&grids).unwrap(), set.clone());

        let masks: Vec<Vec<u8>> = (0..n).map(|k| (0..h * w).map(|i| ((i + k + seed as usize) % 3 == 0) as u8).collect()).collect();
        let back = decode_amsk(&encode_amsk(&MaskSet { h, w, masks: masks.clone() })).unwrap();
        prop_assert_eq!(back.masks, masks);

        let maps: Vec<AnomalyMap> = (0..n).map(|k| AnomalyMap::new(h, w, set.data[k * h * w..(k + 1) * h * w].to_vec()).unwrap()).collect();
        prop_assert_eq!(decode_amap(&encode_amap(&maps).unwrap()).unwrap(), maps);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn checkpoint_round_trip_is_bitwise(
        hidden in 1usize..6, depth in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
        d in 1usize..4, seed in any::<u64>(), bidir in any::<bool>(),
    ) {
        let variant = if bidir { Variant::Bidirectional } else { Variant::Causal };
        let model = ArModel::<f32>::init(&ModelConfig::stack(2, hidden, depth, k, d, variant), seed).unwrap();
        let bytes = save_checkpoint(&model);
        let back = load_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn causal_models_never_look_ahead(
        hidden in 1usize..5, depth in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
        d in 1usize..4, seed in any::<u64>(), h in 2usize..7, w in 2usize..7,
        qi in 0usize..7, qj in 0usize..7,
    ) {
        let model = ArModel::<f64>::init(&ModelConfig::stack(2, hidden, depth, k, d, Variant::Causal), seed).unwrap();
        let f = grid((1, 2, h, w), &[0.3, -0.7, 1.1, 0.05, -0.4]);
        let q = (qi % h, qj % w);
        prop_assert!(causality_violations(&model, &f, q, 2.0).unwrap().is_empty());
    }

    #[test]
    fn applied_masks_count_surviving_taps(k in prop::sample::select(vec![1usize, 3, 5, 7])) {
        for kind in MaskKind::ALL {
            let mask = build_mask(kind, k).unwrap();
            let ones = ConvWeights::new(2, 3, k, 1, vec![1.0f64; 6 * k * k], vec![0.0; 2]).unwrap();
            let masked = spatial_ar::mask::apply_mask(&ones, &mask).unwrap();
            let kept: f64 = masked.w.iter().sum();
            prop_assert_eq!(kept as usize, 6 * mask.ones());
        }
    }
}
