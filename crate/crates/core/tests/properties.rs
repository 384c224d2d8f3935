use milvad_core::corpus::{
    concat_features, frame_labels, pool_segments, proportional_range, ClipFeatureMatrix, FrameInterval, Label, Split,
    VideoRecord,
};
use milvad_core::metrics::{expand_scores_to_frames, false_alarm_percent, roc_auc, roc_curve, trapezoid_area};
use milvad_core::objective::{
    rank_loss, smoothness_term, sparsity_term, weight_norm_term, RankVariant,
};
use milvad_core::optim::{make_state, Hyperparams, OptimizerKind};
use milvad_core::scorer::{backward, forward, init_params, Dropout, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(id: &str, dim: usize, n_clips: usize, seed: u64) -> ClipFeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dim * n_clips).map(|_| rng.random_range(-4.0..4.0)).collect();
    ClipFeatureMatrix::new(id, dim, data).unwrap()
}

/// Brute-force Mann–Whitney over all (positive, negative) pairs.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    credit += 1.0;
                } else if si == sj {
                    credit += 0.5;
                }
            }
        }
    }
    credit / pairs
}

fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

proptest! {
    #[test]
    fn pooling_then_concat_commutes(n_clips in 1usize..70, n in 1usize..40, seed in any::<u64>()) {
        let a = matrix("v", 3, n_clips, seed);
        let b = matrix("v", 2, n_clips, seed ^ 1);
        let joined = pool_segments(&concat_features(&[a.clone(), b.clone()]).unwrap(), n, Label::Normal).unwrap();
        let pa = pool_segments(&a, n, Label::Normal).unwrap();
        let pb = pool_segments(&b, n, Label::Normal).unwrap();
        for i in 0..n {
            let expected: Vec<f64> = pa.segment(i).iter().chain(pb.segment(i)).copied().collect();
            prop_assert_eq!(joined.segment(i), &expected[..]);
        }
    }

    #[test]
    fn pooling_scales_linearly(n_clips in 1usize..70, n in 1usize..40, seed in any::<u64>(), c in -8.0f64..8.0) {
        let m = matrix("v", 4, n_clips, seed);
        let scaled = ClipFeatureMatrix::new("v", 4, m.clips().flatten().map(|v| v * c).collect()).unwrap();
        let base = pool_segments(&m, n, Label::Normal).unwrap();
        let out = pool_segments(&scaled, n, Label::Normal).unwrap();
        for (s, t) in base.segments().zip(out.segments()) {
            for (x, y) in s.iter().zip(t) {
                prop_assert!((x * c - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
        // powers of two scale exactly
        let exact = ClipFeatureMatrix::new("v", 4, m.clips().flatten().map(|v| v * 4.0).collect()).unwrap();
        let out = pool_segments(&exact, n, Label::Normal).unwrap();
        for (s, t) in base.segments().zip(out.segments()) {
            prop_assert!(s.iter().zip(t).all(|(x, y)| x * 4.0 == *y));
        }
    }

    #[test]
    fn ranges_tile_exactly(total in 0usize..500, n in 1usize..64) {
        let mut next = 0;
        for i in 0..n {
            let r = proportional_range(i, total, n);
            prop_assert_eq!(r.start, next);
            if total >= n {
                prop_assert!(!r.is_empty());
            }
            next = r.end;
        }
        prop_assert_eq!(next, total);
    }

    #[test]
    fn frame_label_sum_is_interval_length(n_frames in 1usize..400, cuts in proptest::collection::btree_set(0usize..400, 0..8)) {
        let cuts: Vec<usize> = cuts.into_iter().filter(|&c| c <= n_frames).collect();
        let intervals: Vec<FrameInterval> = cuts.chunks_exact(2).map(|c| FrameInterval::new(c[0], c[1])).collect();
        let rec = VideoRecord {
            video_id: "v".into(),
            split: Split::Train,
            label: if intervals.is_empty() { Label::Normal } else { Label::Anomalous },
            n_frames,
            intervals: intervals.clone(),
            feature_paths: vec!["v.csv".into()],
        };
        prop_assert!(rec.validate().is_ok());
        let total: usize = intervals.iter().map(|i| i.len()).sum();
        prop_assert_eq!(frame_labels(&rec).iter().map(|&l| l as usize).sum::<usize>(), total);
    }

    #[test]
    fn rank_loss_is_permutation_invariant(
        a in proptest::collection::vec(0.001f64..0.999, 1..20),
        seed in any::<u64>(),
    ) {
        let n = a.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
        let mut pa = a.clone();
        let mut pb = b.clone();
        pa.reverse();
        pb.rotate_left(seed as usize % n);
        for v in [RankVariant::Original, RankVariant::MeanNormal] {
            let x = rank_loss(&a, &b, v).unwrap().value;
            let y = rank_loss(&pa, &pb, v).unwrap().value;
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let orig = rank_loss(&a, &b, RankVariant::Original).unwrap().value;
        let mean = rank_loss(&a, &b, RankVariant::MeanNormal).unwrap().value;
        prop_assert!(mean <= orig);
        let all_equal = b.iter().all(|&x| x == b[0]);
        if !all_equal && orig > 0.0 {
            prop_assert!(mean < orig);
        }
    }

    #[test]
    fn term_gradients_match_finite_differences(
        a in proptest::collection::vec(0.01f64..0.99, 2..16),
        seed in any::<u64>(),
    ) {
        let n = a.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let h = 1e-6;
        let check = |analytic: &[f64], numeric: &[f64]| analytic.iter().zip(numeric).all(|(x, y)| (x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1.0));

        let (_, d) = smoothness_term(&a).unwrap();
        let num = central_difference(&mut |s| smoothness_term(s).unwrap().0, &a, h);
        prop_assert!(check(&d, &num));
        let (_, d) = sparsity_term(&a).unwrap();
        let num = central_difference(&mut |s| sparsity_term(s).unwrap().0, &a, h);
        prop_assert!(check(&d, &num));

        for v in [RankVariant::Original, RankVariant::MeanNormal] {
            let mut sorted_a = a.clone();
            sorted_a.sort_by(f64::total_cmp);
            let unique_a = sorted_a[n - 1] - sorted_a[n - 2] > 0.01;
            let mut sorted_b = b.clone();
            sorted_b.sort_by(f64::total_cmp);
            let unique_b = v == RankVariant::MeanNormal || sorted_b[n - 1] - sorted_b[n - 2] > 0.01;
            let r = rank_loss(&a, &b, v).unwrap();
            let agg = match v {
                RankVariant::Original => sorted_b[n - 1],
                RankVariant::MeanNormal => b.iter().sum::<f64>() / n as f64,
            };
            if !(unique_a && unique_b && (1.0 - sorted_a[n - 1] + agg).abs() > 0.05) {
                continue;
            }
            let num_a = central_difference(&mut |s| rank_loss(s, &b, v).unwrap().value, &a, h);
            let num_b = central_difference(&mut |s| rank_loss(&a, s, v).unwrap().value, &b, h);
            prop_assert!(check(&r.d_anom, &num_a));
            prop_assert!(check(&r.d_norm, &num_b));
        }
    }

    #[test]
    fn auc_agrees_with_pairwise_count(
        raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..200),
    ) {
        // coarse scores force ties
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 11.0).collect();
        let labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let auc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-9);
        let curve = roc_curve(&scores, &labels).unwrap();
        prop_assert!((trapezoid_area(&curve) - auc).abs() < 1e-9);

        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc + roc_auc(&negated, &labels).unwrap() - 1.0).abs() < 1e-12);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
        prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), auc);
    }

    #[test]
    fn far_is_monotone_in_threshold(scores in proptest::collection::vec(0.0f64..1.0, 1..100), t in 0.0f64..1.0, dt in 0.0f64..0.5) {
        prop_assert!(false_alarm_percent(&scores, t + dt).unwrap() <= false_alarm_percent(&scores, t).unwrap());
    }

    #[test]
    fn expansion_covers_frames(n in 1usize..64, n_frames in 1usize..600) {
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let frames = expand_scores_to_frames(&scores, n_frames).unwrap();
        prop_assert_eq!(frames.len(), n_frames);
        for i in 0..n {
            let nonempty = !proportional_range(i, n_frames, n).is_empty();
            prop_assert_eq!(frames.contains(&(i as f64)), nonempty);
        }
    }

    #[test]
    fn scores_stay_in_open_interval(seed in any::<u64>(), scale in 0.0f64..200.0) {
        let p = init_params(6, seed, Some(&[8, 4])).unwrap();
        let mut big = p.clone();
        for v in big.values_mut() {
            *v *= scale;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
        for params in [&p, &big] {
            let (s, _) = forward(params, &x, Dropout::Off).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    let h = 1e-4;
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 25 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params(5, seed, Some(&[4, 3])).unwrap();
        for v in params.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let upstream: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let traces: Vec<_> = xs.iter().map(|x| forward(&params, x, Dropout::Off).unwrap().1).collect();
        if traces.iter().any(|t| t.min_hidden_margin() < 1e-3) {
            continue;
        }
        let grad = backward(&params, &traces, &upstream).unwrap();
        let dims = params.layer_dims().to_vec();
        let mut loss = |v: &[f64]| {
            let p = ModelParams::from_values(&dims, v.to_vec()).unwrap();
            xs.iter().zip(&upstream).map(|(x, u)| u * forward(&p, x, Dropout::Off).unwrap().0).sum::<f64>()
        };
        let numeric = central_difference(&mut loss, params.values(), h);
        let worst = grad.values().iter().zip(&numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max);
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
        checked += 1;
    }
}

#[test]
fn weight_norm_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let params = init_params(4, seed, Some(&[3])).unwrap();
        let (_, grad) = weight_norm_term(&params);
        let dims = params.layer_dims().to_vec();
        let numeric = central_difference(
            &mut |v| weight_norm_term(&ModelParams::from_values(&dims, v.to_vec()).unwrap()).0,
            params.values(),
            1e-6,
        );
        for (a, n) in grad.values().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1.0), "{a} vs {n}");
        }
    }
}

#[test]
fn optimizers_stay_finite_and_deterministic() {
    for kind in [OptimizerKind::Adam, OptimizerKind::Adadelta] {
        let mut state = make_state(kind, Hyperparams::defaults(kind), 8).unwrap();
        let mut params = vec![0.0; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let g: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut copy_state = state.clone();
            let mut copy_params = params.clone();
            state.step(&mut params, &g).unwrap();
            copy_state.step(&mut copy_params, &g).unwrap();
            assert_eq!(params, copy_params);
            assert_eq!(state, copy_state);
        }
        assert!(state.first().iter().chain(state.second()).chain(&params).all(|v| v.is_finite()));
        assert_eq!(state.len(), params.len());
    }
}
