use flowcond::features::{
    center_arousal_valence, uncenter_arousal_valence, window_count, FeatureMatrix, WindowSpec,
};
use flowcond::fm_core::{cfm_loss, conditional_vector_field, flow_sample_at, PathConfig};
use flowcond::infill::{sample_mask, MaskRatio, TemporalMask};
use flowcond::metrics::{aggregate_seeds, frame_cosine_detail, frame_cosine_sim};
use flowcond::rng::seeded;
use flowcond::sampler::interpolate_stream;
use flowcond::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| Matrix::from_shape_vec((rows, cols), v).unwrap())
}

fn pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

proptest! {
    #[test]
    fn loss_is_nonnegative_and_zero_on_match((v, u) in pair(6, 9)) {
        let l = cfm_loss(&v, &u, None).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(cfm_loss(&v, &v, None).unwrap(), 0.0);
    }

    #[test]
    fn loss_invariant_under_frame_permutation((v, u) in pair(4, 8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..v.ncols()).collect();
        perm.shuffle(&mut seeded(seed));
        let pv = v.select(ndarray::Axis(1), &perm);
        let pu = u.select(ndarray::Axis(1), &perm);
        let a = cfm_loss(&v, &u, None).unwrap();
        let b = cfm_loss(&pv, &pu, None).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn masked_loss_ignores_unmasked_frames(
        (v, u) in pair(3, 8), noise in -5.0f64..5.0, start in 0usize..8, len in 1usize..8,
    ) {
        let t = v.ncols();
        let start = start % t;
        let end = (start + len).min(t);
        let mask = TemporalMask::span(t, start, end);
        let mut v2 = v.clone();
        for j in (0..t).filter(|j| !mask.bits()[*j]) {
            v2.column_mut(j).mapv_inplace(|x| x + noise);
        }
        prop_assert_eq!(cfm_loss(&v, &u, Some(&mask)).unwrap(), cfm_loss(&v2, &u, Some(&mask)).unwrap());
    }

    #[test]
    fn field_on_path_equals_target((x1, x0) in pair(3, 5), t in 0.0f64..0.999) {
        let cfg = PathConfig::default();
        let s = flow_sample_at(&x1, t, x0.clone(), &cfg);
        let u = conditional_vector_field(&s.x_t, &x1, t, &cfg).unwrap();
        let tol = 1e-9 * (1.0 + x1.iter().chain(x0.iter()).fold(0.0f64, |a, v| a.max(v.abs())));
        for (a, b) in u.iter().zip(s.u_target.iter()) {
            prop_assert!((a - b).abs() < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn aggregate_mean_is_mean_of_seed_means(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
    ) {
        let r = aggregate_seeds(&rows).unwrap();
        let means: Vec<f64> = rows.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        prop_assert!((r.mean - m).abs() < 1e-12);
        prop_assert!(r.std >= 0.0);
    }

    #[test]
    fn interpolation_preserves_endpoints_and_bounds(src in matrix(2, 7), target in 2usize..40) {
        let out = interpolate_stream(&src, target).unwrap();
        prop_assert_eq!(out.dim(), (2, target));
        for i in 0..2 {
            let row = src.row(i);
            let (lo, hi) = row.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
            prop_assert_eq!(out[(i, 0)], row[0]);
            prop_assert_eq!(out[(i, target - 1)], row[6]);
            prop_assert!(out.row(i).iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }
    }

    #[test]
    fn centering_round_trips(raw in prop::collection::vec(0.0f64..=1.0, 2 * 9)) {
        let m = Matrix::from_shape_vec((2, 9), raw).unwrap();
        let c = center_arousal_valence(&m).unwrap();
        prop_assert!(c.iter().all(|v| (-0.5..=0.5).contains(v)));
        let back = uncenter_arousal_valence(&c);
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn window_count_is_monotone(d in 0.01f64..30.0, extra in 0.0f64..5.0) {
        let spec = WindowSpec::default();
        let a = window_count(d, &spec).unwrap();
        let b = window_count(d + extra, &spec).unwrap();
        prop_assert!(a >= 1 && b >= a);
    }

    #[test]
    fn fmat_round_trips_bitwise(
        rows in 1usize..5, cols in 0usize..9, seed in any::<u64>(), fps in 1.0f32..1000.0,
    ) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let values = ndarray::Array2::from_shape_fn((rows, cols), |_| rng.random::<f32>() * 200.0 - 100.0);
        let m = FeatureMatrix::new(values, fps);
        let bytes = m.to_bytes();
        let back = FeatureMatrix::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn sampled_masks_are_contiguous_and_sized(frames in 1usize..200, seed in any::<u64>()) {
        let ratio = MaskRatio::default();
        let m = sample_mask(frames, &mut seeded(seed), ratio).unwrap();
        let (s, e) = m.as_interval().unwrap();
        prop_assert_eq!(m.count_ones(), e - s);
        let lo = ((ratio.lo * frames as f64).round() as usize).max(1);
        prop_assert!(e - s >= lo && e - s <= frames);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn cosine_sim_symmetric_scale_invariant_bounded(
        (a, b) in pair(5, 12), s in 0.01f64..100.0, tb in 1usize..20,
    ) {
        let ab = frame_cosine_sim(&a, &b).unwrap();
        let ba = frame_cosine_sim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        let scaled = frame_cosine_sim(&a.mapv(|v| v * s), &b).unwrap();
        prop_assert!((scaled - ab).abs() < 1e-9);
        let other = Matrix::from_shape_fn((a.nrows(), tb), |(i, j)| (i as f64 + 1.0) * (j as f64 - 3.0));
        let mixed = frame_cosine_detail(&a, &other).unwrap();
        prop_assert_eq!(mixed.frames, a.ncols().max(tb));
        prop_assert!(mixed.score.abs() <= 1.0 + 1e-12);
    }
}

#[test]
fn every_mask_of_short_sequences_is_one_contiguous_span() {
    let ratio = MaskRatio { lo: 0.05, hi: 1.0 };
    for frames in 1..=12 {
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = seeded(frames as u64);
        for _ in 0..4000 {
            let m = sample_mask(frames, &mut rng, ratio).unwrap();
            let bits = m.bits();
            let rises = (0..frames)
                .filter(|&j| bits[j] && (j == 0 || !bits[j - 1]))
                .count();
            assert_eq!(rises, 1, "{bits:?}");
            seen.insert(m.as_interval().unwrap());
        }
        // Every span of every length is reachable.
        let total: usize = (1..=frames).map(|len| frames - len + 1).sum();
        let reachable: usize = (1..=frames)
            .filter(|len| (*len as f64) >= (ratio.lo * frames as f64).round().max(1.0))
            .map(|len| frames - len + 1)
            .sum();
        assert!(seen.len() <= total);
        assert_eq!(seen.len(), reachable, "frames {frames}");
    }
}
