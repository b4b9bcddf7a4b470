use lcnn::infer::majority_vote;
use lcnn::metrics::{accuracy, f1, mcc, recall, ConfusionMatrix};
use lcnn::numkit::{matmul, Matrix};
use lcnn::signal::{
    min_max_normalize, patch_offsets, segment, ChannelSet, DiffMode, Label, RawSequence,
    SegmentationConfig, FEATURES,
};
use proptest::prelude::*;

fn brute_offsets(len: usize, w: usize, s: usize) -> Vec<usize> {
    if len < w {
        return vec![0];
    }
    let mut v = Vec::new();
    let mut o = 0;
    while o + w <= len {
        v.push(o);
        o += s;
    }
    v
}

#[test]
fn patch_offsets_match_enumeration() {
    for len in 2..=200 {
        for s in 1..=20 {
            for w in 2..=20 {
                assert_eq!(patch_offsets(len, w, s), brute_offsets(len, w, s), "L={len} w={w} s={s}");
            }
        }
    }
}

fn channel_set(rows: usize, seed: f64) -> ChannelSet {
    ChannelSet {
        subject_id: "s".into(),
        label: Some(Label::Hc),
        features: Matrix::from_fn(rows, FEATURES, |r, c| (r as f64 * 0.37 + c as f64 + seed).sin()),
    }
}

proptest! {
    #[test]
    fn stride_equal_window_tiles_sequence(k in 1usize..12, w in 2usize..16, seed in -5.0f64..5.0) {
        let cs = channel_set(k * w, seed);
        let cfg = SegmentationConfig { window: w, stride: w, diff_mode: DiffMode::None };
        let patches = segment(&cs, &cfg).unwrap();
        prop_assert_eq!(patches.len(), k);
        let mut rebuilt = Vec::new();
        for p in &patches {
            rebuilt.extend_from_slice(p.values.as_slice());
        }
        prop_assert_eq!(rebuilt.as_slice(), cs.features.as_slice());
    }

    #[test]
    fn normalization_maps_to_unit_interval(
        vals in prop::collection::vec(-1e3f64..1e3, 2..60),
        scale in 0.5f64..10.0,
    ) {
        let n = vals.len();
        let seq = RawSequence {
            subject_id: "s".into(),
            label: None,
            task: "t".into(),
            t: (0..n).map(|i| i as f64).collect(),
            x: vals.clone(),
            y: vals.iter().map(|v| v * scale + 1.0).collect(),
            azimuth: vec![3.0; n],
            altitude: vals.iter().map(|v| -v).collect(),
            pressure: vals.iter().map(|v| v.abs()).collect(),
            button: None,
        };
        let out = min_max_normalize(&seq).unwrap();
        for ch in [&out.x, &out.y, &out.altitude, &out.pressure] {
            prop_assert!(ch.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert!(out.azimuth.iter().all(|v| *v == 0.0));
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-12 {
            // an affine rescale of x gives the same normalized channel
            for (a, b) in out.x.iter().zip(&out.y) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matmul_is_associative(
        m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6,
        seed in 0u64..1000,
    ) {
        let f = |r: usize, c: usize, s: u64| ((r * 7 + c * 3) as f64 + s as f64 * 0.1).cos();
        let a = Matrix::from_fn(m, k, |r, c| f(r, c, seed));
        let b = Matrix::from_fn(k, n, |r, c| f(r, c, seed + 1));
        let c = Matrix::from_fn(n, p, |r, c| f(r, c, seed + 2));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn metrics_in_range_and_swap_negates_mcc(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let cm = ConfusionMatrix::new(tp, tn, fp, fn_);
        for score in [accuracy(&cm), recall(&cm), f1(&cm)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&score));
        }
        if let Ok(m) = mcc(&cm) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&m));
            let swapped = mcc(&cm.with_predictions_swapped()).unwrap();
            prop_assert!((m + swapped).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_alpha_never_adds_pd(pd in 0usize..40, hc in 0usize..40, a1 in 0.01f64..0.99, a2 in 0.01f64..0.99) {
        prop_assume!(pd + hc > 0);
        let mut labels = vec![Label::Pd; pd];
        labels.extend(vec![Label::Hc; hc]);
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let at_lo = majority_vote("s", &labels, lo).unwrap().predicted;
        let at_hi = majority_vote("s", &labels, hi).unwrap().predicted;
        prop_assert!(!(at_hi == Label::Pd && at_lo == Label::Hc));
    }
}
