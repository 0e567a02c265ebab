use attengluco_core::data::window::Channel;
use attengluco_core::data::NormStats;
use attengluco_core::training::metrics::{mae, rmse};
use attengluco_core::training::pearson;
use attengluco_core::{Graph, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..8)
        .prop_flat_map(|(r, c)| prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |v| (r, c, v)))
}

fn paired(lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(move |n| (prop::collection::vec(lo..hi, n), prop::collection::vec(lo..hi, n)))
}

fn spread(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((r, c, v) in matrix()) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(r, c, v).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let out = g.value(y);
        for i in 0..r {
            let s: f64 = out.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
            prop_assert!(out.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn rmse_dominates_mae((a, b) in paired(40.0, 400.0)) {
        prop_assert!(rmse(&a, &b) >= mae(&a, &b));
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        (a, b) in paired(-100.0, 100.0),
        s in 0.1f64..10.0,
        c in -100.0f64..100.0,
    ) {
        prop_assume!(spread(&a) > 1e-3 && spread(&b) > 1e-3);
        let mapped: Vec<f64> = a.iter().map(|x| s * x + c).collect();
        let r0 = pearson(&a, &b).unwrap();
        let r1 = pearson(&mapped, &b).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-12, "{r0} vs {r1}");
        let flipped: Vec<f64> = a.iter().map(|x| -s * x + c).collect();
        prop_assert!((pearson(&flipped, &b).unwrap() + r0).abs() <= 1e-12);
    }

    #[test]
    fn normalisation_inverts(
        rows in prop::collection::vec((40.0f64..400.0, 0.0f64..200.0, 0.0f64..720.0), 2..50),
        probe in 0.0f64..500.0,
    ) {
        let stats = NormStats::fit(rows.iter().map(|&(g, s, w)| [g, s, w])).unwrap();
        for ch in [Channel::Glucose, Channel::Steps, Channel::Intervals] {
            let back = stats.denormalize(ch, stats.normalize(ch, probe));
            prop_assert!((back - probe).abs() <= 1e-9, "{ch:?}: {probe} -> {back}");
        }
    }
}
