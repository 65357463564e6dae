#![allow(clippy::needless_range_loop)]

use cmts_core::causal::{discover, CiTestConfig, SampleMatrix};
use cmts_core::metrics::{dtw, fid, mae, FidFeatureSet};
use cmts_core::{
    apply_mask, denormalize, gen_mask_forecast, gen_mask_imputation, gen_mask_superres, instance_normalize,
    ImputationMaskConfig, PriorGraph, TimeSeries, MASK_SENTINEL,
};
use proptest::prelude::*;

fn series(e: usize, l: usize) -> impl Strategy<Value = TimeSeries> {
    prop::collection::vec(-1e3f64..1e3, e * l).prop_map(move |v| {
        let names = (0..e).map(|i| format!("v{i}")).collect();
        TimeSeries::new(names, v, l, 1).unwrap()
    })
}

proptest! {
    #[test]
    fn normalize_roundtrip(x in (1usize..4, 1usize..40).prop_flat_map(|(e, l)| series(e, l))) {
        let (xn, p) = instance_normalize(&x).unwrap();
        prop_assert!(xn.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let back = denormalize(&xn, &p).unwrap();
        for (a, b) in back.values().iter().zip(x.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn masking_preserves_unmasked(x in series(3, 50), seed in any::<u64>()) {
        let (xn, _) = instance_normalize(&x).unwrap();
        let cfg = ImputationMaskConfig { mu: 10.0, sigma: 3.0, segments_per_variable: 2, rng_seed: seed };
        let m = gen_mask_imputation(3, 50, &cfg);
        let xm = apply_mask(&xn, &m).unwrap();
        for v in 0..3 {
            for t in 0..50 {
                if m.get(v, t) {
                    prop_assert_eq!(xm.get(v, t), MASK_SENTINEL);
                } else {
                    prop_assert_eq!(xm.get(v, t), xn.get(v, t));
                }
            }
        }
    }

    #[test]
    fn forecast_mask_is_suffix(e in 1usize..5, l in 1usize..100, h in 0usize..100) {
        let h = h.min(l);
        let m = gen_mask_forecast(e, l, h).unwrap();
        for v in 0..e {
            for t in 0..l {
                prop_assert_eq!(m.get(v, t), t >= l - h);
            }
        }
    }

    #[test]
    fn superres_mask_is_periodic(e in 1usize..4, l in 1usize..100, f in 1usize..10) {
        let m = gen_mask_superres(e, l, f).unwrap();
        for v in 0..e {
            for t in 0..l {
                prop_assert_eq!(m.get(v, t), t % f != 0);
            }
        }
    }

    #[test]
    fn dtw_bounded_by_l1(a in prop::collection::vec(-10f64..10.0, 1..20), shift in -3f64..3.0) {
        let b: Vec<f64> = a.iter().map(|x| x + shift * x.sin()).collect();
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let d = dtw(&a, &b).unwrap();
        prop_assert!(d >= 0.0 && d <= l1 + 1e-12);
        prop_assert_eq!(dtw(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fid_symmetric_nonnegative(
        a in prop::collection::vec(prop::collection::vec(-5f64..5.0, 3), 4..20),
        b in prop::collection::vec(prop::collection::vec(-5f64..5.0, 3), 4..20),
    ) {
        let fa = FidFeatureSet::from_vectors(&a).unwrap();
        let fb = FidFeatureSet::from_vectors(&b).unwrap();
        let ab = fid(&fa, &fb).unwrap();
        let ba = fid(&fb, &fa).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        prop_assert!(fid(&fa, &fa).unwrap() < 1e-8);
    }

    #[test]
    fn mae_nonnegative_zero_on_identity(a in prop::collection::vec(-5f64..5.0, 1..50)) {
        prop_assert_eq!(mae(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn discovery_returns_dag_with_priors(
        cols in prop::collection::vec(prop::collection::vec(-1f64..1.0, 60), 4),
        mix in -2f64..2.0,
    ) {
        let mut cols = cols;
        for i in 0..60 {
            cols[1][i] += mix * cols[0][i];
            cols[3][i] += mix * cols[2][i] - cols[1][i];
        }
        let names: Vec<String> = (0..4).map(|i| format!("n{i}")).collect();
        let prior = PriorGraph::new(names.clone(), vec![(2, 0), (3, 1)]).unwrap();
        let data = SampleMatrix::from_columns(names, &cols);
        let g = discover(&data, &prior, &CiTestConfig::default()).unwrap();
        prop_assert!(g.edge(2, 0).is_some_and(|e| e.prior));
        prop_assert!(g.edge(3, 1).is_some_and(|e| e.prior));
        prop_assert!(g.edges().iter().all(|e| (0.0..=1.0).contains(&e.weight)));
        prop_assert_eq!(g.topological_order().len(), 4);
    }
}
