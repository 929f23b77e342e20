use obsmatch::cli::{emit_results, parse_results};
use obsmatch::evt::{self, ResultMeta, SpectrumKind, SpectrumResult};
use obsmatch::matching::{self, Metric};
use obsmatch::Point;
use proptest::prelude::*;

fn series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..20.0, 200..600)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ei_is_invariant_under_increasing_maps(y in series(), quantile in 0.8f64..0.97, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = evt::estimate_ei(&y, quantile, 5, 2).unwrap();
        let affine: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let curved: Vec<f64> = y.iter().map(|v| (v / 4.0).exp()).collect();
        for t in [affine, curved] {
            let est = evt::estimate_ei(&t, quantile, 5, 2).unwrap();
            prop_assert_eq!(&est.p_hat, &base.p_hat);
            prop_assert_eq!(est.exceedance_count, base.exceedance_count);
        }
    }

    #[test]
    fn theta_is_one_minus_return_probabilities(y in series(), quantile in 0.5f64..0.97, k in 1usize..8) {
        let est = evt::estimate_ei(&y, quantile, k, 3).unwrap();
        prop_assert_eq!(est.p_hat.len(), k);
        let total: f64 = est.p_hat.iter().sum();
        prop_assert!((est.theta_raw - (1.0 - total)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&est.theta_hat));
        prop_assert!(est.p_hat.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(est.exceedance_count > 0);
    }

    #[test]
    fn gumbel_fit_is_translation_and_scale_equivariant(y in prop::collection::vec(-3.0f64..10.0, 60..300), c in -50.0f64..50.0) {
        let base = evt::fit_gumbel(&y).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let fit = evt::fit_gumbel(&shifted).unwrap();
        prop_assert!((fit.location - base.location - c).abs() < 1e-8 * (1.0 + c.abs()));
        prop_assert!((fit.scale - base.scale).abs() < 1e-8 * base.scale);
        let doubled: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let fit = evt::fit_gumbel(&doubled).unwrap();
        prop_assert!((fit.scale - 2.0 * base.scale).abs() < 1e-10 * base.scale);
        prop_assert!((fit.location - 2.0 * base.location).abs() < 1e-9 * (1.0 + base.location.abs()));
    }

    #[test]
    fn block_maxima_cover_full_blocks(y in prop::collection::vec(-1e3f64..1e3, 0..500), b in 1usize..50) {
        let m = matching::block_maxima(&y, b);
        prop_assert_eq!(m.len(), y.len() / b);
        for (j, mx) in m.iter().enumerate() {
            let block = &y[j * b..(j + 1) * b];
            prop_assert!(block.contains(mx));
            prop_assert!(block.iter().all(|v| v <= mx));
        }
    }

    #[test]
    fn match_value_ignores_trajectory_order(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..6)) {
        let p: Vec<Point> = pts.iter().map(|&(x, y)| Point::new2(x, y)).collect();
        let mut rev = p[1..].to_vec();
        rev.reverse();
        for metric in [Metric::Sup, Metric::Euclidean] {
            let a = matching::match_value(&p[0], &p[1..], metric, 1e-300);
            let b = matching::match_value(&p[0], &rev, metric, 1e-300);
            prop_assert_eq!(a, b);
        }
        // sup distances never exceed euclidean ones
        let s = matching::match_value(&p[0], &p[1..], Metric::Sup, 1e-300);
        let e = matching::match_value(&p[0], &p[1..], Metric::Euclidean, 1e-300);
        prop_assert!(s >= e);
    }

    #[test]
    fn result_rows_round_trip(
        values in prop::collection::vec((any::<f64>(), 0.0f64..1e3, 2usize..20, 0usize..8), 0..20),
        seed in any::<u64>(),
        quantile in 0.0f64..1.0,
    ) {
        let kinds = [
            SpectrumKind::Dq,
            SpectrumKind::Theta,
            SpectrumKind::Hq,
            SpectrumKind::ThetaGumbel,
            SpectrumKind::ThetaAnalytic,
            SpectrumKind::DqAnalytic,
            SpectrumKind::ThetaDelta,
            SpectrumKind::DqDelta,
        ];
        let rows: Vec<SpectrumResult> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.0.is_finite())
            .map(|(i, &(mean, std, q, k))| SpectrumResult {
                q,
                estimate_mean: mean,
                estimate_std: std,
                run_count: i + 1,
                kind: if i % 9 == 8 { SpectrumKind::PHat(k) } else { kinds[i % 8] },
                metadata: ResultMeta {
                    system: "henon(a=1.4;b=0.3)".into(),
                    observable: "with,comma \"quoted\"".into(),
                    n_total: 1000 * (i + 1),
                    block_size: 10,
                    quantile,
                    k,
                    seed,
                },
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        emit_results(&rows, &path, false).unwrap();
        prop_assert_eq!(parse_results(&path).unwrap(), rows);
    }
}
