use aos::metrics::{aggregate_runs, measurements_to_reach, nrmse_sum, nrmse_val, LearningCurve, Record};
use aos::strategy::StrategyKind;
use proptest::prelude::*;

proptest! {
    #[test]
    fn nrmse_is_scale_consistent(
        pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..150),
        range in 0.1..10.0f64,
        c in 0.01..100.0f64,
    ) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = nrmse_val(&p, &t, range).unwrap();
        let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
        let scaled = nrmse_val(&ps, &ts, range * c).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn nrmse_sum_bounds_and_permutation(e in prop::collection::vec(0.0..1.0f64, 1..8)) {
        let s = nrmse_sum(&e);
        let max = e.iter().cloned().fold(0.0, f64::max);
        prop_assert!(max <= s + 1e-15);
        prop_assert!(s <= (e.len() as f64).sqrt() * max + 1e-15);
        let mut rev = e.clone();
        rev.reverse();
        prop_assert!((nrmse_sum(&rev) - s).abs() < 1e-15);
    }

    #[test]
    fn aggregate_of_identical_curves(values in prop::collection::vec(0.0..1.0f64, 1..30), copies in 1usize..6) {
        let curve = LearningCurve {
            strategy: StrategyKind::CVH,
            run_index: 0,
            run_seed: 0,
            records: values.iter().enumerate().map(|(i, v)| Record {
                n_meas: 9 + i,
                leader: None,
                query: None,
                nrmse: vec![*v],
                nrmse_sum: *v,
                cv: None,
            }).collect(),
        };
        let agg = aggregate_runs(&vec![curve; copies]).unwrap();
        for (m, v) in agg.mean.iter().zip(&values) {
            prop_assert!((m - v).abs() <= 1e-15);
        }
        prop_assert!(agg.std.iter().all(|s| *s == 0.0));
    }
}

#[test]
fn reach_matches_linear_scan() {
    // Setup-1-style synthetic curves: decaying errors with a bit of wiggle.
    let curve = |rate: f64, run: usize| LearningCurve {
        strategy: StrategyKind::CVHn,
        run_index: run,
        run_seed: run as u64,
        records: (9..=100)
            .map(|n| {
                let v = 0.3 * (-(n as f64) * rate).exp() + 0.002 * ((n * (run + 3)) % 7) as f64;
                Record { n_meas: n, leader: None, query: None, nrmse: vec![v], nrmse_sum: v, cv: None }
            })
            .collect(),
    };
    let cvhn = aggregate_runs(&(0..15).map(|r| curve(0.035, r)).collect::<Vec<_>>()).unwrap();
    let sf_curves: Vec<LearningCurve> = (0..15)
        .map(|r| LearningCurve { strategy: StrategyKind::SF, ..curve(0.025, r) })
        .collect();
    let sf = aggregate_runs(&sf_curves).unwrap();
    let reference = *sf.mean.last().unwrap();

    let mut oracle = None;
    for i in 0..cvhn.mean.len() {
        if cvhn.mean[i] <= reference {
            oracle = Some(cvhn.n_meas[i]);
            break;
        }
    }
    assert!(oracle.is_some());
    assert_eq!(measurements_to_reach(&cvhn, reference), oracle);
}
