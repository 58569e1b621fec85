use asyprox::analysis::{
    check_step_conditions, first_reaching, iteration_speedup, rate_constants, speedup_csv, speedup_table,
    SPEEDUP_HEADER,
};
use asyprox::prox::ModelVector;
use asyprox::sim::StepSchedule;
use asyprox::trajectory::{TelemetryPoint, Trajectory};
use proptest::prelude::*;

fn schedule() -> impl Strategy<Value = StepSchedule> {
    prop_oneof![
        (1e-4..1.0f64).prop_map(StepSchedule::Constant),
        (1e-4..1.0f64).prop_map(StepSchedule::InverseSqrt),
    ]
}

fn scaled(s: &StepSchedule, a: f64) -> StepSchedule {
    match s {
        StepSchedule::Constant(e) => StepSchedule::Constant(e * a),
        StepSchedule::InverseSqrt(c) => StepSchedule::InverseSqrt(c * a),
        StepSchedule::Table(t) => StepSchedule::Table(t.iter().map(|e| e * a).collect()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_staleness_leaves_only_the_step_cap(s in schedule(), l in 0.01..100.0f64, frac in 0.01..1.0f64, m in 1usize..16) {
        let l_max = l * frac;
        let r = check_step_conditions(&s, 200, l, l_max, 0, m).unwrap();
        prop_assert!(r.rows.iter().all(|row| row.cond2_lhs == 0.0 && row.cond2));
        let expect = r.rows.iter().all(|row| row.eta <= 1.0 / (16.0 * l_max));
        prop_assert_eq!(r.holds(), expect);
    }

    #[test]
    fn verdicts_are_invariant_under_rescaling(s in schedule(), l in 0.01..100.0f64, frac in 0.01..1.0f64, t in 0u64..32, m in 1usize..16, a in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0])) {
        // Multiplying L by a and every eta by 1/a is exact for powers of two.
        let r1 = check_step_conditions(&s, 100, l, l * frac, t, m).unwrap();
        let r2 = check_step_conditions(&scaled(&s, 1.0 / a), 100, l * a, l * frac * a, t, m).unwrap();
        for (x, y) in r1.rows.iter().zip(&r2.rows) {
            prop_assert_eq!(x.cond1, y.cond1);
            prop_assert_eq!(x.cond2, y.cond2);
            prop_assert!((x.cond2_lhs - y.cond2_lhs).abs() <= 1e-12 * x.cond2_lhs.abs());
        }
    }

    #[test]
    fn more_staleness_never_helps(s in schedule(), l in 0.01..10.0f64, t in 0u64..32, m in 1usize..16) {
        let r1 = check_step_conditions(&s, 100, l, l, t, m).unwrap();
        let r2 = check_step_conditions(&s, 100, l, l, t + 1, m).unwrap();
        for (x, y) in r1.rows.iter().zip(&r2.rows) {
            prop_assert!(y.cond2_lhs >= x.cond2_lhs);
        }
        prop_assert!(r2.rows.iter().filter(|r| !r.cond2).count() >= r1.rows.iter().filter(|r| !r.cond2).count());
    }

    #[test]
    fn extra_blocks_never_hurt(s in schedule(), l in 0.01..10.0f64, t in 0u64..32, m in 1usize..16) {
        let r1 = check_step_conditions(&s, 100, l, l, t, m).unwrap();
        let r2 = check_step_conditions(&s, 100, l, l, t, m + 1).unwrap();
        prop_assert!(r2.cond2_violations() <= r1.cond2_violations());
    }

    #[test]
    fn rate_bound_grows_with_staleness(gap in 1e-3..10.0f64, m in 1usize..32, n in 1usize..10_000, l in 1e-3..10.0f64, k in 1u64..10_000_000, var in 1e-3..10.0f64, t in 0u64..64) {
        let c = rate_constants(gap, m, n, l, k, var).unwrap();
        prop_assert!((c.bound_proof(0) - c.bound_stated).abs() <= 1e-12 * c.bound_stated);
        prop_assert!(c.bound_proof(t + 1) > c.bound_proof(t));
        prop_assert!(c.k_min(t + 1) > c.k_min(t));
    }
}

#[test]
fn table_schedules_must_cover_lookahead() {
    let steps = StepSchedule::Table(vec![0.01; 110]);
    assert!(check_step_conditions(&steps, 100, 1.0, 1.0, 10, 4).is_err());
    let steps = StepSchedule::Table(vec![0.01; 111]);
    assert!(check_step_conditions(&steps, 100, 1.0, 1.0, 10, 4).is_ok());
}

#[test]
fn report_csv_has_one_row_per_iteration() {
    let r = check_step_conditions(&StepSchedule::InverseSqrt(0.1), 50, 4.0, 4.0, 16, 8).unwrap();
    let csv = r.to_csv();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "k,eta,cond1,cond2_lhs,cond2");
    assert_eq!(lines.len(), 51);
    assert!(lines[1].starts_with("1,"));
    assert!(r.to_text().contains("first violation at k = 1"));
}

fn trajectory(points: &[(u64, f64, f64)]) -> Trajectory {
    Trajectory {
        iterations: Vec::new(),
        telemetry: points
            .iter()
            .map(|&(k, psi, elapsed_s)| TelemetryPoint { k, block: None, eta: 0.1, psi, gm_sq: 0.0, max_delay: 0, elapsed_s })
            .collect(),
        final_model: ModelVector::zeros(1),
    }
}

#[test]
fn speedups_against_single_worker_baseline() {
    let one = trajectory(&[(0, 1.0, 0.0), (500, 0.5, 1.0), (1000, 0.1, 2.0)]);
    let two = trajectory(&[(0, 1.0, 0.0), (940, 0.1, 1.0)]);
    let four = trajectory(&[(0, 1.0, 0.0), (5000, 0.4, 3.0)]);
    let table = speedup_table(&[(4, four), (1, one.clone()), (2, two)], 0.1, 0.0).unwrap();
    assert_eq!(table.iter().map(|r| r.workers).collect::<Vec<_>>(), vec![1, 2, 4]);
    assert_eq!(table[0].iteration_speedup, Some(1.0));
    assert_eq!(table[1].iteration_speedup, Some(2.127659574468085));
    assert_eq!(table[1].time_speedup, Some(2.0));
    assert!(!table[2].reached);
    assert_eq!(table[2].iteration_speedup, None);
    let csv = speedup_csv(&table);
    assert!(csv.starts_with(SPEEDUP_HEADER));
    assert!(csv.lines().nth(3).unwrap().ends_with(",,,,false"));

    assert!(speedup_table(&[(2, one.clone())], 0.1, 0.0).is_err());
    assert!(speedup_table(&[(1, one.clone()), (1, one.clone())], 0.1, 0.0).is_err());
    assert_eq!(first_reaching(&one, 0.0, 0.5), Some((500, 1.0)));
    assert_eq!(iteration_speedup(2, 1000, 940), 2.127659574468085);
}
