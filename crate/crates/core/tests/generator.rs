use j2r_core::sim_bench::{
    analytic_full_data_tau, generate, inject_outliers, run_mc, summarize, write_records_csv,
    ReplicateRecord, TableId, CONTROL_COEFS, SIGMA,
};
use j2r_core::*;
use proptest::prelude::*;

fn big(errors: ErrorFamily, n_per_arm: usize) -> sim_bench::SimulatedTrial {
    let mut sc = Scenario::new(errors, Hypothesis::H1, OutlierMode::None);
    sc.n_per_arm = n_per_arm;
    generate(&sc, 2024)
}

/// Residual of visit `s` (1-based) from the generating mean.
fn errors_at(t: &sim_bench::SimulatedTrial, s: usize, arm: u8) -> Vec<f64> {
    let d = &t.data;
    let coefs = if arm == 0 { CONTROL_COEFS } else { sim_bench::TREATED_COEFS };
    (0..d.n())
        .filter(|&i| d.arm(i) == arm)
        .map(|i| {
            let mut h: Vec<f64> = d.baseline().row(i).iter().copied().collect();
            h.extend((0..s - 1).map(|k| t.full_outcomes[(i, k)]));
            let mean: f64 = coefs[s - 1].iter().zip(&h).map(|(c, v)| c * v).sum();
            t.full_outcomes[(i, s - 1)] - mean
        })
        .collect()
}

fn moments(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (m, m2.sqrt(), m4 / (m2 * m2) - 3.0)
}

#[test]
fn generator_marginals() {
    let t = big(ErrorFamily::Normal, 50_000);
    let d = &t.data;
    let x2 = (0..d.n()).map(|i| d.baseline()[(i, 2)]).sum::<f64>() / d.n() as f64;
    assert!((x2 - 0.3).abs() <= 0.01, "mean X2 {x2}");
    let mut e1 = errors_at(&t, 1, 0);
    e1.extend(errors_at(&t, 1, 1));
    let (_, sd, _) = moments(&e1);
    assert!((sd - 2.0).abs() <= 0.05, "sd e1 {sd}");

    let t = big(ErrorFamily::T5, 50_000);
    for s in 1..=5 {
        let mut e = errors_at(&t, s, 0);
        e.extend(errors_at(&t, s, 1));
        let (_, sd, kurt) = moments(&e);
        assert!((sd / SIGMA[s - 1] - 1.0).abs() <= 0.03, "visit {s}: sd {sd}");
        assert!(kurt > 3.0, "visit {s}: excess kurtosis {kurt}");
    }
}

#[test]
fn observed_fraction_is_near_eighty_percent() {
    let t = big(ErrorFamily::Normal, 100_000);
    let d = &t.data;
    for arm in [0u8, 1] {
        let rows: Vec<usize> = (0..d.n()).filter(|&i| d.arm(i) == arm).collect();
        let final_obs = rows.iter().filter(|&&i| d.observed(i, 5)).count() as f64 / rows.len() as f64;
        let per_visit: Vec<f64> = (2..=5)
            .map(|s| {
                let at_risk = rows.iter().filter(|&&i| d.observed(i, s - 1)).count() as f64;
                rows.iter().filter(|&&i| d.observed(i, s)).count() as f64 / at_risk
            })
            .collect();
        println!("arm {arm}: observed at final visit {final_obs:.3}, per-visit {per_visit:.3?}");
        assert!((final_obs - 0.8).abs() <= 0.05, "arm {arm}: {final_obs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_missingness_is_monotone(seed in any::<u64>(), h0 in any::<bool>(), t5 in any::<bool>()) {
        let mut sc = Scenario::new(
            if t5 { ErrorFamily::T5 } else { ErrorFamily::Normal },
            if h0 { Hypothesis::H0 } else { Hypothesis::H1 },
            OutlierMode::None,
        );
        sc.n_per_arm = 200;
        let t = generate(&sc, seed);
        let d = &t.data;
        for i in 0..d.n() {
            prop_assert!(d.observed(i, 1));
            let k = d.observed_visits(i);
            for s in 1..=5 {
                prop_assert_eq!(d.observed(i, s), s <= k);
                if s <= k {
                    prop_assert_eq!(d.outcome(i, s), Some(t.full_outcomes[(i, s - 1)]));
                }
            }
        }
    }

    #[test]
    fn rmse_decomposes(taus in proptest::collection::vec(-3.0f64..3.0, 2..200), truth in -1.0f64..1.0) {
        let records: Vec<ReplicateRecord> = taus
            .iter()
            .enumerate()
            .map(|(rep, &t)| ReplicateRecord { rep, method: Method::Mi, tau: Some(t), var_v1: Some(0.1), var_boot: None, error: None })
            .collect();
        let s = summarize(Method::Mi, &records, truth);
        prop_assert!((s.rmse * s.rmse - (s.bias * s.bias + s.mc_variance)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.coverage_v1));
        prop_assert!((0.0..=1.0).contains(&s.rejection_v1));
    }
}

#[test]
fn null_hypothesis_has_zero_effect() {
    let sc = Scenario::new(ErrorFamily::Normal, Hypothesis::H0, OutlierMode::None);
    assert_eq!(analytic_full_data_tau(&sc), 0.0);
    assert_eq!(sc.published_truth(), 0.0);
}

#[test]
fn mc_is_deterministic_and_dumps_records() {
    let sc = Scenario::new(ErrorFamily::Normal, Hypothesis::H1, OutlierMode::BothArms);
    let cfg = McConfig {
        reps: 6,
        mi_m: 3,
        oracle_n_per_arm: 0,
        ..McConfig::default()
    };
    let a = run_mc(&sc, &cfg).unwrap();
    let b = run_mc(&sc, &cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.report, b.report);
    for m in &a.report.methods {
        assert_eq!(m.successes + m.failures, 6);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reps.csv");
    write_records_csv(&a.records, &path).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.records().count(), 6 * 3);
}

#[test]
fn failing_replicates_raise_instability() {
    let mut sc = Scenario::new(ErrorFamily::Normal, Hypothesis::H1, OutlierMode::BothArms);
    sc.n_per_arm = 25;
    let cfg = McConfig {
        reps: 4,
        mi_m: 3,
        oracle_n_per_arm: 0,
        ..McConfig::default()
    };
    let err = run_mc(&sc, &cfg).unwrap_err();
    assert_eq!(err.kind(), "McInstabilityError");
}

#[test]
fn scenario_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sc.toml");
    let sc = Scenario::new(ErrorFamily::T5, Hypothesis::H1, OutlierMode::TreatmentOnly);
    std::fs::write(&path, sc.to_toml_string()).unwrap();
    assert_eq!(Scenario::load(&path).unwrap(), sc);
    assert_eq!(Scenario::from_toml_str("name = 1").unwrap_err().kind(), "ConfigError");
}

#[test]
fn outlier_injection_scales_whole_trajectories() {
    let sc = Scenario::new(ErrorFamily::Normal, Hypothesis::H1, OutlierMode::TreatmentOnly);
    let d = generate(&sc, 9).data;
    let out = inject_outliers(&d, sc.outliers, 9).unwrap();
    let changed: Vec<usize> = (0..d.n()).filter(|&i| out.outcome(i, 1) != d.outcome(i, 1)).collect();
    assert_eq!(changed.len(), 10);
    assert!(changed.iter().all(|&i| d.arm(i) == 1 && d.observed_visits(i) == 5));
}

#[test]
fn table_ids_parse() {
    for t in TableId::ALL {
        assert_eq!(t.label().parse::<TableId>().unwrap(), t);
    }
    assert!("2".parse::<TableId>().is_err());
}
