use aipw_lab::dgp::DgpConfig;
use aipw_lab::estimators::Estimand;
use aipw_lab::harness::*;
use aipw_lab::learners::linear::HcVariant;
use aipw_lab::learners::LearnerSpec;
use proptest::prelude::*;

fn small(runs: usize) -> ScenarioConfig {
    ScenarioConfig {
        scenario_id: "small".into(),
        dgp: DgpConfig::new(3),
        n: 80,
        runs,
        estimators: vec![
            EstimatorSpec::ipw("IPW"),
            EstimatorSpec::ancova("ANCOVA", HcVariant::HC3),
            EstimatorSpec::aipw("OLS", LearnerSpec::Ols),
            EstimatorSpec::crossfit("CVOLS", LearnerSpec::Ols, 4),
        ],
        alpha: 0.05,
        base_seed: 99,
        test_set_size: 2000,
        truth_mc_n: 20_000,
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn wilson_reference() {
    let (lo, hi) = wilson_interval(760, 800, 0.95).unwrap();
    // closed form with z = 1.959963984540054
    let (z, t, p) = (1.959963984540054f64, 800.0, 0.95);
    let c = (p + z * z / (2.0 * t)) / (1.0 + z * z / t);
    let h = z / (1.0 + z * z / t) * (p * (1.0 - p) / t + z * z / (4.0 * t * t)).sqrt();
    assert!((lo - (c - h)).abs() < 1e-12 && (hi - (c + h)).abs() < 1e-12);
    assert!((lo - 0.93263).abs() < 2e-4 && (hi - 0.96307).abs() < 2e-4);
    assert_eq!(wilson_interval(0, 10, 0.95).unwrap().0, 0.0);
    assert_eq!(wilson_interval(10, 10, 0.95).unwrap().1, 1.0);
    assert!(wilson_interval(11, 10, 0.95).is_err());
}

#[test]
fn coverage_summaries_agree_with_records() {
    let cfg = small(24);
    let res = run_scenario(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(res.records.len(), 24);
    assert!(res.records.windows(2).all(|w| w[0].run < w[1].run));
    for c in &res.coverage {
        let covered = res
            .records
            .iter()
            .filter_map(|r| r.estimates.iter().find(|e| e.estimator == c.estimator))
            .filter_map(|e| e.report(Estimand::Ate))
            .filter(|r| r.covers(res.truth.ate))
            .count();
        assert_eq!(covered, c.covered, "{}", c.estimator);
        assert_eq!(c.runs + c.failures, 24);
        assert!(c.wilson_low <= c.coverage && c.coverage <= c.wilson_high);
        let pts = res.ate_points(&c.estimator);
        let m = pts.iter().sum::<f64>() / pts.len() as f64;
        let v = pts.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (pts.len() - 1) as f64;
        assert!((c.mc_scaled_var - 80.0 * v).abs() < 1e-8 * c.mc_scaled_var);
    }
    assert_eq!(res.estimates_table(&cfg).len(), 24 * (3 + 1 + 3 + 3));
    assert_eq!(res.coverage_table().len(), 4);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small(20);
    let one = in_pool(1, || run_scenario(&cfg, &RunOptions { oracle: true, progress: None }).unwrap());
    let four = in_pool(4, || run_scenario(&cfg, &RunOptions { oracle: true, progress: None }).unwrap());
    assert_eq!(one.records, four.records);
    assert_eq!(one.coverage, four.coverage);
    assert_eq!(format!("{:?}", one.oracle), format!("{:?}", four.oracle));
    assert_eq!(one.estimates_table(&cfg).to_csv_string().unwrap(), four.estimates_table(&cfg).to_csv_string().unwrap());
}

#[test]
fn adding_an_estimator_leaves_others_unchanged() {
    let mut cfg = small(8);
    cfg.estimators.truncate(2);
    let base = run_scenario(&cfg, &RunOptions::default()).unwrap();
    cfg.estimators.push(EstimatorSpec::aipw("OLS", LearnerSpec::Ols));
    let more = run_scenario(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(base.coverage_for("IPW"), more.coverage_for("IPW"));
    assert_eq!(base.coverage_for("ANCOVA"), more.coverage_for("ANCOVA"));
}

#[test]
fn oracle_outputs() {
    let cfg = small(16);
    let res = run_scenario(&cfg, &RunOptions { oracle: true, progress: None }).unwrap();
    let ipw = res.oracle_for("IPW").unwrap();
    assert!(ipw.q_hash.is_none());
    assert!(ipw.sigma_hash_sq > ipw.sigma_star_sq);
    assert!(res.oracle_for("ANCOVA").unwrap().sigma_hash_sq.is_nan());
    let cv = res.oracle_for("CVOLS").unwrap();
    assert!(cv.sigma_hash_sq.is_finite() && cv.sigma_hash_sq_se > 0.0);
    assert_eq!(res.variance_table().len(), 4);
    assert!(res.qq_table().unwrap().len() >= 16);
}

#[test]
fn identity_check_runs_and_validates() {
    let mut cfg = small(6);
    cfg.estimators = vec![EstimatorSpec::crossfit("CVOLS", LearnerSpec::Ols, 4)];
    let rep = variance_bias_identity_check(&cfg).unwrap();
    assert_eq!(rep.runs, 6);
    assert_eq!(rep.rows.len(), 3);
    for r in &rep.rows {
        assert!(r.lhs.is_finite() && r.rhs.is_finite() && r.se > 0.0);
    }
    assert_eq!(rep.to_table().len(), 3);
    cfg.n = 81;
    assert!(matches!(variance_bias_identity_check(&cfg), Err(aipw_lab::Error::UnequalFolds)));
    cfg.n = 80;
    cfg.estimators = vec![EstimatorSpec::ipw("IPW")];
    assert!(variance_bias_identity_check(&cfg).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = small(1);
    cfg.estimators.push(EstimatorSpec::ipw("IPW"));
    assert!(cfg.validate().is_err());
    let mut cfg = small(1);
    cfg.estimators = vec![EstimatorSpec::crossfit("CV", LearnerSpec::Ols, 100)];
    assert!(cfg.validate().is_err());
    let text =
        r#"{"scenario_id":"x","dgp":{"p":3},"runs":1,"base_seed":1,"estimators":[{"name":"IPW","method":"ipw"}]}"#;
    let err = serde_json::from_str::<ScenarioConfig>(text).unwrap_err().to_string();
    assert!(err.contains("`n`"), "{err}");
    let roster = standard_roster(None);
    assert_eq!(
        roster.iter().map(|e| e.name.as_str()).collect::<Vec<_>>(),
        ["IPW", "ANCOVA", "misSL", "CVmisSL", "SL", "CVSL"]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn wilson_contains_estimate(t in 1usize..2000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let s = ((t as f64) * frac).floor() as usize;
        let (lo, hi) = wilson_interval(s, t, level).unwrap();
        let p = s as f64 / t as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}
