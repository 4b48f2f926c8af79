//! Monte Carlo engine: repeated estimation on simulated trials, Wald-CI
//! coverage with Wilson bands, oracle variances from averaged outcome-model
//! predictions, the cross-fit variance-bias identity, and QQ data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{compute_truth, generate_dataset, true_outcome_mean, DgpConfig, TruthReport};
use crate::error::{Error, Result};
use crate::estimators::{crossfit_detailed, estimate_aipw, estimate_ancova, estimate_ipw, Estimand, EstimateReport};
use crate::learners::linear::HcVariant;
use crate::learners::LearnerSpec;
use crate::model::{transform_value, Dataset, OutcomePredictor};
use crate::rng::{derive_seed, tag};
use crate::stats;
use crate::table::{Cell, Table};

/// Runs evaluated concurrently before their results are folded in, in order.
const BLOCK: usize = 16;

/// Largest tolerated fraction of failed runs per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.10;

pub const MIN_TEST_SET: usize = 1000;

fn default_alpha() -> f64 {
    0.05
}

fn default_test_set_size() -> usize {
    10_000
}

fn default_truth_mc_n() -> usize {
    100_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ipw,
    Ancova,
    Aipw,
    AipwCrossfit,
}

/// One roster entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub name: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hc: Option<HcVariant>,
}

impl EstimatorSpec {
    pub fn ipw(name: &str) -> Self {
        Self { name: name.into(), method: Method::Ipw, learner: None, k: None, hc: None }
    }

    pub fn ancova(name: &str, hc: HcVariant) -> Self {
        Self { name: name.into(), method: Method::Ancova, learner: None, k: None, hc: Some(hc) }
    }

    pub fn aipw(name: &str, learner: LearnerSpec) -> Self {
        Self { name: name.into(), method: Method::Aipw, learner: Some(learner), k: None, hc: None }
    }

    pub fn crossfit(name: &str, learner: LearnerSpec, k: usize) -> Self {
        Self { name: name.into(), method: Method::AipwCrossfit, learner: Some(learner), k: Some(k), hc: None }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("estimator {:?}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains([',', '"', '\n']) {
            return bad("name must be nonempty plain text".into());
        }
        match self.method {
            Method::Ipw | Method::Ancova => {
                if self.learner.is_some() || self.k.is_some() {
                    return bad("learner and k apply only to aipw methods".into());
                }
                if self.method == Method::Ipw && self.hc.is_some() {
                    return bad("hc applies only to ancova".into());
                }
            }
            Method::Aipw | Method::AipwCrossfit => {
                let Some(l) = &self.learner else { return bad("learner is required".into()) };
                l.validate().or_else(|e| bad(e.to_string()))?;
                if self.hc.is_some() {
                    return bad("hc applies only to ancova".into());
                }
                match (self.method, self.k) {
                    (Method::Aipw, Some(_)) => return bad("k applies only to aipw_crossfit".into()),
                    (Method::AipwCrossfit, None) => return bad("k is required".into()),
                    (Method::AipwCrossfit, Some(k)) if k < 2 || k > n => {
                        return bad(format!("k must satisfy 2 <= k <= n, got {k}"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Whether the estimator fits an outcome model whose predictions feed
    /// the oracle variance.
    pub fn has_model(&self) -> bool {
        matches!(self.method, Method::Aipw | Method::AipwCrossfit)
    }
}

/// A full simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub dgp: DgpConfig,
    pub n: usize,
    pub runs: usize,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub base_seed: u64,
    #[serde(default = "default_test_set_size")]
    pub test_set_size: usize,
    #[serde(default = "default_truth_mc_n")]
    pub truth_mc_n: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.scenario_id.is_empty() || self.scenario_id.contains([',', '"', '\n']) {
            return Err(Error::invalid("scenario_id must be nonempty plain text"));
        }
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.runs < 1 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.test_set_size < MIN_TEST_SET {
            return Err(Error::invalid(format!(
                "test_set_size must be at least {MIN_TEST_SET}, got {}",
                self.test_set_size
            )));
        }
        if self.truth_mc_n < crate::dgp::MIN_TRUTH_DRAWS {
            return Err(Error::invalid(format!(
                "truth_mc_n must be at least {}, got {}",
                crate::dgp::MIN_TRUTH_DRAWS,
                self.truth_mc_n
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid("estimators must be nonempty"));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.estimators {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::invalid(format!("duplicate estimator name {:?}", e.name)));
            }
            e.validate(self.n)?;
        }
        Ok(())
    }

    /// Seed of the dataset for run `r`.
    pub fn data_seed(&self, r: usize) -> u64 {
        derive_seed(self.base_seed, &[tag::DATA, r as u64])
    }

    /// Seed handed to estimator `name` in run `r`.
    pub fn estimator_seed(&self, r: usize, name: &str) -> u64 {
        derive_seed(self.base_seed, &[tag::ESTIMATOR, r as u64, fnv1a(name)])
    }

    pub fn test_set(&self) -> Result<Dataset> {
        generate_dataset(&self.dgp, self.test_set_size, derive_seed(self.base_seed, &[tag::TEST_SET]))
    }

    pub fn truth(&self) -> Result<TruthReport> {
        compute_truth(&self.dgp, self.truth_mc_n, self.base_seed)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// The roster of the coverage study: IPW, ANCOVA (HC3), AIPW with the
/// misspecified and rich super learners, each with and without 20-fold
/// cross-fitting. `rich` overrides the rich library.
pub fn standard_roster(rich: Option<Vec<LearnerSpec>>) -> Vec<EstimatorSpec> {
    let sl = |library| LearnerSpec::SuperLearner { library, folds: 5 };
    let mis = sl(LearnerSpec::misspecified_library());
    let rich = sl(rich.unwrap_or_else(LearnerSpec::rich_library));
    vec![
        EstimatorSpec::ipw("IPW"),
        EstimatorSpec::ancova("ANCOVA", HcVariant::HC3),
        EstimatorSpec::aipw("misSL", mis.clone()),
        EstimatorSpec::crossfit("CVmisSL", mis, 20),
        EstimatorSpec::aipw("SL", rich.clone()),
        EstimatorSpec::crossfit("CVSL", rich, 20),
    ]
}

/// Outcome of one estimator in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    pub estimator: String,
    /// Empty when the run failed.
    pub reports: Vec<EstimateReport>,
    pub error: Option<String>,
}

impl EstimatorRun {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn report(&self, e: Estimand) -> Option<&EstimateReport> {
        self.reports.iter().find(|r| r.estimand == e)
    }
}

/// All estimates from one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub estimates: Vec<EstimatorRun>,
}

/// Per-estimator ATE coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub estimator: String,
    /// Successful runs.
    pub runs: usize,
    pub failures: usize,
    pub covered: usize,
    pub coverage: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// MC mean of the ATE variance estimates.
    pub mean_var_est: f64,
    pub mean_var_est_se: f64,
    /// `n` times the MC variance of the ATE point estimates.
    pub mc_scaled_var: f64,
    pub mc_scaled_var_se: f64,
}

/// Oracle quantities for one estimator, all for the ATE.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleArtifacts {
    pub estimator: String,
    /// `(Q#(x,1), Q#(x,0))` per test point; `None` when the estimator has no
    /// outcome model.
    pub q_hash: Option<Vec<(f64, f64)>>,
    /// NaN for estimators without an AIPW influence function.
    pub sigma_hash_sq: f64,
    pub sigma_hash_sq_se: f64,
    pub sigma_star_sq: f64,
    pub sigma_star_sq_se: f64,
    pub mean_var_est: f64,
    pub mean_var_est_se: f64,
    pub mc_scaled_var: f64,
    pub mc_scaled_var_se: f64,
}

impl OracleArtifacts {
    /// Standard error of `sigma_hash_sq − sigma_star_sq`.
    pub fn hash_star_se(&self) -> f64 {
        self.sigma_hash_sq_se.hypot(self.sigma_star_sq_se)
    }
}

/// Everything produced by [`run_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub n: usize,
    pub alpha: f64,
    pub truth: TruthReport,
    pub records: Vec<RunRecord>,
    pub coverage: Vec<CoverageSummary>,
    /// Present when oracle quantities were requested.
    pub oracle: Option<Vec<OracleArtifacts>>,
}

/// Options of [`run_scenario`].
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Also accumulate test-set predictions and compute oracle variances.
    pub oracle: bool,
    /// Called after each block with `(runs done, runs total)`.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

/// Running sums of test-set predictions.
#[derive(Debug, Clone)]
struct PredictionSums {
    q1: Vec<f64>,
    q0: Vec<f64>,
    count: usize,
}

impl PredictionSums {
    fn new(m: usize) -> Self {
        Self { q1: vec![0.0; m], q0: vec![0.0; m], count: 0 }
    }

    fn add(&mut self, p: &(Vec<f64>, Vec<f64>)) {
        for (s, v) in self.q1.iter_mut().zip(&p.0) {
            *s += v;
        }
        for (s, v) in self.q0.iter_mut().zip(&p.1) {
            *s += v;
        }
        self.count += 1;
    }

    fn mean(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.count == 0 {
            return None;
        }
        let c = self.count as f64;
        Some((self.q1.iter().map(|v| v / c).collect(), self.q0.iter().map(|v| v / c).collect()))
    }
}

fn predict_test(q: &OutcomePredictor, test: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((q.predict_dataset(test, 1)?, q.predict_dataset(test, 0)?))
}

/// Estimates, plus test-set predictions of every fitted outcome model.
type Evaluated = (Vec<EstimateReport>, Vec<(Vec<f64>, Vec<f64>)>);

fn evaluate(spec: &EstimatorSpec, data: &Dataset, seed: u64, alpha: f64, test: Option<&Dataset>) -> Result<Evaluated> {
    let all = |r: crate::estimators::ArmReports| vec![r.mean1, r.mean0, r.ate];
    match spec.method {
        Method::Ipw => Ok((all(estimate_ipw(data, alpha)?), Vec::new())),
        Method::Ancova => Ok((vec![estimate_ancova(data, alpha, spec.hc.unwrap_or_default())?], Vec::new())),
        Method::Aipw => {
            let learner = spec.learner.as_ref().expect("validated");
            let q = learner.fit(data, seed)?;
            let reports = estimate_aipw(data, &q, alpha)?;
            let preds = match test {
                Some(t) => vec![predict_test(&q, t)?],
                None => Vec::new(),
            };
            Ok((all(reports), preds))
        }
        Method::AipwCrossfit => {
            let learner = spec.learner.as_ref().expect("validated");
            let cf = crossfit_detailed(data, learner, spec.k.expect("validated"), seed, alpha)?;
            let preds = match test {
                Some(t) => cf.fold_fits.iter().map(|f| predict_test(&f.predictor, t)).collect::<Result<_>>()?,
                None => Vec::new(),
            };
            Ok((all(cf.reports), preds))
        }
    }
}

fn run_one(
    cfg: &ScenarioConfig,
    r: usize,
    test: Option<&Dataset>,
) -> Result<(RunRecord, Vec<Vec<(Vec<f64>, Vec<f64>)>>)> {
    let data = generate_dataset(&cfg.dgp, cfg.n, cfg.data_seed(r))?;
    let mut estimates = Vec::with_capacity(cfg.estimators.len());
    let mut preds = Vec::with_capacity(cfg.estimators.len());
    for spec in &cfg.estimators {
        match evaluate(spec, &data, cfg.estimator_seed(r, &spec.name), cfg.alpha, test) {
            Ok((reports, p)) => {
                estimates.push(EstimatorRun { estimator: spec.name.clone(), reports, error: None });
                preds.push(p);
            }
            Err(e) => {
                estimates.push(EstimatorRun {
                    estimator: spec.name.clone(),
                    reports: Vec::new(),
                    error: Some(e.to_string()),
                });
                preds.push(Vec::new());
            }
        }
    }
    Ok((RunRecord { run: r, estimates }, preds))
}

/// Runs every estimator on `cfg.runs` simulated trials.
///
/// Results are identical for any thread count: runs are evaluated in fixed
/// blocks and folded into the prediction sums in run order.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions<'_>) -> Result<ScenarioResult> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let test = if opts.oracle { Some(cfg.test_set()?) } else { None };
    let m = test.as_ref().map_or(0, |t| t.n());
    let mut sums: Vec<PredictionSums> = cfg.estimators.iter().map(|_| PredictionSums::new(m)).collect();
    let mut records = Vec::with_capacity(cfg.runs);
    let mut start = 0;
    while start < cfg.runs {
        let end = (start + BLOCK).min(cfg.runs);
        let block: Vec<_> =
            (start..end).into_par_iter().map(|r| run_one(cfg, r, test.as_ref())).collect::<Result<_>>()?;
        for (rec, preds) in block {
            for (s, p) in sums.iter_mut().zip(&preds) {
                p.iter().for_each(|v| s.add(v));
            }
            records.push(rec);
        }
        if let Some(f) = opts.progress {
            f(end, cfg.runs);
        }
        start = end;
    }
    let coverage = summarize(cfg, &truth, &records)?;
    let oracle = match &test {
        Some(t) => Some(oracle_variance(cfg, &coverage, &sums, t, &truth)?),
        None => None,
    };
    Ok(ScenarioResult {
        scenario_id: cfg.scenario_id.clone(),
        n: cfg.n,
        alpha: cfg.alpha,
        truth,
        records,
        coverage,
        oracle,
    })
}

fn truth_for(truth: &TruthReport, e: Estimand) -> f64 {
    match e {
        Estimand::Mean1 => truth.psi1,
        Estimand::Mean0 => truth.psi0,
        Estimand::Ate => truth.ate,
    }
}

/// ATE coverage and variance aggregates per estimator. Records are read in
/// run order regardless of their order in the slice.
pub fn summarize(cfg: &ScenarioConfig, truth: &TruthReport, records: &[RunRecord]) -> Result<Vec<CoverageSummary>> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.run);
    let mut out = Vec::with_capacity(cfg.estimators.len());
    for spec in &cfg.estimators {
        let mut points = Vec::new();
        let mut vars = Vec::new();
        let mut covered = 0;
        let mut failures = 0;
        for rec in &sorted {
            let er = rec.estimates.iter().find(|e| e.estimator == spec.name);
            match er.and_then(|e| e.report(Estimand::Ate)) {
                Some(rep) => {
                    points.push(rep.point);
                    vars.push(rep.variance_est);
                    covered += usize::from(rep.covers(truth.ate));
                }
                None => failures += 1,
            }
        }
        let total = points.len() + failures;
        if failures as f64 > MAX_FAILURE_RATE * total as f64 {
            return Err(Error::Scenario(format!("estimator {} failed in {failures} of {total} runs", spec.name)));
        }
        let runs = points.len();
        if runs == 0 {
            return Err(Error::Scenario(format!("estimator {} has no successful runs", spec.name)));
        }
        let (wilson_low, wilson_high) = wilson_interval(covered, runs, 1.0 - cfg.alpha)?;
        let nf = cfg.n as f64;
        let (mc_scaled_var, mc_scaled_var_se) = if runs >= 2 {
            let (v, se) = stats::var_with_se(&points);
            (nf * v, nf * se)
        } else {
            (f64::NAN, f64::NAN)
        };
        out.push(CoverageSummary {
            estimator: spec.name.clone(),
            runs,
            failures,
            covered,
            coverage: covered as f64 / runs as f64,
            wilson_low,
            wilson_high,
            mean_var_est: stats::mean(&vars),
            mean_var_est_se: if runs >= 2 { stats::mean_se(&vars) } else { f64::NAN },
            mc_scaled_var,
            mc_scaled_var_se,
        });
    }
    Ok(out)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::invalid("wilson interval needs at least one trial"));
    }
    if successes > trials {
        return Err(Error::invalid(format!("successes {successes} exceed trials {trials}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let z = stats::z_two_sided(1.0 - level);
    let t = trials as f64;
    let p = successes as f64 / t;
    let z2 = z * z;
    let denom = 1.0 + z2 / t;
    let center = (p + z2 / (2.0 * t)) / denom;
    let half = z / denom * (p * (1.0 - p) / t + z2 / (4.0 * t * t)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

/// `T₁(q1) − T₀(q0) − ate` at every test observation.
fn ate_influence(test: &Dataset, q1: &[f64], q0: &[f64], ate: f64) -> Vec<f64> {
    let pi = test.propensity();
    (0..test.n())
        .map(|i| {
            let o = test.obs(i);
            let p1 = pi.pi1(o.x);
            transform_value(q1[i], 1, o.a, o.y, p1) - transform_value(q0[i], 0, o.a, o.y, 1.0 - p1) - ate
        })
        .collect()
}

/// `σ#²` for the ATE with its MC standard error: the test-set mean of the
/// squared influence function at `(q1, q0)`, centered at the true ATE.
pub fn sigma_hash_sq(test: &Dataset, q1: &[f64], q0: &[f64], ate: f64) -> (f64, f64) {
    let sq: Vec<f64> = ate_influence(test, q1, q0, ate).iter().map(|v| v * v).collect();
    (stats::mean(&sq), stats::mean_se(&sq))
}

fn oracle_variance(
    cfg: &ScenarioConfig,
    coverage: &[CoverageSummary],
    sums: &[PredictionSums],
    test: &Dataset,
    truth: &TruthReport,
) -> Result<Vec<OracleArtifacts>> {
    let zeros = vec![0.0; test.n()];
    cfg.estimators
        .iter()
        .zip(coverage)
        .zip(sums)
        .map(|((spec, cov), s)| {
            let (q_hash, (sh, sh_se)) = match spec.method {
                Method::Ipw => (None, sigma_hash_sq(test, &zeros, &zeros, truth.ate)),
                Method::Ancova => (None, (f64::NAN, f64::NAN)),
                Method::Aipw | Method::AipwCrossfit => {
                    let (q1, q0) = s
                        .mean()
                        .ok_or_else(|| Error::Scenario(format!("estimator {} stored no predictions", spec.name)))?;
                    if s.count < 2 {
                        return Err(Error::Scenario(format!(
                            "estimator {} needs at least 2 prediction vectors",
                            spec.name
                        )));
                    }
                    let v = sigma_hash_sq(test, &q1, &q0, truth.ate);
                    (Some(q1.into_iter().zip(q0).collect()), v)
                }
            };
            Ok(OracleArtifacts {
                estimator: spec.name.clone(),
                q_hash,
                sigma_hash_sq: sh,
                sigma_hash_sq_se: sh_se,
                sigma_star_sq: truth.sigma_star_sq,
                sigma_star_sq_se: truth.sigma_star_sq_se,
                mean_var_est: cov.mean_var_est,
                mean_var_est_se: cov.mean_var_est_se,
                mc_scaled_var: cov.mc_scaled_var,
                mc_scaled_var_se: cov.mc_scaled_var_se,
            })
        })
        .collect()
}

/// Sorted `points` paired with quantiles of `N(ATE, σ#²/n)` at plotting
/// positions `(i − 0.5)/R`. Rows are `(theoretical, sample)`.
pub fn qq_data(points: &[f64], truth: &TruthReport, sigma_hash_sq: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if points.len() < 10 {
        return Err(Error::invalid(format!("qq data needs at least 10 points, got {}", points.len())));
    }
    if !(sigma_hash_sq >= 0.0) || n == 0 {
        return Err(Error::invalid("qq data needs a nonnegative variance and n >= 1"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    let sd = (sigma_hash_sq / n as f64).sqrt();
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| (truth.ate + sd * stats::normal_quantile((i as f64 + 0.5) / r), s))
        .collect())
}

impl ScenarioResult {
    /// Successful ATE point estimates of `estimator`, in run order.
    pub fn ate_points(&self, estimator: &str) -> Vec<f64> {
        let mut recs: Vec<&RunRecord> = self.records.iter().collect();
        recs.sort_by_key(|r| r.run);
        recs.iter()
            .filter_map(|r| r.estimates.iter().find(|e| e.estimator == estimator))
            .filter_map(|e| e.report(Estimand::Ate).map(|r| r.point))
            .collect()
    }

    pub fn coverage_for(&self, estimator: &str) -> Option<&CoverageSummary> {
        self.coverage.iter().find(|c| c.estimator == estimator)
    }

    pub fn oracle_for(&self, estimator: &str) -> Option<&OracleArtifacts> {
        self.oracle.as_ref()?.iter().find(|o| o.estimator == estimator)
    }

    /// `estimates.csv`: one row per run, estimator and estimand. Failed
    /// estimators get one row per estimand they would have produced.
    pub fn estimates_table(&self, cfg: &ScenarioConfig) -> Table {
        let mut t = Table::new(&[
            "scenario_id",
            "run",
            "estimator",
            "estimand",
            "point",
            "variance_est",
            "se",
            "ci_low",
            "ci_high",
            "covered",
            "failed",
        ]);
        let mut recs: Vec<&RunRecord> = self.records.iter().collect();
        recs.sort_by_key(|r| r.run);
        for rec in recs {
            for (er, spec) in rec.estimates.iter().zip(&cfg.estimators) {
                if er.failed() {
                    let estimands: &[Estimand] = match spec.method {
                        Method::Ancova => &[Estimand::Ate],
                        _ => &[Estimand::Mean1, Estimand::Mean0, Estimand::Ate],
                    };
                    for e in estimands {
                        let nan = Cell::Float(f64::NAN);
                        t.push(vec![
                            self.scenario_id.as_str().into(),
                            rec.run.into(),
                            er.estimator.as_str().into(),
                            e.as_str().into(),
                            nan.clone(),
                            nan.clone(),
                            nan.clone(),
                            nan.clone(),
                            nan,
                            false.into(),
                            true.into(),
                        ]);
                    }
                    continue;
                }
                for rep in &er.reports {
                    t.push(vec![
                        self.scenario_id.as_str().into(),
                        rec.run.into(),
                        er.estimator.as_str().into(),
                        rep.estimand.as_str().into(),
                        rep.point.into(),
                        rep.variance_est.into(),
                        rep.se.into(),
                        rep.ci_low.into(),
                        rep.ci_high.into(),
                        rep.covers(truth_for(&self.truth, rep.estimand)).into(),
                        false.into(),
                    ]);
                }
            }
        }
        t
    }

    /// `coverage.csv`, for the ATE.
    pub fn coverage_table(&self) -> Table {
        let mut t = Table::new(&["scenario_id", "estimator", "runs", "coverage", "wilson_low", "wilson_high"]);
        for c in &self.coverage {
            t.push(vec![
                self.scenario_id.as_str().into(),
                c.estimator.as_str().into(),
                c.runs.into(),
                c.coverage.into(),
                c.wilson_low.into(),
                c.wilson_high.into(),
            ]);
        }
        t
    }

    /// `variance.csv`; empty unless oracle quantities were computed.
    pub fn variance_table(&self) -> Table {
        let mut t = Table::new(&[
            "scenario_id",
            "estimator",
            "sigma_star_sq",
            "sigma_hash_sq",
            "mean_var_est",
            "mc_scaled_var",
        ]);
        for o in self.oracle.iter().flatten() {
            t.push(vec![
                self.scenario_id.as_str().into(),
                o.estimator.as_str().into(),
                o.sigma_star_sq.into(),
                o.sigma_hash_sq.into(),
                o.mean_var_est.into(),
                o.mc_scaled_var.into(),
            ]);
        }
        t
    }

    /// `qq.csv` for every estimator with a finite `σ#²` and at least ten
    /// successful runs.
    pub fn qq_table(&self) -> Result<Table> {
        let mut t = Table::new(&["scenario_id", "estimator", "theoretical_q", "sample_q"]);
        for o in self.oracle.iter().flatten() {
            let pts = self.ate_points(&o.estimator);
            if !o.sigma_hash_sq.is_finite() || pts.len() < 10 {
                continue;
            }
            for (th, s) in qq_data(&pts, &self.truth, o.sigma_hash_sq, self.n)? {
                t.push(vec![self.scenario_id.as_str().into(), o.estimator.as_str().into(), th.into(), s.into()]);
            }
        }
        Ok(t)
    }
}

/// One estimand's comparison of the two sides of the cross-fit variance-bias
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRow {
    pub estimand: Estimand,
    /// MC mean of `σ̂²` minus `σ#²`.
    pub lhs: f64,
    /// Mean weighted squared deviation of fold models from `Q#`, minus the
    /// variance of fold estimates.
    pub rhs: f64,
    pub se: f64,
    /// `|lhs − rhs| / se`.
    pub z: f64,
    pub lhs_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub scenario_id: String,
    pub estimator: String,
    pub runs: usize,
    pub rows: Vec<IdentityRow>,
}

impl IdentityReport {
    pub fn to_table(&self) -> Table {
        let mut t =
            Table::new(&["scenario_id", "estimator", "estimand", "runs", "lhs", "rhs", "se", "z", "lhs_positive"]);
        for r in &self.rows {
            t.push(vec![
                self.scenario_id.as_str().into(),
                self.estimator.as_str().into(),
                r.estimand.as_str().into(),
                self.runs.into(),
                r.lhs.into(),
                r.rhs.into(),
                r.se.into(),
                r.z.into(),
                r.lhs_positive.into(),
            ]);
        }
        t
    }

    pub fn row(&self, e: Estimand) -> &IdentityRow {
        self.rows.iter().find(|r| r.estimand == e).expect("all estimands present")
    }
}

/// Per test point `P_*` of the squared `H` term, as a function of the
/// deviations `(d1, d0)` of two outcome models: `w₁d₁²`, `w₀d₀²` and, for
/// the ATE, `w₁d₁² + w₀d₀² + 2d₁d₀` with `w_a = (1 − π_a)/π_a`.
fn h_sq(e: Estimand, d1: f64, d0: f64, pi1: f64) -> f64 {
    let w1 = (1.0 - pi1) / pi1;
    let w0 = pi1 / (1.0 - pi1);
    match e {
        Estimand::Mean1 => w1 * d1 * d1,
        Estimand::Mean0 => w0 * d0 * d0,
        Estimand::Ate => w1 * d1 * d1 + w0 * d0 * d0 + 2.0 * d1 * d0,
    }
}

const ESTIMANDS: [Estimand; 3] = [Estimand::Mean1, Estimand::Mean0, Estimand::Ate];

/// Per-run fold predictions on the test covariates, with fold moments and
/// the efficient-influence control variate.
struct IdentityRun {
    var_est: [f64; 3],
    /// `P_n (T(Q*) − ψ*)²` on the run's data.
    star_sq: [f64; 3],
    /// `(ψ̂_k, predictions on test covariates)` per fold.
    folds: Vec<([f64; 3], Vec<f64>, Vec<f64>)>,
}

fn identity_run(
    cfg: &ScenarioConfig,
    spec: &EstimatorSpec,
    r: usize,
    test: &Dataset,
    truth: &TruthReport,
) -> Result<IdentityRun> {
    let data = generate_dataset(&cfg.dgp, cfg.n, cfg.data_seed(r))?;
    let learner = spec.learner.as_ref().expect("validated");
    let cf =
        crossfit_detailed(&data, learner, spec.k.expect("validated"), cfg.estimator_seed(r, &spec.name), cfg.alpha)?;
    let pi1 = cfg.dgp.pi1;
    let mut star = [0.0; 3];
    for i in 0..data.n() {
        let o = data.obs(i);
        let t1 = transform_value(true_outcome_mean(o.x, 1), 1, o.a, o.y, pi1) - truth.psi1;
        let t0 = transform_value(true_outcome_mean(o.x, 0), 0, o.a, o.y, 1.0 - pi1) - truth.psi0;
        star[0] += t1 * t1;
        star[1] += t0 * t0;
        star[2] += (t1 - t0) * (t1 - t0);
    }
    let nf = data.n() as f64;
    let folds = cf
        .fold_fits
        .iter()
        .map(|f| {
            let (q1, q0) = predict_test(&f.predictor, test)?;
            Ok(([f.moments[0].0, f.moments[1].0, f.moments[2].0], q1, q0))
        })
        .collect::<Result<_>>()?;
    let rep = &cf.reports;
    Ok(IdentityRun {
        var_est: [rep.mean1.variance_est, rep.mean0.variance_est, rep.ate.variance_est],
        star_sq: star.map(|s| s / nf),
        folds,
    })
}

/// Monte Carlo check of the cross-fit variance-bias identity
/// `E σ̂² − σ#² = Σ_k (|I_k|/n) {E P_* H(Q̂_k, Q#)² − Var ψ̂_k}`, with `Q#`
/// the mean of all fold models over all runs.
///
/// The roster must contain exactly one cross-fit estimator. Two passes over
/// the runs are made: the first averages fold predictions on the test
/// covariates into `Q#`, the second refits (deterministically) to evaluate
/// the squared deviations from `Q#`. Both sides subtract the same
/// efficient-influence control variate, which leaves their difference
/// unchanged in expectation and removes most of its noise.
pub fn variance_bias_identity_check(cfg: &ScenarioConfig) -> Result<IdentityReport> {
    cfg.validate()?;
    let specs: Vec<&EstimatorSpec> = cfg.estimators.iter().filter(|e| e.method == Method::AipwCrossfit).collect();
    let [spec] = specs[..] else {
        return Err(Error::invalid(format!(
            "identity check needs exactly one aipw_crossfit estimator, found {}",
            specs.len()
        )));
    };
    let k = spec.k.expect("validated");
    if !cfg.n.is_multiple_of(k) {
        return Err(Error::UnequalFolds);
    }
    if cfg.runs < 2 {
        return Err(Error::invalid("identity check needs at least 2 runs"));
    }
    let truth = cfg.truth()?;
    let test = cfg.test_set()?;
    let m = test.n();

    let for_blocks = |f: &mut dyn FnMut(IdentityRun)| -> Result<()> {
        let mut start = 0;
        while start < cfg.runs {
            let end = (start + BLOCK).min(cfg.runs);
            let block: Vec<IdentityRun> = (start..end)
                .into_par_iter()
                .map(|r| identity_run(cfg, spec, r, &test, &truth))
                .collect::<Result<_>>()?;
            block.into_iter().for_each(&mut *f);
            start = end;
        }
        Ok(())
    };

    let mut sums = PredictionSums::new(m);
    for_blocks(&mut |run| {
        for (_, q1, q0) in &run.folds {
            sums.add(&(q1.clone(), q0.clone()));
        }
    })?;
    let (qbar1, qbar0) = sums.mean().expect("at least one fold");

    // per run and estimand: σ̂²_r − S*_r, and R_r = mean over folds of the
    // deviation term minus (ψ̂_k − ψ*)²
    let mut lhs_r: [Vec<f64>; 3] = Default::default();
    let mut rhs_r: [Vec<f64>; 3] = Default::default();
    let psi = [truth.psi1, truth.psi0, truth.ate];
    let pi1 = cfg.dgp.pi1;
    for_blocks(&mut |run| {
        let kf = run.folds.len() as f64;
        for (e, est) in ESTIMANDS.iter().enumerate() {
            let mut r = 0.0;
            for (psi_k, q1, q0) in &run.folds {
                let dev = (0..m).map(|i| h_sq(*est, q1[i] - qbar1[i], q0[i] - qbar0[i], pi1)).sum::<f64>() / m as f64;
                r += dev - (psi_k[e] - psi[e]).powi(2);
            }
            lhs_r[e].push(run.var_est[e] - run.star_sq[e]);
            rhs_r[e].push(r / kf);
        }
    })?;

    let rows = ESTIMANDS
        .iter()
        .enumerate()
        .map(|(e, est)| {
            // σ#² − σ*² is P_X of the H² term at Q* − Q#
            let g: Vec<f64> = (0..m)
                .map(|i| {
                    let x = test.row(i);
                    h_sq(*est, true_outcome_mean(x, 1) - qbar1[i], true_outcome_mean(x, 0) - qbar0[i], pi1)
                })
                .collect();
            let lhs = stats::mean(&lhs_r[e]) - stats::mean(&g);
            let rhs = stats::mean(&rhs_r[e]);
            let d: Vec<f64> = lhs_r[e].iter().zip(&rhs_r[e]).map(|(a, b)| a - b).collect();
            let se = stats::mean_se(&d).hypot(stats::mean_se(&g));
            IdentityRow { estimand: *est, lhs, rhs, se, z: (lhs - rhs).abs() / se, lhs_positive: lhs > 0.0 }
        })
        .collect();
    Ok(IdentityReport { scenario_id: cfg.scenario_id.clone(), estimator: spec.name.clone(), runs: cfg.runs, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(runs: usize, estimators: Vec<EstimatorSpec>) -> ScenarioConfig {
        ScenarioConfig {
            scenario_id: "t".into(),
            dgp: DgpConfig::new(3),
            n: 120,
            runs,
            estimators,
            alpha: 0.05,
            base_seed: 5,
            test_set_size: 1000,
            truth_mc_n: 10_000,
        }
    }

    #[test]
    fn wilson_boundaries() {
        let (lo, hi) = wilson_interval(760, 800, 0.95).unwrap();
        assert!((lo - 0.93263).abs() < 2e-4 && (hi - 0.96307).abs() < 2e-4);
        assert_eq!(wilson_interval(0, 10, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(10, 10, 0.95).unwrap().1, 1.0);
        assert!(wilson_interval(0, 0, 0.95).is_err());
        assert!(wilson_interval(3, 2, 0.95).is_err());
    }

    #[test]
    fn qq_shapes() {
        let truth = DgpConfig::new(3);
        let t = compute_truth(&truth, 10_000, 1).unwrap();
        assert!(qq_data(&[1.0; 9], &t, 1.0, 10).is_err());
        let rows = qq_data(&[2.5; 12], &t, 4.0, 100).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.1 == 2.5));
        // symmetric plotting positions straddle the ATE
        assert!((rows[0].0 + rows[11].0 - 2.0 * t.ate).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_bad_rosters() {
        let mut c = cfg(1, vec![EstimatorSpec::ipw("a"), EstimatorSpec::ipw("a")]);
        assert!(c.validate().is_err());
        c.estimators = vec![EstimatorSpec { k: Some(2), ..EstimatorSpec::ipw("a") }];
        assert!(c.validate().is_err());
        c.estimators = vec![EstimatorSpec { k: None, ..EstimatorSpec::crossfit("c", LearnerSpec::Ols, 2) }];
        assert!(c.validate().is_err());
        c.estimators = vec![EstimatorSpec::crossfit("c", LearnerSpec::Ols, 500)];
        assert!(c.validate().is_err());
        c.estimators = vec![EstimatorSpec::ipw("a")];
        c.test_set_size = 999;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let text = r#"{"scenario_id":"s","dgp":{"p":3},"n":50,"runs":2,"base_seed":1,
            "estimators":[{"name":"IPW","method":"ipw"}],"extra":1}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(text).is_err());
        let ok = text.replace(r#","extra":1"#, "");
        let c: ScenarioConfig = serde_json::from_str(&ok).unwrap();
        assert_eq!(c.test_set_size, 10_000);
        assert_eq!(c.alpha, 0.05);
    }

    #[test]
    fn zero_learner_oracle_is_ipw() {
        let c = cfg(4, vec![EstimatorSpec::ipw("IPW"), EstimatorSpec::aipw("Z", LearnerSpec::Zero)]);
        let res = run_scenario(&c, &RunOptions { oracle: true, progress: None }).unwrap();
        let o = res.oracle.as_ref().unwrap();
        assert!(o[1].q_hash.as_ref().unwrap().iter().all(|&(a, b)| a == 0.0 && b == 0.0));
        assert_eq!(o[0].sigma_hash_sq, o[1].sigma_hash_sq);
        assert_eq!(res.ate_points("IPW"), res.ate_points("Z"));
    }

    #[test]
    fn identity_requires_equal_folds() {
        let c = cfg(2, vec![EstimatorSpec::crossfit("c", LearnerSpec::Ols, 7)]);
        assert_eq!(variance_bias_identity_check(&c).unwrap_err(), Error::UnequalFolds);
        let c = cfg(2, vec![EstimatorSpec::ipw("a")]);
        assert!(variance_bias_identity_check(&c).is_err());
    }
}
