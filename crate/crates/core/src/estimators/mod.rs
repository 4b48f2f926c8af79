//! IPW, ANCOVA, AIPW and cross-fit AIPW estimators of arm means and the ATE,
//! with plug-in influence-function variances and Wald intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::linear::{ols_sandwich, HcVariant, LinearOptions};
use crate::learners::LearnerSpec;
use crate::model::{transform_value, Dataset, OutcomePredictor};
use crate::rng::{self, tag};
use crate::stats;

/// Target of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Mean1,
    Mean0,
    Ate,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Mean1 => "mean1",
            Estimand::Mean0 => "mean0",
            Estimand::Ate => "ate",
        }
    }
}

/// Point estimate, scaled variance estimate and Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub point: f64,
    /// Estimate of the asymptotic variance of `√n (point − truth)`.
    pub variance_est: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub n: usize,
}

impl EstimateReport {
    pub fn new(estimand: Estimand, point: f64, variance_est: f64, n: usize, alpha: f64) -> Result<Self> {
        let (ci_low, ci_high) = wald_ci(point, variance_est, n, alpha)?;
        Ok(Self { estimand, point, variance_est, se: (variance_est / n as f64).sqrt(), ci_low, ci_high, alpha, n })
    }

    /// Whether the interval contains `truth`.
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// Reports for both arm means and their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReports {
    pub mean1: EstimateReport,
    pub mean0: EstimateReport,
    pub ate: EstimateReport,
}

impl ArmReports {
    pub fn get(&self, e: Estimand) -> &EstimateReport {
        match e {
            Estimand::Mean1 => &self.mean1,
            Estimand::Mean0 => &self.mean0,
            Estimand::Ate => &self.ate,
        }
    }

    pub fn all(&self) -> [&EstimateReport; 3] {
        [&self.mean1, &self.mean0, &self.ate]
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `point ∓ z_{α/2} √(variance_est / n)`.
pub fn wald_ci(point: f64, variance_est: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if !(variance_est >= 0.0) {
        return Err(Error::invalid(format!("variance estimate must be nonnegative, got {variance_est}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let half = stats::z_two_sided(alpha) * (variance_est / n as f64).sqrt();
    Ok((point - half, point + half))
}

/// Random split of `0..n` into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub membership: Vec<usize>,
}

impl FoldAssignment {
    pub fn indices(&self, fold: usize) -> Vec<usize> {
        (0..self.membership.len()).filter(|&i| self.membership[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.membership.len()).filter(|&i| self.membership[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.membership {
            s[f] += 1;
        }
        s
    }

    pub fn equal_sizes(&self) -> bool {
        self.membership.len().is_multiple_of(self.k)
    }
}

/// Uniform permutation cut into `k` contiguous chunks of size ⌊n/k⌋ or ⌈n/k⌉.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("fold count must satisfy 2 <= K <= n, got K = {k}, n = {n}")));
    }
    Ok(FoldAssignment { k, membership: rng::random_partition(n, k, seed) })
}

/// Per-observation `T₁` and `T₀` values for predictions `q1`, `q0`.
fn transforms(data: &Dataset, q1: &[f64], q0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pi = data.propensity();
    (0..data.n())
        .map(|i| {
            let o = data.obs(i);
            let p1 = pi.pi1(o.x);
            (transform_value(q1[i], 1, o.a, o.y, p1), transform_value(q0[i], 0, o.a, o.y, 1.0 - p1))
        })
        .unzip()
}

/// Mean and plug-in variance of `t1`, `t0` and `t1 − t0`.
fn moment_triplet(t1: &[f64], t0: &[f64]) -> [(f64, f64); 3] {
    let d: Vec<f64> = t1.iter().zip(t0).map(|(a, b)| a - b).collect();
    [stats::mean_plugin_var(t1), stats::mean_plugin_var(t0), stats::mean_plugin_var(&d)]
}

fn reports_from_moments(m: [(f64, f64); 3], n: usize, alpha: f64) -> Result<ArmReports> {
    Ok(ArmReports {
        mean1: EstimateReport::new(Estimand::Mean1, m[0].0, m[0].1, n, alpha)?,
        mean0: EstimateReport::new(Estimand::Mean0, m[1].0, m[1].1, n, alpha)?,
        ate: EstimateReport::new(Estimand::Ate, m[2].0, m[2].1, n, alpha)?,
    })
}

/// Inverse probability weighting: `P_n{1(A=1)Y/π(1|X) − 1(A=0)Y/π(0|X)}`,
/// with the plug-in variance of the estimated influence function.
pub fn estimate_ipw(data: &Dataset, alpha: f64) -> Result<ArmReports> {
    check_alpha(alpha)?;
    data.require_both_arms()?;
    let zeros = vec![0.0; data.n()];
    let (t1, t0) = transforms(data, &zeros, &zeros);
    reports_from_moments(moment_triplet(&t1, &t0), data.n(), alpha)
}

/// Regression of `Y` on `[1, A, X]`; the coefficient on `A` with an HC
/// sandwich variance (scaled by `n`).
pub fn estimate_ancova(data: &Dataset, alpha: f64, hc: HcVariant) -> Result<EstimateReport> {
    check_alpha(alpha)?;
    data.require_both_arms()?;
    let k = data.p() + 2;
    let mut rows = Vec::with_capacity(data.n() * k);
    for i in 0..data.n() {
        let o = data.obs(i);
        rows.push(1.0);
        rows.push(o.a as f64);
        rows.extend_from_slice(o.x);
    }
    let fit = ols_sandwich(&rows, k, data.y(), hc, LinearOptions::default())?;
    let n = data.n();
    EstimateReport::new(Estimand::Ate, fit.beta[1], (n as f64 * fit.cov[(1, 1)]).max(0.0), n, alpha)
}

/// Non-cross-fit AIPW with a given outcome model.
pub fn estimate_aipw(data: &Dataset, q: &OutcomePredictor, alpha: f64) -> Result<ArmReports> {
    check_alpha(alpha)?;
    let q1 = q.predict_dataset(data, 1)?;
    let q0 = q.predict_dataset(data, 0)?;
    let (t1, t0) = transforms(data, &q1, &q0);
    if t1.iter().chain(&t0).any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteValue);
    }
    reports_from_moments(moment_triplet(&t1, &t0), data.n(), alpha)
}

/// Fold-level quantities of a cross-fit fit.
#[derive(Debug, Clone)]
pub struct FoldFit {
    pub size: usize,
    /// `(ψ̂_k, σ̂²_k)` for mean1, mean0 and the ATE.
    pub moments: [(f64, f64); 3],
    pub predictor: OutcomePredictor,
}

/// Full output of a cross-fit estimate.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub reports: ArmReports,
    pub folds: FoldAssignment,
    pub fold_fits: Vec<FoldFit>,
}

/// Cross-fit AIPW, keeping fold-level fits.
pub fn crossfit_detailed(data: &Dataset, learner: &LearnerSpec, k: usize, seed: u64, alpha: f64) -> Result<CrossFit> {
    check_alpha(alpha)?;
    let n = data.n();
    let folds = make_folds(n, k, rng::derive_seed(seed, &[tag::FOLDS]))?;
    let fold_fits: Vec<FoldFit> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldFit> {
            let train = data.subset(&folds.complement(f));
            if train.arm_count(0) == 0 || train.arm_count(1) == 0 {
                return Err(Error::TrainingArmEmpty);
            }
            let q = learner.fit(&train, rng::derive_seed(seed, &[tag::LEARNER, f as u64]))?;
            let held = data.subset(&folds.indices(f));
            let q1 = q.predict_dataset(&held, 1)?;
            let q0 = q.predict_dataset(&held, 0)?;
            let (t1, t0) = transforms(&held, &q1, &q0);
            Ok(FoldFit { size: held.n(), moments: moment_triplet(&t1, &t0), predictor: q })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut agg = [(0.0, 0.0); 3];
    for ff in &fold_fits {
        let w = ff.size as f64 / n as f64;
        for (a, m) in agg.iter_mut().zip(ff.moments) {
            a.0 += w * m.0;
            a.1 += w * m.1;
        }
    }
    Ok(CrossFit { reports: reports_from_moments(agg, n, alpha)?, folds, fold_fits })
}

/// Cross-fit AIPW: `ψ̂ = n⁻¹ Σ |I_k| ψ̂_k`, `σ̂² = n⁻¹ Σ |I_k| σ̂²_k`.
pub fn estimate_aipw_crossfit(
    data: &Dataset,
    learner: &LearnerSpec,
    k: usize,
    seed: u64,
    alpha: f64,
) -> Result<ArmReports> {
    Ok(crossfit_detailed(data, learner, k, seed, alpha)?.reports)
}
