//! Simulation data-generating process and Monte Carlo ground truth.
//!
//! `X ~ Unif(−1, 1)^p`, `A ~ Bernoulli(π₁)` independent of `X`, and
//! `Y | X, A ~ N(Q*(X, A), noise_sd(Q*(X, A))²)`. Only the first three
//! covariates enter `Q*`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{transform_value, Dataset, PropensitySpec};
use crate::rng::{self, tag};
use crate::stats;
use crate::table::{Cell, Table};

/// Rows generated per independent random stream.
pub const CHUNK: usize = 4096;

fn default_pi1() -> f64 {
    0.5
}

/// Covariate dimension and treatment probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub p: usize,
    #[serde(default = "default_pi1")]
    pub pi1: f64,
}

impl DgpConfig {
    pub fn new(p: usize) -> Self {
        Self { p, pi1: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 3 {
            return Err(Error::invalid(format!("dgp.p must be at least 3, got {}", self.p)));
        }
        PropensitySpec::constant(self.pi1).map(|_| ())
    }

    pub fn propensity(&self) -> Result<PropensitySpec> {
        PropensitySpec::constant(self.pi1)
    }
}

#[inline]
fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `Q*(x, a)`; reads `x[0..3]`.
pub fn true_outcome_mean(x: &[f64], a: u8) -> f64 {
    let (x1, x2, x3) = (x[0], x[1], x[2]);
    let af = a as f64;
    let branch = if x3 > 0.3 { x3 * x3 } else { 1.0 };
    let ring = if x1 * x1 + x2 * x2 > 0.25 { 1.0 } else { 0.0 };
    8.0 * af + 7.0 * x1.abs() + 10.0 * (20.0 * x2).sin() - 10.0 * branch
        + 10.0 * x1 * x2.abs() * x3
        + 14.0 * x3.abs().sqrt()
        + 4.0 * af / (1.0 + expit(-8.0 * x1 * x2))
        + 9.0 * ring
        - 13.0 * x1.min(x2).min(x3)
        + (7.0 * x1 + 13.0 * x3).cos().max(x2) * (-17.0 + 5.0 * af)
}

/// Conditional standard deviation of `Y` given `Q*(X, A) = q`.
pub fn noise_sd(q: f64) -> f64 {
    1.0f64.max(q.abs() / 10.0).max(2.0 * q.sin().abs())
}

/// Generates `n` rows; row `i` comes from stream `(seed, CHUNK, i / CHUNK)`.
pub fn generate_dataset(cfg: &DgpConfig, n: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let p = cfg.p;
    let chunks: Vec<(Vec<f64>, Vec<u8>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(n - c * CHUNK);
            let mut r = rng::stream(seed, &[tag::CHUNK, c as u64]);
            let mut x = Vec::with_capacity(rows * p);
            let mut a = Vec::with_capacity(rows);
            let mut y = Vec::with_capacity(rows);
            for _ in 0..rows {
                let start = x.len();
                for _ in 0..p {
                    x.push(r.random_range(-1.0..1.0));
                }
                let t = u8::from(r.random::<f64>() < cfg.pi1);
                let q = true_outcome_mean(&x[start..], t);
                let e: f64 = StandardNormal.sample(&mut r);
                a.push(t);
                y.push(q + noise_sd(q) * e);
            }
            (x, a, y)
        })
        .collect();
    let mut x = Vec::with_capacity(n * p);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (cx, ca, cy) in chunks {
        x.extend(cx);
        a.extend(ca);
        y.extend(cy);
    }
    Dataset::from_columns(p, x, a, y, cfg.propensity()?)
}

/// Monte Carlo ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub psi1: f64,
    pub psi0: f64,
    pub ate: f64,
    /// Variance of the efficient influence function for the ATE.
    pub sigma_star_sq: f64,
    pub mc_n: usize,
    pub psi1_se: f64,
    pub psi0_se: f64,
    pub ate_se: f64,
    pub sigma_star_sq_se: f64,
}

impl TruthReport {
    pub fn to_table(&self, scenario_id: &str) -> Table {
        let mut t = Table::new(&[
            "scenario_id",
            "mc_n",
            "psi1",
            "psi0",
            "ate",
            "sigma_star_sq",
            "psi1_se",
            "psi0_se",
            "ate_se",
            "sigma_star_sq_se",
        ]);
        t.push(vec![
            Cell::from(scenario_id),
            Cell::from(self.mc_n),
            self.psi1.into(),
            self.psi0.into(),
            self.ate.into(),
            self.sigma_star_sq.into(),
            self.psi1_se.into(),
            self.psi0_se.into(),
            self.ate_se.into(),
            self.sigma_star_sq_se.into(),
        ]);
        t
    }
}

/// Smallest Monte Carlo size accepted by [`compute_truth`].
pub const MIN_TRUTH_DRAWS: usize = 10_000;

/// ATE as the MC mean of `Q*(X,1) − Q*(X,0)`, and `σ*²` as the MC variance of
/// `T₁(Q*) − T₀(Q*) − ATE` over full draws of `(X, A, Y)`.
pub fn compute_truth(cfg: &DgpConfig, mc_n: usize, seed: u64) -> Result<TruthReport> {
    if mc_n < MIN_TRUTH_DRAWS {
        return Err(Error::invalid(format!("truth mc_n must be at least {MIN_TRUTH_DRAWS}, got {mc_n}")));
    }
    let data = generate_dataset(cfg, mc_n, rng::derive_seed(seed, &[tag::TRUTH]))?;
    let pi1 = cfg.pi1;
    let n = data.n();
    let mut q1 = Vec::with_capacity(n);
    let mut q0 = Vec::with_capacity(n);
    let mut diff = Vec::with_capacity(n);
    let mut eif = Vec::with_capacity(n);
    for i in 0..n {
        let o = data.obs(i);
        let m1 = true_outcome_mean(o.x, 1);
        let m0 = true_outcome_mean(o.x, 0);
        q1.push(m1);
        q0.push(m0);
        diff.push(m1 - m0);
        eif.push(transform_value(m1, 1, o.a, o.y, pi1) - transform_value(m0, 0, o.a, o.y, 1.0 - pi1));
    }
    let ate = stats::mean(&diff);
    let centered: Vec<f64> = eif.iter().map(|v| v - ate).collect();
    // second moment about the known-in-the-limit center, matching σ*²'s definition
    let sigma_star_sq = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let sq: Vec<f64> = centered.iter().map(|v| v * v).collect();
    Ok(TruthReport {
        psi1: stats::mean(&q1),
        psi0: stats::mean(&q0),
        ate,
        sigma_star_sq,
        mc_n,
        psi1_se: stats::mean_se(&q1),
        psi0_se: stats::mean_se(&q0),
        ate_se: stats::mean_se(&diff),
        sigma_star_sq_se: stats::mean_se(&sq),
    })
}

/// Writes `x1..xp, a, y` as CSV.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("a".into());
    header.push("y".into());
    let mut t = Table::with_header(header);
    for i in 0..data.n() {
        let o = data.obs(i);
        let mut row: Vec<Cell> = o.x.iter().map(|&v| v.into()).collect();
        row.push(Cell::from(o.a as usize));
        row.push(o.y.into());
        t.push(row);
    }
    t.write_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(true_outcome_mean(&[0.0, 0.0, 0.0], 0), -27.0);
        let v = true_outcome_mean(&[0.0, 0.0, 0.0], 1);
        assert!((v - (-27.0 + 8.0 + 4.0 / 1.5 + 5.0)).abs() < 1e-12);
        assert!((v + 11.333_333).abs() < 1e-6);
        assert_eq!(noise_sd(-27.0), 2.7);
        assert_eq!(noise_sd(0.0), 1.0);
        assert_eq!(noise_sd(std::f64::consts::PI), 1.0);
        // extra covariates are inert
        assert_eq!(true_outcome_mean(&[0.1, 0.2, 0.3, 0.9], 1), true_outcome_mean(&[0.1, 0.2, 0.3, -0.9], 1));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DgpConfig::new(3);
        let a = generate_dataset(&cfg, 5000, 9).unwrap();
        let b = generate_dataset(&cfg, 5000, 9).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(
            a.y().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.y().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        // a prefix of a longer dataset is the shorter dataset
        let c = generate_dataset(&cfg, 100, 9).unwrap();
        assert_eq!(&a.y()[..100], c.y());
    }

    #[test]
    fn validation() {
        assert!(generate_dataset(&DgpConfig::new(2), 10, 1).is_err());
        assert!(compute_truth(&DgpConfig::new(3), 100, 1).is_err());
    }
}
