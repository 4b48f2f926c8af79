//! HAL-lite: a lasso over tensor-product indicator (or hinge) basis functions
//! of covariate subsets, interacted with treatment.

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::learners::lasso::{fit_lasso_cv_model, FeatureMap, LassoOptions};
use crate::model::{Dataset, OutcomePredictor};
use crate::stats::quantile_sorted;

/// One basis function `Π_{j ∈ dims} φ(x_j − u_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalTerm {
    pub dims: Vec<usize>,
    pub knots: Vec<f64>,
}

/// A set of basis functions sharing one smoothness order.
#[derive(Debug, Clone)]
pub struct HalBasis {
    pub p: usize,
    /// 0 for indicators `1(x ≥ u)`, 1 for hinges `max(x − u, 0)`.
    pub smoothness: u8,
    pub terms: Vec<HalTerm>,
}

fn subsets(p: usize, max_degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(start: usize, p: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for j in start..p {
            cur.push(j);
            out.push(cur.clone());
            if left > 1 {
                rec(j + 1, p, left - 1, cur, out);
            }
            cur.pop();
        }
    }
    rec(0, p, max_degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|s| s.len());
    out
}

fn check_args(p: usize, max_degree: usize, smoothness: u8) -> Result<()> {
    if max_degree == 0 || max_degree > p {
        return Err(Error::invalid(format!("HAL max_degree must lie in 1..={p}, got {max_degree}")));
    }
    if smoothness > 1 {
        return Err(Error::invalid(format!("HAL smoothness must be 0 or 1, got {smoothness}")));
    }
    Ok(())
}

impl HalBasis {
    /// Every subset of at most `max_degree` covariates crossed with the full
    /// grid of the given per-dimension knots. No deduplication.
    pub fn with_knots(knots: &[Vec<f64>], max_degree: usize, smoothness: u8) -> Result<Self> {
        let p = knots.len();
        check_args(p, max_degree, smoothness)?;
        let per_degree = vec![knots.to_vec(); max_degree];
        Ok(Self::from_grid(p, &per_degree, max_degree, smoothness))
    }

    /// `grid[d - 1][j]` holds the knots of covariate `j` within subsets of size `d`.
    fn from_grid(p: usize, grid: &[Vec<Vec<f64>>], max_degree: usize, smoothness: u8) -> Self {
        let mut terms = Vec::new();
        for s in subsets(p, max_degree) {
            let lists: Vec<&Vec<f64>> = s.iter().map(|&j| &grid[s.len() - 1][j]).collect();
            if lists.iter().any(|l| l.is_empty()) {
                continue;
            }
            let mut idx = vec![0usize; s.len()];
            loop {
                terms.push(HalTerm { dims: s.clone(), knots: idx.iter().zip(&lists).map(|(&i, l)| l[i]).collect() });
                let mut d = s.len();
                let mut done = true;
                while d > 0 {
                    d -= 1;
                    idx[d] += 1;
                    if idx[d] < lists[d].len() {
                        done = false;
                        break;
                    }
                    idx[d] = 0;
                }
                if done {
                    break;
                }
            }
        }
        HalBasis { p, smoothness, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    #[inline]
    pub fn eval_term(&self, t: &HalTerm, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (&j, &u) in t.dims.iter().zip(&t.knots) {
            if self.smoothness == 0 {
                if x[j] < u {
                    return 0.0;
                }
            } else {
                let h = x[j] - u;
                if h <= 0.0 {
                    return 0.0;
                }
                v *= h;
            }
        }
        v
    }

    /// Appends every basis value at `x` to `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(self.terms.iter().map(|t| self.eval_term(t, x)));
    }

    /// Column `k` evaluated at each row of the row-major matrix `xs`.
    pub fn column(&self, k: usize, xs: &[f64]) -> Vec<f64> {
        xs.chunks(self.p).map(|row| self.eval_term(&self.terms[k], row)).collect()
    }
}

/// Knots for one covariate: the distinct values when there are at most
/// `count` of them, otherwise type-7 quantiles at `(i + 0.5) / count`.
fn dimension_knots(sorted: &[f64], count: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if count >= distinct.len() {
        return distinct;
    }
    let mut k: Vec<f64> = (0..count).map(|i| quantile_sorted(sorted, (i as f64 + 0.5) / count as f64)).collect();
    k.dedup();
    k
}

/// Basis for the row-major covariate matrix `x` (n × p).
///
/// Subsets of size `d` use `⌊budget^{1/d}⌋` knots per covariate so each
/// subset contributes at most `knot_budget` columns. Columns that are
/// constant or duplicate an earlier column on `x` are removed.
pub fn build_hal_basis(x: &[f64], p: usize, max_degree: usize, smoothness: u8, knot_budget: usize) -> Result<HalBasis> {
    check_args(p, max_degree, smoothness)?;
    if knot_budget == 0 {
        return Err(Error::invalid("HAL knot_budget must be at least 1"));
    }
    if x.is_empty() || !x.len().is_multiple_of(p) {
        return Err(Error::invalid("HAL covariate matrix is empty or ragged"));
    }
    let sorted: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut c: Vec<f64> = x.chunks(p).map(|r| r[j]).collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    let grid: Vec<Vec<Vec<f64>>> = (1..=max_degree)
        .map(|d| {
            let per = ((knot_budget as f64).powf(1.0 / d as f64) + 1e-9).floor().max(1.0) as usize;
            sorted.iter().map(|s| dimension_knots(s, per)).collect()
        })
        .collect();
    let full = HalBasis::from_grid(p, &grid, max_degree, smoothness);
    let mut seen = HashSet::new();
    let mut terms = Vec::new();
    for (k, t) in full.terms.iter().enumerate() {
        let col = full.column(k, x);
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let key: Vec<u64> = col.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            terms.push(t.clone());
        }
    }
    Ok(HalBasis { p, smoothness, terms })
}

/// Features `[a, x, B(x), a·B(x)]`.
pub struct HalFeatures {
    pub basis: HalBasis,
}

impl FeatureMap for HalFeatures {
    fn dim(&self) -> usize {
        1 + self.basis.p + 2 * self.basis.len()
    }

    fn features(&self, x: &[f64], a: u8, out: &mut Vec<f64>) {
        out.clear();
        out.push(a as f64);
        out.extend_from_slice(x);
        let start = out.len();
        self.basis.eval_into(x, out);
        let af = a as f64;
        for k in 0..self.basis.len() {
            let v = out[start + k] * af;
            out.push(v);
        }
    }
}

/// HAL-lite hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalOptions {
    pub max_degree: usize,
    pub smoothness: u8,
    /// Knots per dimension; `None` means `min(25, n / 10)`.
    pub knot_budget: Option<usize>,
    pub lasso: LassoOptions,
}

pub fn default_knot_budget(n: usize) -> usize {
    (n / 10).clamp(1, 25)
}

/// Fitted HAL-lite model; exposed for inspection of the lasso solution.
pub fn fit_hal_lite_model(data: &Dataset, opts: &HalOptions, seed: u64) -> Result<crate::learners::lasso::LassoModel> {
    let budget = opts.knot_budget.unwrap_or_else(|| default_knot_budget(data.n()));
    let basis = build_hal_basis(data.x(), data.p(), opts.max_degree.min(data.p()), opts.smoothness, budget)?;
    let mut model = fit_lasso_cv_model(data, Arc::new(HalFeatures { basis }), opts.lasso, seed)?;
    let lo = data.y().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    model.clamp = Some((lo, hi));
    Ok(model)
}

/// Fits HAL-lite; predictions are clamped to the training outcome range.
pub fn fit_hal_lite(data: &Dataset, opts: &HalOptions, seed: u64) -> Result<OutcomePredictor> {
    let model = fit_hal_lite_model(data, opts, seed)?;
    let m = data.y().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let name = format!("hal_lite_d{}_s{}", opts.max_degree, opts.smoothness);
    Ok(OutcomePredictor::new(name, Arc::new(model)).with_bound(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::linear::fit_linear;
    use crate::model::{Predict, PropensitySpec};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, p: usize, seed: u64, f: impl Fn(&[f64], u8) -> f64, noise: f64) -> Dataset {
        let mut r = rng::stream(seed, &[]);
        let (mut x, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
            let t = r.random_range(0..2u8);
            let e: f64 = StandardNormal.sample(&mut r);
            y.push(f(&row, t) + noise * e);
            x.extend(row);
            a.push(t);
        }
        Dataset::from_columns(p, x, a, y, PropensitySpec::constant(0.5).unwrap()).unwrap()
    }

    fn opts(degree: usize, smoothness: u8) -> HalOptions {
        HalOptions {
            max_degree: degree,
            smoothness,
            knot_budget: None,
            lasso: LassoOptions { lambda_min_ratio: 1e-2, ..LassoOptions::default() },
        }
    }

    #[test]
    fn single_indicator_column() {
        let b = HalBasis::with_knots(&[vec![0.0]], 1, 0).unwrap();
        assert_eq!(b.column(0, &[-1.0, 1.0]), vec![0.0, 1.0]);
        let q = build_hal_basis(&[-1.0, 1.0], 1, 1, 0, 1).unwrap();
        assert_eq!(q.terms, vec![HalTerm { dims: vec![0], knots: vec![0.0] }]);
    }

    #[test]
    fn two_way_interaction_present() {
        let b = HalBasis::with_knots(&[vec![0.0], vec![0.0]], 2, 0).unwrap();
        let k = b.terms.iter().position(|t| t.dims == vec![0, 1]).unwrap();
        assert_eq!(b.column(k, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn column_count_bound() {
        let d = data(500, 3, 3, |_, _| 0.0, 1.0);
        let b = build_hal_basis(d.x(), 3, 2, 0, 10).unwrap();
        assert!(b.len() <= 3 * 10 + 3 * 100);
        assert!(!b.is_empty());
    }

    #[test]
    fn budget_truncates_to_distinct_values() {
        let x = [0.0, 1.0, 0.0, 1.0];
        let b = build_hal_basis(&x, 1, 1, 1, 50).unwrap();
        // knots {0, 1}; hinge at 1 is identically zero and dropped
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn step_truth_beats_linear() {
        let f = |x: &[f64], _: u8| if x[0] > 0.3 { 1.0 } else { 0.0 };
        let train = data(400, 2, 4, f, 0.05);
        let test = data(2000, 2, 5, f, 0.05);
        let hal = fit_hal_lite(&train, &opts(2, 0), 1).unwrap();
        let lin = fit_linear(&train, false).unwrap();
        let mse = |q: &OutcomePredictor| {
            (0..test.n())
                .map(|i| {
                    let o = test.obs(i);
                    (o.y - q.predict(o.x, o.a)).powi(2)
                })
                .sum::<f64>()
                / test.n() as f64
        };
        assert!(mse(&hal) < mse(&lin), "{} vs {}", mse(&hal), mse(&lin));
    }

    #[test]
    fn constant_truth_is_reproduced() {
        let d = data(60, 3, 6, |_, _| 2.5, 0.0);
        let q = fit_hal_lite(&d, &opts(3, 1), 2).unwrap();
        for i in 0..d.n() {
            assert!((q.predict(d.row(i), 1 - d.a()[i]) - 2.5).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn predictions_clamped_and_in_scaled_hull(seed in 0u64..500, smooth in 0u8..2) {
            let d = data(80, 3, seed, |x, a| 3.0 * x[0].signum() + a as f64 * x[1], 1.0);
            let model = fit_hal_lite_model(&d, &opts(2, smooth), seed).unwrap();
            let lo = d.y().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut r = rng::stream(seed, &[99]);
            let mut buf = Vec::new();
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
                let a = r.random_range(0..2u8);
                let v = model.predict(&x, a);
                prop_assert!(v >= lo && v <= hi);
                if smooth == 0 {
                    // every feature lies in [-1, 1], so f - b0 is in the l1-scaled hull
                    let raw = model.raw_predict(&x, a, &mut buf);
                    prop_assert!((raw - model.intercept).abs() <= model.l1_norm() + 1e-9);
                }
            }
        }
    }
}
