//! Super learner: convex stacking of base learners by cross-validated risk.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::model::{Dataset, OutcomePredictor, Predict};
use crate::rng;

/// A fitted stack and its cross-validation diagnostics.
#[derive(Debug, Clone)]
pub struct FittedStack {
    pub names: Vec<String>,
    /// Refit base predictors; `None` for dropped or zero-weight learners.
    pub predictors: Vec<Option<OutcomePredictor>>,
    pub weights: Vec<f64>,
    /// Cross-validated MSE per base learner (NaN when dropped).
    pub cv_risk: Vec<f64>,
    /// CV MSE of the weighted combination.
    pub stacked_cv_risk: f64,
    pub warnings: Vec<String>,
}

struct Combination {
    parts: Vec<(f64, OutcomePredictor)>,
}

impl Predict for Combination {
    fn predict(&self, x: &[f64], a: u8) -> f64 {
        self.parts.iter().map(|(w, q)| w * q.predict(x, a)).sum()
    }

    fn predict_rows(&self, xs: &[f64], p: usize, a: u8, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut buf = vec![0.0; out.len()];
        for (w, q) in &self.parts {
            // nonfinite values are caught by the outer predictor
            let _ = q.predict_rows_into(xs, p, a, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
    }
}

impl FittedStack {
    pub fn predictor(&self) -> OutcomePredictor {
        let parts: Vec<(f64, OutcomePredictor)> = self
            .weights
            .iter()
            .zip(&self.predictors)
            .filter_map(|(&w, q)| q.as_ref().filter(|_| w > 0.0).map(|q| (w, q.clone())))
            .collect();
        let bound = parts.iter().map(|(w, q)| q.bound().map(|b| w * b)).sum::<Option<f64>>();
        let q = OutcomePredictor::new("super_learner", Arc::new(Combination { parts }));
        match bound {
            Some(b) => q.with_bound(b),
            None => q,
        }
    }
}

fn objective(g: &[Vec<f64>], b: &[f64], w: &[f64]) -> f64 {
    let l = w.len();
    let mut v = 0.0;
    for i in 0..l {
        if w[i] == 0.0 {
            continue;
        }
        let gw: f64 = (0..l).map(|j| g[i][j] * w[j]).sum();
        v += w[i] * gw - 2.0 * b[i] * w[i];
    }
    v
}

/// Solves the equality-constrained problem on `set`: minimize `w'Gw − 2b'w`
/// subject to `Σ w = 1`.
fn solve_on_face(g: &[Vec<f64>], b: &[f64], set: &[usize]) -> Option<Vec<f64>> {
    let k = set.len();
    let dim = k + 1;
    let trace: f64 = set.iter().map(|&i| g[i][i]).sum::<f64>() / k as f64;
    let eps = 1e-13 * trace.max(f64::MIN_POSITIVE);
    let mut m = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
    for (r, &i) in set.iter().enumerate() {
        for (c, &j) in set.iter().enumerate() {
            m[(r, c)] = 2.0 * g[i][j];
        }
        m[(r, r)] += 2.0 * eps;
        m[(r, k)] = 1.0;
        m[(k, r)] = 1.0;
        rhs[r] = 2.0 * b[i];
    }
    rhs[k] = 1.0;
    let sol = m.lu().solve(&rhs)?;
    let w: Vec<f64> = sol.iter().take(k).copied().collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// Minimizes `‖y − Zw‖²/n` over the probability simplex, where `z[l]` holds
/// the cross-validated predictions of learner `l`.
///
/// Active-set method started at the best single learner (earliest on ties);
/// the returned objective never exceeds that learner's.
pub fn simplex_least_squares(z: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let l = z.len();
    let n = y.len() as f64;
    let g: Vec<Vec<f64>> =
        (0..l).map(|i| (0..l).map(|j| z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() / n).collect()).collect();
    let b: Vec<f64> = (0..l).map(|i| z[i].iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n).collect();
    let vertex = |i: usize| {
        let mut w = vec![0.0; l];
        w[i] = 1.0;
        w
    };
    let mut best = 0;
    for i in 1..l {
        if g[i][i] - 2.0 * b[i] < g[best][best] - 2.0 * b[best] {
            best = i;
        }
    }
    let start = vertex(best);
    let start_obj = objective(&g, &b, &start);
    let mut w = start.clone();
    let mut set = vec![best];
    let scale = (0..l).map(|i| g[i][i]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    for _ in 0..(10 * l + 10) {
        let grad: Vec<f64> = (0..l).map(|i| 2.0 * ((0..l).map(|j| g[i][j] * w[j]).sum::<f64>() - b[i])).collect();
        let mu = set.iter().map(|&i| grad[i]).sum::<f64>() / set.len() as f64;
        let mut enter = None;
        let mut most = -tol;
        for i in 0..l {
            if !set.contains(&i) && grad[i] - mu < most {
                most = grad[i] - mu;
                enter = Some(i);
            }
        }
        let Some(j) = enter else { break };
        set.push(j);
        set.sort_unstable();
        for _ in 0..(l + 1) {
            let Some(zs) = solve_on_face(&g, &b, &set) else { break };
            if zs.iter().all(|&v| v > 0.0) {
                w = vec![0.0; l];
                for (&i, &v) in set.iter().zip(&zs) {
                    w[i] = v;
                }
                break;
            }
            // step toward the face solution until a weight hits zero
            let mut alpha = 1.0f64;
            for (&i, &v) in set.iter().zip(&zs) {
                if v <= 0.0 && w[i] - v > 0.0 {
                    alpha = alpha.min(w[i] / (w[i] - v));
                }
            }
            for (&i, &v) in set.iter().zip(&zs) {
                w[i] += alpha * (v - w[i]);
            }
            set.retain(|&i| w[i] > 1e-15);
            for (i, wi) in w.iter_mut().enumerate() {
                if !set.contains(&i) {
                    *wi = 0.0;
                }
            }
            if set.is_empty() {
                break;
            }
        }
        if set.is_empty() {
            break;
        }
    }
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return start;
    }
    w.iter_mut().for_each(|v| *v /= total);
    if objective(&g, &b, &w) > start_obj {
        start
    } else {
        w
    }
}

/// Fits the super learner over `library` with `folds`-fold cross-validation.
pub fn fit_super_learner_stack(
    data: &Dataset,
    library: &[LearnerSpec],
    folds: usize,
    seed: u64,
) -> Result<FittedStack> {
    if library.is_empty() {
        return Err(Error::invalid("super learner library must be nonempty"));
    }
    if folds < 2 || folds > data.n() {
        return Err(Error::invalid(format!("super learner needs 2 <= folds <= n, got {folds}")));
    }
    let n = data.n();
    let labels = rng::random_partition(n, folds, rng::derive_seed(seed, &[rng::tag::LEARNER]));
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| ((0..n).filter(|&i| labels[i] != f).collect(), (0..n).filter(|&i| labels[i] == f).collect()))
        .collect();
    let mut warnings = Vec::new();
    let mut z: Vec<Option<Vec<f64>>> = Vec::with_capacity(library.len());
    for (l, spec) in library.iter().enumerate() {
        let mut cv = vec![0.0; n];
        let mut failed = None;
        for (f, (train, test)) in splits.iter().enumerate() {
            let sub = data.subset(train);
            let fitted = spec.fit(&sub, rng::derive_seed(seed, &[rng::tag::LEARNER, l as u64, f as u64]));
            let result = fitted.and_then(|q| {
                test.iter()
                    .map(|&i| {
                        let o = data.obs(i);
                        q.predict_checked(o.x, o.a)
                    })
                    .collect::<Result<Vec<f64>>>()
            });
            match result {
                Ok(preds) => {
                    for (&i, v) in test.iter().zip(preds) {
                        cv[i] = v;
                    }
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        match failed {
            Some(e) => {
                warnings.push(format!("{} dropped: {e}", spec.name()));
                z.push(None);
            }
            None => z.push(Some(cv)),
        }
    }
    let kept: Vec<usize> = (0..library.len()).filter(|&l| z[l].is_some()).collect();
    if kept.is_empty() {
        return Err(Error::LearnerFailed(format!("every super learner candidate failed: {}", warnings.join("; "))));
    }
    let zk: Vec<Vec<f64>> = kept.iter().map(|&l| z[l].clone().unwrap_or_default()).collect();
    let y = data.y();
    let mse = |pred: &[f64]| pred.iter().zip(y).map(|(p, v)| (v - p) * (v - p)).sum::<f64>() / n as f64;
    let wk = simplex_least_squares(&zk, y);
    let mut weights = vec![0.0; library.len()];
    let mut cv_risk = vec![f64::NAN; library.len()];
    for (idx, &l) in kept.iter().enumerate() {
        weights[l] = wk[idx];
        cv_risk[l] = mse(&zk[idx]);
    }
    let combined: Vec<f64> =
        (0..n).map(|i| kept.iter().enumerate().map(|(idx, _)| wk[idx] * zk[idx][i]).sum()).collect();
    let stacked_cv_risk = mse(&combined);
    let mut predictors = vec![None; library.len()];
    for &l in &kept {
        if weights[l] > 0.0 {
            let q = library[l].fit(data, rng::derive_seed(seed, &[rng::tag::LEARNER, l as u64, folds as u64]))?;
            predictors[l] = Some(q);
        }
    }
    Ok(FittedStack {
        names: library.iter().map(|s| s.name()).collect(),
        predictors,
        weights,
        cv_risk,
        stacked_cv_risk,
        warnings,
    })
}

/// Fits the super learner and returns its combined predictor.
pub fn fit_super_learner(data: &Dataset, library: &[LearnerSpec], folds: usize, seed: u64) -> Result<OutcomePredictor> {
    Ok(fit_super_learner_stack(data, library, folds, seed)?.predictor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PropensitySpec;
    use proptest::prelude::*;
    use rand::Rng;

    fn data(n: usize, seed: u64, f: impl Fn(f64) -> f64, noise: f64) -> Dataset {
        let mut r = rng::stream(seed, &[]);
        let (mut x, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let xi: f64 = r.random_range(-1.0..1.0);
            let e: f64 = r.random_range(-1.0..1.0);
            x.push(xi);
            a.push(r.random_range(0..2u8));
            y.push(f(xi) + noise * e);
        }
        Dataset::from_columns(1, x, a, y, PropensitySpec::constant(0.5).unwrap()).unwrap()
    }

    #[test]
    fn singleton_zero_library() {
        let d = data(40, 1, |x| x, 1.0);
        let s = fit_super_learner_stack(&d, &[LearnerSpec::Zero], 5, 3).unwrap();
        assert_eq!(s.weights, vec![1.0]);
        assert_eq!(s.predictor().predict(&[0.3], 1), 0.0);
    }

    #[test]
    fn marginal_mean_dominates_zero() {
        let d = data(200, 2, |_| 5.0, 0.1);
        let s = fit_super_learner_stack(&d, &[LearnerSpec::Zero, LearnerSpec::MarginalMean], 5, 3).unwrap();
        assert!(s.weights[1] >= 0.99, "{:?}", s.weights);
    }

    #[test]
    fn failing_learner_is_dropped() {
        let d = data(30, 3, |x| x, 1.0);
        // more lasso folds than training rows
        let bad = LearnerSpec::LassoCv { lambda_grid: 10, lambda_min_ratio: 1e-4, cv_folds: 50 };
        let s = fit_super_learner_stack(&d, &[bad.clone(), LearnerSpec::Ols], 3, 1).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.weights, vec![0.0, 1.0]);
        assert!(fit_super_learner_stack(&d, &[bad], 3, 1).is_err());
    }

    #[test]
    fn simplex_solution_is_exact_on_small_problem() {
        // y = 0.3 z0 + 0.7 z1 exactly
        let z0 = vec![1.0, 0.0, 2.0, -1.0];
        let z1 = vec![0.0, 1.0, 1.0, 3.0];
        let y: Vec<f64> = z0.iter().zip(&z1).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
        let w = simplex_least_squares(&[z0, z1, vec![5.0; 4]], &y);
        assert!((w[0] - 0.3).abs() < 1e-9 && (w[1] - 0.7).abs() < 1e-9 && w[2].abs() < 1e-12, "{w:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn weights_are_convex_and_optimal(seed in 0u64..10_000, l in 1usize..6, n in 5usize..60) {
            let mut r = rng::stream(seed, &[1]);
            let y: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
            let z: Vec<Vec<f64>> = (0..l)
                .map(|k| y.iter().map(|v| if k == 0 { 0.0 } else { v * r.random_range(0.0..2.0) + r.random_range(-1.0..1.0) }).collect())
                .collect();
            let w = simplex_least_squares(&z, &y);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            let mse = |p: &dyn Fn(usize) -> f64| (0..n).map(|i| (y[i] - p(i)).powi(2)).sum::<f64>() / n as f64;
            let stacked = mse(&|i| (0..l).map(|k| w[k] * z[k][i]).sum());
            let best = (0..l).map(|k| mse(&|i| z[k][i])).fold(f64::INFINITY, f64::min);
            prop_assert!(stacked <= best + 1e-9);
        }
    }
}
