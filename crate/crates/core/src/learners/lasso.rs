//! Coordinate-descent lasso on standardized columns with an unpenalized
//! intercept, a log-spaced λ path and K-fold cross-validation.
//!
//! The objective for centered response `y` and standardized design `X` is
//! `(1/2n) ‖y − Xβ‖² + λ ‖β‖₁`.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{Dataset, OutcomePredictor, Predict};
use crate::rng;

/// Maps `(x, a)` to a feature vector.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, x: &[f64], a: u8, out: &mut Vec<f64>);
}

/// Solver and path settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub n_lambda: usize,
    /// Smallest λ on the grid as a fraction of λ_max.
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Stop the path once the explained deviance saturates; later λ values
    /// reuse the last solution.
    pub early_stop: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { n_lambda: 100, lambda_min_ratio: 1e-4, cv_folds: 5, tol: 1e-7, max_sweeps: 100_000, early_stop: true }
    }
}

/// Column-major design after centering and scaling every nonconstant column
/// to unit plug-in variance. Constant columns and exact repeats of an earlier
/// column are dropped.
pub struct Standardized {
    n: usize,
    /// Original indices of the retained columns.
    cols: Vec<usize>,
    x: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    y: Vec<f64>,
    y_mean: f64,
}

impl Standardized {
    /// `raw` is column-major with `n` rows and `m` columns.
    pub fn new(raw: &[f64], n: usize, m: usize, y: &[f64]) -> Self {
        let nf = n as f64;
        let mut cols = Vec::new();
        let mut x = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        let mut seen = HashSet::new();
        for j in 0..m {
            let c = &raw[j * n..(j + 1) * n];
            let mu = c.iter().sum::<f64>() / nf;
            let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / nf;
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + mu.abs())) {
                continue;
            }
            // columns equal up to an affine map standardize to the same
            // values up to sign and rounding
            let sign = if c[0] >= mu { 1.0 } else { -1.0 };
            let key: Vec<i64> = c.iter().map(|v| (sign * (v - mu) / sd * 1e9).round() as i64).collect();
            if !seen.insert(key) {
                continue;
            }
            cols.push(j);
            mean.push(mu);
            scale.push(sd);
            x.extend(c.iter().map(|v| (v - mu) / sd));
        }
        let y_mean = y.iter().sum::<f64>() / nf;
        let y = y.iter().map(|v| v - y_mean).collect();
        Self { n, cols, x, mean, scale, y, y_mean }
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    /// Smallest λ at which every coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        (0..self.ncols()).map(|j| (dot(self.col(j), &self.y) / self.n as f64).abs()).fold(0.0, f64::max)
    }

    /// Converts standardized coefficients to `(intercept, [(original column, coef)])`.
    pub fn unstandardize(&self, beta: &[f64]) -> (f64, Vec<(usize, f64)>) {
        let mut intercept = self.y_mean;
        let mut coefs = Vec::new();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                let raw = b / self.scale[j];
                intercept -= raw * self.mean[j];
                coefs.push((self.cols[j], raw));
            }
        }
        (intercept, coefs)
    }

    /// Largest violation of the lasso optimality conditions at `lambda`.
    pub fn kkt_violation(&self, beta: &[f64], lambda: f64) -> f64 {
        let r = self.residual(beta);
        let mut worst = 0.0f64;
        for j in 0..self.ncols() {
            let g = dot(self.col(j), &r) / self.n as f64;
            let v = if beta[j] == 0.0 { (g.abs() - lambda).max(0.0) } else { (g - lambda * beta[j].signum()).abs() };
            worst = worst.max(v);
        }
        worst
    }

    fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.y.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (ri, xi) in r.iter_mut().zip(self.col(j)) {
                    *ri -= b * xi;
                }
            }
        }
        r
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators let the loop vectorize
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Whether a (possibly updated) factor has a finite, positive diagonal.
fn healthy(c: &Cholesky<f64, Dyn>) -> bool {
    c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0)
}

#[inline]
fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Warm-started coordinate descent along a decreasing λ sequence.
///
/// Uses covariance updates: the gradient `X'(y − Xβ)/n` is kept for every
/// column, and a column of `X'X/n` is computed the first time its coefficient
/// moves. When coordinate descent has settled on a support, the stationarity
/// equations on that support are solved directly.
pub struct PathSolver<'a> {
    s: &'a Standardized,
    opts: LassoOptions,
    beta: Vec<f64>,
    /// `X'y / n`.
    c: Vec<f64>,
    grad: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
    /// Cholesky factor of the Gram submatrix on the listed columns, kept
    /// between active-set solves.
    factor: Option<(Vec<usize>, Cholesky<f64, Dyn>)>,
    strong: Vec<bool>,
    /// `y'y / n`.
    yy: f64,
    prev_lambda: f64,
    lambda_cur: f64,
    sweeps: usize,
}

/// Active-set sweeps between attempts at an exact active-set solve.
const ACTIVE_SWEEPS: usize = 1;

impl<'a> PathSolver<'a> {
    pub fn new(s: &'a Standardized, opts: LassoOptions) -> Self {
        let n = s.n as f64;
        let m = s.ncols();
        let c: Vec<f64> = (0..m).map(|j| dot(s.col(j), &s.y) / n).collect();
        let lmax = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Self {
            s,
            opts,
            beta: vec![0.0; m],
            grad: c.clone(),
            c,
            gram: vec![None; m],
            factor: None,
            strong: vec![false; m],
            yy: dot(&s.y, &s.y) / n,
            prev_lambda: lmax,
            lambda_cur: lmax,
            sweeps: 0,
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Coordinate sweeps performed so far.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Fraction of the centered sum of squares explained by the current fit.
    pub fn dev_ratio(&self) -> f64 {
        if self.yy == 0.0 {
            return 1.0;
        }
        let fit: f64 = self.beta.iter().zip(self.c.iter().zip(&self.grad)).map(|(b, (c, g))| b * (c + g)).sum();
        fit / self.yy
    }

    fn ensure_gram(&mut self, j: usize) {
        if self.gram[j].is_none() {
            let n = self.s.n as f64;
            let cj = self.s.col(j);
            let col = (0..self.beta.len())
                .map(|i| match &self.gram[i] {
                    Some(gi) => gi[j],
                    None => dot(self.s.col(i), cj) / n,
                })
                .collect();
            self.gram[j] = Some(col);
        }
    }

    /// Moves `beta[j]` to `value` and updates the gradient.
    fn set_coef(&mut self, j: usize, value: f64) {
        let d = value - self.beta[j];
        if d != 0.0 {
            self.ensure_gram(j);
            let g = self.gram[j].as_deref().expect("gram column");
            for (gi, gji) in self.grad.iter_mut().zip(g) {
                *gi -= gji * d;
            }
        }
        self.beta[j] = value;
    }

    /// Recomputes the gradient from the current coefficients.
    fn refresh(&mut self) {
        self.grad.copy_from_slice(&self.c);
        for j in 0..self.beta.len() {
            let b = self.beta[j];
            if b != 0.0 {
                let g = self.gram[j].as_deref().expect("active column has gram");
                for (gi, gji) in self.grad.iter_mut().zip(g) {
                    *gi -= gji * b;
                }
            }
        }
    }

    fn sweep(&mut self, only_nonzero: bool) -> f64 {
        let mut dmax = 0.0f64;
        for j in 0..self.beta.len() {
            if !self.strong[j] || (only_nonzero && self.beta[j] == 0.0) {
                continue;
            }
            let old = self.beta[j];
            let new = soft(self.grad[j] + old, self.lambda_cur);
            if new != old {
                self.set_coef(j, new);
                dmax = dmax.max((new - old).abs());
            }
        }
        self.sweeps += 1;
        dmax
    }

    /// Cholesky factor of the Gram submatrix on `act` (sorted). Updates the
    /// cached factor column by column when few columns changed.
    fn factorize(&mut self, act: &[usize]) -> Option<Cholesky<f64, Dyn>> {
        if let Some((mut set, mut chol)) = self.factor.take() {
            let kept = set.iter().filter(|j| act.binary_search(j).is_ok()).count();
            if 3 * (set.len() + act.len() - 2 * kept) < act.len() {
                for p in (0..set.len()).rev() {
                    if act.binary_search(&set[p]).is_err() {
                        chol = chol.remove_column(p);
                        set.remove(p);
                    }
                }
                let mut ok = healthy(&chol);
                for &j in act {
                    let Err(pos) = set.binary_search(&j) else { continue };
                    if !ok {
                        break;
                    }
                    set.insert(pos, j);
                    let gj = self.gram[j].as_deref().expect("active column has gram");
                    chol = chol.insert_column(pos, DVector::from_iterator(set.len(), set.iter().map(|&i| gj[i])));
                    ok = healthy(&chol);
                }
                if ok {
                    return Some(chol);
                }
            }
        }
        let k = act.len();
        let mut g = DMatrix::zeros(k, k);
        for (a, &ja) in act.iter().enumerate() {
            let col = self.gram[ja].as_deref().expect("active column has gram");
            for (b, &jb) in act.iter().enumerate() {
                g[(b, a)] = col[jb];
            }
        }
        g.cholesky()
    }

    /// Minimizes the objective over the current nonzero set with the current
    /// signs. When a coefficient would change sign, moves up to the first sign
    /// change, drops that coefficient (downdating the factorization) and
    /// solves again on the smaller set. Every move lowers the objective.
    /// Returns whether the result satisfies optimality on all strong columns.
    fn newton(&mut self) -> bool {
        let lam = self.lambda_cur;
        let mut act: Vec<usize> = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
        if act.is_empty() {
            return false;
        }
        let Some(mut chol) = self.factorize(&act) else { return false };
        while !act.is_empty() {
            let rhs =
                DVector::from_iterator(act.len(), act.iter().map(|&j| self.grad[j] - lam * self.beta[j].signum()));
            let step = chol.solve(&rhs);
            if step.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let mut t = 1.0f64;
            let mut hit = None;
            for (a, &j) in act.iter().enumerate() {
                let (b, d) = (self.beta[j], step[a]);
                if b + d == 0.0 || (b + d).signum() != b.signum() {
                    let ta = -b / d;
                    if ta < t {
                        t = ta;
                        hit = Some(a);
                    }
                }
            }
            let Some(h) = hit else {
                for (a, &j) in act.iter().enumerate() {
                    self.set_coef(j, self.beta[j] + step[a]);
                }
                break;
            };
            for (a, &j) in act.iter().enumerate() {
                let b = self.beta[j];
                let nb = if a == h { 0.0 } else { b + t * step[a] };
                if a == h || nb.signum() == b.signum() {
                    self.set_coef(j, nb);
                }
            }
            // a coefficient other than `h` that also reached zero keeps its
            // old value; the next solve moves it again
            act.remove(h);
            chol = chol.remove_column(h);
        }
        self.factor = Some((act, chol));
        (0..self.beta.len()).filter(|&j| self.strong[j]).all(|j| {
            let g = self.grad[j];
            match self.beta[j] {
                0.0 => g.abs() <= lam * (1.0 + 1e-9),
                b => (g - lam * b.signum()).abs() <= 1e-9 * lam.max(1.0),
            }
        })
    }

    /// Solves at `lambda` starting from the current solution.
    pub fn solve(&mut self, lambda: f64) {
        self.lambda_cur = lambda;
        self.refresh();
        let cutoff = 2.0 * lambda - self.prev_lambda;
        for j in 0..self.beta.len() {
            if !self.strong[j] && (self.beta[j] != 0.0 || self.grad[j].abs() >= cutoff) {
                self.strong[j] = true;
            }
        }
        loop {
            while self.sweeps < self.opts.max_sweeps && self.sweep(false) >= self.opts.tol {
                let mut converged = false;
                for _ in 0..ACTIVE_SWEEPS {
                    if self.sweep(true) < self.opts.tol {
                        converged = true;
                        break;
                    }
                }
                if !converged && self.newton() {
                    break;
                }
            }
            let mut added = false;
            for j in 0..self.beta.len() {
                if !self.strong[j] && self.grad[j].abs() > lambda {
                    self.strong[j] = true;
                    added = true;
                }
            }
            if !added || self.sweeps >= self.opts.max_sweeps {
                break;
            }
        }
        self.prev_lambda = lambda;
    }
}

/// Log-spaced grid from λ_max down to `min_ratio · λ_max` for design `s`.
pub fn lambda_grid(s: &Standardized, opts: &LassoOptions) -> Vec<f64> {
    let lambda_max = s.lambda_max();
    let k = opts.n_lambda.max(1);
    if k == 1 {
        return vec![lambda_max];
    }
    let lr = opts.lambda_min_ratio.ln();
    (0..k).map(|i| lambda_max * (lr * i as f64 / (k - 1) as f64).exp()).collect()
}

/// Runs the whole path and hands each λ index and solution to `visit`.
///
/// With early stopping the remaining indices are visited with the last
/// solution.
pub fn run_path(s: &Standardized, lambdas: &[f64], opts: LassoOptions, mut visit: impl FnMut(usize, &[f64])) {
    let mut solver = PathSolver::new(s, opts);
    let mut prev_dev = 0.0;
    let mut stopped = false;
    for (k, &lam) in lambdas.iter().enumerate() {
        if !stopped {
            solver.solve(lam);
            if opts.early_stop && k > 0 {
                let dev = solver.dev_ratio();
                if dev > 0.999 || dev - prev_dev < 1e-5 * dev {
                    stopped = true;
                }
                prev_dev = dev;
            } else {
                prev_dev = solver.dev_ratio();
            }
        }
        visit(k, solver.beta());
    }
}

/// Evaluates a feature map over the rows of `data`, column-major.
pub fn design_matrix(data: &Dataset, fmap: &dyn FeatureMap) -> Vec<f64> {
    let n = data.n();
    let m = fmap.dim();
    let mut raw = vec![0.0; n * m];
    let mut buf = Vec::with_capacity(m);
    for i in 0..n {
        let o = data.obs(i);
        fmap.features(o.x, o.a, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            raw[j * n + i] = *v;
        }
    }
    raw
}

fn gather_rows(raw: &[f64], n: usize, m: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * m);
    for j in 0..m {
        let c = &raw[j * n..(j + 1) * n];
        out.extend(rows.iter().map(|&i| c[i]));
    }
    out
}

/// A sparse linear model over a feature map, optionally clamped.
pub struct LassoModel {
    pub intercept: f64,
    pub coefs: Vec<(usize, f64)>,
    pub lambda: f64,
    pub clamp: Option<(f64, f64)>,
    fmap: Arc<dyn FeatureMap>,
}

impl LassoModel {
    pub fn l1_norm(&self) -> f64 {
        self.coefs.iter().map(|(_, c)| c.abs()).sum()
    }

    /// Prediction before clamping.
    pub fn raw_predict(&self, x: &[f64], a: u8, buf: &mut Vec<f64>) -> f64 {
        self.fmap.features(x, a, buf);
        self.intercept + self.coefs.iter().map(|&(j, c)| c * buf[j]).sum::<f64>()
    }
}

impl Predict for LassoModel {
    fn predict(&self, x: &[f64], a: u8) -> f64 {
        let mut buf = Vec::with_capacity(self.fmap.dim());
        let v = self.raw_predict(x, a, &mut buf);
        match self.clamp {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    fn predict_rows(&self, xs: &[f64], p: usize, a: u8, out: &mut [f64]) {
        let mut buf = Vec::with_capacity(self.fmap.dim());
        for (i, o) in out.iter_mut().enumerate() {
            let v = self.raw_predict(&xs[i * p..(i + 1) * p], a, &mut buf);
            *o = match self.clamp {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            };
        }
    }
}

/// Result of cross-validating the λ path.
#[derive(Debug, Clone)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub best: usize,
}

/// Cross-validated λ selection on a precomputed column-major design.
pub fn cross_validate(raw: &[f64], n: usize, m: usize, y: &[f64], opts: LassoOptions, seed: u64) -> Result<CvPath> {
    if opts.cv_folds < 2 || n < opts.cv_folds {
        return Err(Error::invalid(format!("lasso needs 2 <= folds <= n, got {} folds for n = {n}", opts.cv_folds)));
    }
    let full = Standardized::new(raw, n, m, y);
    let lambdas = lambda_grid(&full, &opts);
    let fold = rng::random_partition(n, opts.cv_folds, seed);
    let mut sse = vec![0.0; lambdas.len()];
    for f in 0..opts.cv_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let s = Standardized::new(&gather_rows(raw, n, m, &train), train.len(), m, &ytr);
        let mut pred = vec![0.0; test.len()];
        run_path(&s, &lambdas, opts, |k, beta| {
            let (b0, coefs) = s.unstandardize(beta);
            pred.iter_mut().for_each(|p| *p = b0);
            for (j, c) in coefs {
                let col = &raw[j * n..(j + 1) * n];
                for (p, &i) in pred.iter_mut().zip(&test) {
                    *p += c * col[i];
                }
            }
            sse[k] += pred.iter().zip(&test).map(|(p, &i)| (y[i] - p) * (y[i] - p)).sum::<f64>();
        });
    }
    let cv_mse: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let mut best = 0;
    for (k, v) in cv_mse.iter().enumerate() {
        if *v < cv_mse[best] {
            best = k;
        }
    }
    Ok(CvPath { lambdas, cv_mse, best })
}

/// Solution at `lambdas[target]` on the full design, reached along the path.
fn solve_on_path(s: &Standardized, lambdas: &[f64], target: usize, opts: LassoOptions) -> Vec<f64> {
    let mut out = Vec::new();
    run_path(s, &lambdas[..=target], opts, |k, beta| {
        if k == target {
            out = beta.to_vec();
        }
    });
    out
}

/// Lasso at a fixed λ (no early stopping), reached by a short warm-started path.
pub fn fit_lasso_fixed(data: &Dataset, fmap: Arc<dyn FeatureMap>, lambda: f64, opts: LassoOptions) -> LassoModel {
    let n = data.n();
    let m = fmap.dim();
    let raw = design_matrix(data, fmap.as_ref());
    let s = Standardized::new(&raw, n, m, data.y());
    let lmax = s.lambda_max();
    let opts = LassoOptions { early_stop: false, ..opts };
    let beta = if lambda >= lmax || s.ncols() == 0 {
        vec![0.0; s.ncols()]
    } else {
        let mut path: Vec<f64> = lambda_grid(&s, &opts).into_iter().filter(|&l| l > lambda).collect();
        path.push(lambda);
        solve_on_path(&s, &path, path.len() - 1, opts)
    };
    let (intercept, coefs) = s.unstandardize(&beta);
    LassoModel { intercept, coefs, lambda, clamp: None, fmap }
}

/// Cross-validated lasso; returns the refit at the CV-optimal λ.
pub fn fit_lasso_cv_model(
    data: &Dataset,
    fmap: Arc<dyn FeatureMap>,
    opts: LassoOptions,
    seed: u64,
) -> Result<LassoModel> {
    let n = data.n();
    let m = fmap.dim();
    let raw = design_matrix(data, fmap.as_ref());
    let s = Standardized::new(&raw, n, m, data.y());
    if s.ncols() == 0 || s.lambda_max() == 0.0 {
        let (intercept, coefs) = s.unstandardize(&vec![0.0; s.ncols()]);
        return Ok(LassoModel { intercept, coefs, lambda: 0.0, clamp: None, fmap });
    }
    let cv = cross_validate(&raw, n, m, data.y(), opts, seed)?;
    let beta = solve_on_path(&s, &cv.lambdas, cv.best, opts);
    let (intercept, coefs) = s.unstandardize(&beta);
    Ok(LassoModel { intercept, coefs, lambda: cv.lambdas[cv.best], clamp: None, fmap })
}

/// Features `[a, x_1, ..., x_p]`.
pub struct LinearFeatures {
    pub p: usize,
}

impl FeatureMap for LinearFeatures {
    fn dim(&self) -> usize {
        self.p + 1
    }

    fn features(&self, x: &[f64], a: u8, out: &mut Vec<f64>) {
        super::linear::linear_features(x, a, false, out);
    }
}

/// Cross-validated lasso on `[A, X]`.
pub fn fit_lasso_cv(data: &Dataset, opts: LassoOptions, seed: u64) -> Result<OutcomePredictor> {
    let model = fit_lasso_cv_model(data, Arc::new(LinearFeatures { p: data.p() }), opts, seed)?;
    Ok(OutcomePredictor::new("lasso_cv", Arc::new(model)))
}
