//! Least-squares regression on `[1, A, X]`, optionally with all pairwise
//! products of the predictors, plus the heteroskedasticity-consistent
//! sandwich used by the ANCOVA estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, OutcomePredictor, Predict};

/// Ridge added to the normal equations when the design is near singular,
/// relative to the mean diagonal of `X'X`.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// Pivot ratio below which a Cholesky factor is declared rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Writes the predictor vector for `(x, a)` (without intercept) into `out`.
///
/// Base predictors are `[a, x_1, ..., x_p]`; with `interactions` the products
/// `u_i * u_j` for every pair `i < j` of base predictors follow.
pub fn linear_features(x: &[f64], a: u8, interactions: bool, out: &mut Vec<f64>) {
    out.clear();
    out.push(a as f64);
    out.extend_from_slice(x);
    if interactions {
        let m = out.len();
        for i in 0..m {
            for j in (i + 1)..m {
                let v = out[i] * out[j];
                out.push(v);
            }
        }
    }
}

/// Number of predictors (excluding the intercept) for dimension `p`.
pub fn linear_feature_count(p: usize, interactions: bool) -> usize {
    let m = p + 1;
    if interactions {
        m + m * (m - 1) / 2
    } else {
        m
    }
}

/// Options controlling the least-squares solve.
#[derive(Debug, Clone, Copy)]
pub struct LinearOptions {
    pub ridge_fallback: bool,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self { ridge_fallback: true }
    }
}

/// A fitted linear outcome model.
#[derive(Debug, Clone)]
pub struct LinearModel {
    /// `[intercept, coefficient on each predictor...]`.
    pub coefficients: Vec<f64>,
    pub interactions: bool,
    /// Whether the ridge fallback was needed.
    pub ridged: bool,
}

impl Predict for LinearModel {
    fn predict(&self, x: &[f64], a: u8) -> f64 {
        let c = &self.coefficients;
        let mut acc = c[0] + c[1] * a as f64;
        for (j, xj) in x.iter().enumerate() {
            acc += c[2 + j] * xj;
        }
        if self.interactions {
            let m = x.len() + 1;
            let u = |i: usize| if i == 0 { a as f64 } else { x[i - 1] };
            let mut k = 1 + m;
            for i in 0..m {
                let ui = u(i);
                for j in (i + 1)..m {
                    acc += c[k] * ui * u(j);
                    k += 1;
                }
            }
        }
        acc
    }
}

/// Solution of a least-squares problem through its normal equations.
pub(crate) struct NormalSolution {
    pub beta: DVector<f64>,
    /// `(X'X + ridge)^{-1}`.
    pub xtx_inv: DMatrix<f64>,
    pub ridged: bool,
}

fn cholesky_ok(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let dmax = (0..m.nrows()).map(|i| m[(i, i)]).fold(0.0f64, f64::max);
    let pmin = (0..m.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if dmax > 0.0 && pmin > RANK_TOL * dmax {
        Some(chol)
    } else {
        None
    }
}

/// Solves `(X'X) beta = X'y`, falling back to a small ridge when allowed.
pub(crate) fn solve_normal(xtx: DMatrix<f64>, xty: DVector<f64>, opts: LinearOptions) -> Result<NormalSolution> {
    if let Some(chol) = cholesky_ok(&xtx) {
        return Ok(NormalSolution { beta: chol.solve(&xty), xtx_inv: chol.inverse(), ridged: false });
    }
    if !opts.ridge_fallback {
        return Err(Error::SingularDesign);
    }
    let k = xtx.nrows();
    let scale = (0..k).map(|i| xtx[(i, i)]).sum::<f64>() / k as f64;
    let mut ridged = xtx;
    for i in 0..k {
        ridged[(i, i)] += RIDGE_FALLBACK * scale.max(f64::MIN_POSITIVE);
    }
    let chol = nalgebra::Cholesky::new(ridged).ok_or(Error::SingularDesign)?;
    Ok(NormalSolution { beta: chol.solve(&xty), xtx_inv: chol.inverse(), ridged: true })
}

/// Accumulates `X'X` and `X'y` for the design with an intercept column.
fn normal_equations(data: &Dataset, interactions: bool) -> (DMatrix<f64>, DVector<f64>) {
    let k = 1 + linear_feature_count(data.p(), interactions);
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut row = Vec::with_capacity(k);
    let mut feats = Vec::with_capacity(k);
    for i in 0..data.n() {
        let o = data.obs(i);
        linear_features(o.x, o.a, interactions, &mut feats);
        row.clear();
        row.push(1.0);
        row.extend_from_slice(&feats);
        for r in 0..k {
            let vr = row[r];
            xty[r] += vr * o.y;
            for c in r..k {
                xtx[(r, c)] += vr * row[c];
            }
        }
    }
    for r in 0..k {
        for c in 0..r {
            xtx[(r, c)] = xtx[(c, r)];
        }
    }
    (xtx, xty)
}

/// Least-squares fit on `[1, A, X]` (plus pairwise products when `interactions`).
pub fn fit_linear_model(data: &Dataset, interactions: bool, opts: LinearOptions) -> Result<LinearModel> {
    let (xtx, xty) = normal_equations(data, interactions);
    let sol = solve_normal(xtx, xty, opts)?;
    Ok(LinearModel { coefficients: sol.beta.iter().copied().collect(), interactions, ridged: sol.ridged })
}

/// Fits a linear outcome model with the default ridge fallback.
pub fn fit_linear(data: &Dataset, interactions: bool) -> Result<OutcomePredictor> {
    fit_linear_with(data, interactions, LinearOptions::default())
}

pub fn fit_linear_with(data: &Dataset, interactions: bool, opts: LinearOptions) -> Result<OutcomePredictor> {
    let model = fit_linear_model(data, interactions, opts)?;
    let name = if interactions { "ols_interactions" } else { "ols" };
    Ok(OutcomePredictor::new(name, std::sync::Arc::new(model)))
}

/// Heteroskedasticity-consistent covariance flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HcVariant {
    HC0,
    HC1,
    #[default]
    HC3,
}

/// OLS coefficients with an HC sandwich covariance.
pub struct SandwichFit {
    pub beta: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// Regresses `y` on the row-major design `rows` (n × k, intercept included by
/// the caller) and returns the HC covariance of the coefficients.
pub fn ols_sandwich(rows: &[f64], k: usize, y: &[f64], hc: HcVariant, opts: LinearOptions) -> Result<SandwichFit> {
    let n = y.len();
    let xm = DMatrix::from_row_slice(n, k, rows);
    let xtx = xm.transpose() * &xm;
    let xty = xm.transpose() * DVector::from_column_slice(y);
    let sol = solve_normal(xtx, xty, opts)?;
    let resid = DVector::from_column_slice(y) - &xm * &sol.beta;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let xi = xm.row(i);
        let e2 = resid[i] * resid[i];
        let w = match hc {
            HcVariant::HC0 => e2,
            HcVariant::HC1 => e2 * n as f64 / (n as f64 - k as f64).max(1.0),
            HcVariant::HC3 => {
                let h = (xi * &sol.xtx_inv * xi.transpose())[(0, 0)];
                // leverage 1 means the point is interpolated exactly; its
                // residual is zero and it contributes nothing
                if 1.0 - h > 1e-12 {
                    e2 / ((1.0 - h) * (1.0 - h))
                } else {
                    0.0
                }
            }
        };
        meat += xi.transpose() * xi * w;
    }
    let cov = &sol.xtx_inv * meat * &sol.xtx_inv;
    Ok(SandwichFit { beta: sol.beta.iter().copied().collect(), cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PropensitySpec;
    use rand::Rng;

    fn half() -> PropensitySpec {
        PropensitySpec::constant(0.5).unwrap()
    }

    #[test]
    fn exact_linear_truth_is_recovered() {
        let mut rng = crate::rng::stream(1, &[]);
        let n = 50;
        let p = 3;
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = rng.random_range(0..2u8);
            y.push(2.0 + 3.0 * t as f64 + row[0]);
            x.extend(row);
            a.push(t);
        }
        let data = Dataset::from_columns(p, x, a, y, half()).unwrap();
        let m = fit_linear_model(&data, false, LinearOptions::default()).unwrap();
        let expected = [2.0, 3.0, 1.0, 0.0, 0.0];
        for (c, e) in m.coefficients.iter().zip(expected) {
            assert!((c - e).abs() < 1e-8, "{:?}", m.coefficients);
        }
        assert!(!m.ridged);
    }

    #[test]
    fn degenerate_design_is_singular() {
        let data = Dataset::from_columns(1, vec![0.0, 1.0], vec![1, 1], vec![1.0, 2.0], half()).unwrap();
        let err = fit_linear_with(&data, false, LinearOptions { ridge_fallback: false }).unwrap_err();
        assert_eq!(err, Error::SingularDesign);
        assert_eq!(err.to_string(), "singular design");
        // the fallback still produces a finite fit
        let m = fit_linear_model(&data, false, LinearOptions::default()).unwrap();
        assert!(m.ridged);
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn interaction_prediction_matches_features() {
        let model = LinearModel {
            coefficients: (0..(1 + linear_feature_count(2, true))).map(|i| i as f64 * 0.5 - 1.0).collect(),
            interactions: true,
            ridged: false,
        };
        let x = [0.3, -0.7];
        let mut f = Vec::new();
        linear_features(&x, 1, true, &mut f);
        let direct: f64 =
            model.coefficients[0] + f.iter().zip(&model.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>();
        assert!((model.predict(&x, 1) - direct).abs() < 1e-14);
        assert_eq!(f.len(), 6);
    }
}
