//! Observations, datasets, known propensity scores, outcome predictors and
//! the pointwise transformations every estimator and bound is built from.
//!
//! For an outcome model `Q`, a target arm `a'` and an observation
//! `v = (x, a, y)`:
//!
//! * `transform`: `1(a = a') (y - Q(x, a')) / π(a'|x) + Q(x, a')`
//! * `influence`: `transform - ψ`
//! * `h_term`:    `(1 - 1(a = a') / π(a'|x)) (Q(x, a') - Qref(x, a'))`,
//!   which equals `transform(Q) - transform(Qref)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A single observed data point `(x, a, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub a: u8,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, a: u8, y: f64) -> Result<Self> {
        if a > 1 {
            return Err(Error::invalid(format!("treatment must be 0 or 1, got {a}")));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation contains a nonfinite value"));
        }
        Ok(Self { x, a, y })
    }

    pub fn as_ref(&self) -> ObsRef<'_> {
        ObsRef { x: &self.x, a: self.a, y: self.y }
    }
}

/// Borrowed view of one observation inside a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct ObsRef<'a> {
    pub x: &'a [f64],
    pub a: u8,
    pub y: f64,
}

type PropensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Known treatment assignment probability `π(1|x)`.
#[derive(Clone)]
pub enum PropensitySpec {
    Constant { pi1: f64, tau: f64 },
    Function { f: Arc<PropensityFn>, tau: f64 },
}

impl fmt::Debug for PropensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropensitySpec::Constant { pi1, tau } => {
                write!(f, "Constant {{ pi1: {pi1}, tau: {tau} }}")
            }
            PropensitySpec::Function { tau, .. } => write!(f, "Function {{ tau: {tau} }}"),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 0.5) {
        return Err(Error::invalid(format!("positivity bound tau must lie in (0, 0.5], got {tau}")));
    }
    Ok(())
}

impl PropensitySpec {
    /// Constant assignment probability; the positivity bound is `min(π₁, 1-π₁)`.
    pub fn constant(pi1: f64) -> Result<Self> {
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::invalid(format!("pi1 must lie in (0, 1), got {pi1}")));
        }
        Ok(PropensitySpec::Constant { pi1, tau: pi1.min(1.0 - pi1) })
    }

    /// Constant probability with an explicitly declared positivity bound.
    pub fn constant_with_tau(pi1: f64, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if !(pi1 >= tau && pi1 <= 1.0 - tau) {
            return Err(Error::invalid(format!("pi1 = {pi1} violates positivity bound {tau}")));
        }
        Ok(PropensitySpec::Constant { pi1, tau })
    }

    /// Covariate-dependent probability `x -> π(1|x)`; checked against `tau`
    /// whenever a dataset is built with it.
    pub fn function<F>(f: F, tau: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_tau(tau)?;
        Ok(PropensitySpec::Function { f: Arc::new(f), tau })
    }

    pub fn tau(&self) -> f64 {
        match self {
            PropensitySpec::Constant { tau, .. } | PropensitySpec::Function { tau, .. } => *tau,
        }
    }

    /// `π(1|x)`.
    #[inline]
    pub fn pi1(&self, x: &[f64]) -> f64 {
        match self {
            PropensitySpec::Constant { pi1, .. } => *pi1,
            PropensitySpec::Function { f, .. } => f(x),
        }
    }

    /// `π(arm|x)`.
    #[inline]
    pub fn prob(&self, arm: u8, x: &[f64]) -> f64 {
        let p1 = self.pi1(x);
        if arm == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    fn check_at(&self, x: &[f64]) -> Result<()> {
        let tau = self.tau();
        let p = self.pi1(x);
        // small slack for round-off in user-supplied functions
        if !(p.is_finite() && p >= tau - 1e-12 && p <= 1.0 - tau + 1e-12) {
            return Err(Error::invalid(format!("propensity {p} outside [{tau}, {}]", 1.0 - tau)));
        }
        Ok(())
    }
}

/// Column-oriented collection of observations sharing one propensity spec.
#[derive(Debug, Clone)]
pub struct Dataset {
    p: usize,
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    propensity: PropensitySpec,
}

impl Dataset {
    /// Builds a dataset from row-major covariates `x` (n × p), treatments and outcomes.
    pub fn from_columns(p: usize, x: Vec<f64>, a: Vec<u8>, y: Vec<f64>, propensity: PropensitySpec) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one observation"));
        }
        if a.len() != n || x.len() != n * p {
            return Err(Error::invalid(format!(
                "column lengths disagree: n = {n}, a = {}, x = {} (p = {p})",
                a.len(),
                x.len()
            )));
        }
        if a.iter().any(|&t| t > 1) {
            return Err(Error::invalid("treatment must be 0 or 1"));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains a nonfinite value"));
        }
        let ds = Dataset { p, x, a, y, propensity };
        if let PropensitySpec::Function { .. } = ds.propensity {
            for i in 0..n {
                ds.propensity.check_at(ds.row(i))?;
            }
        }
        Ok(ds)
    }

    pub fn from_observations(obs: &[Observation], propensity: PropensitySpec) -> Result<Self> {
        let p = obs.first().map(|o| o.x.len()).unwrap_or(0);
        if obs.iter().any(|o| o.x.len() != p) {
            return Err(Error::invalid("covariate dimension differs across observations"));
        }
        let x = obs.iter().flat_map(|o| o.x.iter().copied()).collect();
        let a = obs.iter().map(|o| o.a).collect();
        let y = obs.iter().map(|o| o.y).collect();
        Self::from_columns(p, x, a, y, propensity)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn obs(&self, i: usize) -> ObsRef<'_> {
        ObsRef { x: self.row(i), a: self.a[i], y: self.y[i] }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn propensity(&self) -> &PropensitySpec {
        &self.propensity
    }

    /// Number of observations in arm `arm`.
    pub fn arm_count(&self, arm: u8) -> usize {
        self.a.iter().filter(|&&t| t == arm).count()
    }

    /// Errors with [`Error::ArmEmpty`] unless both arms are represented.
    pub fn require_both_arms(&self) -> Result<()> {
        for arm in [1u8, 0u8] {
            if self.arm_count(arm) == 0 {
                return Err(Error::ArmEmpty { arm });
            }
        }
        Ok(())
    }

    /// New dataset with the given rows (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            p: self.p,
            x,
            a: rows.iter().map(|&i| self.a[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            propensity: self.propensity.clone(),
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.n()).map(|i| Observation { x: self.row(i).to_vec(), a: self.a[i], y: self.y[i] }).collect()
    }
}

/// Anything that maps `(x, a)` to a predicted outcome.
pub trait Predict: Send + Sync {
    fn predict(&self, x: &[f64], a: u8) -> f64;

    /// Predicts arm `a` for every row of the row-major matrix `xs` (rows × p).
    fn predict_rows(&self, xs: &[f64], p: usize, a: u8, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.predict(&xs[i * p..(i + 1) * p], a);
        }
    }
}

impl<F> Predict for F
where
    F: Fn(&[f64], u8) -> f64 + Send + Sync,
{
    fn predict(&self, x: &[f64], a: u8) -> f64 {
        self(x, a)
    }
}

/// A fitted (or fixed) outcome model together with its metadata.
#[derive(Clone)]
pub struct OutcomePredictor {
    inner: Arc<dyn Predict>,
    name: String,
    bound: Option<f64>,
}

impl fmt::Debug for OutcomePredictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutcomePredictor").field("name", &self.name).field("bound", &self.bound).finish()
    }
}

impl OutcomePredictor {
    pub fn new(name: impl Into<String>, inner: Arc<dyn Predict>) -> Self {
        Self { inner, name: name.into(), bound: None }
    }

    pub fn from_fn<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], u8) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, Arc::new(f))
    }

    /// The constant-zero predictor.
    pub fn zero() -> Self {
        Self::from_fn("zero", |_: &[f64], _: u8| 0.0).with_bound(0.0)
    }

    /// Declares `M` with `|predict(x, a)| <= M`.
    pub fn with_bound(mut self, m: f64) -> Self {
        self.bound = Some(m);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    #[inline]
    pub fn predict(&self, x: &[f64], a: u8) -> f64 {
        self.inner.predict(x, a)
    }

    /// Finite prediction or [`Error::NonfiniteValue`].
    #[inline]
    pub fn predict_checked(&self, x: &[f64], a: u8) -> Result<f64> {
        let q = self.inner.predict(x, a);
        if q.is_finite() {
            Ok(q)
        } else {
            Err(Error::NonfiniteValue)
        }
    }

    /// Batch prediction for a row-major matrix; fails on any nonfinite value.
    pub fn predict_rows(&self, xs: &[f64], p: usize, a: u8) -> Result<Vec<f64>> {
        let rows = xs.len().checked_div(p).unwrap_or(xs.len());
        let mut out = vec![0.0; rows];
        self.predict_rows_into(xs, p, a, &mut out)?;
        Ok(out)
    }

    pub fn predict_rows_into(&self, xs: &[f64], p: usize, a: u8, out: &mut [f64]) -> Result<()> {
        self.inner.predict_rows(xs, p, a, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonfiniteValue)
        }
    }

    /// Predictions for arm `a` at every row of `data`.
    pub fn predict_dataset(&self, data: &Dataset, a: u8) -> Result<Vec<f64>> {
        let mut out = vec![0.0; data.n()];
        self.predict_rows_into(data.x(), data.p(), a, &mut out)?;
        Ok(out)
    }
}

/// `T_{a'}` evaluated from an already computed prediction `q = Q(x, a')` and
/// propensity `pi = π(a'|x)`.
#[inline]
pub fn transform_value(q: f64, arm: u8, a: u8, y: f64, pi: f64) -> f64 {
    if a == arm {
        (y - q) / pi + q
    } else {
        q
    }
}

/// `H_{a'}` from predictions `q = Q(x, a')`, `qref = Qref(x, a')`.
#[inline]
pub fn h_value(q: f64, qref: f64, arm: u8, a: u8, pi: f64) -> f64 {
    let ind = if a == arm { 1.0 } else { 0.0 };
    (1.0 - ind / pi) * (q - qref)
}

fn arm_prob(arm: u8, x: &[f64], pi: &PropensitySpec) -> Result<f64> {
    if arm > 1 {
        return Err(Error::invalid(format!("target arm must be 0 or 1, got {arm}")));
    }
    let p = pi.prob(arm, x);
    if !(p > 0.0) {
        return Err(Error::invalid(format!("propensity π({arm}|x) = {p} must be positive")));
    }
    Ok(p)
}

/// `T_{a'}(Q)(v)`.
pub fn transform(q: &OutcomePredictor, arm: u8, v: ObsRef<'_>, pi: &PropensitySpec) -> Result<f64> {
    let p = arm_prob(arm, v.x, pi)?;
    let qv = q.predict_checked(v.x, arm)?;
    Ok(transform_value(qv, arm, v.a, v.y, p))
}

/// `D_{a'}(Q, ψ)(v) = T_{a'}(Q)(v) - ψ`.
pub fn influence(q: &OutcomePredictor, psi: f64, arm: u8, v: ObsRef<'_>, pi: &PropensitySpec) -> Result<f64> {
    Ok(transform(q, arm, v, pi)? - psi)
}

/// `H_{a'}(Q)(v)` relative to the reference model `qref`.
pub fn h_term(
    q: &OutcomePredictor,
    qref: &OutcomePredictor,
    arm: u8,
    v: ObsRef<'_>,
    pi: &PropensitySpec,
) -> Result<f64> {
    let p = arm_prob(arm, v.x, pi)?;
    let qv = q.predict_checked(v.x, arm)?;
    let rv = qref.predict_checked(v.x, arm)?;
    Ok(h_value(qv, rv, arm, v.a, p))
}
