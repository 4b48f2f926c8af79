//! Closed-form calculators for Berry-Esseen-type bounds on Wald-CI coverage
//! of AIPW estimators, with and without cross-fitting, plus the entropy
//! integral bounds, convergence-rate expressions and the K-rate factor.
//!
//! Every bound holds up to an unspecified absolute constant `𝒞`, taken here
//! as the input `constant`. Terms multiplied by it carry a `C_` prefix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::table::{Cell, Table};

/// Function class assumed for the outcome-model estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Vc,
    VcHull,
}

impl ClassKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassKind::Vc => "vc",
            ClassKind::VcHull => "vc_hull",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_kind() -> ClassKind {
    ClassKind::VcHull
}

/// Moment constants and tuning quantities entering the bounds.
///
/// `eqd2 = E‖Q̂ − Q#‖₂²`, `eqd1 = E‖Q̂ − Q#‖₂` and `qdiff = ‖Q# − Q*‖₂`.
/// Entropy integrals `J(2δ)`, `J(2δ′)` and `J(2)` may be supplied; missing
/// ones are computed with [`entropy_integral_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub n: usize,
    pub k: usize,
    /// `|I_k|`; defaults to `⌊n/K⌋`.
    #[serde(default)]
    pub fold_size: Option<usize>,
    pub tau_pi: f64,
    pub m: f64,
    pub alpha: f64,
    /// Defaults to `Φ⁻¹(1 − α)`.
    #[serde(default)]
    pub z_alpha: Option<f64>,
    pub psi_star: f64,
    pub sigma_hash: f64,
    pub sigma_dagger: f64,
    pub sigma_star: f64,
    pub rho_hash: f64,
    pub varsigma_hash: f64,
    pub varrho_hash: f64,
    pub m_bar: f64,
    pub m_underbar: f64,
    pub sigma_bar_sq: f64,
    pub rho_bar: f64,
    pub q: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub eqd2: f64,
    pub eqd1: f64,
    pub qdiff: f64,
    pub nu: u32,
    #[serde(default)]
    pub s_hat1: Option<f64>,
    #[serde(default)]
    pub s_hat2: Option<f64>,
    #[serde(default)]
    pub s_hat3: Option<f64>,
    #[serde(default)]
    pub s_tilde1: Option<f64>,
    #[serde(default)]
    pub s_tilde2: Option<f64>,
    #[serde(default)]
    pub subgaussian: bool,
    /// Common-mean or consistency condition for the cross-fit models.
    #[serde(default)]
    pub condition7: bool,
    /// The same for the non-cross-fit model.
    #[serde(default)]
    pub condition9: bool,
    #[serde(default = "default_kind")]
    pub class_kind: ClassKind,
    /// The absolute constant `𝒞`.
    #[serde(default = "one")]
    pub constant: f64,
    /// Constant `C(ν)` of the entropy integral bounds.
    #[serde(default = "one")]
    pub entropy_constant: f64,
    #[serde(default)]
    pub j_2delta: Option<f64>,
    #[serde(default)]
    pub j_2delta_prime: Option<f64>,
    #[serde(default)]
    pub j_2: Option<f64>,
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!("{name} must be finite and positive, got {v}")));
    }
    Ok(())
}

impl BoundInputs {
    /// The reference input vector used in the documentation and golden file.
    pub fn reference() -> Self {
        Self {
            n: 1000,
            k: 5,
            fold_size: None,
            tau_pi: 0.5,
            m: 2.0,
            alpha: 0.025,
            z_alpha: None,
            psi_star: 1.2,
            sigma_hash: 1.2,
            sigma_dagger: 1.1,
            sigma_star: 1.0,
            rho_hash: 2.5,
            varsigma_hash: 1.5,
            varrho_hash: 4.0,
            m_bar: 1.3,
            m_underbar: 0.9,
            sigma_bar_sq: 1.7,
            rho_bar: 2.2,
            q: 1.5,
            delta: 0.2,
            delta_prime: 0.25,
            eqd2: 0.01,
            eqd1: 0.08,
            qdiff: 0.3,
            nu: 3,
            s_hat1: Some(1.1),
            s_hat2: Some(0.9),
            s_hat3: Some(1.3),
            s_tilde1: Some(0.8),
            s_tilde2: Some(1.4),
            subgaussian: false,
            condition7: false,
            condition9: false,
            class_kind: ClassKind::VcHull,
            constant: 1.0,
            entropy_constant: 1.0,
            j_2delta: None,
            j_2delta_prime: None,
            j_2: Some(1.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.k < 2 || self.k > self.n {
            return Err(Error::invalid(format!("k must satisfy 2 <= k <= n, got {}", self.k)));
        }
        let fs = self.fold_size();
        if fs == 0 || fs > self.n {
            return Err(Error::invalid(format!("fold_size must lie in 1..=n, got {fs}")));
        }
        if !(self.tau_pi > 0.0 && self.tau_pi <= 0.5) {
            return Err(Error::invalid(format!("tau_pi must lie in (0, 0.5], got {}", self.tau_pi)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(z) = self.z_alpha {
            if !z.is_finite() {
                return Err(Error::invalid("z_alpha must be finite"));
            }
        }
        if !self.psi_star.is_finite() {
            return Err(Error::invalid("psi_star must be finite"));
        }
        positive("m", self.m)?;
        positive("sigma_star", self.sigma_star)?;
        positive("sigma_dagger", self.sigma_dagger)?;
        positive("m_underbar", self.m_underbar)?;
        positive("q", self.q)?;
        positive("delta", self.delta)?;
        positive("delta_prime", self.delta_prime)?;
        positive("constant", self.constant)?;
        positive("entropy_constant", self.entropy_constant)?;
        if !(self.sigma_hash >= self.sigma_star) || !self.sigma_hash.is_finite() {
            return Err(Error::invalid(format!(
                "sigma_hash must be at least sigma_star, got {} < {}",
                self.sigma_hash, self.sigma_star
            )));
        }
        if self.m_underbar > self.m_bar {
            return Err(Error::invalid("m_underbar must not exceed m_bar"));
        }
        for (name, v) in [
            ("rho_hash", self.rho_hash),
            ("varsigma_hash", self.varsigma_hash),
            ("varrho_hash", self.varrho_hash),
            ("m_bar", self.m_bar),
            ("sigma_bar_sq", self.sigma_bar_sq),
            ("rho_bar", self.rho_bar),
            ("eqd2", self.eqd2),
            ("eqd1", self.eqd1),
            ("qdiff", self.qdiff),
        ] {
            nonneg(name, v)?;
        }
        if self.nu < 2 {
            return Err(Error::invalid(format!("nu must be an integer of at least 2, got {}", self.nu)));
        }
        if self.eqd1 > self.eqd2.sqrt() * (1.0 + 1e-12) {
            return Err(Error::invalid("eqd1 must not exceed sqrt(eqd2)"));
        }
        for (name, v) in [
            ("s_hat1", self.s_hat1),
            ("s_hat2", self.s_hat2),
            ("s_hat3", self.s_hat3),
            ("s_tilde1", self.s_tilde1),
            ("s_tilde2", self.s_tilde2),
            ("j_2delta", self.j_2delta),
            ("j_2delta_prime", self.j_2delta_prime),
            ("j_2", self.j_2),
        ] {
            if let Some(v) = v {
                nonneg(name, v)?;
            }
        }
        Ok(())
    }

    pub fn fold_size(&self) -> usize {
        self.fold_size.unwrap_or(self.n / self.k.max(1))
    }

    pub fn z(&self) -> f64 {
        self.z_alpha.unwrap_or_else(|| stats::normal_quantile(1.0 - self.alpha))
    }

    /// `(1 − τ_π)/τ_π`.
    fn w(&self) -> f64 {
        (1.0 - self.tau_pi) / self.tau_pi
    }

    fn log_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    fn entropy(&self, supplied: Option<f64>, delta: f64, what: &str) -> Result<f64> {
        match supplied {
            Some(v) => Ok(v),
            None => entropy_integral_bound(delta, self.nu, self.class_kind, self.entropy_constant)
                .map_err(|e| Error::invalid(format!("{what} not supplied and cannot be computed: {e}"))),
        }
    }

    fn need(&self, name: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| Error::invalid(format!("{name} is required when subgaussian is set")))
    }

    fn columns(&self) -> Vec<(&'static str, Cell)> {
        let opt = |v: Option<f64>| Cell::Float(v.unwrap_or(f64::NAN));
        vec![
            ("n", self.n.into()),
            ("k", self.k.into()),
            ("fold_size", self.fold_size().into()),
            ("tau_pi", self.tau_pi.into()),
            ("m", self.m.into()),
            ("alpha", self.alpha.into()),
            ("z_alpha", self.z().into()),
            ("psi_star", self.psi_star.into()),
            ("sigma_hash", self.sigma_hash.into()),
            ("sigma_dagger", self.sigma_dagger.into()),
            ("sigma_star", self.sigma_star.into()),
            ("rho_hash", self.rho_hash.into()),
            ("varsigma_hash", self.varsigma_hash.into()),
            ("varrho_hash", self.varrho_hash.into()),
            ("m_bar", self.m_bar.into()),
            ("m_underbar", self.m_underbar.into()),
            ("sigma_bar_sq", self.sigma_bar_sq.into()),
            ("rho_bar", self.rho_bar.into()),
            ("q", self.q.into()),
            ("delta", self.delta.into()),
            ("delta_prime", self.delta_prime.into()),
            ("eqd2", self.eqd2.into()),
            ("eqd1", self.eqd1.into()),
            ("qdiff", self.qdiff.into()),
            ("nu", (self.nu as usize).into()),
            ("s_hat1", opt(self.s_hat1)),
            ("s_hat2", opt(self.s_hat2)),
            ("s_hat3", opt(self.s_hat3)),
            ("s_tilde1", opt(self.s_tilde1)),
            ("s_tilde2", opt(self.s_tilde2)),
            ("subgaussian", self.subgaussian.into()),
            ("condition7", self.condition7.into()),
            ("condition9", self.condition9.into()),
            ("class_kind", self.class_kind.as_str().into()),
            ("constant", self.constant.into()),
            ("entropy_constant", self.entropy_constant.into()),
            ("j_2delta", opt(self.j_2delta)),
            ("j_2delta_prime", opt(self.j_2delta_prime)),
            ("j_2", opt(self.j_2)),
        ]
    }
}

/// A named bound term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: &'static str,
    pub value: f64,
}

impl Term {
    /// Whether the term is multiplied by `𝒞`.
    pub fn c_scaled(&self) -> bool {
        self.name.starts_with("C_")
    }
}

/// Per-term breakdown of a bound. `total` sums `terms`; `extras` holds
/// related quantities that are not part of the total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub bound: &'static str,
    pub inputs: BoundInputs,
    pub terms: Vec<Term>,
    pub total: f64,
    pub extras: Vec<Term>,
    /// False when a precondition of the bound fails; values are still
    /// evaluated.
    pub precondition_ok: bool,
    pub notes: Vec<String>,
}

impl BoundReport {
    fn new(bound: &'static str, inputs: &BoundInputs, terms: Vec<Term>, extras: Vec<Term>) -> Self {
        let total = terms.iter().map(|t| t.value).sum();
        Self { bound, inputs: inputs.clone(), terms, total, extras, precondition_ok: true, notes: Vec::new() }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().chain(&self.extras).find(|t| t.name == name).map(|t| t.value)
    }
}

/// `K^{(r+2)/3} (K−1)^{−r/3}`, or `K^{(r+1)/2} (K−1)^{−r/2}` under
/// subgaussian conditions; times `n^{−r/3}` (resp. `n^{−r/2}`) when `n` is
/// given.
pub fn k_rate_factor(k: usize, r: f64, subgaussian: bool, n: Option<usize>) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid(format!("K must be at least 2, got {k}")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("r must be positive, got {r}")));
    }
    let (kf, km) = (k as f64, (k - 1) as f64);
    let (f, d) = if subgaussian {
        (kf.powf((r + 1.0) / 2.0) * km.powf(-r / 2.0), 2.0)
    } else {
        (kf.powf((r + 2.0) / 3.0) * km.powf(-r / 3.0), 3.0)
    };
    Ok(match n {
        Some(0) => return Err(Error::invalid("n must be positive")),
        Some(n) => f * (n as f64).powf(-r / d),
        None => f,
    })
}

/// The K-rate grid: K over even numbers 2..=20, r over 0.4, 0.5, ..., 1.0,
/// both subgaussian settings.
pub fn krate_table() -> Result<Table> {
    let mut t = Table::new(&["k", "r", "subgaussian", "factor"]);
    for subgaussian in [false, true] {
        for ri in 4..=10 {
            let r = ri as f64 / 10.0;
            for k in (2..=20).step_by(2) {
                t.push(vec![k.into(), r.into(), subgaussian.into(), k_rate_factor(k, r, subgaussian, None)?.into()]);
            }
        }
    }
    Ok(t)
}

/// Bound on the uniform entropy integral `J(2δ, 𝓕, M)`: `c δ √log(1/δ)` for
/// a VC class (`0 < δ ≤ 1/e`) and `c δ^{1/ν}` for a VC-hull (`δ > 0`).
pub fn entropy_integral_bound(delta: f64, nu: u32, kind: ClassKind, constant: f64) -> Result<f64> {
    if !(constant > 0.0) {
        return Err(Error::invalid(format!("constant must be positive, got {constant}")));
    }
    match kind {
        ClassKind::Vc => {
            if !(delta > 0.0 && delta <= (-1.0f64).exp()) {
                return Err(Error::invalid(format!("VC entropy bound needs 0 < delta <= 1/e, got {delta}")));
            }
            Ok(constant * delta * (1.0 / delta).ln().sqrt())
        }
        ClassKind::VcHull => {
            if !(delta > 0.0) || !delta.is_finite() {
                return Err(Error::invalid(format!("VC-hull entropy bound needs delta > 0, got {delta}")));
            }
            if nu < 2 {
                return Err(Error::invalid(format!("nu must be at least 2, got {nu}")));
            }
            Ok(constant * delta.powf(1.0 / nu as f64))
        }
    }
}

/// `Ŝ_k`: bound on a fold's contribution to `|σ†² − σ#²|`.
pub fn s_hat_k(inp: &BoundInputs) -> f64 {
    let (ik, n, w) = (inp.fold_size() as f64, inp.n as f64, inp.w());
    let tail = (inp.sigma_hash + (w * inp.eqd2).sqrt()).powi(2) / ik;
    ik / n * (w * inp.eqd2 + 2.0 * w * inp.qdiff * inp.eqd1 + tail)
}

/// `Ŝ′_k`: `Ŝ_k` without the cross term, valid under the common-mean
/// condition.
pub fn s_hat_prime_k(inp: &BoundInputs) -> f64 {
    let (ik, n, w) = (inp.fold_size() as f64, inp.n as f64, inp.w());
    let tail = (inp.sigma_hash + (w * inp.eqd2).sqrt()).powi(2) / ik;
    ik / n * (w * inp.eqd2 + tail)
}

/// `R̂_k`.
pub fn r_hat_k(inp: &BoundInputs) -> f64 {
    let (ik, n, w) = (inp.fold_size() as f64, inp.n as f64, inp.w());
    let (sh, sd, z) = (inp.sigma_hash, inp.sigma_dagger, inp.z());
    let a = (ik / (n * sh * sh) * w).cbrt();
    let b = (ik * ik * inp.m * inp.m * z * z / (n * n * sh * sh * sd * sd) * w * w).cbrt();
    (a + b) * inp.eqd2.cbrt()
}

/// `R̂′_k`, the subgaussian replacement of `R̂_k`.
pub fn r_hat_prime_k(inp: &BoundInputs) -> Result<f64> {
    let s1 = inp.need("s_hat1", inp.s_hat1)?;
    let s2 = inp.need("s_hat2", inp.s_hat2)?;
    let s3 = inp.need("s_hat3", inp.s_hat3)?;
    let (ik, n, w_num) = (inp.fold_size() as f64, inp.n as f64, 1.0 - inp.tau_pi);
    let (sh, sd, z, ln, q) = (inp.sigma_hash, inp.sigma_dagger, inp.z(), inp.log_n(), inp.q);
    let root = (q * inp.eqd2 * ln).sqrt();
    let first = s1 / sh * (inp.eqd1 + s2 * root) * (q * ik / n * ln).sqrt();
    let second = ik * s3 * z.abs() * inp.m * w_num / (n * sh * sd * inp.tau_pi) * root;
    Ok(first + second)
}

/// Cross-fit bound: every fold has size `|I_k|` and the same nuisance
/// moments, so fold sums are `K` times one fold's terms.
pub fn cv_bound_terms(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let c = inp.constant;
    let kf = inp.k as f64;
    let (n, ik) = (inp.n as f64, inp.fold_size() as f64);
    let (sh, sd, ss, z, ln, q) = (inp.sigma_hash, inp.sigma_dagger, inp.sigma_star, inp.z(), inp.log_n(), inp.q);
    let w = inp.w();

    let r = if inp.subgaussian { r_hat_prime_k(inp)? } else { r_hat_k(inp) };
    let s = if inp.condition7 { s_hat_prime_k(inp) } else { s_hat_k(inp) };
    let ind_z = if z != 0.0 { 1.0 } else { 0.0 };
    let ind_psi = if inp.psi_star == 0.0 { 1.0 } else { 0.0 };
    let moment = (inp.m_bar / inp.m_underbar.powf(1.5) + ind_z * inp.rho_bar / ss.powf(1.5)) / ik.sqrt();
    let sigma_tail = z.abs() * (2.0 * q * ik * inp.m_bar * ln).sqrt() / (n * sh * sd);
    let psi_tail = ik * z.abs() / (n * sh * sd)
        * (inp.psi_star.abs() * (q * inp.sigma_bar_sq / ik * ln).sqrt()
            + ind_psi * q * inp.sigma_bar_sq / ik * ln
            + (sh + (w * inp.eqd2).sqrt()).powi(2) / ik);

    let terms = vec![
        Term { name: "C_berry_esseen", value: c * inp.rho_hash / (sh.powi(3) * n.sqrt()) },
        Term { name: if inp.subgaussian { "C_r_hat_prime" } else { "C_r_hat" }, value: c * kf * r },
        Term {
            name: if inp.condition7 { "C_s_hat_prime_sq" } else { "C_s_hat_sq" },
            value: c * kf * s * s / sh.powi(4),
        },
        Term { name: "C_moment_ratio", value: c * kf * moment },
        Term { name: "C_sigma_tail", value: c * kf * sigma_tail },
        Term { name: "C_n_pow_q", value: c * kf * n.powf(-q) },
        Term { name: "C_psi_tail", value: c * kf * psi_tail },
    ];
    let extras = vec![
        Term { name: "r_hat_k", value: r },
        Term { name: "s_hat_k", value: s_hat_k(inp) },
        Term { name: "s_hat_prime_k", value: s_hat_prime_k(inp) },
        Term { name: "sd_bias_bound", value: kf * s_hat_k(inp) / sh },
        Term { name: "sd_bias_bound_prime", value: kf * s_hat_prime_k(inp) / sh },
    ];
    let mut rep = BoundReport::new("cv", inp, terms, extras);
    let pre = inp.psi_star == 0.0
        || z == 0.0
        || 2.0 * (2f64.sqrt() + 1.0).powi(2) * q * inp.sigma_bar_sq * ln / ik <= inp.psi_star * inp.psi_star;
    if !pre {
        rep.precondition_ok = false;
        rep.notes.push("precondition 2(√2+1)² q σ̄² log n/|I_k| ≤ ψ*² fails; bound shown for information".into());
    }
    Ok(rep)
}

/// Non-cross-fit bound, with the variance-bias bound `𝓑` and the bound on
/// `|σ† − σ#|` as extras.
pub fn noncv_bound_terms(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    if inp.q < 1.0 {
        return Err(Error::invalid(format!("q must be at least 1 for the non-cross-fit bound, got {}", inp.q)));
    }
    let c = inp.constant;
    let (n, ln, q, z) = (inp.n as f64, inp.log_n(), inp.q, inp.z());
    let (sh, sd, m, tau) = (inp.sigma_hash, inp.sigma_dagger, inp.m, inp.tau_pi);
    let (d, dp) = (inp.delta, inp.delta_prime);
    let (e2, e1) = (inp.eqd2, inp.eqd1);
    let w = inp.w();
    let fh = 2.0 * m * (1.0 - tau) / tau;
    let ft = 8.0 * m * m * (1.0 - tau) / (tau * tau);
    let j2d = inp.entropy(inp.j_2delta, d, "j_2delta")?;
    let j2dp = inp.entropy(inp.j_2delta_prime, dp, "j_2delta_prime")?;
    let j2 = inp.entropy(inp.j_2, 1.0, "j_2")?;
    let ind_z = if z != 0.0 { 1.0 } else { 0.0 };
    let sqn = n.sqrt();

    let guard = 2.0 * m * d.min(dp) > e1;
    if inp.subgaussian && !guard {
        return Err(Error::SubgaussianGuard);
    }

    let mut terms = vec![
        Term { name: "C_berry_esseen", value: c * inp.rho_hash / (sh.powi(3) * sqn) },
        Term { name: "C_var_berry_esseen", value: c * ind_z * inp.varrho_hash / (inp.varsigma_hash.powi(3) * sqn) },
        Term { name: "C_n_pow_q", value: c * n.powf(-q) },
    ];
    // exp(−a²/0) is 0 for a > 0, which the guard ensures
    let expo = |a: f64, scale: f64| if e2 == 0.0 { 0.0 } else { (-(a * a) / (scale * e2)).exp() };
    if inp.subgaussian {
        let s1 = inp.need("s_tilde1", inp.s_tilde1)?;
        let s2 = inp.need("s_tilde2", inp.s_tilde2)?;
        terms.push(Term { name: "r_tilde_prime_tail", value: expo(2.0 * d * m - e1, 2.0 * s1 * s1) });
        terms.push(Term {
            name: "C_r_tilde_prime_variance",
            value: c * s2 * m * (1.0 - tau) * z.abs() / (tau * sh * sd) * (q * e2 * ln).sqrt(),
        });
        terms.push(Term {
            name: "C_r_tilde_prime_entropy",
            value: c * ft * ft * j2 * j2 / (sh.powi(4) * n) * expo(2.0 * dp * m - e1, s1 * s1),
        });
    } else {
        terms.push(Term { name: "r_tilde_markov", value: e2 / (4.0 * d * d * m * m) });
        terms.push(Term {
            name: "C_r_tilde_variance",
            value: c * (16.0 * m * m * (1.0 - tau).powi(2) * z * z / (tau * tau * sh * sh * sd * sd) * e2).cbrt(),
        });
        terms.push(Term {
            name: "C_r_tilde_entropy",
            value: c * ft * ft * j2 * j2 * e2 * e2 / (sh.powi(4) * dp.powi(4) * m.powi(4) * n),
        });
    }
    let s4 = c / sh.powi(4);
    terms.extend([
        Term { name: "C_var_entropy1", value: s4 * ft * ft * j2dp * j2dp / n },
        Term { name: "C_var_entropy2", value: s4 * ft * ft * j2dp.powi(4) / (dp.powi(4) * n * n) },
        Term { name: "C_var_nuisance", value: s4 * w * w * e2 * e2 },
        Term {
            name: "C_var_cross",
            value: if inp.condition9 { 0.0 } else { s4 * w * w * inp.qdiff * inp.qdiff * e1 * e1 },
        },
        Term { name: "C_var_tail", value: s4 * (sh.powi(4) + fh.powi(4) * j2.powi(4)) / (n * n) },
    ]);
    let zs = c * z.abs() / (sh * sd);
    let fmix = fh + ft / sqn;
    let psi = inp.psi_star.abs();
    terms.extend([
        Term { name: "C_z_sigma", value: zs * sh * sh * q * ln / n },
        Term { name: "C_z_psi_sigma", value: zs * (psi * sh + inp.varsigma_hash) * (q * ln / n).sqrt() },
        Term { name: "C_z_fh_sigma", value: zs * fh * sh * (q * ln).sqrt() / n },
        Term { name: "C_z_fh_sq", value: zs * fh * fh * (j2 * j2 + q * q * ln * ln) / n },
        Term { name: "C_z_psi_fh", value: zs * psi * fh * (j2 + q * ln) / sqn },
        Term { name: "C_z_entropy", value: zs * fmix * j2d },
        Term { name: "C_z_entropy_sq", value: zs * fmix * j2d * j2d / (d * d * sqn) },
        Term { name: "C_z_delta", value: zs * q * fmix * (d + 1.0 / sqn) * ln },
    ]);

    // variance-bias bound
    let b1 = c * ft * j2d / sqn;
    let b2 = c * ft * j2d * j2d / (d * d * n);
    let b3 = if inp.subgaussian && 2.0 * d * m > e1 {
        let s1 = inp.need("s_tilde1", inp.s_tilde1)?;
        c * ft * j2 / (sh * sqn) * expo(2.0 * d * m - e1, 2.0 * s1 * s1)
    } else {
        c * ft * j2 * e2 / (sh * d * d * m * m * sqn)
    };
    let b = b1 + b2 + b3;
    let cross = if inp.condition9 { 0.0 } else { 2.0 * w / sh * inp.qdiff * e1 };
    let sd_bias = b / sh + w / sh * e2 + cross + c / (sh * n) * (sh * sh + fh * fh * j2 * j2);
    let extras = vec![
        Term { name: "f_h", value: fh },
        Term { name: "f_t2", value: ft },
        Term { name: "j_2delta", value: j2d },
        Term { name: "j_2delta_prime", value: j2dp },
        Term { name: "j_2", value: j2 },
        Term { name: "C_b_entropy", value: b1 },
        Term { name: "C_b_entropy_sq", value: b2 },
        Term { name: "C_b_nuisance", value: b3 },
        Term { name: "b_total", value: b },
        Term { name: "sd_bias_bound", value: sd_bias },
    ];
    let mut rep = BoundReport::new("noncv", inp, terms, extras);
    if !guard {
        rep.notes.push("guard 2M min(δ, δ′) > E‖ΔQ‖ fails; subgaussian replacement unavailable".into());
    }
    Ok(rep)
}

/// Which part of the rate corollary to evaluate.
pub type RatePart = ClassKind;

/// Rate expressions for the non-cross-fit coverage error under VC or VC-hull
/// classes, with the subgaussian substitutions when `inp.subgaussian` is set.
pub fn corollary_rates(part: RatePart, inp: &BoundInputs, n: usize) -> Result<BoundReport> {
    let e2 = inp.eqd2;
    if !(e2 > 0.0) || !e2.is_finite() {
        return Err(Error::invalid(format!("eqd2 must be positive, got {e2}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("n must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let ln = nf.ln();
    let guard = e2 < 1.0 / ln;
    let mut notes = Vec::new();
    if inp.subgaussian && !guard {
        notes.push("guard E‖ΔQ‖² < 1/log n fails for the subgaussian rate".into());
    }
    let (terms, extras) = match part {
        ClassKind::Vc => {
            if e2 >= 1.0 {
                return Err(Error::invalid(format!("the VC rate needs eqd2 < 1, got {e2}")));
            }
            let dvc = if inp.subgaussian { (e2 * ln).sqrt() } else { e2.cbrt() };
            let l = (1.0 / e2).ln();
            (
                vec![
                    Term { name: "vc_delta_log", value: dvc * l.sqrt() },
                    Term { name: "vc_log_over_sqrt_n", value: l / nf.sqrt() },
                    Term { name: "vc_log_n", value: (dvc + 1.0 / nf.sqrt()) * ln },
                ],
                vec![Term { name: "delta_vc", value: dvc }],
            )
        }
        ClassKind::VcHull => {
            if inp.nu < 2 {
                return Err(Error::invalid(format!("nu must be at least 2, got {}", inp.nu)));
            }
            let nu = inp.nu as f64;
            let (d1, d2) = if inp.subgaussian {
                let el = e2 * ln;
                (el.powf(1.0 / (2.0 * nu)), el.powf(-(nu - 1.0) / nu) / nf.sqrt())
            } else {
                (e2.powf(1.0 / (1.0 + 2.0 * nu)) + nf.powf(-1.0 / (4.0 * nu - 2.0)), 0.0)
            };
            (
                vec![
                    Term { name: "hull_delta1", value: d1 },
                    Term { name: "hull_delta2", value: d2 },
                    Term { name: "hull_log_n", value: (d1.powf(nu) + 1.0 / nf.sqrt()) * ln },
                ],
                vec![Term { name: "delta_vc_hull1", value: d1 }, Term { name: "delta_vc_hull2", value: d2 }],
            )
        }
    };
    let mut rep = BoundReport::new(
        match part {
            ClassKind::Vc => "rate_vc",
            ClassKind::VcHull => "rate_vc_hull",
        },
        inp,
        terms,
        extras,
    );
    rep.precondition_ok = !inp.subgaussian || guard;
    rep.notes = notes;
    Ok(rep)
}

/// Which bounds the `bounds` command evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundSelection {
    Cv,
    Noncv,
    #[default]
    Both,
}

/// Config of the `bounds` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default)]
    pub bounds: BoundSelection,
    pub inputs: Vec<BoundInputs>,
}

/// One row per input vector and bound: every input, every term (NaN where a
/// term does not apply), total and precondition flag.
pub fn bounds_table(reports: &[BoundReport]) -> Table {
    let mut term_names: Vec<&'static str> = Vec::new();
    for r in reports {
        for t in r.terms.iter().chain(&r.extras) {
            if !term_names.contains(&t.name) {
                term_names.push(t.name);
            }
        }
    }
    let input_names: Vec<&'static str> = BoundInputs::reference().columns().into_iter().map(|(name, _)| name).collect();
    let mut header: Vec<String> = vec!["row".into(), "bound".into()];
    header.extend(input_names.iter().map(|s| s.to_string()));
    header.extend(term_names.iter().map(|s| s.to_string()));
    header.push("total".into());
    header.push("precondition_ok".into());
    let mut t = Table::with_header(header);
    for (i, r) in reports.iter().enumerate() {
        let mut row: Vec<Cell> = vec![i.into(), r.bound.into()];
        row.extend(r.inputs.columns().into_iter().map(|(_, c)| c));
        row.extend(term_names.iter().map(|name| Cell::Float(r.term(name).unwrap_or(f64::NAN))));
        row.push(r.total.into());
        row.push(r.precondition_ok.into());
        t.push(row);
    }
    t
}

/// Evaluates the selected bounds for every input vector.
pub fn evaluate_config(cfg: &BoundsConfig) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for inp in &cfg.inputs {
        if matches!(cfg.bounds, BoundSelection::Cv | BoundSelection::Both) {
            out.push(cv_bound_terms(inp)?);
        }
        if matches!(cfg.bounds, BoundSelection::Noncv | BoundSelection::Both) {
            out.push(noncv_bound_terms(inp)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s_example() -> BoundInputs {
        BoundInputs {
            n: 100,
            k: 2,
            fold_size: Some(50),
            tau_pi: 0.5,
            eqd2: 0.04,
            eqd1: 0.2,
            qdiff: 0.1,
            sigma_hash: 1.0,
            sigma_star: 1.0,
            ..BoundInputs::reference()
        }
    }

    #[test]
    fn fold_variance_terms() {
        let inp = s_example();
        assert!((s_hat_k(&inp) - 0.0544).abs() < 1e-12);
        assert!((s_hat_prime_k(&inp) - 0.0344).abs() < 1e-12);
        let zero = BoundInputs { eqd2: 0.0, eqd1: 0.0, qdiff: 7.0, ..inp };
        assert_eq!(r_hat_k(&zero), 0.0);
        assert!((s_hat_prime_k(&zero) - 0.5 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn k_rate_values() {
        assert_eq!(k_rate_factor(2, 1.0, false, None).unwrap(), 2.0);
        assert_eq!(k_rate_factor(2, 1.0, true, None).unwrap(), 2.0);
        let oracle = 20.0 * (-(19f64.ln()) / 3.0).exp();
        assert!((k_rate_factor(20, 1.0, false, None).unwrap() - oracle).abs() < 1e-12);
        assert!(k_rate_factor(1, 1.0, false, None).is_err());
        assert_eq!(krate_table().unwrap().len(), 140);
    }

    #[test]
    fn entropy_values() {
        assert!((entropy_integral_bound(0.5, 5, ClassKind::VcHull, 1.0).unwrap() - 0.87055).abs() < 1e-4);
        let e = (-1.0f64).exp();
        assert!((entropy_integral_bound(e, 5, ClassKind::Vc, 1.0).unwrap() - 0.36788).abs() < 1e-4);
        assert!(entropy_integral_bound(0.5, 5, ClassKind::Vc, 1.0).is_err());
        assert!(entropy_integral_bound(0.0, 5, ClassKind::VcHull, 1.0).is_err());
    }

    #[test]
    fn plug_in_constants() {
        let inp = BoundInputs { m: 1.0, tau_pi: 0.5, ..BoundInputs::reference() };
        let rep = noncv_bound_terms(&inp).unwrap();
        assert_eq!(rep.term("f_h"), Some(2.0));
        // 8 M² (1 − τ) / τ² = 8 · 0.5 / 0.25
        assert_eq!(rep.term("f_t2"), Some(16.0));
    }

    #[test]
    fn zero_nuisance_b() {
        let inp = BoundInputs { eqd2: 0.0, eqd1: 0.0, condition9: true, ..BoundInputs::reference() };
        let rep = noncv_bound_terms(&inp).unwrap();
        assert_eq!(rep.term("C_b_nuisance"), Some(0.0));
        let b = rep.term("C_b_entropy").unwrap() + rep.term("C_b_entropy_sq").unwrap();
        assert_eq!(rep.term("b_total"), Some(b));
    }

    #[test]
    fn rates() {
        let inp = BoundInputs { eqd2: 1e-4, nu: 5, ..BoundInputs::reference() };
        let vc = corollary_rates(ClassKind::Vc, &inp, 10_000).unwrap();
        assert!((vc.term("delta_vc").unwrap() - 0.0464).abs() < 1e-4);
        let hull = corollary_rates(ClassKind::VcHull, &inp, 10_000).unwrap();
        assert!((hull.term("delta_vc_hull1").unwrap() - 1.0324).abs() < 1e-3);
        assert_eq!(hull.term("delta_vc_hull2"), Some(0.0));
    }

    #[test]
    fn subgaussian_guard() {
        let inp = BoundInputs { subgaussian: true, delta: 0.01, m: 1.0, ..BoundInputs::reference() };
        assert_eq!(noncv_bound_terms(&inp).unwrap_err(), Error::SubgaussianGuard);
        let inp = BoundInputs { subgaussian: true, s_tilde1: None, ..BoundInputs::reference() };
        assert!(noncv_bound_terms(&inp).is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(BoundInputs::reference()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<BoundInputs>(v).is_err());
    }
}
