//! Outcome-model learners and the configuration enum that names them.

pub mod hal;
pub mod lasso;
pub mod linear;
pub mod stack;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, OutcomePredictor};

pub use hal::{build_hal_basis, fit_hal_lite, HalBasis, HalOptions};
pub use lasso::{fit_lasso_cv, LassoOptions};
pub use linear::{fit_linear, fit_linear_with, LinearOptions};
pub use stack::{fit_super_learner, fit_super_learner_stack, FittedStack};

fn default_lambda_grid() -> usize {
    100
}

fn default_cv_folds() -> usize {
    5
}

fn default_lasso_min_ratio() -> f64 {
    1e-4
}

/// HAL designs have about as many columns as rows; the path below this
/// fraction of λ_max is near interpolation and costly to trace.
fn default_hal_min_ratio() -> f64 {
    1e-2
}

/// A learner and its hyperparameters, as named in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawSpec", into = "RawSpec")]
pub enum LearnerSpec {
    Zero,
    MarginalMean,
    Ols,
    OlsInteractions,
    LassoCv {
        lambda_grid: usize,
        lambda_min_ratio: f64,
        cv_folds: usize,
    },
    Hal {
        max_degree: usize,
        smoothness: u8,
        knot_budget: Option<usize>,
        lambda_grid: usize,
        lambda_min_ratio: f64,
        cv_folds: usize,
    },
    SuperLearner {
        library: Vec<LearnerSpec>,
        folds: usize,
    },
}

// Unit variants of an internally tagged enum ignore extra keys, so the wire
// format uses empty struct variants to keep unknown keys an error.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawSpec {
    Zero {},
    MarginalMean {},
    Ols {},
    OlsInteractions {},
    LassoCv {
        #[serde(default = "default_lambda_grid")]
        lambda_grid: usize,
        #[serde(default = "default_lasso_min_ratio")]
        lambda_min_ratio: f64,
        #[serde(default = "default_cv_folds")]
        cv_folds: usize,
    },
    HalLite {
        max_degree: usize,
        smoothness: u8,
        #[serde(default)]
        knot_budget: Option<usize>,
        #[serde(default = "default_lambda_grid")]
        lambda_grid: usize,
        #[serde(default = "default_hal_min_ratio")]
        lambda_min_ratio: f64,
        #[serde(default = "default_cv_folds")]
        cv_folds: usize,
    },
    SuperLearner {
        library: Vec<LearnerSpec>,
        #[serde(default = "default_cv_folds")]
        folds: usize,
    },
}

impl From<RawSpec> for LearnerSpec {
    fn from(r: RawSpec) -> Self {
        match r {
            RawSpec::Zero {} => LearnerSpec::Zero,
            RawSpec::MarginalMean {} => LearnerSpec::MarginalMean,
            RawSpec::Ols {} => LearnerSpec::Ols,
            RawSpec::OlsInteractions {} => LearnerSpec::OlsInteractions,
            RawSpec::LassoCv { lambda_grid, lambda_min_ratio, cv_folds } => {
                LearnerSpec::LassoCv { lambda_grid, lambda_min_ratio, cv_folds }
            }
            RawSpec::HalLite { max_degree, smoothness, knot_budget, lambda_grid, lambda_min_ratio, cv_folds } => {
                LearnerSpec::Hal { max_degree, smoothness, knot_budget, lambda_grid, lambda_min_ratio, cv_folds }
            }
            RawSpec::SuperLearner { library, folds } => LearnerSpec::SuperLearner { library, folds },
        }
    }
}

impl From<LearnerSpec> for RawSpec {
    fn from(s: LearnerSpec) -> Self {
        match s {
            LearnerSpec::Zero => RawSpec::Zero {},
            LearnerSpec::MarginalMean => RawSpec::MarginalMean {},
            LearnerSpec::Ols => RawSpec::Ols {},
            LearnerSpec::OlsInteractions => RawSpec::OlsInteractions {},
            LearnerSpec::LassoCv { lambda_grid, lambda_min_ratio, cv_folds } => {
                RawSpec::LassoCv { lambda_grid, lambda_min_ratio, cv_folds }
            }
            LearnerSpec::Hal { max_degree, smoothness, knot_budget, lambda_grid, lambda_min_ratio, cv_folds } => {
                RawSpec::HalLite { max_degree, smoothness, knot_budget, lambda_grid, lambda_min_ratio, cv_folds }
            }
            LearnerSpec::SuperLearner { library, folds } => RawSpec::SuperLearner { library, folds },
        }
    }
}

impl LearnerSpec {
    pub fn lasso_cv() -> Self {
        LearnerSpec::LassoCv {
            lambda_grid: default_lambda_grid(),
            lambda_min_ratio: default_lasso_min_ratio(),
            cv_folds: default_cv_folds(),
        }
    }

    pub fn hal(max_degree: usize, smoothness: u8) -> Self {
        LearnerSpec::Hal {
            max_degree,
            smoothness,
            knot_budget: None,
            lambda_grid: default_lambda_grid(),
            lambda_min_ratio: default_hal_min_ratio(),
            cv_folds: default_cv_folds(),
        }
    }

    /// Library without adaptive learners: zero, marginal mean, OLS,
    /// OLS with interactions and CV-lasso.
    pub fn misspecified_library() -> Vec<LearnerSpec> {
        vec![
            LearnerSpec::Zero,
            LearnerSpec::MarginalMean,
            LearnerSpec::Ols,
            LearnerSpec::OlsInteractions,
            LearnerSpec::lasso_cv(),
        ]
    }

    /// The misspecified library plus HAL-lite at degrees {2, 3} and
    /// smoothness {0, 1}.
    pub fn rich_library() -> Vec<LearnerSpec> {
        let mut lib = Self::misspecified_library();
        for d in [2, 3] {
            for s in [0, 1] {
                lib.push(LearnerSpec::hal(d, s));
            }
        }
        lib
    }

    pub fn name(&self) -> String {
        match self {
            LearnerSpec::Zero => "zero".into(),
            LearnerSpec::MarginalMean => "marginal_mean".into(),
            LearnerSpec::Ols => "ols".into(),
            LearnerSpec::OlsInteractions => "ols_interactions".into(),
            LearnerSpec::LassoCv { .. } => "lasso_cv".into(),
            LearnerSpec::Hal { max_degree, smoothness, .. } => format!("hal_lite_d{max_degree}_s{smoothness}"),
            LearnerSpec::SuperLearner { .. } => "super_learner".into(),
        }
    }

    /// Checks hyperparameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::LassoCv { lambda_grid, lambda_min_ratio, cv_folds } => {
                check_lasso(*lambda_grid, *lambda_min_ratio, *cv_folds)
            }
            LearnerSpec::Hal { max_degree, smoothness, knot_budget, lambda_grid, lambda_min_ratio, cv_folds } => {
                if *max_degree == 0 {
                    return Err(Error::invalid("hal_lite max_degree must be positive"));
                }
                if *smoothness > 1 {
                    return Err(Error::invalid("hal_lite smoothness must be 0 or 1"));
                }
                if *knot_budget == Some(0) {
                    return Err(Error::invalid("hal_lite knot_budget must be positive"));
                }
                check_lasso(*lambda_grid, *lambda_min_ratio, *cv_folds)
            }
            LearnerSpec::SuperLearner { library, folds } => {
                if library.is_empty() {
                    return Err(Error::invalid("super_learner library must be nonempty"));
                }
                if *folds < 2 {
                    return Err(Error::invalid("super_learner folds must be at least 2"));
                }
                library.iter().try_for_each(|l| l.validate())
            }
            _ => Ok(()),
        }
    }

    /// Whether fitted predictions depend on the training data.
    pub fn is_data_independent(&self) -> bool {
        matches!(self, LearnerSpec::Zero)
    }

    /// Fits the learner to `data`; `seed` drives any internal randomness.
    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<OutcomePredictor> {
        match self {
            LearnerSpec::Zero => Ok(OutcomePredictor::zero()),
            LearnerSpec::MarginalMean => {
                let m = data.y().iter().sum::<f64>() / data.n() as f64;
                Ok(OutcomePredictor::from_fn("marginal_mean", move |_: &[f64], _: u8| m).with_bound(m.abs()))
            }
            LearnerSpec::Ols => fit_linear(data, false),
            LearnerSpec::OlsInteractions => fit_linear(data, true),
            LearnerSpec::LassoCv { lambda_grid, lambda_min_ratio, cv_folds } => {
                fit_lasso_cv(data, lasso_options(*lambda_grid, *lambda_min_ratio, *cv_folds), seed)
            }
            LearnerSpec::Hal { max_degree, smoothness, knot_budget, lambda_grid, lambda_min_ratio, cv_folds } => {
                let opts = HalOptions {
                    max_degree: *max_degree,
                    smoothness: *smoothness,
                    knot_budget: *knot_budget,
                    lasso: lasso_options(*lambda_grid, *lambda_min_ratio, *cv_folds),
                };
                fit_hal_lite(data, &opts, seed)
            }
            LearnerSpec::SuperLearner { library, folds } => fit_super_learner(data, library, *folds, seed),
        }
    }
}

fn check_lasso(lambda_grid: usize, lambda_min_ratio: f64, cv_folds: usize) -> Result<()> {
    if lambda_grid == 0 {
        return Err(Error::invalid("lambda_grid must be positive"));
    }
    if !(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0) {
        return Err(Error::invalid(format!("lambda_min_ratio must lie in (0, 1), got {lambda_min_ratio}")));
    }
    if cv_folds < 2 {
        return Err(Error::invalid("cv_folds must be at least 2"));
    }
    Ok(())
}

fn lasso_options(lambda_grid: usize, lambda_min_ratio: f64, cv_folds: usize) -> LassoOptions {
    LassoOptions { n_lambda: lambda_grid, lambda_min_ratio, cv_folds, ..LassoOptions::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_through_json() {
        let lib = LearnerSpec::SuperLearner { library: LearnerSpec::rich_library(), folds: 5 };
        let s = serde_json::to_string(&lib).unwrap();
        let back: LearnerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(lib, back);
        let parsed: LearnerSpec = serde_json::from_str(r#"{"kind":"hal_lite","max_degree":2,"smoothness":1}"#).unwrap();
        assert_eq!(parsed, LearnerSpec::hal(2, 1));
        assert!(serde_json::from_str::<LearnerSpec>(r#"{"kind":"ols","extra":1}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_hyperparameters() {
        assert!(LearnerSpec::LassoCv { lambda_grid: 0, lambda_min_ratio: 1e-4, cv_folds: 5 }.validate().is_err());
        assert!(LearnerSpec::LassoCv { lambda_grid: 10, lambda_min_ratio: 1.5, cv_folds: 5 }.validate().is_err());
        assert!(LearnerSpec::SuperLearner { library: vec![], folds: 5 }.validate().is_err());
        assert!(LearnerSpec::hal(2, 3).validate().is_err());
        assert!(LearnerSpec::rich_library().iter().all(|l| l.validate().is_ok()));
    }
}
