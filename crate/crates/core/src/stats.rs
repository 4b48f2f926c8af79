//! Small numerical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    // statrs evaluates through erfc_inv, which is accurate to a few ulps.
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Two-sided critical value z_{alpha/2}.
pub fn z_two_sided(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

/// Arithmetic mean (NaN for an empty slice).
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and plug-in (divide by n) variance.
pub fn mean_plugin_var(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v)
}

/// Mean and unbiased (divide by n-1) variance.
pub fn mean_sample_var(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Monte Carlo standard error of a sample mean.
pub fn mean_se(xs: &[f64]) -> f64 {
    let (_, v) = mean_sample_var(xs);
    (v / xs.len() as f64).sqrt()
}

/// Sample variance together with an approximate standard error of it.
///
/// The standard error uses the delta-method form sqrt((m4 - s^4) / n).
pub fn var_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (m, v) = mean_sample_var(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let se = ((m4 - v * v).max(0.0) / n).sqrt();
    (v, se)
}

/// Type-7 empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
