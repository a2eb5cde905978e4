//! Standard normal quantiles and tail probabilities.

use libm::erfc;
use statrs::distribution::{ContinuousCDF, Normal};

/// `Phi^{-1}(p)` for `0 < p < 1`.
pub fn quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs 0 < p < 1, got {p}");
    Normal::standard().inverse_cdf(p)
}

/// Two-sided critical value `z_{1 - (1 - level) / 2}`.
pub fn critical_value(level: f64) -> f64 {
    quantile(0.5 + level / 2.0)
}

/// `2 (1 - Phi(|z|))`, computed through `erfc` so small tails keep their
/// relative precision.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// `log10` of [`two_sided_p`], finite even where the probability itself
/// underflows.
pub fn log10_two_sided_p(z: f64) -> f64 {
    let p = two_sided_p(z);
    if p > 1e-300 {
        return p.log10();
    }
    // erfc(x) ~ exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4))
    let x = z.abs() / std::f64::consts::SQRT_2;
    let x2 = x * x;
    let series = 1.0 - 0.5 / x2 + 0.75 / (x2 * x2);
    let ln = -x2 - (x * std::f64::consts::PI.sqrt()).ln() + series.ln();
    ln / std::f64::consts::LN_10
}
