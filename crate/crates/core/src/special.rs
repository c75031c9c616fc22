//! Modified Bessel function of the first kind for real order.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Argument above which the large-argument expansion is used (when the order
/// is small enough for it to converge to full precision).
const ASYMPTOTIC_SWITCH: f64 = 50.0;
const MAX_TERMS: usize = 10_000;

/// `I_ν(x)` for `ν ≥ 0`, `x ≥ 0`.
///
/// Fails with [`Error::Evaluation`] when the result overflows `f64`; use
/// [`bessel_i_scaled`] for large arguments.
pub fn bessel_i(order: f64, x: f64) -> Result<f64> {
    let scaled = bessel_i_scaled(order, x)?;
    if scaled == 0.0 {
        return Ok(0.0);
    }
    let log_value = scaled.ln() + x;
    if log_value >= f64::MAX.ln() {
        return Err(Error::Evaluation(format!(
            "I_{order}({x}) overflows f64 (log value {log_value:.3}); use the scaled form"
        )));
    }
    Ok(scaled * x.exp())
}

/// Exponentially scaled `e^{-x} I_ν(x)`.
pub fn bessel_i_scaled(order: f64, x: f64) -> Result<f64> {
    if !(order >= 0.0 && order.is_finite()) {
        return Err(Error::Parameter(format!(
            "Bessel order must be finite and >= 0, got {order}"
        )));
    }
    if !(x >= 0.0) {
        return Err(Error::Parameter(format!(
            "Bessel argument must be >= 0, got {x}"
        )));
    }
    if x.is_infinite() {
        return Err(Error::Evaluation("I_ν(∞) is not finite".into()));
    }
    if x == 0.0 {
        return Ok(if order == 0.0 { 1.0 } else { 0.0 });
    }
    if x > ASYMPTOTIC_SWITCH && x > 2.0 * order * order {
        if let Some(v) = asymptotic_scaled(order, x) {
            return Ok(v);
        }
    }
    Ok(series_scaled(order, x))
}

/// `ln I_ν(x)`, finite for any positive argument.
pub fn ln_bessel_i(order: f64, x: f64) -> Result<f64> {
    Ok(bessel_i_scaled(order, x)?.ln() + x)
}

/// Power series `Σ_k (x/2)^{2k+ν} / (k! Γ(k+ν+1))`, summed relative to its
/// first term and rescaled so that no intermediate overflows.
fn series_scaled(order: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let mut log_scale = order * half.ln() - ln_gamma(order + 1.0) - x;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let peak = (half - order).max(0.0);
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (kf + order + 1.0));
        sum += term;
        if sum > 1e280 {
            log_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        if kf > peak && term <= sum * 1e-17 {
            break;
        }
    }
    (log_scale + sum.ln()).exp()
}

/// `e^{-x} I_ν(x) ≈ (2πx)^{-1/2} Σ_k (-1)^k a_k(ν) / x^k`; `None` if the
/// terms stop shrinking before reaching double precision.
fn asymptotic_scaled(order: f64, x: f64) -> Option<f64> {
    let mu = 4.0 * order * order;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() > term.abs() {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            return Some(sum / (2.0 * std::f64::consts::PI * x).sqrt());
        }
    }
    None
}
