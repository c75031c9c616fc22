//! Closed-form transition densities of the benchmark models.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::sim::{Model, OuParams};
use crate::special::ln_bessel_i;

/// Largest `|y|` at which the `tanh` model density is evaluated.
pub const TANH_CLAMP: f64 = 1.0 - 1e-6;

/// Anything that can be evaluated as `(x, y) ↦ p(x, y)`.
pub trait TransitionDensity {
    fn density(&self, x: f64, y: f64) -> Result<f64>;
}

/// Exact transition density of one of the benchmark models at a fixed lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionDensityOracle {
    model: Model,
    params: OuParams,
    lag: f64,
}

impl TransitionDensityOracle {
    pub fn new(model: Model, params: OuParams, lag: f64) -> Result<Self> {
        if !(lag > 0.0 && lag.is_finite()) {
            return param(format!("lag must be positive, got {lag}"));
        }
        if matches!(model, Model::Ou | Model::TanhOu) && params.d() != 1 {
            return param(format!("model {model} requires d = 1"));
        }
        Ok(Self { model, params, lag })
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn params(&self) -> OuParams {
        self.params
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }

    /// Same model at another lag.
    pub fn with_lag(&self, lag: f64) -> Result<Self> {
        Self::new(self.model, self.params, lag)
    }

    /// `c_t = 2r / (γ² (1 - e^{-rt}))`, i.e. `1 / (2 σ_t²)`.
    pub fn c_t(&self) -> f64 {
        0.5 / self.params.transition_variance(self.lag)
    }

    /// Density, or zero where `(x, y)` falls outside the evaluable domain.
    pub fn density_or_zero(&self, x: f64, y: f64) -> Result<f64> {
        match self.density(x, y) {
            Err(Error::Domain(_)) => Ok(0.0),
            other => other,
        }
    }

    fn gaussian(&self, x: f64, y: f64) -> f64 {
        let c = self.c_t();
        let mean = x * self.params.decay(self.lag);
        (c / std::f64::consts::PI).sqrt() * (-c * (y - mean).powi(2)).exp()
    }

    fn cir(&self, x: f64, y: f64) -> Result<f64> {
        let c = self.c_t();
        let e = (-self.params.r() * self.lag).exp();
        let d = self.params.d() as f64;
        let order = 0.5 * d - 1.0;
        let z = 2.0 * c * (x * y * e).sqrt();
        let log_p = c.ln() - c * (x * e + y)
            + (0.25 * d - 0.5) * (y / (x * e)).ln()
            + ln_bessel_i(order, z)?;
        let p = log_p.exp();
        if !p.is_finite() {
            return Err(Error::Evaluation(format!(
                "CIR density at ({x}, {y}) is not finite (log value {log_p})"
            )));
        }
        Ok(p)
    }
}

impl TransitionDensity for TransitionDensityOracle {
    fn density(&self, x: f64, y: f64) -> Result<f64> {
        match self.model {
            Model::Ou => {
                if !(x.is_finite() && y.is_finite()) {
                    return Err(Error::Domain(format!("({x}, {y}) is not finite")));
                }
                Ok(self.gaussian(x, y))
            }
            Model::TanhOu => {
                if !(x.abs() < 1.0 && y.abs() <= TANH_CLAMP) {
                    return Err(Error::Domain(format!(
                        "({x}, {y}) outside (-1, 1) x [-{TANH_CLAMP}, {TANH_CLAMP}]"
                    )));
                }
                Ok(self.gaussian(x.atanh(), y.atanh()) / (1.0 - y * y))
            }
            Model::Cir => {
                if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
                    return Err(Error::Domain(format!("({x}, {y}) outside (0, ∞)²")));
                }
                self.cir(x, y)
            }
        }
    }
}
