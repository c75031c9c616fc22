//! Orthonormal function families used for the x- and y-directions.
//!
//! Hermite functions `h_j(x) = c_j H_j(x) e^{-x²/2}` are evaluated through
//! the normalised recursion
//! `h_{j+1} = x √(2/(j+1)) h_j − √(j/(j+1)) h_{j−1}`, which never forms
//! `2^j j!` and is stable for every finite `x`.
//!
//! The trigonometric family on `[a, b]` is `1, √2 cos(2πjz), √2 sin(2πjz)`
//! with `z = (x − a)/(b − a)`, scaled by `(b − a)^{-1/2}`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::quadrature::linspace;

/// `π^{-1/4}`, the value of `h_0(0)` and a bound on every `|h_j|`.
pub const HERMITE_BOUND: f64 = 0.751_125_544_464_942_5;

/// Envelope `sup_m 𝔏_h(m)/√m`, attained at `m = 1` (`π^{-1/2}`); the ratio
/// decreases towards `√2/π` as `m` grows.
pub const HERMITE_SUP_RATIO_BOUND: f64 = 0.564_189_583_547_756_3;

/// Points used for the numerical Hermite sup-norm.
const SUP_GRID_POINTS: usize = 100_001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisFamily {
    Hermite,
    Trigonometric { a: f64, b: f64 },
}

/// User-facing basis choice; the trigonometric support is resolved from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Hermite,
    Trig,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Hermite => "hermite",
            BasisKind::Trig => "trig",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hermite" => Ok(BasisKind::Hermite),
            "trig" | "trigonometric" => Ok(BasisKind::Trig),
            other => param(format!(
                "unknown basis '{other}' (expected hermite or trig)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    family: BasisFamily,
    max_dim: usize,
}

impl BasisSpec {
    pub fn hermite(max_dim: usize) -> Result<Self> {
        Self::new(BasisFamily::Hermite, max_dim)
    }

    pub fn trigonometric(a: f64, b: f64, max_dim: usize) -> Result<Self> {
        Self::new(BasisFamily::Trigonometric { a, b }, max_dim)
    }

    pub fn new(family: BasisFamily, max_dim: usize) -> Result<Self> {
        if max_dim == 0 {
            return param("basis max_dim must be at least 1");
        }
        if let BasisFamily::Trigonometric { a, b } = family {
            if !(a < b && a.is_finite() && b.is_finite()) {
                return param(format!("trigonometric support needs a < b, got [{a}, {b}]"));
            }
        }
        Ok(Self { family, max_dim })
    }

    /// Basis of `kind` whose support covers `[lo, hi]` (trigonometric
    /// supports are widened by 1% on each side).
    pub fn for_range(kind: BasisKind, lo: f64, hi: f64, max_dim: usize) -> Result<Self> {
        match kind {
            BasisKind::Hermite => Self::hermite(max_dim),
            BasisKind::Trig => {
                let pad = 0.01 * (hi - lo).max(1e-6);
                Self::trigonometric(lo - pad, hi + pad, max_dim)
            }
        }
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn kind(&self) -> BasisKind {
        match self.family {
            BasisFamily::Hermite => BasisKind::Hermite,
            BasisFamily::Trigonometric { .. } => BasisKind::Trig,
        }
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    /// Same family with a different dimension cap.
    pub fn with_max_dim(&self, max_dim: usize) -> Result<Self> {
        Self::new(self.family, max_dim)
    }

    /// Whether `m` is a dimension of the nested model collection
    /// (trigonometric spaces come in odd sizes).
    pub fn is_valid_dim(&self, m: usize) -> bool {
        match self.family {
            BasisFamily::Hermite => m >= 1,
            BasisFamily::Trigonometric { .. } => m % 2 == 1,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.family {
            BasisFamily::Hermite => x.is_finite(),
            BasisFamily::Trigonometric { a, b } => x >= a && x <= b,
        }
    }

    /// Writes `u_1(x), …, u_m(x)` into `out` (`out.len() = m`). Outside the
    /// support every value is zero.
    pub fn fill_row(&self, x: f64, out: &mut [f64]) {
        match self.family {
            BasisFamily::Hermite => hermite_row(x, out),
            BasisFamily::Trigonometric { a, b } => {
                if x < a || x > b {
                    out.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    trig_row((x - a) / (b - a), out);
                    let scale = (b - a).sqrt().recip();
                    out.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.max_dim {
            return param(format!("dimension {m} outside 1..={}", self.max_dim));
        }
        Ok(())
    }

    /// `points × m` matrix of basis values; every point must lie in the support.
    pub fn eval(&self, m: usize, points: &[f64]) -> Result<BasisMatrix> {
        self.check_dim(m)?;
        if let Some(&x) = points.iter().find(|&&x| !self.contains(x)) {
            return Err(Error::Domain(format!(
                "point {x} outside the support of {:?}",
                self.family
            )));
        }
        Ok(self.eval_extended(m, points))
    }

    /// Like [`eval`](Self::eval) but zero outside the support.
    pub fn eval_extended(&self, m: usize, points: &[f64]) -> BasisMatrix {
        let mut values = DMatrix::zeros(points.len(), m);
        let mut row = vec![0.0; m];
        for (i, &x) in points.iter().enumerate() {
            self.fill_row(x, &mut row);
            for (j, v) in row.iter().enumerate() {
                values[(i, j)] = *v;
            }
        }
        BasisMatrix { values }
    }

    /// `𝔏_u(m) = sup_x Σ_{j≤m} u_j(x)²`.
    ///
    /// Exact for the trigonometric family (`m / (b − a)`); for Hermite the
    /// sup is taken numerically over `[−2√m − 5, 2√m + 5]`.
    pub fn sup_norm_constant(&self, m: usize) -> Result<f64> {
        self.check_dim(m)?;
        Ok(match self.family {
            BasisFamily::Trigonometric { a, b } => m as f64 / (b - a),
            BasisFamily::Hermite => hermite_sup(m),
        })
    }

    /// The `𝔏(m)` convention used by penalties and the stability cutoff:
    /// `√m` for Hermite, `m / (b − a)` for trigonometric.
    pub fn selection_constant(&self, m: usize) -> f64 {
        match self.family {
            BasisFamily::Hermite => (m as f64).sqrt(),
            BasisFamily::Trigonometric { a, b } => m as f64 / (b - a),
        }
    }
}

/// Dense `points × m` evaluation, entry `(i, j) = u_{j+1}(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    values: DMatrix<f64>,
}

impl BasisMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

fn hermite_row(x: f64, out: &mut [f64]) {
    let m = out.len();
    if m == 0 {
        return;
    }
    out[0] = HERMITE_BOUND * (-0.5 * x * x).exp();
    if m > 1 {
        out[1] = SQRT_2 * x * out[0];
    }
    for j in 1..m.saturating_sub(1) {
        let jf = j as f64;
        out[j + 1] = x * (2.0 / (jf + 1.0)).sqrt() * out[j] - (jf / (jf + 1.0)).sqrt() * out[j - 1];
    }
}

fn trig_row(z: f64, out: &mut [f64]) {
    for (idx, v) in out.iter_mut().enumerate() {
        // 1-based index `idx + 1`: 1 → constant, 2j → cos, 2j + 1 → sin.
        *v = if idx == 0 {
            1.0
        } else {
            let j = idx.div_ceil(2) as f64;
            let arg = 2.0 * PI * j * z;
            if (idx + 1).is_multiple_of(2) {
                SQRT_2 * arg.cos()
            } else {
                SQRT_2 * arg.sin()
            }
        };
    }
}

/// Memoised: the grid search is costly and selection asks for it per rep.
fn hermite_sup(m: usize) -> f64 {
    static CACHE: Mutex<Vec<f64>> = Mutex::new(Vec::new());
    if let Some(&v) = CACHE
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .get(m)
        .filter(|v| **v > 0.0)
    {
        return v;
    }
    let v = hermite_sup_uncached(m);
    let mut cache = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if cache.len() <= m {
        cache.resize(m + 1, 0.0);
    }
    cache[m] = v;
    v
}

fn hermite_sup_uncached(m: usize) -> f64 {
    let half_width = 2.0 * (m as f64).sqrt() + 5.0;
    let mut row = vec![0.0; m];
    linspace(-half_width, half_width, SUP_GRID_POINTS)
        .into_iter()
        .map(|x| {
            hermite_row(x, &mut row);
            row.iter().map(|v| v * v).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Hermite functions `h_0, …, h_{m−1}` at `points`.
pub fn eval_hermite(m: usize, points: &[f64]) -> Result<BasisMatrix> {
    BasisSpec::hermite(m.max(1))?.eval(m, points)
}

/// Trigonometric basis on `[0, 1]`; `m` must be odd.
pub fn eval_trigonometric(m: usize, points: &[f64]) -> Result<BasisMatrix> {
    if m.is_multiple_of(2) {
        return param(format!("trigonometric dimension must be odd, got {m}"));
    }
    BasisSpec::trigonometric(0.0, 1.0, m)?.eval(m, points)
}
