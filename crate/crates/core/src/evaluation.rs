//! Error measures and downstream functionals of a transition density.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::TransitionDensity;
use crate::error::{param, Error, Result};
use crate::quadrature::{linspace, trapezoid};
use crate::sim::PathEnsemble;

/// Grid size used per direction in the benchmark.
pub const DEFAULT_GRID_SIZE: usize = 100;
const MIN_PATHS_FOR_QUANTILES: usize = 10;

/// Rectangle `[aX, bX] × [aY, bY]` with equispaced evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub n_x: usize,
    pub n_y: usize,
}

impl EvalWindow {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), n_x: usize, n_y: usize) -> Result<Self> {
        if !(x_range.0 < x_range.1) || !(y_range.0 < y_range.1) {
            return param(format!(
                "degenerate evaluation window {x_range:?} x {y_range:?}"
            ));
        }
        if n_x < 2 || n_y < 2 {
            return param("evaluation grids need at least 2 points per axis");
        }
        Ok(Self {
            x_range,
            y_range,
            n_x,
            n_y,
        })
    }

    pub fn xs(&self) -> Vec<f64> {
        linspace(self.x_range.0, self.x_range.1, self.n_x)
    }

    pub fn ys(&self) -> Vec<f64> {
        linspace(self.y_range.0, self.y_range.1, self.n_y)
    }

    /// `DXY = (bX − aX)(bY − aY)`.
    pub fn area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * (self.y_range.1 - self.y_range.0)
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Window spanning the 2%–98% quantiles of `X_t` (x-axis) and the 1%–99%
/// quantiles of `X_{t+lag}` (y-axis) across paths.
pub fn eval_window(
    ens: &PathEnsemble,
    t_index: usize,
    lag_index: usize,
    n_x: usize,
    n_y: usize,
) -> Result<EvalWindow> {
    if ens.n_paths() < MIN_PATHS_FOR_QUANTILES {
        return param(format!(
            "quantile window needs at least {MIN_PATHS_FOR_QUANTILES} paths, got {}",
            ens.n_paths()
        ));
    }
    if t_index + lag_index >= ens.n_points() {
        return param(format!(
            "time index {t_index} + lag {lag_index} beyond the grid"
        ));
    }
    let xs = sorted(ens.cross_section(t_index));
    let ys = sorted(ens.cross_section(t_index + lag_index));
    EvalWindow::new(
        (quantile_sorted(&xs, 0.02), quantile_sorted(&xs, 0.98)),
        (quantile_sorted(&ys, 0.01), quantile_sorted(&ys, 0.99)),
        n_x,
        n_y,
    )
}

/// How per-repetition squared errors are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiseNormalization {
    /// Every repetition is divided by the squared mass of the final one.
    #[default]
    LastRep,
    /// Each repetition is divided by its own squared mass.
    PerRep,
}

impl fmt::Display for MiseNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiseNormalization::LastRep => "last_rep",
            MiseNormalization::PerRep => "per_rep",
        })
    }
}

impl FromStr for MiseNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "last_rep" => Ok(MiseNormalization::LastRep),
            "per_rep" => Ok(MiseNormalization::PerRep),
            other => param(format!("unknown MISE normalisation '{other}'")),
        }
    }
}

/// Windowed squared error and squared mass of one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquaredErrors {
    /// `DXY/(N_I N_J) ΣΣ (p − p̂)²`
    pub error: f64,
    /// `DXY/(N_I N_J) ΣΣ p²`
    pub mass: f64,
}

pub fn squared_errors(
    truth: &DMatrix<f64>,
    estimate: &DMatrix<f64>,
    window: &EvalWindow,
) -> Result<SquaredErrors> {
    let shape = (window.n_x, window.n_y);
    if truth.shape() != shape || estimate.shape() != shape {
        return param(format!(
            "grids must be {shape:?}, got {:?} and {:?}",
            truth.shape(),
            estimate.shape()
        ));
    }
    let cell = window.area() / (window.n_x * window.n_y) as f64;
    let error = truth
        .iter()
        .zip(estimate.iter())
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>();
    let mass = truth.iter().map(|p| p * p).sum::<f64>();
    Ok(SquaredErrors {
        error: cell * error,
        mass: cell * mass,
    })
}

/// Per-repetition normalised errors `e_k`; their mean is the MISE.
pub fn normalized_errors(reps: &[SquaredErrors], norm: MiseNormalization) -> Result<Vec<f64>> {
    let last = reps
        .last()
        .ok_or_else(|| Error::Evaluation("MISE needs at least one repetition".into()))?;
    reps.iter()
        .map(|r| {
            let den = match norm {
                MiseNormalization::LastRep => last.mass,
                MiseNormalization::PerRep => r.mass,
            };
            if den > 0.0 {
                Ok(r.error / den)
            } else {
                Err(Error::Evaluation("MISE denominator is zero".into()))
            }
        })
        .collect()
}

/// Normalised MISE over repetitions `(truth grid, estimate grid, window)`.
pub fn mise(reps: &[(DMatrix<f64>, DMatrix<f64>, EvalWindow)]) -> Result<f64> {
    let errs = reps
        .iter()
        .map(|(p, q, w)| squared_errors(p, q, w))
        .collect::<Result<Vec<_>>>()?;
    let e = normalized_errors(&errs, MiseNormalization::LastRep)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Terminal payoff `v(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Unit,
    Identity,
    Call { strike: f64 },
    Put { strike: f64 },
}

impl Payoff {
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Payoff::Unit => 1.0,
            Payoff::Identity => y,
            Payoff::Call { strike } => (y - strike).max(0.0),
            Payoff::Put { strike } => (strike - y).max(0.0),
        }
    }
}

impl FromStr for Payoff {
    type Err = Error;

    /// `unit`, `identity`, `call:K` or `put:K`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let strike = |k: &str| {
            k.parse::<f64>()
                .map_err(|_| Error::Parameter(format!("bad strike '{k}' in payoff '{s}'")))
        };
        match s.split_once(':') {
            None if s == "unit" => Ok(Payoff::Unit),
            None if s == "identity" => Ok(Payoff::Identity),
            Some(("call", k)) => Ok(Payoff::Call { strike: strike(k)? }),
            Some(("put", k)) => Ok(Payoff::Put { strike: strike(k)? }),
            _ => param(format!(
                "unknown payoff '{s}' (unit, identity, call:K, put:K)"
            )),
        }
    }
}

/// `p(xs[i], ys[j])` as a matrix; points outside the state space give 0.
pub fn density_grid<D: TransitionDensity + ?Sized>(
    density: &D,
    xs: &[f64],
    ys: &[f64],
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(xs.len(), ys.len());
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            out[(i, j)] = match density.density(x, y) {
                Ok(p) => p,
                Err(Error::Domain(_)) => 0.0,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(out)
}

/// `F̂(x) = ∫ v(y) p(x, y) dy` by the trapezoid rule on `y_grid`.
///
/// Points where `p` is undefined (outside the state space) contribute zero.
pub fn feynman_kac<D, V>(density: &D, payoff: V, x: f64, y_grid: &[f64]) -> Result<f64>
where
    D: TransitionDensity + ?Sized,
    V: Fn(f64) -> f64,
{
    if y_grid.len() < 2 {
        return param("quadrature grid needs at least 2 points");
    }
    let integrand = y_grid
        .iter()
        .map(|&y| match density.density(x, y) {
            Ok(p) => Ok(payoff(y) * p),
            Err(Error::Domain(_)) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(y_grid, &integrand))
}

/// `P̂(x) = e^{−r T} F̂(x)` for a density at lag `T = maturity`.
pub fn option_price<D, V>(
    density: &D,
    payoff: V,
    x: f64,
    rate: f64,
    maturity: f64,
    y_grid: &[f64],
) -> Result<f64>
where
    D: TransitionDensity + ?Sized,
    V: Fn(f64) -> f64,
{
    Ok((-rate * maturity).exp() * feynman_kac(density, payoff, x, y_grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::TransitionDensityOracle;
    use crate::sim::{Model, SimGrid};
    use rand::Rng;

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn uniform_cross_section_window() {
        let mut rng = crate::rng::stream(4, 0);
        let rows: Vec<Vec<f64>> = (0..100_000)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let ens = PathEnsemble::from_rows(rows, SimGrid::new(1.0, 1).unwrap()).unwrap();
        let w = eval_window(&ens, 0, 1, 100, 100).unwrap();
        assert!((w.x_range.0 - 0.02).abs() < 0.005 && (w.x_range.1 - 0.98).abs() < 0.005);
        assert!((w.y_range.0 - 0.01).abs() < 0.005 && (w.y_range.1 - 0.99).abs() < 0.005);
    }

    #[test]
    fn constant_paths_give_degenerate_window() {
        let rows = vec![vec![0.5; 3]; 20];
        let ens = PathEnsemble::from_rows(rows, SimGrid::new(1.0, 2).unwrap()).unwrap();
        assert!(eval_window(&ens, 0, 1, 10, 10).is_err());
        let few = PathEnsemble::from_rows(vec![vec![0.0, 1.0]; 5], SimGrid::new(1.0, 1).unwrap())
            .unwrap();
        assert!(eval_window(&few, 0, 1, 10, 10).is_err());
    }

    fn window() -> EvalWindow {
        EvalWindow::new((-1.0, 1.0), (-2.0, 2.0), 4, 5).unwrap()
    }

    #[test]
    fn perfect_fit_and_null_estimator() {
        let w = window();
        let p = DMatrix::from_fn(4, 5, |i, j| 0.1 + (i * j) as f64 * 0.05);
        assert_eq!(mise(&[(p.clone(), p.clone(), w.clone())]).unwrap(), 0.0);
        let zero = DMatrix::zeros(4, 5);
        assert!((mise(&[(p.clone(), zero, w.clone())]).unwrap() - 1.0).abs() < 1e-15);
        assert!(mise(&[(DMatrix::zeros(4, 5), DMatrix::zeros(4, 5), w)]).is_err());
    }

    #[test]
    fn mise_uses_last_rep_denominator() {
        let w1 = window();
        let w2 = EvalWindow::new((0.0, 3.0), (0.0, 1.0), 4, 5).unwrap();
        let p1 = DMatrix::from_element(4, 5, 1.0);
        let p2 = DMatrix::from_element(4, 5, 2.0);
        let z = DMatrix::zeros(4, 5);
        // errors: 8·1 and 3·4; last mass 3·4 = 12.
        let got = mise(&[(p1, z.clone(), w1), (p2, z, w2)]).unwrap();
        assert!((got - (8.0 + 12.0) / 2.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let w = window();
        let p = DMatrix::from_fn(4, 5, |i, j| 1.0 + (i + j) as f64);
        let q = DMatrix::from_fn(4, 5, |i, j| 1.2 + (i * j) as f64 * 0.3);
        let a = mise(&[(p.clone(), q.clone(), w.clone())]).unwrap();
        let b = mise(&[(&p * 3.0, &q * 3.0, w)]).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn payoff_parsing() {
        assert_eq!(
            "call:1.5".parse::<Payoff>().unwrap(),
            Payoff::Call { strike: 1.5 }
        );
        assert_eq!("unit".parse::<Payoff>().unwrap(), Payoff::Unit);
        assert!("call:x".parse::<Payoff>().is_err());
        assert_eq!(Payoff::Put { strike: 1.0 }.value(0.25), 0.75);
    }

    #[test]
    fn exact_density_functionals() {
        let o = TransitionDensityOracle::new(Model::Ou, Model::Ou.default_params(), 1.0).unwrap();
        let ys = linspace(-8.0, 8.0, 4001);
        let one = feynman_kac(&o, |_| 1.0, 0.3, &ys).unwrap();
        assert!((one - 1.0).abs() < 1e-4);
        let mean = feynman_kac(&o, |y| y, 1.0, &ys).unwrap();
        assert!((mean - (-1.0_f64).exp()).abs() < 1e-3);
        let disc = option_price(&o, |_| 1.0, 0.3, 0.05, 1.0, &ys).unwrap();
        assert!((disc - (-0.05_f64).exp()).abs() < 1e-4);
        assert_eq!(option_price(&o, |y| y, 1.0, 0.0, 1.0, &ys).unwrap(), mean);
    }
}
