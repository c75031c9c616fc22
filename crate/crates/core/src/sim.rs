//! Exact simulation of the benchmark diffusions.
//!
//! All three models are driven by a `d`-dimensional Ornstein–Uhlenbeck
//! process `dU = -(r/2) U dt + (γ/2) dW`, started from its stationary law
//! `N(0, γ²/(4r) I_d)` and discretised exactly:
//! `U((k+1)Δ) = e^{-rΔ/2} U(kΔ) + ε`, `ε ~ N(0, γ²(1 - e^{-rΔ})/(4r) I_d)`.
//!
//! | model      | state            | `d`   |
//! |------------|------------------|-------|
//! | `Ou`       | `U`              | 1     |
//! | `TanhOu`   | `tanh(U)`        | 1     |
//! | `Cir`      | `‖U‖²`           | any   |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Example 1: Ornstein–Uhlenbeck, `X = U`.
    Ou,
    /// Example 2: `X = tanh(U)`, state space `(-1, 1)`.
    TanhOu,
    /// Example 3: Cox–Ingersoll–Ross, `X = ‖U‖²`, state space `[0, ∞)`.
    Cir,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Ou, Model::TanhOu, Model::Cir];

    /// Numeric tag used in file headers (1, 2, 3).
    pub fn tag(self) -> u8 {
        match self {
            Model::Ou => 1,
            Model::TanhOu => 2,
            Model::Cir => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Model> {
        Model::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Ou => "ou",
            Model::TanhOu => "tanh_ou",
            Model::Cir => "cir",
        }
    }

    /// Parameters of the published benchmark for this model.
    pub fn default_params(self) -> OuParams {
        match self {
            Model::Ou => OuParams {
                r: 2.0,
                gamma: 2.0,
                d: 1,
            },
            Model::TanhOu => OuParams {
                r: 4.0,
                gamma: 1.0,
                d: 1,
            },
            Model::Cir => OuParams {
                r: 1.0,
                gamma: 1.0,
                d: 6,
            },
        }
    }

    /// Whether `x` lies in the model's state space.
    pub fn in_state_space(self, x: f64) -> bool {
        match self {
            Model::Ou => x.is_finite(),
            Model::TanhOu => x > -1.0 && x < 1.0,
            Model::Cir => x >= 0.0 && x.is_finite(),
        }
    }

    fn check_dim(self, d: usize) -> Result<()> {
        match self {
            Model::Ou | Model::TanhOu if d != 1 => {
                param(format!("model {} requires d = 1, got d = {d}", self.name()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ou" | "1" => Ok(Model::Ou),
            "tanh_ou" | "tanh-ou" | "2" => Ok(Model::TanhOu),
            "cir" | "3" => Ok(Model::Cir),
            other => param(format!(
                "unknown model '{other}' (expected ou, tanh_ou or cir)"
            )),
        }
    }
}

/// Parameters of the driving OU process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    r: f64,
    gamma: f64,
    d: usize,
}

impl OuParams {
    pub fn new(r: f64, gamma: f64, d: usize) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return param(format!("drift rate r must be positive, got {r}"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return param(format!(
                "diffusion scale gamma must be positive, got {gamma}"
            ));
        }
        if d == 0 {
            return param("dimension d must be at least 1");
        }
        Ok(Self { r, gamma, d })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Stationary variance `γ²/(4r)` of each OU coordinate.
    pub fn stationary_variance(&self) -> f64 {
        self.gamma * self.gamma / (4.0 * self.r)
    }

    /// Conditional variance of each coordinate after time `h`.
    pub fn transition_variance(&self, h: f64) -> f64 {
        self.gamma * self.gamma * (-(-self.r * h).exp_m1()) / (4.0 * self.r)
    }

    /// Autoregression factor `e^{-r h / 2}` over time `h`.
    pub fn decay(&self, h: f64) -> f64 {
        (-0.5 * self.r * h).exp()
    }
}

/// Uniform sampling grid `{kΔ : k = 0..=n_steps}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    delta: f64,
    n_steps: usize,
}

impl SimGrid {
    pub fn new(delta: f64, n_steps: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return param(format!("step delta must be positive, got {delta}"));
        }
        if n_steps == 0 {
            return param("grid needs at least one step");
        }
        Ok(Self { delta, n_steps })
    }

    /// Smallest grid with step `delta` reaching at least `span`.
    pub fn covering(delta: f64, span: f64) -> Result<Self> {
        if !(span > 0.0) {
            return param(format!("span must be positive, got {span}"));
        }
        // Guard against 10.999999 / 0.01 style round-up.
        let steps = (span / delta - 1e-9).ceil().max(1.0) as usize;
        Self::new(delta, steps)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.delta
    }

    /// Grid index of time `time`, which must be a multiple of `Δ`.
    pub fn index_of(&self, time: f64) -> Result<usize> {
        steps_of(time, self.delta)
    }
}

/// Number of steps `Δ` in `time`; rejects non-integral ratios.
pub fn steps_of(time: f64, delta: f64) -> Result<usize> {
    let ratio = time / delta;
    let k = ratio.round();
    if !(time >= 0.0) || (ratio - k).abs() > 1e-7 * ratio.max(1.0) {
        return param(format!(
            "time {time} is not a non-negative multiple of delta = {delta}"
        ));
    }
    Ok(k as usize)
}

/// `N` trajectories on a common grid, stored row-major (one row per path).
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    values: Vec<f64>,
    n_paths: usize,
    grid: SimGrid,
    model: Option<Model>,
    params: Option<OuParams>,
    seed: Option<u64>,
}

impl PathEnsemble {
    /// Ensemble from externally supplied rows (no generating model).
    pub fn from_rows(rows: Vec<Vec<f64>>, grid: SimGrid) -> Result<Self> {
        let n_paths = rows.len();
        if n_paths == 0 {
            return param("ensemble needs at least one path");
        }
        let mut values = Vec::with_capacity(n_paths * grid.n_points());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != grid.n_points() {
                return param(format!(
                    "path {i} has {} points, grid expects {}",
                    row.len(),
                    grid.n_points()
                ));
            }
            values.extend(row);
        }
        Self::from_flat(values, n_paths, grid, None, None, None)
    }

    pub(crate) fn from_flat(
        values: Vec<f64>,
        n_paths: usize,
        grid: SimGrid,
        model: Option<Model>,
        params: Option<OuParams>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if n_paths == 0 || values.len() != n_paths * grid.n_points() {
            return param(format!(
                "expected {} x {} values, got {}",
                n_paths,
                grid.n_points(),
                values.len()
            ));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return param(format!("non-finite state at flat index {bad}"));
        }
        if let Some(m) = model {
            if let Some(bad) = values.iter().position(|&v| !m.in_state_space(v)) {
                return param(format!("state {} outside the {m} state space", values[bad]));
            }
        }
        Ok(Self {
            values,
            n_paths,
            grid,
            model,
            params,
            seed,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points()
    }

    pub fn grid(&self) -> SimGrid {
        self.grid
    }

    pub fn model(&self) -> Option<Model> {
        self.model
    }

    pub fn params(&self) -> Option<OuParams> {
        self.params
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.n_points();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_points())
    }

    /// Row-major backing storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// States of every path at grid index `k`.
    pub fn cross_section(&self, k: usize) -> Vec<f64> {
        self.paths().map(|p| p[k]).collect()
    }

    /// Smallest and largest state in the ensemble.
    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// First `n` paths (used for nested sub-sampling).
    pub fn truncate_paths(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_paths {
            return param(format!("cannot keep {n} of {} paths", self.n_paths));
        }
        Ok(Self {
            values: self.values[..n * self.n_points()].to_vec(),
            n_paths: n,
            ..self.clone()
        })
    }
}

/// Raw `d`-dimensional OU trajectories: `values[(i * n_points + k) * d + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuEnsemble {
    values: Vec<f64>,
    n_paths: usize,
    grid: SimGrid,
    params: OuParams,
    seed: u64,
}

impl OuEnsemble {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> SimGrid {
        self.grid
    }

    pub fn params(&self) -> OuParams {
        self.params
    }

    /// The `d`-vector of path `i` at grid index `k`.
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let d = self.params.d;
        let start = (i * self.grid.n_points() + k) * d;
        &self.values[start..start + d]
    }
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return param("n_paths must be at least 1");
    }
    Ok(())
}

/// One exact OU trajectory, `n_points × d` values, from a dedicated stream.
fn ou_path<R: Rng>(params: &OuParams, grid: &SimGrid, rng: &mut R) -> Vec<f64> {
    let stationary_sd = params.stationary_variance().sqrt();
    let start: Vec<f64> = (0..params.d)
        .map(|_| stationary_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ou_path_from(params, grid, &start, rng)
}

fn ou_path_from<R: Rng>(params: &OuParams, grid: &SimGrid, start: &[f64], rng: &mut R) -> Vec<f64> {
    let d = params.d;
    let decay = params.decay(grid.delta);
    let innovation_sd = params.transition_variance(grid.delta).sqrt();
    let mut out = Vec::with_capacity(grid.n_points() * d);
    out.extend_from_slice(start);
    for k in 1..grid.n_points() {
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let prev = out[(k - 1) * d + c];
            out.push(decay * prev + innovation_sd * z);
        }
    }
    out
}

/// Simulate `n_paths` independent stationary OU trajectories.
///
/// Path `i` draws from `rng::stream(seed, i)`, so the output is
/// bitwise reproducible regardless of thread count.
pub fn simulate_ou_ensemble(
    params: OuParams,
    grid: SimGrid,
    n_paths: usize,
    seed: u64,
) -> Result<OuEnsemble> {
    check_paths(n_paths)?;
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| ou_path(&params, &grid, &mut rng::stream(seed, i as u64)))
        .collect();
    Ok(OuEnsemble {
        values: rows.concat(),
        n_paths,
        grid,
        params,
        seed,
    })
}

fn map_state(model: Model, u: &[f64]) -> f64 {
    match model {
        Model::Ou => u[0],
        Model::TanhOu => u[0].tanh(),
        Model::Cir => u.iter().map(|v| v * v).sum(),
    }
}

/// Reduce raw OU states to the observed diffusion of `model`.
pub fn apply_model_map(raw: &OuEnsemble, model: Model) -> Result<PathEnsemble> {
    model.check_dim(raw.params.d)?;
    let values: Vec<f64> = raw
        .values
        .chunks_exact(raw.params.d)
        .map(|u| map_state(model, u))
        .collect();
    PathEnsemble::from_flat(
        values,
        raw.n_paths,
        raw.grid,
        Some(model),
        Some(raw.params),
        Some(raw.seed),
    )
}

/// Simulate observed paths of `model` directly (same streams as
/// [`simulate_ou_ensemble`] followed by [`apply_model_map`]).
pub fn simulate(
    model: Model,
    params: OuParams,
    grid: SimGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    model.check_dim(params.d)?;
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let raw = ou_path(&params, &grid, &mut rng::stream(seed, i as u64));
            raw.chunks_exact(params.d)
                .map(|u| map_state(model, u))
                .collect()
        })
        .collect();
    PathEnsemble::from_flat(
        rows.concat(),
        n_paths,
        grid,
        Some(model),
        Some(params),
        Some(seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_variance(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn noise_free_chain_decays_exactly() {
        let params = OuParams {
            r: 2.0,
            gamma: 0.0,
            d: 1,
        };
        let grid = SimGrid::new(0.01, 50).unwrap();
        let path = ou_path_from(&params, &grid, &[1.3], &mut rng::stream(1, 0));
        for (k, u) in path.iter().enumerate() {
            let exact = 1.3 * (-params.r * k as f64 * 0.01 / 2.0).exp();
            assert!((u - exact).abs() <= 1e-14 * exact, "k = {k}");
        }
    }

    #[test]
    fn stationary_variance_matches() {
        let params = OuParams::new(2.0, 2.0, 1).unwrap();
        let grid = SimGrid::new(0.01, 1).unwrap();
        let ens = simulate_ou_ensemble(params, grid, 100_000, 11).unwrap();
        let u0: Vec<f64> = (0..ens.n_paths()).map(|i| ens.state(i, 0)[0]).collect();
        let v = sample_variance(&u0);
        // Standard error of a Gaussian sample variance: σ²·sqrt(2/(n-1)).
        let se = 0.5 * (2.0 / 99_999.0_f64).sqrt();
        assert!((v - 0.5).abs() < 3.0 * se, "variance {v}");
    }

    #[test]
    fn one_step_conditional_variance() {
        let params = OuParams::new(2.0, 2.0, 1).unwrap();
        let want = 4.0 * (1.0 - (-0.02_f64).exp()) / 8.0;
        assert!((params.transition_variance(0.01) - want).abs() < 1e-16);
        assert!((want - 0.009_900_663).abs() < 1e-8);

        // 10^5 one-step moves from a fixed start.
        let decay = params.decay(0.01);
        let sd = params.transition_variance(0.01).sqrt();
        let mut rng = rng::stream(5, 0);
        let steps: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                decay * 0.7 + sd * z
            })
            .collect();
        let v = sample_variance(&steps);
        let se = want * (2.0 / 99_999.0_f64).sqrt();
        assert!((v - want).abs() < 3.0 * se, "variance {v} vs {want}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let p = Model::Cir.default_params();
        let g = SimGrid::new(0.01, 20).unwrap();
        let a = simulate(Model::Cir, p, g, 16, 99).unwrap();
        let b = simulate(Model::Cir, p, g, 16, 99).unwrap();
        let c = simulate(Model::Cir, p, g, 16, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn fused_simulation_matches_map_of_raw() {
        let p = Model::Cir.default_params();
        let g = SimGrid::new(0.05, 30).unwrap();
        let raw = simulate_ou_ensemble(p, g, 8, 3).unwrap();
        let mapped = apply_model_map(&raw, Model::Cir).unwrap();
        let direct = simulate(Model::Cir, p, g, 8, 3).unwrap();
        assert_eq!(mapped, direct);
    }

    #[test]
    fn model_maps() {
        let p = OuParams::new(1.0, 1.0, 1).unwrap();
        let g = SimGrid::new(0.1, 10).unwrap();
        let raw = simulate_ou_ensemble(p, g, 4, 0).unwrap();
        let ou = apply_model_map(&raw, Model::Ou).unwrap();
        for i in 0..4 {
            for k in 0..g.n_points() {
                assert_eq!(ou.path(i)[k], raw.state(i, k)[0]);
            }
        }
        assert_eq!(map_state(Model::TanhOu, &[0.0]), 0.0);
        let big = map_state(Model::TanhOu, &[20.0]);
        assert!(big > 1.0 - 1e-9 && big <= 1.0);
        assert_eq!(map_state(Model::Cir, &[0.0; 6]), 0.0);
    }

    #[test]
    fn model_dimension_mismatch() {
        let p6 = OuParams::new(1.0, 1.0, 6).unwrap();
        let g = SimGrid::new(0.1, 5).unwrap();
        let raw = simulate_ou_ensemble(p6, g, 2, 0).unwrap();
        assert!(matches!(
            apply_model_map(&raw, Model::Ou),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            apply_model_map(&raw, Model::TanhOu),
            Err(Error::Parameter(_))
        ));
        assert!(apply_model_map(&raw, Model::Cir).is_ok());
    }

    #[test]
    fn invalid_parameters() {
        assert!(OuParams::new(0.0, 1.0, 1).is_err());
        assert!(OuParams::new(1.0, -1.0, 1).is_err());
        assert!(OuParams::new(1.0, 1.0, 0).is_err());
        assert!(SimGrid::new(0.0, 10).is_err());
        assert!(SimGrid::new(0.1, 0).is_err());
        let p = OuParams::new(1.0, 1.0, 1).unwrap();
        assert!(simulate_ou_ensemble(p, SimGrid::new(0.1, 1).unwrap(), 0, 0).is_err());
    }

    #[test]
    fn grid_covering_and_indices() {
        let g = SimGrid::covering(0.01, 11.0).unwrap();
        assert_eq!(g.n_steps(), 1100);
        assert_eq!(g.index_of(1.0).unwrap(), 100);
        assert!(g.index_of(0.015).is_err());
        assert!((g.horizon() - 11.0).abs() < 1e-12);
    }
}
