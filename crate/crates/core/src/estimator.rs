//! Projection least-squares estimator of `p_t(x, y)`.
//!
//! With `φ` the x-basis and `ψ` the y-basis,
//!
//! ```text
//! Ψ̂[j, j'] = 1/(N T) Σ_i ∫_0^T φ_j(X^i_s) φ_j'(X^i_s) ds
//! Ẑ[j, ℓ]  = 1/(N T) Σ_i ∫_0^T φ_j(X^i_s) ψ_ℓ(X^i_{s+t}) ds
//! Θ̂ = Ψ̂⁻¹ Ẑ,   p̂(x, y) = Σ Θ̂[j, ℓ] φ_j(x) ψ_ℓ(y)
//! ```
//!
//! Time integrals are left Riemann sums on the sampling grid. Because the
//! bases are nested, the moments for every model up to the caps are leading
//! blocks of a single accumulation ([`MomentMatrices`]).

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::density::TransitionDensity;
use crate::error::{param, Error, Result};
use crate::sim::{steps_of, PathEnsemble, SimGrid};

/// Relative eigenvalue floor below which `Ψ̂` is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Range of grid indices used for the time integrals.
///
/// `s` runs over the grid points `start..=end` (so `T_eff = (end − start)Δ`);
/// the left Riemann sum uses the left endpoints `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationWindow {
    start: usize,
    end: usize,
    lag_index: usize,
    delta: f64,
}

impl EstimationWindow {
    pub fn new(start: usize, end: usize, lag_index: usize, grid: &SimGrid) -> Result<Self> {
        if lag_index == 0 {
            return param("lag index must be at least 1");
        }
        if end <= start {
            return param(format!("empty estimation window {start}..={end}"));
        }
        if end + lag_index > grid.n_steps() {
            return param(format!(
                "window end {end} plus lag {lag_index} exceeds the grid ({} steps)",
                grid.n_steps()
            ));
        }
        Ok(Self {
            start,
            end,
            lag_index,
            delta: grid.delta(),
        })
    }

    /// `s ∈ [0, t_eff]` with lag `t`; both must be multiples of `Δ`.
    pub fn for_horizon(grid: &SimGrid, t_eff: f64, lag: f64) -> Result<Self> {
        let end = steps_of(t_eff, grid.delta())?;
        let lag_index = steps_of(lag, grid.delta())?;
        Self::new(0, end, lag_index, grid)
    }

    /// Longest window the grid allows: `s ∈ [0, horizon − t]`.
    pub fn maximal(grid: &SimGrid, lag: f64) -> Result<Self> {
        let lag_index = steps_of(lag, grid.delta())?;
        if lag_index >= grid.n_steps() {
            return param(format!(
                "lag {lag} leaves no room on a horizon of {}",
                grid.horizon()
            ));
        }
        Self::new(0, grid.n_steps() - lag_index, lag_index, grid)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn lag_index(&self) -> usize {
        self.lag_index
    }

    pub fn lag(&self) -> f64 {
        self.lag_index as f64 * self.delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of grid points in `start..=end`.
    pub fn count(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn t_eff(&self) -> f64 {
        (self.end - self.start) as f64 * self.delta
    }

    fn check_fits(&self, ens: &PathEnsemble) -> Result<()> {
        if self.end + self.lag_index > ens.grid().n_steps() || self.delta != ens.grid().delta() {
            return param("estimation window does not fit the ensemble grid");
        }
        Ok(())
    }
}

/// Default `c` of the stability cutoff. It only rejects Gram matrices
/// that are close to numerically singular; a constant of order one rules
/// out every `m₁ > 2` on positive data such as the CIR model.
pub const DEFAULT_CUTOFF_CONSTANT: f64 = 1e9;

/// Stability cutoff `𝔏_φ(m₁) · max(‖Ψ̂⁻¹‖^p, 1) ≤ c · NT / log(NT)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub constant: f64,
    /// Power `p` of the inverse operator norm (1 or 2).
    pub exponent: u32,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self {
            constant: DEFAULT_CUTOFF_CONSTANT,
            exponent: 1,
        }
    }
}

impl CutoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.constant > 0.0 && self.constant.is_finite()) {
            return Err(Error::Configuration(format!(
                "cutoff must be positive, got {}",
                self.constant
            )));
        }
        if !matches!(self.exponent, 1 | 2) {
            return Err(Error::Configuration(format!(
                "cutoff exponent must be 1 or 2, got {}",
                self.exponent
            )));
        }
        Ok(())
    }
}

/// Empirical Gram matrix with its spectral diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    psi: DMatrix<f64>,
    min_eig: f64,
    max_eig: f64,
}

impl GramMatrix {
    pub fn new(psi: DMatrix<f64>) -> Result<Self> {
        if !psi.is_square() || psi.nrows() == 0 {
            return param("Gram matrix must be square and non-empty");
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(
                "Gram matrix has non-finite entries".into(),
            ));
        }
        let eig = SymmetricEigen::new(psi.clone());
        let min_eig = eig.eigenvalues.min();
        let max_eig = eig.eigenvalues.max();
        Ok(Self {
            psi,
            min_eig,
            max_eig,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    pub fn max_eig(&self) -> f64 {
        self.max_eig
    }

    pub fn is_invertible(&self) -> bool {
        self.max_eig > 0.0 && self.min_eig > SINGULAR_RTOL * self.max_eig
    }

    /// `‖Ψ̂⁻¹‖_op = 1 / λ_min`, when invertible.
    pub fn inv_op_norm(&self) -> Option<f64> {
        self.is_invertible().then(|| self.min_eig.recip())
    }

    /// Leading `m × m` block (the Gram matrix of the nested sub-model).
    pub fn leading(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.dim() {
            return param(format!("sub-block {m} outside 1..={}", self.dim()));
        }
        Self::new(self.psi.view((0, 0), (m, m)).into_owned())
    }

    /// Solves `Ψ̂ Θ = rhs`, `None` when `Ψ̂` is numerically singular.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if !self.is_invertible() {
            return None;
        }
        match Cholesky::new(self.psi.clone()) {
            Some(chol) => Some(chol.solve(rhs)),
            None => {
                let eig = SymmetricEigen::new(self.psi.clone());
                let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::recip));
                Some(&eig.eigenvectors * inv_diag * (eig.eigenvectors.transpose() * rhs))
            }
        }
    }
}

/// Truth value of the stability event for a Gram matrix.
///
/// `basis_constant` is `𝔏_φ(m₁)`; `nt` is `N · T`. The comparison is
/// inclusive. A singular Gram matrix never passes, nor does `NT ≤ 1`.
pub fn stability_cutoff(
    gram: &GramMatrix,
    basis_constant: f64,
    nt: f64,
    cutoff: &CutoffConfig,
) -> bool {
    let Some(inv) = gram.inv_op_norm() else {
        return false;
    };
    if !(nt > 1.0) {
        return false;
    }
    let lhs = basis_constant * inv.powi(cutoff.exponent as i32).max(1.0);
    lhs <= cutoff.constant * nt / nt.ln()
}

/// Per-path sums `Σ_k a(X_k) b(X_{k+lag})ᵀ`, column-major `ma × mb`.
#[allow(clippy::too_many_arguments)]
fn path_moments(
    path: &[f64],
    start: usize,
    stop: usize,
    lag: usize,
    phi: &BasisSpec,
    ma: usize,
    psi: &BasisSpec,
    mb: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; ma * mb];
    let mut a = vec![0.0; ma];
    let mut b = vec![0.0; mb];
    for k in start..stop {
        phi.fill_row(path[k], &mut a);
        psi.fill_row(path[k + lag], &mut b);
        for (l, bl) in b.iter().enumerate() {
            let col = &mut acc[l * ma..(l + 1) * ma];
            for (c, aj) in col.iter_mut().zip(&a) {
                *c += aj * bl;
            }
        }
    }
    acc
}

/// Fixed-shape pairwise summation, independent of thread scheduling.
fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut left) = it.next() {
            if let Some(right) = it.next() {
                left.iter_mut().zip(&right).for_each(|(l, r)| *l += r);
            }
            next.push(left);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// `(1/(N T)) Σ_i Σ_{k ∈ [start, stop)} Δ a(X^i_k) b(X^i_{k+lag})ᵀ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lagged_moments(
    ens: &PathEnsemble,
    start: usize,
    stop: usize,
    lag: usize,
    phi: &BasisSpec,
    ma: usize,
    psi: &BasisSpec,
    mb: usize,
) -> Result<DMatrix<f64>> {
    if stop <= start {
        return param("empty estimation window");
    }
    if stop - 1 + lag >= ens.n_points() {
        return param(format!("lag {lag} exceeds the grid"));
    }
    for (basis, m) in [(phi, ma), (psi, mb)] {
        if m == 0 || m > basis.max_dim() {
            return param(format!("dimension {m} outside 1..={}", basis.max_dim()));
        }
    }
    // The x-samples use [start, stop); the y-samples the shifted range.
    for p in ens.paths() {
        let bad_x = p[start..stop].iter().find(|&&x| !phi.contains(x));
        let bad_y = p[start + lag..stop + lag]
            .iter()
            .find(|&&y| !psi.contains(y));
        if let Some(x) = bad_x.or(bad_y) {
            return Err(Error::Domain(format!(
                "state {x} outside the basis support"
            )));
        }
    }
    let parts: Vec<Vec<f64>> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| path_moments(ens.path(i), start, stop, lag, phi, ma, psi, mb))
        .collect();
    let delta = ens.grid().delta();
    let t = (stop - start) as f64 * delta;
    let scale = delta / (ens.n_paths() as f64 * t);
    let total = pairwise_sum(parts);
    Ok(DMatrix::from_vec(ma, mb, total) * scale)
}

/// `Ψ̂_{m₁}` over the window.
pub fn gram_matrix(
    ens: &PathEnsemble,
    window: &EstimationWindow,
    phi: &BasisSpec,
    m1: usize,
) -> Result<GramMatrix> {
    window.check_fits(ens)?;
    GramMatrix::new(lagged_moments(
        ens,
        window.start,
        window.end,
        0,
        phi,
        m1,
        phi,
        m1,
    )?)
}

/// `Ẑ_{m,t}` over the window (`m₁ × m₂`).
pub fn cross_matrix(
    ens: &PathEnsemble,
    window: &EstimationWindow,
    phi: &BasisSpec,
    psi: &BasisSpec,
    m1: usize,
    m2: usize,
) -> Result<DMatrix<f64>> {
    window.check_fits(ens)?;
    lagged_moments(
        ens,
        window.start,
        window.end,
        window.lag_index,
        phi,
        m1,
        psi,
        m2,
    )
}

/// `Ψ̂` and `Ẑ` at the dimension caps; every smaller model reads leading blocks.
#[derive(Debug, Clone)]
pub struct MomentMatrices {
    gram: GramMatrix,
    cross: DMatrix<f64>,
    phi: BasisSpec,
    psi: BasisSpec,
    window: EstimationWindow,
    n_paths: usize,
}

impl MomentMatrices {
    pub fn assemble(
        ens: &PathEnsemble,
        window: &EstimationWindow,
        phi: &BasisSpec,
        psi: &BasisSpec,
        m1_cap: usize,
        m2_cap: usize,
    ) -> Result<Self> {
        let gram = gram_matrix(ens, window, phi, m1_cap)?;
        let cross = cross_matrix(ens, window, phi, psi, m1_cap, m2_cap)?;
        Ok(Self {
            gram,
            cross,
            phi: phi.with_max_dim(m1_cap)?,
            psi: psi.with_max_dim(m2_cap)?,
            window: *window,
            n_paths: ens.n_paths(),
        })
    }

    pub fn caps(&self) -> (usize, usize) {
        (self.cross.nrows(), self.cross.ncols())
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn window(&self) -> &EstimationWindow {
        &self.window
    }

    /// `N · T_eff`.
    pub fn nt(&self) -> f64 {
        self.n_paths as f64 * self.window.t_eff()
    }

    pub fn phi(&self) -> &BasisSpec {
        &self.phi
    }

    pub fn psi(&self) -> &BasisSpec {
        &self.psi
    }

    pub fn gram(&self, m1: usize) -> Result<GramMatrix> {
        self.gram.leading(m1)
    }

    pub fn cross(&self, m1: usize, m2: usize) -> Result<DMatrix<f64>> {
        let (c1, c2) = self.caps();
        if m1 == 0 || m2 == 0 || m1 > c1 || m2 > c2 {
            return param(format!("model ({m1}, {m2}) exceeds caps ({c1}, {c2})"));
        }
        Ok(self.cross.view((0, 0), (m1, m2)).into_owned())
    }

    /// Whether the stability event holds at `m₁`.
    pub fn passes_cutoff(&self, m1: usize, cutoff: &CutoffConfig) -> Result<bool> {
        Ok(stability_cutoff(
            &self.gram(m1)?,
            self.phi.selection_constant(m1),
            self.nt(),
            cutoff,
        ))
    }

    /// Estimator at `(m₁, m₂)`; truncated to zero if the cutoff fails.
    pub fn fit(&self, m1: usize, m2: usize, cutoff: &CutoffConfig) -> Result<TransitionFit> {
        let gram = self.gram(m1)?;
        let z = self.cross(m1, m2)?;
        let passes = stability_cutoff(&gram, self.phi.selection_constant(m1), self.nt(), cutoff);
        let theta = match gram.solve(&z) {
            Some(theta) if passes => Some(theta),
            _ => None,
        };
        let truncated = theta.is_none();
        Ok(TransitionFit {
            m1,
            m2,
            theta: theta.unwrap_or_else(|| DMatrix::zeros(m1, m2)),
            gram,
            z,
            lag: self.window.lag(),
            phi: self.phi.with_max_dim(m1)?,
            psi: self.psi.with_max_dim(m2)?,
            truncated,
            n_paths: self.n_paths,
            t_eff: self.window.t_eff(),
        })
    }
}

/// Fitted estimator `p̂_{m,t}` (or its truncation `p̃ = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFit {
    m1: usize,
    m2: usize,
    theta: DMatrix<f64>,
    gram: GramMatrix,
    z: DMatrix<f64>,
    lag: f64,
    phi: BasisSpec,
    psi: BasisSpec,
    truncated: bool,
    n_paths: usize,
    t_eff: f64,
}

/// Fits the estimator at `m = (m₁, m₂)` with the default cutoff.
pub fn fit(
    ens: &PathEnsemble,
    window: &EstimationWindow,
    phi: &BasisSpec,
    psi: &BasisSpec,
    m: (usize, usize),
) -> Result<TransitionFit> {
    fit_with(ens, window, phi, psi, m, &CutoffConfig::default())
}

pub fn fit_with(
    ens: &PathEnsemble,
    window: &EstimationWindow,
    phi: &BasisSpec,
    psi: &BasisSpec,
    m: (usize, usize),
    cutoff: &CutoffConfig,
) -> Result<TransitionFit> {
    MomentMatrices::assemble(ens, window, phi, psi, m.0, m.1)?.fit(m.0, m.1, cutoff)
}

impl TransitionFit {
    /// Fit from explicit coefficients, e.g. for synthetic checks.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        theta: DMatrix<f64>,
        gram: GramMatrix,
        z: DMatrix<f64>,
        lag: f64,
        phi: BasisSpec,
        psi: BasisSpec,
        truncated: bool,
        n_paths: usize,
        t_eff: f64,
    ) -> Result<Self> {
        let (m1, m2) = theta.shape();
        if gram.dim() != m1 || z.shape() != (m1, m2) {
            return param("coefficient, Gram and cross shapes disagree");
        }
        if m1 > phi.max_dim() || m2 > psi.max_dim() {
            return param("coefficient shape exceeds basis dimensions");
        }
        if truncated && theta.iter().any(|&v| v != 0.0) {
            return param("a truncated fit must have zero coefficients");
        }
        Ok(Self {
            m1,
            m2,
            theta,
            gram,
            z,
            lag,
            phi,
            psi,
            truncated,
            n_paths,
            t_eff,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }

    pub fn phi(&self) -> &BasisSpec {
        &self.phi
    }

    pub fn psi(&self) -> &BasisSpec {
        &self.psi
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn t_eff(&self) -> f64 {
        self.t_eff
    }

    /// `‖Ψ̂ Θ̂ − Ẑ‖_F / ‖Ẑ‖_F` (zero for a zero right-hand side).
    pub fn relative_residual(&self) -> f64 {
        let zn = self.z.norm();
        if zn == 0.0 {
            return 0.0;
        }
        (self.gram.matrix() * &self.theta - &self.z).norm() / zn
    }

    /// `p̂(x_i, y_j)` on a tensor grid, as `Φ(x) Θ̂ Ψ(y)ᵀ`.
    pub fn evaluate(&self, xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
        let bx = self.phi.eval_extended(self.m1, xs).into_inner();
        let by = self.psi.eval_extended(self.m2, ys).into_inner();
        bx * &self.theta * by.transpose()
    }

    /// `‖p̂‖²_N = tr(Θ̂ᵀ Ψ̂ Θ̂)`; zero for a truncated fit.
    pub fn empirical_sq_norm(&self) -> f64 {
        if self.truncated {
            return 0.0;
        }
        (self.theta.transpose() * self.gram.matrix() * &self.theta).trace()
    }
}

impl TransitionDensity for TransitionFit {
    fn density(&self, x: f64, y: f64) -> Result<f64> {
        let mut a = vec![0.0; self.m1];
        let mut b = vec![0.0; self.m2];
        self.phi.fill_row(x, &mut a);
        self.psi.fill_row(y, &mut b);
        let mut s = 0.0;
        for (j, aj) in a.iter().enumerate() {
            for (l, bl) in b.iter().enumerate() {
                s += self.theta[(j, l)] * aj * bl;
            }
        }
        Ok(s)
    }
}

/// Evaluate a fit on a tensor grid.
pub fn evaluate(fit: &TransitionFit, xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
    fit.evaluate(xs, ys)
}

/// `‖p̂_{m,t}‖²_N`.
pub fn empirical_sq_norm(fit: &TransitionFit) -> f64 {
    fit.empirical_sq_norm()
}
