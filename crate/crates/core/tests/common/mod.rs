//! Helpers shared by the integration suites. Everything here recomputes
//! quantities by direct path sums or quadrature, without going through the
//! moment accumulators it is meant to check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transden::basis::{BasisKind, BasisSpec};
use transden::estimator::{EstimationWindow, TransitionFit};
use transden::quadrature::{linspace, trapezoid};
use transden::sim::{simulate, Model, PathEnsemble, SimGrid};

/// A small random estimation problem.
pub struct Instance {
    pub ens: PathEnsemble,
    pub window: EstimationWindow,
    pub phi: BasisSpec,
    pub psi: BasisSpec,
    pub label: String,
}

/// Builds a small instance: `n_paths ≤ 20`, horizon 2, lag 0.5, step 0.01.
pub fn small_instance(
    seed: u64,
    model: Model,
    n_paths: usize,
    x_kind: BasisKind,
    max_dim: usize,
) -> Instance {
    let grid = SimGrid::new(0.01, 250).unwrap();
    let ens = simulate(model, model.default_params(), grid, n_paths, seed).unwrap();
    let window = EstimationWindow::for_horizon(&grid, 2.0, 0.5).unwrap();
    let (lo, hi) = ens.range();
    let phi = BasisSpec::for_range(x_kind, lo, hi, max_dim).unwrap();
    let psi = BasisSpec::hermite(max_dim).unwrap();
    let label = format!("seed={seed} model={model} N={n_paths} phi={x_kind}");
    Instance {
        ens,
        window,
        phi,
        psi,
        label,
    }
}

/// Random instance drawn from a fixed generator, used by table-driven suites.
pub fn random_instance(rng: &mut ChaCha8Rng, max_dim: usize) -> Instance {
    let model = [Model::Ou, Model::TanhOu, Model::Cir][rng.random_range(0..3)];
    let kind = if rng.random_bool(0.3) {
        BasisKind::Trig
    } else {
        BasisKind::Hermite
    };
    let n = rng.random_range(3..=20);
    small_instance(rng.random(), model, n, kind, max_dim)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Left-Riemann sample pairs `(X_s, X_{s+t})` of the window, with the weight
/// `Δ / (N T_eff)` each pair carries in the empirical integrals.
pub fn window_pairs(ens: &PathEnsemble, w: &EstimationWindow) -> (Vec<(f64, f64)>, f64) {
    let mut pairs = Vec::new();
    for p in ens.paths() {
        for k in w.start()..w.end() {
            pairs.push((p[k], p[k + w.lag_index()]));
        }
    }
    (pairs, w.delta() / (ens.n_paths() as f64 * w.t_eff()))
}

/// Hermite y-grid on which the trapezoid rule is exact to rounding for the
/// low-order products used here.
pub fn hermite_y_grid() -> Vec<f64> {
    linspace(-12.0, 12.0, 1201)
}

/// `(1/(N T)) Σ_i ∫ ∫ p̂(X_s^i, y)² dy ds` by y-quadrature at every sample.
pub fn quadrature_sq_norm(
    fit: &TransitionFit,
    ens: &PathEnsemble,
    w: &EstimationWindow,
    ys: &[f64],
) -> f64 {
    let (pairs, weight) = window_pairs(ens, w);
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let values = fit.evaluate(&xs, ys);
    let mut total = 0.0;
    for i in 0..xs.len() {
        let row: Vec<f64> = values.row(i).iter().map(|v| v * v).collect();
        total += trapezoid(ys, &row);
    }
    total * weight
}

/// `(1/(N T)) Σ_i ∫ p̂(X_s^i, X_{s+t}^i) ds` by direct path sums.
pub fn path_cross_term(fit: &TransitionFit, ens: &PathEnsemble, w: &EstimationWindow) -> f64 {
    use transden::density::TransitionDensity;
    let (pairs, weight) = window_pairs(ens, w);
    pairs
        .iter()
        .map(|&(x, y)| fit.density(x, y).unwrap())
        .sum::<f64>()
        * weight
}

/// Empirical projection of `p̂_M` onto the `(m₁, m₂)` model: solves the
/// normal equations `Ψ̂_m A = b` where `b_{jℓ} = (1/(N T)) Σ_i ∫ φ_j(X_s)
/// ∫ p̂_M(X_s, y) ψ_ℓ(y) dy ds`, the inner y-integral taken by quadrature.
pub fn empirical_projection(
    big: &TransitionFit,
    ens: &PathEnsemble,
    w: &EstimationWindow,
    m: (usize, usize),
    ys: &[f64],
) -> DMatrix<f64> {
    let (pairs, weight) = window_pairs(ens, w);
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let phi = big.phi().eval_extended(m.0, &xs).into_inner();
    let psi_y = big.psi().eval_extended(m.1, ys).into_inner();
    let surface = big.evaluate(&xs, ys);
    // inner[i, ℓ] = ∫ p̂_M(x_i, y) ψ_ℓ(y) dy
    let mut inner = DMatrix::zeros(xs.len(), m.1);
    for i in 0..xs.len() {
        for l in 0..m.1 {
            let prod: Vec<f64> = (0..ys.len())
                .map(|k| surface[(i, k)] * psi_y[(k, l)])
                .collect();
            inner[(i, l)] = trapezoid(ys, &prod);
        }
    }
    let gram = phi.transpose() * &phi * weight;
    let rhs = phi.transpose() * inner * weight;
    gram.cholesky()
        .expect("positive definite sub-Gram")
        .solve(&rhs)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
