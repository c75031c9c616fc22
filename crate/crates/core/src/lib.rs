//! Nonparametric estimation of the transition density `p_t(x, y)` of a
//! one-dimensional diffusion observed through `N` independent copies.
//!
//! The estimator minimises a least-squares contrast over tensor-product
//! spaces `span{φ_j} ⊗ span{ψ_ℓ}`; its coefficients solve `Ψ̂ Θ̂ = Ẑ` where
//! `Ψ̂` is the occupation Gram matrix of the x-basis and `Ẑ` the lagged
//! cross moments. Dimensions are chosen by a penalised criterion.
//!
//! Module map:
//! - [`sim`], [`density`], [`special`]: exact Ornstein–Uhlenbeck based
//!   simulation of the benchmark models and their closed-form densities.
//! - [`basis`]: Hermite and trigonometric orthonormal families.
//! - [`estimator`]: Gram/cross matrices, the fitted estimator, diagnostics.
//! - [`selection`]: admissible collections and penalised selection.
//! - [`evaluation`], [`experiment`]: MISE, Monte-Carlo repetitions and
//!   the Feynman–Kac / option-price functionals.
//! - [`config`], [`io`]: configuration parsing and file formats.

pub mod basis;
pub mod config;
pub mod density;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod quadrature;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
