//! Normalized gradient descent (NormGD) for parameter estimation in
//! singular statistical models.
//!
//! NormGD scales each gradient step by the largest eigenvalue of the sample
//! Hessian: `θ ← θ − (η / λ_max(∇²f_n(θ))) ∇f_n(θ)`. The crate ships the
//! optimizer together with fixed-step gradient descent and EM baselines, the
//! two model families used to study it (a polynomial-link generalized linear
//! model and the symmetric two-component Gaussian mixture), and a seeded
//! experiment harness that measures how the statistical error and iteration
//! counts scale with the sample size.
//!
//! Module map:
//! - [`numkit`]: dense symmetric eigensolvers, power iteration, line fitting.
//! - [`stochastics`]: seeded RNG streams and synthetic datasets.
//! - [`glm`]: least-squares objective for `Y = (Xᵀθ*)^p + ε`.
//! - [`gmm`]: negative log-likelihood of `½N(−θ*, σ²I) + ½N(θ*, σ²I)`.
//! - [`optim`]: NormGD, GD and EM steppers and the traced run loop.
//! - [`experiments`]: convergence curves, slope studies, iteration scaling.
//! - [`check`]: oracle suites backing the `normgd check` command.

// `!(x > 0.0)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod error;
pub mod experiments;
pub mod glm;
pub mod gmm;
pub mod numkit;
pub mod optim;
pub mod plot;
pub mod stochastics;

pub use error::{Error, Result};
pub use numkit::SymMatrix;
pub use optim::{Algorithm, EigBackend, Objective, OptimizerConfig, RunTrace};
