//! Kriging with intrinsic Gaussian-process (IGP) priors.
//!
//! An intrinsic random field carries no marginal mean or variance; its
//! dependence structure lives entirely in a variogram
//! `γ(s, t) = ½ E[(Z(s) − Z(t))²]`. This crate provides the pieces needed to
//! do GP-style regression under such priors:
//!
//! - [`variogram`] — variogram families (Brownian, convolved Brownian in one
//!   and two dimensions, stationary exponential/Gaussian, and the surrogate
//!   transform `γ̂ = ϱ·γ/(1 − γ)`), together with the special functions they
//!   need (`Φ`, Kummer's `₁F₁`) and an independent quadrature oracle.
//! - [`structmat`] — variogram matrices and the structured factorizations
//!   that make repeated per-target work `O(n²)`: the shifted Cholesky factor
//!   of `δee⊤ − Γ`, per-target twisted factors, Givens-based factorization of
//!   the increment covariance `γ(t)e⊤ + eγ(t)⊤ − Γ`, noisy factor updates,
//!   and Cholesky downdating.
//! - [`kriging`] — the weight families: IGP (noisy and noise-free), limit,
//!   rational, Shepard/IDW, variogram-Shepard, and the polynomial-plus-Shepard
//!   residual predictor.
//! - [`posterior`] — joint posterior mean/covariance over a prediction
//!   lattice, posterior realization sampling, and anchored prior-path draws;
//!   plus a stationary-GP baseline for comparison.
//! - [`simdata`] — deterministic synthetic data sets: a seven-point 1-d demo
//!   and a satellite-altimetry style 2-d track with structured noise.
//! - [`demo`] — file-emitting demo/benchmark drivers shared with the CLI.

pub mod demo;
pub mod error;
pub mod geom;
pub mod io;
pub mod kriging;
mod linalg;
pub mod posterior;
pub mod simdata;
pub mod structmat;
pub mod variogram;

pub use error::{Error, Result};
pub use geom::{Location, LocationSet};
pub use variogram::{SillSpec, VariogramModel};
