//! One-sided MinP score tests for inequality-constrained parameters.
//!
//! The library tests `H0: γ = 0` against `γ ≥ 0, γ ≠ 0` in linear
//! regressions, ARCH models and random-coefficient models, estimating only
//! the null model. Global tests combine individual score p-values with the
//! p-value of a cone (chi-bar) statistic or a maximin one-sided t statistic;
//! a stepdown procedure then identifies which individual coefficients are
//! non-zero. All p-values and critical values come from one residual
//! bootstrap pool.
//!
//! Modules, bottom up:
//!
//! * [`linalg`]: dense symmetric matrices, Cholesky, addressable RNG streams.
//! * [`cone`]: orthant projection, maximin direction, chi-bar weights.
//! * [`models`]: restricted fits, score vectors and covariances, bootstrap samples.
//! * [`inference`]: statistics, bootstrap pool, MinP global tests, stepdown.
//! * [`mcstudy`]: data-generating processes and Monte Carlo studies.
//! * [`cli`]: the `minp` command-line front end.
//!
//! The `examples/` directory has one runnable program per capability:
//! `cone_projection`, `maximin_direction`, `chibar_weights`,
//! `linear_global_test`, `arch_effects`, `random_coefficient` and
//! `monte_carlo_study`.

pub mod cli;
pub mod cone;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod mcstudy;
pub mod models;

pub use error::{Error, Result};
