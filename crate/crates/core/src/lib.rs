//! Incremental PCA with the Krasulina and Oja estimators, together with the
//! closed-form rate bounds that govern them and Monte Carlo checks of the
//! per-step inequalities behind those bounds.
//!
//! Module map:
//!
//! * [`linalg`]: vectors, symmetric matrices, Rayleigh quotient, potential,
//!   power-iteration eigen-oracle.
//! * [`distributions`]: the coordinate counterexample distribution, clipped
//!   Gaussians, CSV datasets.
//! * [`estimators`]: Krasulina, Oja and block-Oja updates.
//! * [`theory`]: epoch schedule, rate bound, recurrence solution, MGF bound.
//! * [`verify`]: lemma-level Monte Carlo and pathwise checks.
//! * [`harness`]: multi-trial experiments, slope fits, CSV output.

pub mod distributions;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
