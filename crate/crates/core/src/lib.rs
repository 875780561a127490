//! Numerical toolkit for multivalued (reflected) McKean-Vlasov SDEs.
//!
//! The crate covers the whole chain from the reflection operator to the
//! deviation experiments:
//!
//! * [`monotone`]: maximal monotone operators, resolvents and graph samples.
//! * [`measures`]: empirical measures and the Wasserstein-2 distance.
//! * [`coefficients`]: parametric drift/diffusion families with analytic
//!   space and Lions derivatives, plus hypothesis validation.
//! * [`dynamics`]: time steppers for the particle system, its deterministic
//!   limit, controlled and skeleton equations, and the CLT/MDP rescalings.
//! * [`rate`]: rate-function values by least-norm control.
//! * [`harness`]: Monte Carlo experiments measuring the deviation scalings.
//! * [`cli`]: configuration parsing and the `mvmv` command front end.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod cli;
pub mod coefficients;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod measures;
pub mod monotone;
pub mod noise;
pub mod rate;

pub use error::{Error, Result};
