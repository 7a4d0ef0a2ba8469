//! Numerics for feedback narrowing of a quantum-dot nuclear spin bath.
//!
//! The model chain runs from the optically driven three-level Λ system
//! ([`lambda`]) to the drift and diffusion of the Overhauser shift
//! ([`feedback`]), the evolution of its probability density
//! ([`fokker_planck`]), the Ramsey free-induction decay it produces
//! ([`ramsey`]) and the stretched-exponential coherence metrics extracted from
//! it ([`fitting`]). [`sde`] is an independent trajectory-level oracle and
//! [`experiment`] chains everything into the preparation, power, and
//! relaxation pipelines.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line front-end live in the `overhauser` crate.
//!
//! Units are fixed across the crate: detunings, Rabi frequencies and optical
//! rates in MHz; nuclear rates in ms⁻¹; Ramsey delays in ns; preparation and
//! relaxation times in ms.

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod experiment;
pub mod feedback;
pub mod fitting;
pub mod fokker_planck;
pub mod grid;
pub mod lambda;
pub mod ramsey;
pub mod sde;

mod linalg;

pub use error::{Error, Result};
pub use feedback::{DriftDiffusion, FeedbackParams};
pub use fitting::{FitResult, RelaxFit};
pub use grid::{Distribution, Grid1D, Moments};
pub use lambda::{LambdaParams, SteadyState};
pub use ramsey::FidCurve;
pub use sde::EnsembleResult;

/// Complex scalar used for coherences and density-matrix elements.
pub type Complex = num_complex::Complex64;
