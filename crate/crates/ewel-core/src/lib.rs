//! Numerical core of the Euler weak-error laboratory.
//!
//! The crate simulates non-degenerate diffusions `dX = b dt + sigma dW` whose
//! coefficients are merely Hölder continuous or piecewise smooth, and provides
//! the machinery needed to measure how the Euler scheme's weak error behaves
//! in that regime:
//!
//! * [`coefficients`] — closed-form drift/diffusion model zoo with declared
//!   smoothness regimes, plus assumption validation (boundedness, uniform
//!   ellipticity, Hölder quotients).
//! * [`mollifier`] — bump-kernel convolution smoothing for Hölder fields and
//!   the two-sided projection blend for piecewise-smooth drifts, together
//!   with deviation and derivative blow-up measurements.
//! * [`euler`] — seeded, replayable Euler path batches with Brownian-bridge
//!   common-noise refinement for coupled coarse/fine references.
//! * [`parametrix`] — transition-density evaluation through the frozen
//!   Gaussian proxy series, in continuous and grid-discretized time.
//! * [`weak_error`] — coupled weak-error estimators, kernel density
//!   estimates, convergence-order fits and the rate-formula evaluators.
//!
//! The crate is `no_std`-compatible (with `alloc`); the companion `ewel-lab`
//! crate carries experiment configuration, file formats and the CLI.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod coefficients;
pub mod error;
pub mod euler;
pub mod math;
pub mod mollifier;
pub mod parametrix;
pub mod quad;
pub mod rng;
pub mod weak_error;

pub use error::EwelError;

/// Largest spatial dimension supported by the simulation engine.
pub const MAX_DIM: usize = 3;
