//! Mild solutions of semilinear stochastic evolution equations
//! `dX = (A X + f(t, X)) dt + g(t, X) dW + int k(t, xi, X) N~(dt, dxi)`
//! with semimonotone drift, on finite-dimensional truncations.
//!
//! The crate is organised bottom-up:
//!
//! * [`hilbert`]: weighted coordinate spaces and exact semigroup actions,
//! * [`coefficients`]: drift/diffusion/jump coefficients, hypothesis probes and lifts,
//! * [`noise`]: seeded Wiener and Poisson noise, martingale increments,
//! * [`convolution`]: stochastic convolutions and the pathwise/maximal inequality statistics,
//! * [`solver`]: resolvent steps, the inner deterministic equation, Picard iteration,
//! * [`verification`]: ensemble checks of continuity, stability and the Markov property,
//! * [`scenarios`]: ready-made systems,
//! * [`io`]: configuration, CSV/JSON output and run manifests.

pub mod coefficients;
pub mod convolution;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod io;
pub mod noise;
pub mod path;
pub mod scenarios;
pub mod solver;
pub mod verification;

pub use error::{Error, Result};
