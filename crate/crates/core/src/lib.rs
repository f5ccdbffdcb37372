//! Sampling-based model-predictive control for vehicle path following.
//!
//! The toolkit pairs two receding-horizon optimizers — conventional MPPI
//! (perturb an input sequence, reweight by rollout cost) and MPPI-PID
//! (the same update applied to a 9-dim PID gain vector held constant over
//! the horizon) — with a residual-learning vehicle model: an identified
//! physical core plus a small MLP correction on the velocity states, gated
//! by a speed-dependent weight.
//!
//! Module map:
//! - [`dynamics`] — physical model, Euler stepping, MLP inference, residual transition
//! - [`learning`] — least-squares identification, manual-backprop MLP training, recursive R²
//! - [`data`] — synthetic log generation and the preprocessing pipeline
//! - [`path`] — cubic Hermite reference paths, nearest-point queries, tracking errors
//! - [`control`] — input projection, PID law + error basis, MPPI and MPPI-PID planners
//! - [`cost`] — the non-differentiable path-following stage cost
//! - [`analysis`] — ESS diagnostics, sampling-theory validators, input-continuity statistics
//! - [`sim`] — closed-loop experiment engine and the controller × sample-budget matrix
//! - [`config`] — experiment configuration with defaults matching the reference parameter set

pub mod analysis;
pub mod config;
pub mod control;
pub mod cost;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod learning;
pub mod path;
pub mod rng;
pub mod sim;
pub mod tolerances;

pub use error::{Error, Result};
