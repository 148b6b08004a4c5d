//! Core library for a desk-scale sim-to-sim-to-sim pipeline: a single-track
//! Pacejka reference simulator, learned dynamics models trained on its logs,
//! a batched trajectory-tracking environment distilled from those models, and
//! the numerics (hand-rolled differentiable layers, PPO, evaluation metrics)
//! tying them together.
//!
//! The crate is `no_std`-compatible (with `alloc`); all IO, file formats, and
//! the command-line frontend live in the companion `slipstream-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod exec;
pub mod models;
pub mod nn;
pub mod policy;
pub mod refsim;
pub mod rng;
#[cfg(test)]
pub(crate) mod testutil;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
pub use vehicle::{Action, BodyDelta, SurfaceLabel, VehicleState, CONTROL_DT};
