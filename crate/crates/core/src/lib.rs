//! Mutual-information latent world models for model-based control from pixels.
//!
//! The crate is layered bottom-up:
//!
//! - [`diffcore`]: tensors, reverse-mode differentiation, Gaussian utilities
//! - [`envs`]: toy pixel environments with per-step distractor sprites
//! - [`model`]: encoder, latent dynamics, filter, reward head, contrastive and
//!   reconstruction objectives, checkpoints
//! - [`planner`]: cross-entropy-method planning wrapped in model-predictive control
//! - [`agent`]: replay storage, chunk sampling, optimisation, the training loop
//! - [`expcli`]: experiment configs, multi-seed runs, metrics CSV, plots, reports

pub mod agent;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod expcli;
pub mod model;
pub mod planner;

pub use error::{Error, Result};
