//! Active learning for gaze-target detection on a synthetic gaze world.

pub mod acquisition;
pub mod alloop;
pub mod augment;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod hmap;
pub mod learner;
pub mod metrics;
pub mod seed;
pub mod world;

pub use error::{Error, Result};
