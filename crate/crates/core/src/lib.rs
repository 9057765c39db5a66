//! Adaptive receding-horizon titration of once-daily basal insulin.
//!
//! The crate is organised bottom-up:
//!
//! - [`pk`]: closed-form biexponential plasma insulin from a dose history.
//! - [`fasting`]: the two-parameter fasting glucose model and its variability envelope.
//! - [`estimator`]: online maximum-a-posteriori fit of the model parameters.
//! - [`controller`]: the receding-horizon optimizer and the threshold titration rule.
//! - [`avatar`]: deterministic synthetic virtual patients used as the plant.
//! - [`trial`]: scenario runner, outcome metrics, target attainment and export.

pub mod avatar;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod fasting;
pub mod pk;
pub mod rng;
pub mod trial;

pub use error::{Error, Result};

/// Simulation and therapy time, in whole minutes since the start of therapy.
pub type Minutes = i64;

pub const MINUTES_PER_DAY: Minutes = 1440;

/// CGM sampling period.
pub const SAMPLE_MINUTES: Minutes = 5;
