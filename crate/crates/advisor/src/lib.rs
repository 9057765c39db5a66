//! Advisory HTTP service around the titration engine.
//!
//! Patients, fasting readings and injected doses are recorded as events in an
//! append-only log; the parameter estimate is refitted on every reading and the
//! next dose is recommended on request. Nothing is ever applied automatically.

pub mod api;
pub mod config;
pub mod error;
pub mod patient;
pub mod store;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use error::{Result, ServiceError};
