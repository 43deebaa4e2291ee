//! Snapshot builder, annotation store, HTTP API and command
//! implementations behind the `fakescope` binary.

pub mod annotations;
pub mod api;
pub mod commands;
pub mod error;
pub mod snapshot;
pub mod store;

pub use error::{Result, ServiceError};
