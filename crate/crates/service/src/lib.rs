//! The deployable index: token service, HTTP API, HL7 intake, and the
//! event-log store the registry state is rebuilt from.

pub mod audit;
pub mod auth;
pub mod clock;
pub mod http;
pub mod intake;
mod service;
pub mod store;

pub use service::{Notification, Service, ServiceConfig, ServiceError, DEFAULT_SNAPSHOT_EVERY};
