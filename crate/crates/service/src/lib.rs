//! Long-running service and command-line front end over one persisted
//! claim memory.

pub mod api;
pub mod config;
pub mod error;
pub mod session;
pub mod store;

pub use config::ServiceConfig;
pub use error::ServiceError;
pub use session::{IngestRequest, Session};
