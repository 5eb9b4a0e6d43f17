//! Control service: one engine thread owning the simulation, driven by
//! NDJSON commands over TCP or WebSocket on a single port.

mod engine;
pub mod protocol;
mod server;

pub use engine::default_scenario;
pub use protocol::{ErrorCode, Op, Request, Response};
pub use server::{spawn, ServiceConfig, ServiceError, ServiceHandle, DEFAULT_OUTBOX, DEFAULT_PORT, TOKEN_ENV};
