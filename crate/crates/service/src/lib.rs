//! Live teleoperation sessions over WebSocket.
//!
//! [`SessionCore`] holds one planner loop and speaks the message protocol
//! without any I/O; [`Hub`] runs sessions as tasks and manages their
//! lifecycle; [`server`] exposes them on an axum WebSocket endpoint.

pub mod hub;
pub mod protocol;
pub mod server;
pub mod session;

pub use hub::{Attachment, Hub, Outputs, Refusal, ServiceConfig};
pub use protocol::{Envelope, Inbound, Outbound, SCHEMA_VERSION};
pub use server::{router, serve};
pub use session::{CycleMessages, SessionCore};
