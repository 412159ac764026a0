//! The session coordinator: role assignment, the record log, replay into a
//! new follower, live relaying, and the promote/demote role swap.
//!
//! [`Session`] is the pure state machine; [`server`] puts it behind TCP and
//! WebSocket listeners.

pub mod server;
mod session;

pub use server::{ServeError, Server, ServerConfig, ServerHandle, ServerSummary, WS_PATH};
pub use session::{
    ConnId, EndReason, Outbound, Phase, Session, SessionConfig, SessionError, SessionSnapshot,
    SWAP_TIMEOUT_MS,
};
