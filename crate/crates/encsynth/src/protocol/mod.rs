//! Client-server encrypted policy synthesis: the client owns keys and the
//! environment; the server owns only ciphertexts and the evaluation
//! contract. A refresh subprotocol (decrypt + re-encrypt at the client)
//! stands in for bootstrapping when the level budget runs out.

mod client;
mod messages;
mod server;
mod transport;

pub use client::{
    extract_policy_at_client, run_session, SessionConfig, SessionOutcome, POSITIVITY_FLOOR,
};
pub use messages::{Envelope, Message, RefreshSlot, SessionMetrics, ABS_MARKER};
pub use server::{error_codes, serve, update_level_floors, SynthServer};
pub use transport::{InProcessTransport, TcpTransport, Transport, MAX_FRAME};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message at offset {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("transport closed")]
    Closed,
    #[error("session error {code}: {detail}")]
    Session { code: u32, detail: String },
    #[error("evaluation error: {0}")]
    He(#[from] crate::he::HeError),
}
