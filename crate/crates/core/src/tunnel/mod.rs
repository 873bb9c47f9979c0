//! Point-to-point encrypted tunnel: key handling, the two-message handshake,
//! transport sessions and the replay window.

pub mod frame;
pub mod handshake;
pub mod keys;
pub mod replay;
pub mod session;

use thiserror::Error;

pub use frame::{Initiation, Response, TransportView, TunnelFrame, TRANSPORT_OVERHEAD};
pub use handshake::{
    accept_initiation, decrypt_initiation, finalize, initiate, respond, HandshakeState, IncomingInitiation,
    InitiationGuard, Psk, Responded, SystemClock, Tai64N, TunnelClock, ZERO_PSK,
};
pub use keys::{decode_key, derive_public, encode_key, generate_keypair, PrivateKey, PublicKey, StaticKeypair};
pub use replay::{ReplayWindow, WINDOW_BITS};
pub use session::{open_with_key, RekeyPolicy, RekeyStatus, TransportSession};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TunnelError {
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("authentication failed")]
    Authentication,
    #[error("initiation timestamp is not newer than the last accepted one")]
    StaleTimestamp,
    #[error("frame addressed to index {got}, expected {expected}")]
    IndexMismatch { expected: u32, got: u32 },
    #[error("counter {0} replayed or outside the window")]
    Replay(u64),
    #[error("session expired")]
    SessionExpired,
}
