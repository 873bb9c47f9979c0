//! Emulated EPS network functions and their message set.

mod codec;
mod nf;
mod subscriber;

use std::net::Ipv4Addr;
use std::time::Duration;

use thiserror::Error;

pub use codec::{gtp_overhead, EpsMessage, KINDS};
pub use nf::*;
pub use subscriber::{read_subscribers, valid_imsi, write_subscribers, SubscriberDb, SubscriberRecord};

pub const DEFAULT_REALM: &str = "epc.mnc001.mcc001.3gppnetwork.org";
pub const DEFAULT_APN: &str = "oai.ipv4";
pub const DEFAULT_HSS_SERVICE_TIME: Duration = Duration::from_micros(5400);
pub const UE_POOL_PREFIX: [u8; 3] = [12, 1, 1];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EpsError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("{nf} does not handle {kind}")]
    Unexpected { nf: &'static str, kind: &'static str },
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown tunnel endpoint id {0}")]
    UnknownTeid(u32),
    #[error("no bearer for UE {0}")]
    UnknownUe(Ipv4Addr),
    #[error("UE is not attached")]
    NotAttached,
    #[error("invalid subscriber record: {0}")]
    InvalidSubscriber(String),
}
