//! Fixed little-endian wire layouts for the three tunnel message types.
//!
//! ```text
//! initiation (116 B): type=1 | reserved[3] | sender_index | ephemeral[32] | enc_static[48] | enc_timestamp[28]
//! response    (60 B): type=2 | reserved[3] | sender_index | receiver_index | ephemeral[32] | enc_empty[16]
//! transport (32+n B): type=4 | reserved[3] | receiver_index | counter(u64) | ciphertext[n+16]
//! ```

use super::keys::{PublicKey, KEY_LEN};
use super::TunnelError;

pub const MSG_INITIATION: u8 = 1;
pub const MSG_RESPONSE: u8 = 2;
pub const MSG_TRANSPORT: u8 = 4;

pub const AEAD_TAG_LEN: usize = 16;
pub const TIMESTAMP_LEN: usize = 12;

pub const INITIATION_LEN: usize = 4 + 4 + KEY_LEN + (KEY_LEN + AEAD_TAG_LEN) + (TIMESTAMP_LEN + AEAD_TAG_LEN);
pub const RESPONSE_LEN: usize = 4 + 4 + 4 + KEY_LEN + AEAD_TAG_LEN;
pub const TRANSPORT_HEADER_LEN: usize = 16;

/// Bytes a transport frame adds on top of its plaintext.
pub const TRANSPORT_OVERHEAD: usize = TRANSPORT_HEADER_LEN + AEAD_TAG_LEN;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Initiation {
    pub sender_index: u32,
    pub ephemeral: PublicKey,
    pub enc_static: [u8; KEY_LEN + AEAD_TAG_LEN],
    pub enc_timestamp: [u8; TIMESTAMP_LEN + AEAD_TAG_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub sender_index: u32,
    pub receiver_index: u32,
    pub ephemeral: PublicKey,
    pub enc_empty: [u8; AEAD_TAG_LEN],
}

/// Borrowed view of a transport frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransportView<'a> {
    pub receiver_index: u32,
    pub counter: u64,
    pub ciphertext: &'a [u8],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TunnelFrame<'a> {
    Initiation(Initiation),
    Response(Response),
    Transport(TransportView<'a>),
}

impl<'a> TunnelFrame<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, TunnelError> {
        match message_type(bytes)? {
            MSG_INITIATION => Initiation::parse(bytes).map(TunnelFrame::Initiation),
            MSG_RESPONSE => Response::parse(bytes).map(TunnelFrame::Response),
            MSG_TRANSPORT => TransportView::parse(bytes).map(TunnelFrame::Transport),
            other => Err(TunnelError::MalformedFrame(format!("unknown message type {other}"))),
        }
    }
}

/// Returns the message type after checking the reserved bytes are zero.
pub fn message_type(bytes: &[u8]) -> Result<u8, TunnelError> {
    if bytes.len() < 4 {
        return Err(TunnelError::MalformedFrame(format!("{} bytes is too short", bytes.len())));
    }
    if bytes[1..4] != [0, 0, 0] {
        return Err(TunnelError::MalformedFrame("reserved bytes are not zero".into()));
    }
    Ok(bytes[0])
}

fn header(msg_type: u8) -> [u8; 4] {
    [msg_type, 0, 0, 0]
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_array<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().unwrap()
}

fn expect(bytes: &[u8], msg_type: u8, len: usize) -> Result<(), TunnelError> {
    if message_type(bytes)? != msg_type {
        return Err(TunnelError::MalformedFrame(format!(
            "expected message type {msg_type}, got {}",
            bytes[0]
        )));
    }
    if bytes.len() != len {
        return Err(TunnelError::MalformedFrame(format!(
            "type {msg_type} frame must be {len} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(())
}

impl Initiation {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(INITIATION_LEN);
        out.extend_from_slice(&header(MSG_INITIATION));
        out.extend_from_slice(&self.sender_index.to_le_bytes());
        out.extend_from_slice(self.ephemeral.as_bytes());
        out.extend_from_slice(&self.enc_static);
        out.extend_from_slice(&self.enc_timestamp);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, TunnelError> {
        expect(bytes, MSG_INITIATION, INITIATION_LEN)?;
        Ok(Initiation {
            sender_index: read_u32(bytes, 4),
            ephemeral: PublicKey(read_array(bytes, 8)),
            enc_static: read_array(bytes, 40),
            enc_timestamp: read_array(bytes, 88),
        })
    }

    /// The unencrypted prefix that is bound into the transcript.
    pub(crate) fn prologue(&self) -> [u8; 8] {
        let mut p = [0u8; 8];
        p[..4].copy_from_slice(&header(MSG_INITIATION));
        p[4..].copy_from_slice(&self.sender_index.to_le_bytes());
        p
    }
}

impl Response {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RESPONSE_LEN);
        out.extend_from_slice(&header(MSG_RESPONSE));
        out.extend_from_slice(&self.sender_index.to_le_bytes());
        out.extend_from_slice(&self.receiver_index.to_le_bytes());
        out.extend_from_slice(self.ephemeral.as_bytes());
        out.extend_from_slice(&self.enc_empty);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, TunnelError> {
        expect(bytes, MSG_RESPONSE, RESPONSE_LEN)?;
        Ok(Response {
            sender_index: read_u32(bytes, 4),
            receiver_index: read_u32(bytes, 8),
            ephemeral: PublicKey(read_array(bytes, 12)),
            enc_empty: read_array(bytes, 44),
        })
    }

    pub(crate) fn prologue(&self) -> [u8; 12] {
        let mut p = [0u8; 12];
        p[..4].copy_from_slice(&header(MSG_RESPONSE));
        p[4..8].copy_from_slice(&self.sender_index.to_le_bytes());
        p[8..].copy_from_slice(&self.receiver_index.to_le_bytes());
        p
    }
}

impl<'a> TransportView<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, TunnelError> {
        if message_type(bytes)? != MSG_TRANSPORT {
            return Err(TunnelError::MalformedFrame(format!(
                "expected message type {MSG_TRANSPORT}, got {}",
                bytes[0]
            )));
        }
        if bytes.len() < TRANSPORT_OVERHEAD {
            return Err(TunnelError::MalformedFrame(format!(
                "transport frame of {} bytes is shorter than its {TRANSPORT_OVERHEAD}-byte overhead",
                bytes.len()
            )));
        }
        Ok(TransportView {
            receiver_index: read_u32(bytes, 4),
            counter: u64::from_le_bytes(read_array(bytes, 8)),
            ciphertext: &bytes[TRANSPORT_HEADER_LEN..],
        })
    }
}

pub(crate) fn transport_header(receiver_index: u32, counter: u64) -> [u8; TRANSPORT_HEADER_LEN] {
    let mut h = [0u8; TRANSPORT_HEADER_LEN];
    h[..4].copy_from_slice(&header(MSG_TRANSPORT));
    h[4..8].copy_from_slice(&receiver_index.to_le_bytes());
    h[8..].copy_from_slice(&counter.to_le_bytes());
    h
}
