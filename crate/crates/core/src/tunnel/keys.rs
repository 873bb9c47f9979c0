use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use x25519_dalek::X25519_BASEPOINT_BYTES;

use super::TunnelError;

pub const KEY_LEN: usize = 32;

/// Length of a key in its textual (base64) form.
pub const ENCODED_KEY_LEN: usize = 44;

/// A Curve25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_base64(&self) -> String {
        encode_key(&self.0)
    }

    pub fn from_base64(text: &str) -> Result<Self, TunnelError> {
        decode_key(text).map(PublicKey)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_base64())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_base64())
    }
}

/// Clamped Curve25519 scalar. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey([u8; KEY_LEN]);

impl PrivateKey {
    /// Clamps `bytes` and wraps them.
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        PrivateKey(clamp(bytes))
    }

    /// Raw scalar bytes. Callers that persist or move these out of the
    /// owning unit break key locality.
    pub fn expose_secret(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(x25519_dalek::x25519(self.0, X25519_BASEPOINT_BYTES))
    }

    pub(crate) fn diffie_hellman(&self, peer: &PublicKey) -> [u8; KEY_LEN] {
        x25519_dalek::x25519(self.0, peer.0)
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(<redacted>)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticKeypair {
    private: PrivateKey,
    public: PublicKey,
}

impl StaticKeypair {
    pub fn from_private(bytes: [u8; KEY_LEN]) -> Self {
        let private = PrivateKey::from_bytes(bytes);
        let public = private.public_key();
        StaticKeypair { private, public }
    }

    pub fn private(&self) -> &PrivateKey {
        &self.private
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }
}

/// Draws 32 bytes from `rng`, clamps them and derives the public point.
pub fn generate_keypair<R: RngCore + CryptoRng>(rng: &mut R) -> StaticKeypair {
    let mut bytes = [0u8; KEY_LEN];
    rng.fill_bytes(&mut bytes);
    StaticKeypair::from_private(bytes)
}

/// X25519(clamp(private), 9).
pub fn derive_public(private: &[u8; KEY_LEN]) -> PublicKey {
    PrivateKey::from_bytes(*private).public_key()
}

pub fn clamp(mut bytes: [u8; KEY_LEN]) -> [u8; KEY_LEN] {
    bytes[0] &= 248;
    bytes[31] &= 127;
    bytes[31] |= 64;
    bytes
}

pub fn encode_key(key: &[u8; KEY_LEN]) -> String {
    STANDARD.encode(key)
}

pub fn decode_key(text: &str) -> Result<[u8; KEY_LEN], TunnelError> {
    if text.len() != ENCODED_KEY_LEN || !text.ends_with('=') {
        return Err(TunnelError::MalformedKey(format!(
            "expected {ENCODED_KEY_LEN} base64 characters ending in '=', got {} characters",
            text.len()
        )));
    }
    let raw = STANDARD
        .decode(text)
        .map_err(|e| TunnelError::MalformedKey(e.to_string()))?;
    raw.try_into()
        .map_err(|_| TunnelError::MalformedKey("decoded key is not 32 bytes".into()))
}
