//! Two-message IK-pattern handshake.
//!
//! The mix sequence mirrors WireGuard (initiation: e, es, s, ss, timestamp;
//! response: e, ee, se, psk) with SHA-256 as the transcript hash and
//! HKDF-HMAC-SHA256 as the chaining KDF. The unencrypted frame prefix
//! (type, reserved bytes and session indices) is hashed into the transcript
//! before the ephemeral key so that tampering with it breaks the AEAD tags.

use std::collections::HashMap;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::frame::{Initiation, Response, AEAD_TAG_LEN, TIMESTAMP_LEN};
use super::keys::{generate_keypair, PublicKey, StaticKeypair, KEY_LEN};
use super::session::{aead_nonce, TransportSession};
use super::TunnelError;

pub const PROTOCOL_LABEL: &[u8] = b"sliceguard v1 tunnel";

/// Pre-shared symmetric key mixed into the response; all-zero when unused.
pub type Psk = [u8; KEY_LEN];

pub const ZERO_PSK: Psk = [0u8; KEY_LEN];

/// Source of handshake timestamps.
pub trait TunnelClock {
    /// Time since the clock's epoch. Must not decrease between calls.
    fn now(&self) -> Duration;
}

impl TunnelClock for Duration {
    fn now(&self) -> Duration {
        *self
    }
}

/// Wall clock measured from the Unix epoch.
#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl TunnelClock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default()
    }
}

/// 12-byte TAI64N label: big-endian seconds (offset by 2^62 + 10) then nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tai64N([u8; TIMESTAMP_LEN]);

impl Tai64N {
    const BASE: u64 = (1 << 62) + 10;

    pub fn from_duration(d: Duration) -> Self {
        let mut out = [0u8; TIMESTAMP_LEN];
        out[..8].copy_from_slice(&(Self::BASE + d.as_secs()).to_be_bytes());
        out[8..].copy_from_slice(&d.subsec_nanos().to_be_bytes());
        Tai64N(out)
    }

    pub fn as_bytes(&self) -> &[u8; TIMESTAMP_LEN] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

fn hash(a: &[u8], b: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(a);
    h.update(b);
    h.finalize().into()
}

fn kdf<const N: usize>(chaining_key: &[u8; 32], input: &[u8]) -> [[u8; 32]; N] {
    let hk = Hkdf::<Sha256>::new(Some(chaining_key), input);
    let mut okm = vec![0u8; 32 * N];
    hk.expand(&[], &mut okm).expect("at most 3 blocks of HKDF output");
    let mut out = [[0u8; 32]; N];
    for (i, chunk) in okm.chunks_exact(32).enumerate() {
        out[i].copy_from_slice(chunk);
    }
    out
}

fn aead_seal(key: &[u8; 32], plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .encrypt(&aead_nonce(0), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption cannot fail for in-memory buffers")
}

fn aead_open(key: &[u8; 32], ciphertext: &[u8], aad: &[u8]) -> Result<Vec<u8>, TunnelError> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(&aead_nonce(0), Payload { msg: ciphertext, aad })
        .map_err(|_| TunnelError::Authentication)
}

fn dh(local: &StaticKeypair, remote: &PublicKey) -> Result<[u8; 32], TunnelError> {
    let shared = local.private().diffie_hellman(remote);
    // low-order points produce an all-zero secret
    if shared == [0u8; 32] {
        return Err(TunnelError::Authentication);
    }
    Ok(shared)
}

fn initial_chain(responder_static: &PublicKey) -> ([u8; 32], [u8; 32]) {
    let ck: [u8; 32] = Sha256::digest(PROTOCOL_LABEL).into();
    let h = hash(&ck, responder_static.as_bytes());
    (ck, h)
}

/// Initiator state between sending message 1 and receiving message 2.
#[derive(Clone, Debug)]
pub struct HandshakeState {
    chaining_key: [u8; 32],
    transcript_hash: [u8; 32],
    local_ephemeral: StaticKeypair,
    local_static: StaticKeypair,
    remote_static: PublicKey,
    local_index: u32,
    psk: Psk,
    role: Role,
}

impl HandshakeState {
    pub fn local_index(&self) -> u32 {
        self.local_index
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn remote_static(&self) -> PublicKey {
        self.remote_static
    }

    pub fn local_ephemeral_public(&self) -> PublicKey {
        self.local_ephemeral.public()
    }

    pub fn chaining_key(&self) -> &[u8; 32] {
        &self.chaining_key
    }

    pub fn transcript_hash(&self) -> &[u8; 32] {
        &self.transcript_hash
    }
}

/// Builds message 1 towards `remote_public`.
pub fn initiate<C, R>(
    local: &StaticKeypair,
    remote_public: &PublicKey,
    psk: &Psk,
    local_index: u32,
    clock: &C,
    rng: &mut R,
) -> Result<(HandshakeState, Initiation), TunnelError>
where
    C: TunnelClock + ?Sized,
    R: RngCore + CryptoRng,
{
    let (mut ck, mut h) = initial_chain(remote_public);
    let ephemeral = generate_keypair(rng);
    let mut msg = Initiation {
        sender_index: local_index,
        ephemeral: ephemeral.public(),
        enc_static: [0; KEY_LEN + AEAD_TAG_LEN],
        enc_timestamp: [0; TIMESTAMP_LEN + AEAD_TAG_LEN],
    };
    h = hash(&h, &msg.prologue());
    h = hash(&h, msg.ephemeral.as_bytes());
    [ck] = kdf(&ck, msg.ephemeral.as_bytes());

    let [next_ck, key] = kdf(&ck, &dh(&ephemeral, remote_public)?);
    ck = next_ck;
    msg.enc_static.copy_from_slice(&aead_seal(&key, local.public().as_bytes(), &h));
    h = hash(&h, &msg.enc_static);

    let [next_ck, key] = kdf(&ck, &dh(local, remote_public)?);
    ck = next_ck;
    let stamp = Tai64N::from_duration(clock.now());
    msg.enc_timestamp.copy_from_slice(&aead_seal(&key, stamp.as_bytes(), &h));
    h = hash(&h, &msg.enc_timestamp);

    let state = HandshakeState {
        chaining_key: ck,
        transcript_hash: h,
        local_ephemeral: ephemeral,
        local_static: local.clone(),
        remote_static: *remote_public,
        local_index,
        psk: *psk,
        role: Role::Initiator,
    };
    Ok((state, msg))
}

/// Message 1 after the responder decrypted it. The initiator's identity is
/// available for policy checks before anything is committed.
#[derive(Clone, Debug)]
pub struct IncomingInitiation {
    chaining_key: [u8; 32],
    transcript_hash: [u8; 32],
    initiator_static: PublicKey,
    initiator_ephemeral: PublicKey,
    initiator_index: u32,
    timestamp: Tai64N,
}

impl IncomingInitiation {
    pub fn initiator_static(&self) -> PublicKey {
        self.initiator_static
    }

    pub fn initiator_index(&self) -> u32 {
        self.initiator_index
    }

    pub fn timestamp(&self) -> Tai64N {
        self.timestamp
    }
}

pub fn decrypt_initiation(local: &StaticKeypair, msg: &Initiation) -> Result<IncomingInitiation, TunnelError> {
    let (mut ck, mut h) = initial_chain(&local.public());
    h = hash(&h, &msg.prologue());
    h = hash(&h, msg.ephemeral.as_bytes());
    [ck] = kdf(&ck, msg.ephemeral.as_bytes());

    let [next_ck, key] = kdf(&ck, &dh(local, &msg.ephemeral)?);
    ck = next_ck;
    let static_bytes = aead_open(&key, &msg.enc_static, &h)?;
    let initiator_static = PublicKey(static_bytes.try_into().map_err(|_| TunnelError::Authentication)?);
    h = hash(&h, &msg.enc_static);

    let [next_ck, key] = kdf(&ck, &dh(local, &initiator_static)?);
    ck = next_ck;
    let stamp = aead_open(&key, &msg.enc_timestamp, &h)?;
    let timestamp = Tai64N(stamp.try_into().map_err(|_| TunnelError::Authentication)?);
    h = hash(&h, &msg.enc_timestamp);

    Ok(IncomingInitiation {
        chaining_key: ck,
        transcript_hash: h,
        initiator_static,
        initiator_ephemeral: msg.ephemeral,
        initiator_index: msg.sender_index,
        timestamp,
    })
}

/// Builds message 2 and the responder's transport session.
pub fn accept_initiation<C, R>(
    incoming: &IncomingInitiation,
    psk: &Psk,
    local_index: u32,
    clock: &C,
    rng: &mut R,
) -> Result<(Response, TransportSession), TunnelError>
where
    C: TunnelClock + ?Sized,
    R: RngCore + CryptoRng,
{
    let mut ck = incoming.chaining_key;
    let mut h = incoming.transcript_hash;
    let ephemeral = generate_keypair(rng);
    let mut msg = Response {
        sender_index: local_index,
        receiver_index: incoming.initiator_index,
        ephemeral: ephemeral.public(),
        enc_empty: [0; AEAD_TAG_LEN],
    };
    h = hash(&h, &msg.prologue());
    h = hash(&h, msg.ephemeral.as_bytes());
    [ck] = kdf(&ck, msg.ephemeral.as_bytes());
    [ck] = kdf(&ck, &dh(&ephemeral, &incoming.initiator_ephemeral)?);
    [ck] = kdf(&ck, &dh(&ephemeral, &incoming.initiator_static)?);
    let [next_ck, tau, key] = kdf(&ck, psk);
    ck = next_ck;
    h = hash(&h, &tau);
    msg.enc_empty.copy_from_slice(&aead_seal(&key, &[], &h));
    h = hash(&h, &msg.enc_empty);

    let [initiator_send, responder_send] = kdf(&ck, &[]);
    let session = TransportSession::new(
        responder_send,
        initiator_send,
        local_index,
        incoming.initiator_index,
        clock.now(),
        h,
    );
    Ok((msg, session))
}

/// Remembers the greatest initiation timestamp seen per initiator key.
#[derive(Clone, Debug, Default)]
pub struct InitiationGuard {
    greatest: HashMap<PublicKey, Tai64N>,
}

impl InitiationGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&self, incoming: &IncomingInitiation) -> Result<(), TunnelError> {
        match self.greatest.get(&incoming.initiator_static) {
            Some(seen) if incoming.timestamp <= *seen => Err(TunnelError::StaleTimestamp),
            _ => Ok(()),
        }
    }

    pub fn record(&mut self, incoming: &IncomingInitiation) {
        let entry = self.greatest.entry(incoming.initiator_static).or_insert(incoming.timestamp);
        if incoming.timestamp > *entry {
            *entry = incoming.timestamp;
        }
    }
}

/// Result of a successful [`respond`].
#[derive(Debug)]
pub struct Responded {
    pub response: Response,
    pub session: TransportSession,
    pub initiator_static: PublicKey,
}

/// Decrypts message 1, enforces timestamp monotonicity and builds message 2.
pub fn respond<C, R>(
    local: &StaticKeypair,
    psk: &Psk,
    msg: &Initiation,
    local_index: u32,
    guard: &mut InitiationGuard,
    clock: &C,
    rng: &mut R,
) -> Result<Responded, TunnelError>
where
    C: TunnelClock + ?Sized,
    R: RngCore + CryptoRng,
{
    let incoming = decrypt_initiation(local, msg)?;
    guard.check(&incoming)?;
    let (response, session) = accept_initiation(&incoming, psk, local_index, clock, rng)?;
    guard.record(&incoming);
    Ok(Responded { response, session, initiator_static: incoming.initiator_static })
}

/// Consumes message 2 and yields the initiator's transport session.
pub fn finalize<C>(state: HandshakeState, msg: &Response, clock: &C) -> Result<TransportSession, TunnelError>
where
    C: TunnelClock + ?Sized,
{
    if state.role != Role::Initiator {
        return Err(TunnelError::MalformedFrame("finalize called on a responder state".into()));
    }
    if msg.receiver_index != state.local_index {
        return Err(TunnelError::IndexMismatch { expected: state.local_index, got: msg.receiver_index });
    }
    let mut ck = state.chaining_key;
    let mut h = state.transcript_hash;
    h = hash(&h, &msg.prologue());
    h = hash(&h, msg.ephemeral.as_bytes());
    [ck] = kdf(&ck, msg.ephemeral.as_bytes());
    [ck] = kdf(&ck, &dh(&state.local_ephemeral, &msg.ephemeral)?);
    [ck] = kdf(&ck, &dh(&state.local_static, &msg.ephemeral)?);
    let [next_ck, tau, key] = kdf(&ck, &state.psk);
    ck = next_ck;
    h = hash(&h, &tau);
    aead_open(&key, &msg.enc_empty, &h)?;
    h = hash(&h, &msg.enc_empty);

    let [initiator_send, responder_send] = kdf(&ck, &[]);
    Ok(TransportSession::new(
        initiator_send,
        responder_send,
        state.local_index,
        msg.sender_index,
        clock.now(),
        h,
    ))
}
