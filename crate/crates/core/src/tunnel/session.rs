use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

use super::frame::{transport_header, TransportView, TRANSPORT_OVERHEAD};
use super::keys::KEY_LEN;
use super::replay::ReplayWindow;
use super::TunnelError;

/// Session lifetime limits. Defaults follow WireGuard's timers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RekeyPolicy {
    pub rekey_after_time: Duration,
    pub reject_after_time: Duration,
    pub rekey_after_messages: u64,
    pub reject_after_messages: u64,
}

impl Default for RekeyPolicy {
    fn default() -> Self {
        RekeyPolicy {
            rekey_after_time: Duration::from_secs(120),
            reject_after_time: Duration::from_secs(180),
            rekey_after_messages: 1 << 48,
            reject_after_messages: u64::MAX - (1 << 13),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RekeyStatus {
    Fresh,
    RekeyRecommended,
    Expired,
}

pub(crate) fn aead_nonce(counter: u64) -> Nonce {
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&counter.to_le_bytes());
    Nonce::from(nonce)
}

/// An established tunnel: one sealing direction and one opening direction.
///
/// `seal` and `open` take `&self`, so one sender and one receiver may share a
/// session. The send counter is atomic; the replay window is locked only for
/// the final check-and-mark after the tag verified.
pub struct TransportSession {
    send_key: [u8; KEY_LEN],
    recv_key: [u8; KEY_LEN],
    send_cipher: ChaCha20Poly1305,
    recv_cipher: ChaCha20Poly1305,
    send_counter: AtomicU64,
    recv_window: Mutex<ReplayWindow>,
    local_index: u32,
    remote_index: u32,
    established_at: Duration,
    transcript_hash: [u8; 32],
    policy: RekeyPolicy,
    revoked: AtomicBool,
}

impl std::fmt::Debug for TransportSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransportSession")
            .field("local_index", &self.local_index)
            .field("remote_index", &self.remote_index)
            .field("established_at", &self.established_at)
            .field("messages_sealed", &self.messages_sealed())
            .finish_non_exhaustive()
    }
}

impl TransportSession {
    pub(crate) fn new(
        send_key: [u8; KEY_LEN],
        recv_key: [u8; KEY_LEN],
        local_index: u32,
        remote_index: u32,
        established_at: Duration,
        transcript_hash: [u8; 32],
    ) -> Self {
        TransportSession {
            send_cipher: ChaCha20Poly1305::new(Key::from_slice(&send_key)),
            recv_cipher: ChaCha20Poly1305::new(Key::from_slice(&recv_key)),
            send_key,
            recv_key,
            send_counter: AtomicU64::new(0),
            recv_window: Mutex::new(ReplayWindow::new()),
            local_index,
            remote_index,
            established_at,
            transcript_hash,
            policy: RekeyPolicy::default(),
            revoked: AtomicBool::new(false),
        }
    }

    pub fn with_policy(mut self, policy: RekeyPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn local_index(&self) -> u32 {
        self.local_index
    }

    pub fn remote_index(&self) -> u32 {
        self.remote_index
    }

    pub fn established_at(&self) -> Duration {
        self.established_at
    }

    pub fn transcript_hash(&self) -> &[u8; 32] {
        &self.transcript_hash
    }

    pub fn send_key(&self) -> &[u8; KEY_LEN] {
        &self.send_key
    }

    pub fn recv_key(&self) -> &[u8; KEY_LEN] {
        &self.recv_key
    }

    pub fn messages_sealed(&self) -> u64 {
        self.send_counter.load(Ordering::Relaxed)
    }

    pub fn policy(&self) -> RekeyPolicy {
        self.policy
    }

    /// Marks the session unusable regardless of its age.
    pub fn expire(&self) {
        self.revoked.store(true, Ordering::Relaxed);
    }

    pub fn rekey_status(&self, now: Duration) -> RekeyStatus {
        if self.revoked.load(Ordering::Relaxed) {
            return RekeyStatus::Expired;
        }
        let age = now.saturating_sub(self.established_at);
        let sealed = self.messages_sealed();
        if age >= self.policy.reject_after_time || sealed >= self.policy.reject_after_messages {
            RekeyStatus::Expired
        } else if age >= self.policy.rekey_after_time || sealed >= self.policy.rekey_after_messages {
            RekeyStatus::RekeyRecommended
        } else {
            RekeyStatus::Fresh
        }
    }

    fn ensure_live(&self, now: Duration) -> Result<(), TunnelError> {
        match self.rekey_status(now) {
            RekeyStatus::Expired => Err(TunnelError::SessionExpired),
            _ => Ok(()),
        }
    }

    /// Encrypts `plaintext` into a type-4 frame addressed to the peer's index.
    pub fn seal(&self, now: Duration, plaintext: &[u8]) -> Result<Vec<u8>, TunnelError> {
        self.ensure_live(now)?;
        let limit = self.policy.reject_after_messages;
        let counter = self
            .send_counter
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |c| (c < limit).then_some(c + 1))
            .map_err(|_| TunnelError::SessionExpired)?;
        let mut frame = Vec::with_capacity(plaintext.len() + TRANSPORT_OVERHEAD);
        frame.extend_from_slice(&transport_header(self.remote_index, counter));
        let sealed = self
            .send_cipher
            .encrypt(&aead_nonce(counter), plaintext)
            .expect("chacha20poly1305 encryption cannot fail for in-memory buffers");
        frame.extend_from_slice(&sealed);
        Ok(frame)
    }

    /// Authenticates and decrypts a type-4 frame, enforcing the replay window.
    pub fn open(&self, now: Duration, frame: &[u8]) -> Result<Vec<u8>, TunnelError> {
        let view = TransportView::parse(frame)?;
        if view.receiver_index != self.local_index {
            return Err(TunnelError::IndexMismatch {
                expected: self.local_index,
                got: view.receiver_index,
            });
        }
        self.ensure_live(now)?;
        if view.counter >= self.policy.reject_after_messages {
            return Err(TunnelError::Replay(view.counter));
        }
        if !self.recv_window.lock().unwrap().would_accept(view.counter) {
            return Err(TunnelError::Replay(view.counter));
        }
        let plaintext = self
            .recv_cipher
            .decrypt(&aead_nonce(view.counter), view.ciphertext)
            .map_err(|_| TunnelError::Authentication)?;
        if !self.recv_window.lock().unwrap().check_and_mark(view.counter) {
            return Err(TunnelError::Replay(view.counter));
        }
        Ok(plaintext)
    }
}

/// Decrypts a transport frame with a bare key, without any replay state.
/// Used to inspect captures when the key is known.
pub fn open_with_key(key: &[u8; KEY_LEN], frame: &[u8]) -> Result<(u32, u64, Vec<u8>), TunnelError> {
    let view = TransportView::parse(frame)?;
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let plaintext = cipher
        .decrypt(
            &aead_nonce(view.counter),
            Payload { msg: view.ciphertext, aad: &[] },
        )
        .map_err(|_| TunnelError::Authentication)?;
    Ok((view.receiver_index, view.counter, plaintext))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (TransportSession, TransportSession) {
        let k1 = [1u8; 32];
        let k2 = [2u8; 32];
        let a = TransportSession::new(k1, k2, 10, 20, Duration::ZERO, [0; 32]);
        let b = TransportSession::new(k2, k1, 20, 10, Duration::ZERO, [0; 32]);
        (a, b)
    }

    #[test]
    fn round_trip_and_overhead() {
        let (a, b) = pair();
        let msg = vec![7u8; 1000];
        let frame = a.seal(Duration::ZERO, &msg).unwrap();
        assert_eq!(frame.len(), 1032);
        assert_eq!(b.open(Duration::ZERO, &frame).unwrap(), msg);
    }

    #[test]
    fn consecutive_counters() {
        let (a, _) = pair();
        let f0 = a.seal(Duration::ZERO, b"x").unwrap();
        let f1 = a.seal(Duration::ZERO, b"y").unwrap();
        let c0 = TransportView::parse(&f0).unwrap().counter;
        let c1 = TransportView::parse(&f1).unwrap().counter;
        assert_eq!(c1, c0 + 1);
        assert_eq!(a.messages_sealed(), 2);
    }

    #[test]
    fn replayed_frame_rejected() {
        let (a, b) = pair();
        let f = a.seal(Duration::ZERO, b"once").unwrap();
        b.open(Duration::ZERO, &f).unwrap();
        assert!(matches!(b.open(Duration::ZERO, &f), Err(TunnelError::Replay(0))));
    }

    #[test]
    fn wrong_index_rejected() {
        let (a, _) = pair();
        let f = a.seal(Duration::ZERO, b"hi").unwrap();
        let stranger = TransportSession::new([2; 32], [1; 32], 21, 10, Duration::ZERO, [0; 32]);
        assert!(matches!(stranger.open(Duration::ZERO, &f), Err(TunnelError::IndexMismatch { .. })));
    }

    #[test]
    fn rekey_thresholds() {
        let (a, _) = pair();
        assert_eq!(a.rekey_status(Duration::ZERO), RekeyStatus::Fresh);
        assert_eq!(a.rekey_status(Duration::from_secs(150)), RekeyStatus::RekeyRecommended);
        assert_eq!(a.rekey_status(Duration::from_secs(181)), RekeyStatus::Expired);
        assert!(matches!(
            a.seal(Duration::from_secs(181), b"late"),
            Err(TunnelError::SessionExpired)
        ));
    }

    #[test]
    fn message_limits() {
        let policy = RekeyPolicy { rekey_after_messages: 2, reject_after_messages: 3, ..Default::default() };
        let (a, _) = pair();
        let a = a.with_policy(policy);
        a.seal(Duration::ZERO, b"1").unwrap();
        a.seal(Duration::ZERO, b"2").unwrap();
        assert_eq!(a.rekey_status(Duration::ZERO), RekeyStatus::RekeyRecommended);
        a.seal(Duration::ZERO, b"3").unwrap();
        assert!(matches!(a.seal(Duration::ZERO, b"4"), Err(TunnelError::SessionExpired)));
    }

    #[test]
    fn expire_revokes() {
        let (a, b) = pair();
        let f = a.seal(Duration::ZERO, b"x").unwrap();
        b.expire();
        assert!(matches!(b.open(Duration::ZERO, &f), Err(TunnelError::SessionExpired)));
    }

    #[test]
    fn stateless_open_matches_session() {
        let (a, _) = pair();
        let f = a.seal(Duration::ZERO, b"capture").unwrap();
        let (idx, ctr, pt) = open_with_key(&[1u8; 32], &f).unwrap();
        assert_eq!((idx, ctr, pt.as_slice()), (20, 0, &b"capture"[..]));
    }
}
