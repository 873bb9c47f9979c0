//! Unit-local runtime: tunnel interfaces, peers and the data path of one VNF.
//! Private keys never leave this module.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::descriptors::Day0Config;
use crate::eps::Nf;
use crate::netem::{Fabric, FrameId, NetError, NodeId, QosClass, SendOptions};
use crate::relation_bus::RelationId;
use crate::tunnel::{
    self, finalize, generate_keypair, initiate, HandshakeState, InitiationGuard, PublicKey, RekeyStatus, StaticKeypair,
    TransportSession, TunnelError, TunnelFrame, TRANSPORT_OVERHEAD, ZERO_PSK,
};

pub const BASE_PORT: u16 = 51820;
/// Largest application payload carried in one tunnel frame.
pub const MAX_TUNNELED_PAYLOAD: usize = 1420;
/// Interval before an unanswered initiation is retransmitted.
pub const REKEY_TIMEOUT: Duration = Duration::from_secs(5);
/// Port used by plaintext application traffic.
pub const APP_PORT: u16 = 9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UnitError {
    #[error("no established session on {0}")]
    NoSession(String),
    #[error("no interface {0}")]
    NoInterface(String),
    #[error("payload of {size} bytes exceeds the {cap}-byte limit")]
    TooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tunnel(#[from] TunnelError),
}

/// Public peer data, as learned from a relation bag or an add-peer action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerSpec {
    pub public_key: PublicKey,
    pub endpoint: Ipv4Addr,
    pub port: u16,
    pub tunnel_address: Option<Ipv4Addr>,
    pub allowed_cidrs: String,
}

pub struct Peer {
    pub spec: PeerSpec,
    pub node: NodeId,
    current: Option<TransportSession>,
    previous: Option<TransportSession>,
    /// Responder-side session not yet confirmed by inbound data.
    next: Option<TransportSession>,
    pending: Option<HandshakeState>,
    pub handshakes: u32,
}

impl Peer {
    pub fn session(&self) -> Option<&TransportSession> {
        self.current.as_ref().or(self.next.as_ref())
    }

    pub fn established(&self) -> bool {
        self.session().is_some()
    }

    /// Both sides have used the current session.
    pub fn confirmed(&self) -> bool {
        self.current.is_some()
    }

    pub fn current_since(&self, t: Duration) -> bool {
        self.current.as_ref().is_some_and(|s| s.established_at() >= t)
    }
}

pub struct WgInterface {
    pub name: String,
    /// Fabric interface the tunnel rides on, once known.
    pub link_iface: Option<String>,
    pub relation: Option<RelationId>,
    keypair: StaticKeypair,
    pub port: u16,
    pub address: Ipv4Addr,
    pub prefix_len: u8,
    pub initiator: bool,
    pub peers: Vec<Peer>,
}

impl WgInterface {
    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn established(&self) -> bool {
        !self.peers.is_empty() && self.peers.iter().all(Peer::established)
    }
}

/// Public view of one tunnel for state dumps.
#[derive(Clone, Debug, Serialize)]
pub struct TunnelInfo {
    pub interface: String,
    pub link_iface: Option<String>,
    pub port: u16,
    pub address: String,
    pub public_key: String,
    pub peers: Vec<PeerInfo>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PeerInfo {
    pub public_key: String,
    pub endpoint: String,
    pub port: u16,
    pub established: bool,
    pub local_index: Option<u32>,
    pub remote_index: Option<u32>,
    pub established_at_us: Option<u64>,
    pub handshakes: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct UnitStats {
    pub rejected_plaintext: u64,
    pub rejected_frames: u64,
    pub handshakes_completed: u64,
    pub app_frames_in: u64,
    pub app_frames_out: u64,
    pub nf_errors: u64,
}

/// Side effects the runtime must schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnitEffect {
    ArmRetry { wg: String, peer: usize },
    Established { wg: String, peer: usize },
}

pub enum Received {
    App(Vec<u8>),
    Control,
    Rejected,
}

pub struct Unit {
    pub name: String,
    pub vnfd: String,
    pub member_index: String,
    pub node: NodeId,
    pub day0: Option<Day0Config>,
    pub hostname: Option<String>,
    pub class: QosClass,
    pub nf: Option<Nf>,
    pub stats: UnitStats,
    /// Interfaces on which only tunnel frames are accepted.
    guarded: BTreeSet<String>,
    wg: BTreeMap<String, WgInterface>,
    indices: BTreeMap<u32, (String, usize)>,
    guard: InitiationGuard,
    rng: ChaCha20Rng,
    next_port: u16,
}

impl Unit {
    pub fn new(name: &str, vnfd: &str, member_index: &str, node: NodeId, rng: ChaCha20Rng) -> Self {
        Unit {
            name: name.to_string(),
            vnfd: vnfd.to_string(),
            member_index: member_index.to_string(),
            node,
            day0: None,
            hostname: None,
            class: 0,
            nf: None,
            stats: UnitStats::default(),
            guarded: BTreeSet::new(),
            wg: BTreeMap::new(),
            indices: BTreeMap::new(),
            guard: InitiationGuard::new(),
            rng,
            next_port: BASE_PORT,
        }
    }

    pub fn guard_interface(&mut self, iface: &str) {
        self.guarded.insert(iface.to_string());
    }

    pub fn is_guarded(&self, iface: &str) -> bool {
        self.guarded.contains(iface)
    }

    pub fn wg(&self, name: &str) -> Option<&WgInterface> {
        self.wg.get(name)
    }

    pub fn wg_interfaces(&self) -> impl Iterator<Item = &WgInterface> {
        self.wg.values()
    }

    pub fn wg_for_relation(&self, rel: RelationId) -> Option<&WgInterface> {
        self.wg.values().find(|w| w.relation == Some(rel))
    }

    /// Creates a tunnel interface with a fresh key pair and the next free port.
    pub fn create_wg(
        &mut self,
        name: &str,
        link_iface: Option<&str>,
        address: Ipv4Addr,
        prefix_len: u8,
        initiator: bool,
        relation: Option<RelationId>,
    ) -> &WgInterface {
        let keypair = generate_keypair(&mut self.rng);
        let port = self.next_port;
        self.next_port += 1;
        if let Some(l) = link_iface {
            self.guarded.insert(l.to_string());
        }
        self.wg.insert(
            name.to_string(),
            WgInterface {
                name: name.to_string(),
                link_iface: link_iface.map(str::to_string),
                relation,
                keypair,
                port,
                address,
                prefix_len,
                initiator,
                peers: Vec::new(),
            },
        );
        &self.wg[name]
    }

    /// Replaces the interface key. Existing sessions stay usable until replaced.
    pub fn rotate_key(&mut self, wg: &str) -> Option<PublicKey> {
        let keypair = generate_keypair(&mut self.rng);
        let w = self.wg.get_mut(wg)?;
        w.keypair = keypair;
        for p in &mut w.peers {
            p.pending = None;
        }
        Some(w.public_key())
    }

    pub fn bind_link(&mut self, wg: &str, link_iface: &str) {
        if let Some(w) = self.wg.get_mut(wg) {
            w.link_iface = Some(link_iface.to_string());
            self.guarded.insert(link_iface.to_string());
        }
    }

    /// Installs or updates a peer. Returns the peer slot and whether anything changed.
    pub fn apply_peer(&mut self, wg: &str, spec: PeerSpec, node: NodeId) -> Option<(usize, bool)> {
        let w = self.wg.get_mut(wg)?;
        if let Some(i) = w.peers.iter().position(|p| p.spec == spec) {
            return Some((i, false));
        }
        // same remote node with new data (e.g. a rotated key) replaces the entry
        if let Some(i) = w.peers.iter().position(|p| p.node == node) {
            let p = &mut w.peers[i];
            let key_changed = p.spec.public_key != spec.public_key;
            p.spec = spec;
            if key_changed {
                p.pending = None;
            }
            return Some((i, true));
        }
        w.peers.push(Peer {
            spec,
            node,
            current: None,
            previous: None,
            next: None,
            pending: None,
            handshakes: 0,
        });
        Some((w.peers.len() - 1, true))
    }

    fn fresh_index(&mut self) -> u32 {
        loop {
            let i = self.rng.next_u32();
            if i != 0 && !self.indices.contains_key(&i) {
                return i;
            }
        }
    }

    /// Sends a handshake initiation to peer `peer` of `wg`.
    pub fn initiate(&mut self, fab: &mut Fabric, wg: &str, peer: usize, effects: &mut Vec<UnitEffect>) -> Result<(), UnitError> {
        let index = self.fresh_index();
        let now = fab.now();
        let w = self.wg.get_mut(wg).ok_or_else(|| UnitError::NoInterface(wg.into()))?;
        let link = w.link_iface.clone().ok_or_else(|| UnitError::NoInterface(wg.into()))?;
        let p = w.peers.get_mut(peer).ok_or_else(|| UnitError::NoInterface(wg.into()))?;
        let (state, msg) = initiate(&w.keypair, &p.spec.public_key, &ZERO_PSK, index, &now, &mut self.rng)?;
        if let Some(old) = p.pending.replace(state) {
            self.indices.remove(&old.local_index());
        }
        let (node, src_port, dst_port) = (p.node, w.port, p.spec.port);
        self.indices.insert(index, (wg.to_string(), peer));
        let opts = SendOptions { class: self.class, tunneled: false, src_port, dst_port };
        fab.send(self.node, &link, node, &msg.to_bytes(), opts)?;
        effects.push(UnitEffect::ArmRetry { wg: wg.to_string(), peer });
        Ok(())
    }

    pub fn peer(&self, wg: &str, node: NodeId) -> Option<&Peer> {
        self.wg.get(wg)?.peers.iter().find(|p| p.node == node)
    }

    /// Starts a handshake with every peer of `wg`.
    pub fn initiate_all(&mut self, fab: &mut Fabric, wg: &str, effects: &mut Vec<UnitEffect>) -> Result<(), UnitError> {
        let n = self.wg.get(wg).map_or(0, |w| w.peers.len());
        for i in 0..n {
            self.initiate(fab, wg, i, effects)?;
        }
        Ok(())
    }

    /// Whether a retry timer for this peer should resend the initiation.
    pub fn retry_due(&self, wg: &str, peer: usize) -> bool {
        self.wg
            .get(wg)
            .and_then(|w| w.peers.get(peer))
            .is_some_and(|p| p.pending.is_some())
    }

    /// Largest payload `send_app` accepts on `iface`.
    pub fn payload_cap(&self, fab: &Fabric, iface: &str) -> Option<usize> {
        let link = fab.interface_link(self.node, iface)?;
        let ends = fab.link_endpoints(link);
        let dst = if ends[0].0 == self.node { ends[1].0 } else { ends[0].0 };
        let max = fab.max_payload(self.node, dst);
        Some(if self.guarded.contains(iface) { MAX_TUNNELED_PAYLOAD.min(max - TRANSPORT_OVERHEAD) } else { max })
    }

    fn wg_on_link(&self, iface: &str) -> Option<&WgInterface> {
        self.wg.values().find(|w| w.link_iface.as_deref() == Some(iface) && !w.peers.is_empty())
    }

    /// Sends application bytes on `iface`, sealing them when the interface is tunneled.
    pub fn send_app(
        &mut self,
        fab: &mut Fabric,
        iface: &str,
        payload: &[u8],
        effects: &mut Vec<UnitEffect>,
    ) -> Result<FrameId, UnitError> {
        let link = fab.interface_link(self.node, iface).ok_or_else(|| UnitError::NoInterface(iface.into()))?;
        let cap = self.payload_cap(fab, iface).expect("interface exists");
        if payload.len() > cap {
            return Err(UnitError::TooLarge { size: payload.len(), cap });
        }
        let ends = fab.link_endpoints(link);
        let dst = if ends[0].0 == self.node { ends[1].0 } else { ends[0].0 };
        if !self.guarded.contains(iface) {
            self.stats.app_frames_out += 1;
            let opts = SendOptions { class: self.class, tunneled: false, src_port: APP_PORT, dst_port: APP_PORT };
            return Ok(fab.send(self.node, iface, dst, payload, opts)?);
        }
        let now = fab.now();
        let w = self.wg_on_link(iface).ok_or_else(|| UnitError::NoSession(iface.into()))?;
        let wg = w.name.clone();
        let peer = w.peers.iter().position(|p| p.node == dst).ok_or_else(|| UnitError::NoSession(iface.into()))?;
        let p = &w.peers[peer];
        let session = p.session().ok_or_else(|| UnitError::NoSession(iface.into()))?;
        let status = session.rekey_status(now);
        let start_rekey = w.initiator && p.pending.is_none() && status != RekeyStatus::Fresh;
        let sealed = match status {
            RekeyStatus::Expired => None,
            _ => Some(session.seal(now, payload)?),
        };
        let (src_port, dst_port) = (w.port, p.spec.port);
        if start_rekey {
            self.initiate(fab, &wg, peer, effects)?;
        }
        let sealed = sealed.ok_or_else(|| UnitError::NoSession(iface.into()))?;
        self.stats.app_frames_out += 1;
        let opts = SendOptions { class: self.class, tunneled: true, src_port, dst_port };
        Ok(fab.send(self.node, iface, dst, &sealed, opts)?)
    }

    /// Processes an inbound frame on `iface` from `src`.
    pub fn receive(
        &mut self,
        fab: &mut Fabric,
        iface: &str,
        src: NodeId,
        dst_port: u16,
        payload: &[u8],
        effects: &mut Vec<UnitEffect>,
    ) -> Received {
        if !self.guarded.contains(iface) {
            self.stats.app_frames_in += 1;
            return Received::App(payload.to_vec());
        }
        let Some(wg) = self
            .wg
            .values()
            .find(|w| w.port == dst_port && w.link_iface.as_deref() == Some(iface))
            .map(|w| w.name.clone())
        else {
            self.stats.rejected_plaintext += 1;
            return Received::Rejected;
        };
        let frame = match TunnelFrame::parse(payload) {
            Ok(f) => f,
            Err(_) => {
                self.stats.rejected_plaintext += 1;
                return Received::Rejected;
            }
        };
        let now = fab.now();
        let outcome = match frame {
            TunnelFrame::Initiation(msg) => self.on_initiation(fab, &wg, iface, src, &msg, effects).map(|_| Received::Control),
            TunnelFrame::Response(msg) => self.on_response(fab, &wg, iface, src, &msg, effects).map(|_| Received::Control),
            TunnelFrame::Transport(view) => self
                .on_transport(view.receiver_index, payload, now)
                .map(|p| if p.is_empty() { Received::Control } else { Received::App(p) }),
        };
        match outcome {
            Ok(Received::App(p)) => {
                self.stats.app_frames_in += 1;
                Received::App(p)
            }
            Ok(r) => r,
            Err(_) => {
                self.stats.rejected_frames += 1;
                Received::Rejected
            }
        }
    }

    fn on_initiation(
        &mut self,
        fab: &mut Fabric,
        wg: &str,
        iface: &str,
        src: NodeId,
        msg: &tunnel::Initiation,
        effects: &mut Vec<UnitEffect>,
    ) -> Result<(), UnitError> {
        let now = fab.now();
        let index = self.fresh_index();
        let w = self.wg.get_mut(wg).expect("looked up");
        let incoming = tunnel::decrypt_initiation(&w.keypair, msg)?;
        let peer = w
            .peers
            .iter()
            .position(|p| p.spec.public_key == incoming.initiator_static())
            .ok_or(TunnelError::Authentication)?;
        self.guard.check(&incoming)?;
        let (response, session) = tunnel::accept_initiation(&incoming, &ZERO_PSK, index, &now, &mut self.rng)?;
        self.guard.record(&incoming);
        let p = &mut w.peers[peer];
        if let Some(old) = p.next.replace(session) {
            self.indices.remove(&old.local_index());
        }
        p.handshakes += 1;
        let opts = SendOptions { class: self.class, tunneled: false, src_port: w.port, dst_port: p.spec.port };
        self.indices.insert(index, (wg.to_string(), peer));
        self.stats.handshakes_completed += 1;
        fab.send(self.node, iface, src, &response.to_bytes(), opts)?;
        effects.push(UnitEffect::Established { wg: wg.to_string(), peer });
        Ok(())
    }

    fn on_response(
        &mut self,
        fab: &mut Fabric,
        wg: &str,
        iface: &str,
        src: NodeId,
        msg: &tunnel::Response,
        effects: &mut Vec<UnitEffect>,
    ) -> Result<(), UnitError> {
        let now = fab.now();
        let Some((owner, peer)) = self.indices.get(&msg.receiver_index).cloned() else {
            return Err(TunnelError::IndexMismatch { expected: 0, got: msg.receiver_index }.into());
        };
        if owner != wg {
            return Err(TunnelError::Authentication.into());
        }
        let w = self.wg.get_mut(wg).expect("looked up");
        let p = &mut w.peers[peer];
        let state = match p.pending.take() {
            Some(s) if s.local_index() == msg.receiver_index => s,
            other => {
                p.pending = other;
                return Err(TunnelError::IndexMismatch { expected: 0, got: msg.receiver_index }.into());
            }
        };
        let session = finalize(state, msg, &now)?;
        if let Some(old) = p.previous.take() {
            self.indices.remove(&old.local_index());
        }
        // an empty keepalive confirms the new session to the responder
        let keepalive = session.seal(now, &[])?;
        p.previous = p.current.replace(session);
        p.handshakes += 1;
        let opts = SendOptions { class: self.class, tunneled: true, src_port: w.port, dst_port: p.spec.port };
        self.stats.handshakes_completed += 1;
        fab.send(self.node, iface, src, &keepalive, opts)?;
        effects.push(UnitEffect::Established { wg: wg.to_string(), peer });
        Ok(())
    }

    fn on_transport(&mut self, index: u32, frame: &[u8], now: Duration) -> Result<Vec<u8>, UnitError> {
        let (wg, peer) = self.indices.get(&index).cloned().ok_or(TunnelError::IndexMismatch { expected: 0, got: index })?;
        let p = &mut self.wg.get_mut(&wg).expect("indexed").peers[peer];
        if let Some(s) = p.next.as_ref().filter(|s| s.local_index() == index) {
            let plain = s.open(now, frame)?;
            // first data on the new session confirms it
            let confirmed = p.next.take().expect("present");
            if let Some(old) = p.previous.take() {
                self.indices.remove(&old.local_index());
            }
            p.previous = p.current.replace(confirmed);
            return Ok(plain);
        }
        for s in [p.current.as_ref(), p.previous.as_ref()].into_iter().flatten() {
            if s.local_index() == index {
                return Ok(s.open(now, frame)?);
            }
        }
        Err(TunnelError::IndexMismatch { expected: 0, got: index }.into())
    }

    pub fn tunnels(&self) -> Vec<TunnelInfo> {
        self.wg
            .values()
            .map(|w| TunnelInfo {
                interface: w.name.clone(),
                link_iface: w.link_iface.clone(),
                port: w.port,
                address: format!("{}/{}", w.address, w.prefix_len),
                public_key: w.public_key().to_base64(),
                peers: w
                    .peers
                    .iter()
                    .map(|p| {
                        let s = p.session();
                        PeerInfo {
                            public_key: p.spec.public_key.to_base64(),
                            endpoint: p.spec.endpoint.to_string(),
                            port: p.spec.port,
                            established: s.is_some(),
                            local_index: s.map(|s| s.local_index()),
                            remote_index: s.map(|s| s.remote_index()),
                            established_at_us: s.map(|s| s.established_at().as_micros() as u64),
                            handshakes: p.handshakes,
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    /// Private key bytes held by this unit, for key-locality sweeps in tests.
    #[doc(hidden)]
    pub fn private_keys(&self) -> Vec<[u8; 32]> {
        self.wg.values().map(|w| *w.keypair.private().expose_secret()).collect()
    }

    /// Expires the superseded session of every peer of `wg`.
    pub fn expire_previous(&mut self, wg: &str) {
        if let Some(w) = self.wg.get(wg) {
            for p in &w.peers {
                if let Some(s) = &p.previous {
                    s.expire();
                }
            }
        }
    }

    pub fn session_keys(&self, wg: &str) -> Vec<[u8; 32]> {
        self.wg
            .get(wg)
            .map(|w| w.peers.iter().filter_map(|p| p.session().map(|s| *s.send_key())).collect())
            .unwrap_or_default()
    }
}
