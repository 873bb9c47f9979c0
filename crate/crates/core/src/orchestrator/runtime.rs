//! Event dispatch between the fabric, the units and the measurement flows.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::Serialize;

use super::traffic::{is_probe, piece_sizes, Flow, FlowKind, FlowPath, ProbeHeader, ProbeKind};
use super::unit::{Received, Unit, UnitEffect, REKEY_TIMEOUT};
use crate::eps::{EpsMessage, Nf, NfAction, IF_S1U};
use crate::netem::{Fabric, NetEvent, NodeId};

/// Grace period for echoes still in flight after the last request.
pub const ECHO_GRACE: Duration = Duration::from_secs(2);
/// Largest user-plane probe piece; leaves room for the GTP and radio framing.
pub const USER_PLANE_PIECE: usize = 1300;

#[derive(Clone, Debug)]
enum TimerAction {
    Retry { wg: String, peer: usize },
    NfSend { iface: String, msg: EpsMessage },
    FlowTick(u32),
    FlowEnd(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttachOutcome {
    pub accepted: bool,
    pub ue_ip: Option<Ipv4Addr>,
    pub at: Duration,
}

#[derive(Default)]
pub struct Runtime {
    pub units: BTreeMap<NodeId, Unit>,
    pub flows: BTreeMap<u32, Flow>,
    pub attach_results: BTreeMap<(NodeId, String), AttachOutcome>,
    /// Internal and floating addresses of every unit node.
    pub address_book: BTreeMap<Ipv4Addr, NodeId>,
    timers: BTreeMap<u64, TimerAction>,
    next_token: u64,
    next_flow: u32,
}

impl Runtime {
    fn timer(&mut self, fab: &mut Fabric, node: NodeId, after: Duration, action: TimerAction) {
        self.next_token += 1;
        self.timers.insert(self.next_token, action);
        fab.set_timer(node, after, self.next_token);
    }

    pub fn apply_effects(&mut self, fab: &mut Fabric, node: NodeId, effects: Vec<UnitEffect>) {
        for e in effects {
            if let UnitEffect::ArmRetry { wg, peer } = e {
                self.timer(fab, node, REKEY_TIMEOUT, TimerAction::Retry { wg, peer });
            }
        }
    }

    pub fn on_event(&mut self, fab: &mut Fabric, ev: NetEvent) {
        match ev {
            NetEvent::Delivery(d) => {
                let Some(unit) = self.units.get_mut(&d.dst) else { return };
                let mut effects = Vec::new();
                let r = unit.receive(fab, &d.iface, d.src, d.header.dst_port, &d.payload, &mut effects);
                self.apply_effects(fab, d.dst, effects);
                if let Received::App(bytes) = r {
                    self.on_app(fab, d.dst, &d.iface, bytes);
                }
            }
            NetEvent::Timer { node, token } => {
                let Some(action) = self.timers.remove(&token) else { return };
                match action {
                    TimerAction::Retry { wg, peer } => {
                        let Some(unit) = self.units.get_mut(&node) else { return };
                        if unit.retry_due(&wg, peer) {
                            let mut effects = Vec::new();
                            if unit.initiate(fab, &wg, peer, &mut effects).is_ok() {
                                self.apply_effects(fab, node, effects);
                            }
                        }
                    }
                    TimerAction::NfSend { iface, msg } => self.send_eps(fab, node, &iface, &msg),
                    TimerAction::FlowTick(id) => self.flow_tick(fab, node, id),
                    TimerAction::FlowEnd(id) => {
                        if let Some(f) = self.flows.get_mut(&id) {
                            f.finish();
                        }
                    }
                }
            }
        }
    }

    fn on_app(&mut self, fab: &mut Fabric, node: NodeId, iface: &str, bytes: Vec<u8>) {
        if is_probe(&bytes) {
            let Some(h) = ProbeHeader::decode(&bytes) else { return };
            match h.kind {
                ProbeKind::EchoRequest => {
                    let reply = ProbeHeader { kind: ProbeKind::EchoReply, ..h }.encode(bytes.len());
                    if let Some(unit) = self.units.get_mut(&node) {
                        let mut effects = Vec::new();
                        let _ = unit.send_app(fab, iface, &reply, &mut effects);
                        self.apply_effects(fab, node, effects);
                    }
                }
                ProbeKind::EchoReply => self.on_echo(fab, &h),
                ProbeKind::Bulk => self.on_bulk(fab, &h, bytes.len()),
            }
            return;
        }
        let Some(unit) = self.units.get_mut(&node) else { return };
        let Ok(msg) = EpsMessage::decode(&bytes) else {
            unit.stats.nf_errors += 1;
            return;
        };
        let Some(nf) = unit.nf.as_mut() else { return };
        let mut out = Vec::new();
        if nf.handle(fab.now(), iface, msg, &mut out).is_err() {
            unit.stats.nf_errors += 1;
        }
        self.process_actions(fab, node, out);
    }

    pub fn process_actions(&mut self, fab: &mut Fabric, node: NodeId, out: Vec<NfAction>) {
        for action in out {
            match action {
                NfAction::Send { iface, msg } => self.send_eps(fab, node, &iface, &msg),
                NfAction::SendAfter { delay, iface, msg } => self.timer(fab, node, delay, TimerAction::NfSend { iface, msg }),
                NfAction::ToPdn { ue_ip, payload } => self.pdn_sink(fab, node, ue_ip, payload),
                NfAction::ToUser { payload } => {
                    if let Some(h) = ProbeHeader::decode(&payload).filter(|h| h.kind == ProbeKind::EchoReply) {
                        self.on_echo(fab, &h);
                    }
                }
                NfAction::Srt(_) => {}
                NfAction::AttachFinished { imsi, accepted, ue_ip } => {
                    self.attach_results.insert((node, imsi), AttachOutcome { accepted, ue_ip, at: fab.now() });
                }
            }
        }
    }

    pub fn send_eps(&mut self, fab: &mut Fabric, node: NodeId, iface: &str, msg: &EpsMessage) {
        let Some(unit) = self.units.get_mut(&node) else { return };
        let mut effects = Vec::new();
        if unit.send_app(fab, iface, &msg.encode(), &mut effects).is_err() {
            unit.stats.nf_errors += 1;
        }
        self.apply_effects(fab, node, effects);
    }

    /// The packet data network behind SPGW-U: echoes requests and absorbs bulk data.
    fn pdn_sink(&mut self, fab: &mut Fabric, node: NodeId, ue_ip: Ipv4Addr, payload: Vec<u8>) {
        let Some(h) = ProbeHeader::decode(&payload) else { return };
        match h.kind {
            ProbeKind::EchoRequest => {
                let reply = ProbeHeader { kind: ProbeKind::EchoReply, ..h }.encode(payload.len());
                let Some(Nf::Spgwu(gw)) = self.units.get(&node).and_then(|u| u.nf.as_ref()) else { return };
                if let Ok(msg) = gw.downlink(ue_ip, reply) {
                    self.send_eps(fab, node, IF_S1U, &msg);
                }
            }
            ProbeKind::Bulk => self.on_bulk(fab, &h, payload.len()),
            ProbeKind::EchoReply => {}
        }
    }

    fn on_echo(&mut self, fab: &mut Fabric, h: &ProbeHeader) {
        let now = fab.now();
        if let Some(f) = self.flows.get_mut(&h.flow) {
            f.on_echo(h.seq, now);
        }
    }

    fn on_bulk(&mut self, fab: &mut Fabric, h: &ProbeHeader, len: usize) {
        let Some(f) = self.flows.get_mut(&h.flow) else { return };
        if f.on_bulk(len, fab.now()) {
            self.flow_send(fab, h.flow);
        }
    }

    pub fn start_flow(&mut self, fab: &mut Fabric, path: FlowPath, kind: FlowKind) -> u32 {
        self.next_flow += 1;
        let id = self.next_flow;
        let origin = match &path {
            FlowPath::Interface { src, .. } => *src,
            FlowPath::UserPlane { ue, .. } => *ue,
        };
        self.flows.insert(id, Flow::new(id, path, kind, fab.now()));
        match kind {
            FlowKind::Latency { .. } => self.flow_tick(fab, origin, id),
            FlowKind::Throughput { duration, window, .. } => {
                self.timer(fab, origin, duration, TimerAction::FlowEnd(id));
                for _ in 0..window {
                    self.flow_send(fab, id);
                }
            }
        }
        id
    }

    fn flow_tick(&mut self, fab: &mut Fabric, node: NodeId, id: u32) {
        self.flow_send(fab, id);
        let Some(f) = self.flows.get(&id) else { return };
        if let FlowKind::Latency { interval, .. } = f.kind {
            if f.all_sent() {
                self.timer(fab, node, ECHO_GRACE, TimerAction::FlowEnd(id));
            } else {
                self.timer(fab, node, interval, TimerAction::FlowTick(id));
            }
        }
    }

    fn flow_send(&mut self, fab: &mut Fabric, id: u32) {
        let Some(f) = self.flows.get(&id) else { return };
        let now = fab.now();
        let (path, size, kind) = (f.path.clone(), f.size(), f.probe_kind());
        match path {
            FlowPath::Interface { src, iface, .. } => {
                let Some(unit) = self.units.get_mut(&src) else { return };
                let Some(cap) = unit.payload_cap(fab, &iface) else { return };
                let sizes = piece_sizes(size, cap);
                let f = self.flows.get_mut(&id).expect("present");
                let Some(seq) = f.next_packet(now, sizes.len() as u16) else { return };
                let mut effects = Vec::new();
                for (i, len) in sizes.iter().enumerate() {
                    let h = ProbeHeader { kind, flow: id, seq, sent: now, piece: i as u16, pieces: sizes.len() as u16 };
                    if unit.send_app(fab, &iface, &h.encode(*len), &mut effects).is_err() {
                        f.result.send_errors += 1;
                    }
                }
                self.apply_effects(fab, src, effects);
            }
            FlowPath::UserPlane { ue, .. } => {
                let sizes = piece_sizes(size, USER_PLANE_PIECE);
                let f = self.flows.get_mut(&id).expect("present");
                let Some(seq) = f.next_packet(now, sizes.len() as u16) else { return };
                let Some(Nf::Ue(ue_nf)) = self.units.get(&ue).and_then(|u| u.nf.as_ref()) else { return };
                let mut out = Vec::new();
                for (i, len) in sizes.iter().enumerate() {
                    let h = ProbeHeader { kind, flow: id, seq, sent: now, piece: i as u16, pieces: sizes.len() as u16 };
                    if ue_nf.uplink(h.encode(*len), &mut out).is_err() {
                        f.result.send_errors += 1;
                    }
                }
                self.process_actions(fab, ue, out);
            }
        }
    }

    pub fn flows_done(&self, ids: &[u32]) -> bool {
        ids.iter().all(|id| self.flows.get(id).is_none_or(|f| f.done))
    }
}
