//! Probe packets and measurement flows.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::netem::NodeId;

/// First byte of every probe packet; EPS messages never start with it.
pub const PROBE_MARKER: u8 = 0x00;
pub const PROBE_HEADER_LEN: usize = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ProbeKind {
    EchoRequest = 1,
    EchoReply = 2,
    Bulk = 3,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeHeader {
    pub kind: ProbeKind,
    pub flow: u32,
    pub seq: u64,
    pub sent: Duration,
    pub piece: u16,
    pub pieces: u16,
}

impl ProbeHeader {
    /// Encodes the header and zero padding up to `len` bytes.
    pub fn encode(&self, len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len.max(PROBE_HEADER_LEN));
        out.push(PROBE_MARKER);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.flow.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.sent.as_nanos() as u64).to_be_bytes());
        out.extend_from_slice(&self.piece.to_be_bytes());
        out.extend_from_slice(&self.pieces.to_be_bytes());
        out.resize(len.max(PROBE_HEADER_LEN), 0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < PROBE_HEADER_LEN || bytes[0] != PROBE_MARKER {
            return None;
        }
        let kind = match bytes[1] {
            1 => ProbeKind::EchoRequest,
            2 => ProbeKind::EchoReply,
            3 => ProbeKind::Bulk,
            _ => return None,
        };
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().expect("length checked"));
        Some(ProbeHeader {
            kind,
            flow: u32::from_be_bytes(bytes[2..6].try_into().expect("length checked")),
            seq: u64_at(6),
            sent: Duration::from_nanos(u64_at(14)),
            piece: u16::from_be_bytes([bytes[22], bytes[23]]),
            pieces: u16::from_be_bytes([bytes[24], bytes[25]]),
        })
    }
}

pub fn is_probe(bytes: &[u8]) -> bool {
    bytes.first() == Some(&PROBE_MARKER)
}

/// Splits a `size`-byte probe into near-equal pieces of at most `cap` bytes.
pub fn piece_sizes(size: usize, cap: usize) -> Vec<usize> {
    let size = size.max(PROBE_HEADER_LEN);
    let n = size.div_ceil(cap.max(PROBE_HEADER_LEN));
    let base = size / n;
    let extra = size % n;
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

/// Where a flow's packets travel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum FlowPath {
    /// Directly over one virtual link between two units.
    Interface { src: NodeId, iface: String, dst: NodeId },
    /// From the UE through eNB and SPGW-U to the packet data network.
    UserPlane { ue: NodeId, spgwu: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FlowKind {
    Latency { count: u32, interval: Duration, size: usize },
    Throughput { duration: Duration, size: usize, window: u32 },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FlowResult {
    pub rtts: Vec<Duration>,
    pub sent: u64,
    pub lost: u64,
    pub frames: u64,
    pub delivered_bits: u64,
    pub first_delivery: Option<Duration>,
    pub last_delivery: Option<Duration>,
    pub send_errors: u64,
}

impl FlowResult {
    /// Goodput between the first and last delivery, excluding the first packet.
    pub fn throughput_mbps(&self) -> Option<f64> {
        let (first, last) = (self.first_delivery?, self.last_delivery?);
        let elapsed = (last - first).as_secs_f64();
        (elapsed > 0.0).then(|| self.delivered_bits as f64 / elapsed / 1e6)
    }
}

#[derive(Debug)]
pub struct Flow {
    pub id: u32,
    pub path: FlowPath,
    pub kind: FlowKind,
    pub start: Duration,
    pub done: bool,
    pub result: FlowResult,
    next_seq: u64,
    outstanding: BTreeMap<u64, (Duration, u16)>,
}

impl Flow {
    pub fn new(id: u32, path: FlowPath, kind: FlowKind, start: Duration) -> Self {
        Flow {
            id,
            path,
            kind,
            start,
            done: false,
            result: FlowResult::default(),
            next_seq: 0,
            outstanding: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> usize {
        match self.kind {
            FlowKind::Latency { size, .. } | FlowKind::Throughput { size, .. } => size,
        }
    }

    pub fn end(&self) -> Option<Duration> {
        match self.kind {
            FlowKind::Throughput { duration, .. } => Some(self.start + duration),
            FlowKind::Latency { .. } => None,
        }
    }

    pub fn probe_kind(&self) -> ProbeKind {
        match self.kind {
            FlowKind::Latency { .. } => ProbeKind::EchoRequest,
            FlowKind::Throughput { .. } => ProbeKind::Bulk,
        }
    }

    /// Sequence number for the next packet, or None once the flow stopped sending.
    pub fn next_packet(&mut self, now: Duration, pieces: u16) -> Option<u64> {
        if self.done {
            return None;
        }
        match self.kind {
            FlowKind::Latency { count, .. } if self.next_seq >= u64::from(count) => return None,
            FlowKind::Throughput { .. } if self.end().is_some_and(|e| now >= e) => return None,
            _ => {}
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.result.sent += 1;
        self.result.frames += u64::from(pieces);
        if let FlowKind::Latency { .. } = self.kind {
            self.outstanding.insert(seq, (now, pieces));
        }
        Some(seq)
    }

    pub fn all_sent(&self) -> bool {
        match self.kind {
            FlowKind::Latency { count, .. } => self.next_seq >= u64::from(count),
            FlowKind::Throughput { .. } => self.done,
        }
    }

    /// Records one returned echo piece. Returns true when the flow completed.
    pub fn on_echo(&mut self, seq: u64, now: Duration) -> bool {
        if let Some((sent, left)) = self.outstanding.get_mut(&seq) {
            *left -= 1;
            if *left == 0 {
                let rtt = now - *sent;
                self.outstanding.remove(&seq);
                self.result.rtts.push(rtt);
            }
        }
        self.check_latency_done()
    }

    fn check_latency_done(&mut self) -> bool {
        if let FlowKind::Latency { count, .. } = self.kind {
            if self.next_seq >= u64::from(count) && self.outstanding.is_empty() && !self.done {
                self.done = true;
            }
        }
        self.done
    }

    /// Gives up on unanswered echoes.
    pub fn expire(&mut self) {
        self.result.lost += self.outstanding.len() as u64;
        self.outstanding.clear();
        self.done = true;
    }

    /// Records one bulk piece arriving. Returns true if the sender may send again.
    pub fn on_bulk(&mut self, bytes: usize, now: Duration) -> bool {
        if self.done || self.end().is_some_and(|e| now > e) {
            return false;
        }
        let bits = bytes as u64 * 8;
        if self.result.first_delivery.is_none() {
            self.result.first_delivery = Some(now);
        } else {
            self.result.delivered_bits += bits;
        }
        self.result.last_delivery = Some(now);
        true
    }

    pub fn finish(&mut self) {
        if let FlowKind::Latency { .. } = self.kind {
            self.expire();
        }
        self.done = true;
    }
}
