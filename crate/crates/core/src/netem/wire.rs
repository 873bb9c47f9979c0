//! IPv4/UDP encapsulation for underlay frames.

use std::net::Ipv4Addr;

pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const UNDERLAY_HEADER_LEN: usize = IPV4_HEADER_LEN + UDP_HEADER_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UdpHeader {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub dscp: u8,
}

fn checksum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = bytes
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Prepends an IPv4 + UDP header to `payload`. The UDP checksum is left zero.
pub fn encapsulate(h: &UdpHeader, ident: u16, payload: &[u8]) -> Vec<u8> {
    let total = UNDERLAY_HEADER_LEN + payload.len();
    let mut out = Vec::with_capacity(total);
    out.push(0x45);
    out.push(h.dscp << 2);
    out.extend_from_slice(&(total as u16).to_be_bytes());
    out.extend_from_slice(&ident.to_be_bytes());
    out.extend_from_slice(&[0x40, 0]); // don't fragment
    out.push(64);
    out.push(17);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&h.src.octets());
    out.extend_from_slice(&h.dst.octets());
    let csum = checksum(&out[..IPV4_HEADER_LEN]);
    out[10..12].copy_from_slice(&csum.to_be_bytes());
    out.extend_from_slice(&h.src_port.to_be_bytes());
    out.extend_from_slice(&h.dst_port.to_be_bytes());
    out.extend_from_slice(&((UDP_HEADER_LEN + payload.len()) as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(payload);
    out
}

/// Splits an underlay frame into its header and UDP payload.
pub fn decapsulate(frame: &[u8]) -> Option<(UdpHeader, &[u8])> {
    if frame.len() < UNDERLAY_HEADER_LEN || frame[0] != 0x45 || frame[9] != 17 {
        return None;
    }
    if u16::from_be_bytes([frame[2], frame[3]]) as usize != frame.len() {
        return None;
    }
    if checksum(&frame[..IPV4_HEADER_LEN]) != 0 {
        return None;
    }
    let ip = |at: usize| Ipv4Addr::new(frame[at], frame[at + 1], frame[at + 2], frame[at + 3]);
    let port = |at: usize| u16::from_be_bytes([frame[at], frame[at + 1]]);
    let header = UdpHeader {
        src: ip(12),
        dst: ip(16),
        src_port: port(20),
        dst_port: port(22),
        dscp: frame[1] >> 2,
    };
    Some((header, &frame[UNDERLAY_HEADER_LEN..]))
}
