//! Deterministic discrete-event network fabric.
//!
//! Sites hold nodes behind a shared switching medium and one gateway.
//! Logical links join two node interfaces; same-site links ride the site
//! medium, dedicated links get their own per-direction transmitter, and
//! cross-site traffic is routed through both gateways and the intersite
//! link, optionally sealed in a gateway-to-gateway tunnel session.
//!
//! Every frame walks a fixed plan of stages: sender CPU, transmission
//! (serialization then propagation), optional gateway hops, receiver CPU.
//! CPU time is `bits / (vcpus * per_vcpu_rate)` plus, for tunnelled frames,
//! `bits / (vcpus * crypto_rate)`. Service times are rounded up to whole
//! nanoseconds.

pub mod queue;
pub mod sched;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::tunnel::{self, StaticKeypair, TransportSession, TRANSPORT_OVERHEAD};
pub use queue::EventQueue;
pub use sched::QosClass;
use sched::{Job, Server};
use wire::{UdpHeader, UNDERLAY_HEADER_LEN};

pub const DEFAULT_MTU: usize = 1500;
pub const DEFAULT_PER_VCPU_RATE_MBPS: f64 = 500.0;
pub const DEFAULT_CRYPTO_RATE_MBPS: f64 = 2000.0;
pub const DEFAULT_SITE_MEDIUM_MBPS: f64 = 20_000.0;
pub const DEFAULT_GATEWAY_VCPUS: u32 = 8;
pub const SITE_TUNNEL_PORT: u16 = 51000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("no route from {src} over {iface:?} to {dst}")]
    NoRoute { src: String, iface: String, dst: String },
    #[error("frame of {size} bytes exceeds the path MTU of {mtu}")]
    FrameTooLarge { size: usize, mtu: usize },
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown link {0}")]
    UnknownLink(usize),
    #[error("duplicate site {0}")]
    DuplicateSite(String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("interface {iface} already attached on {node}")]
    InterfaceInUse { node: String, iface: String },
    #[error("intersite link between {0} and {1} already configured")]
    DuplicateIntersiteLink(String, String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SiteId(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LinkId(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TapId(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FrameId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    /// Events are released no earlier than their wall-clock due time.
    Realtime,
}

#[derive(Clone, Debug)]
pub struct FabricConfig {
    pub seed: u64,
    pub per_vcpu_rate_mbps: f64,
    pub crypto_rate_mbps: f64,
    pub mtu: usize,
    pub clock: ClockMode,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            seed: 0,
            per_vcpu_rate_mbps: DEFAULT_PER_VCPU_RATE_MBPS,
            crypto_rate_mbps: DEFAULT_CRYPTO_RATE_MBPS,
            mtu: DEFAULT_MTU,
            clock: ClockMode::Virtual,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SiteConfig {
    pub medium_mbps: f64,
    /// First three octets of the internal /24.
    pub internal_prefix: [u8; 3],
    /// First three octets of the floating-address /24.
    pub floating_prefix: [u8; 3],
    pub gateway_vcpus: u32,
}

impl SiteConfig {
    pub fn numbered(n: u8) -> Self {
        SiteConfig {
            medium_mbps: DEFAULT_SITE_MEDIUM_MBPS,
            internal_prefix: [192, 168, n],
            floating_prefix: [172, 24, n],
            gateway_vcpus: DEFAULT_GATEWAY_VCPUS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Capacity {
    /// Own transmitter per direction at this rate.
    Dedicated { mbps: f64 },
    /// Shares the site's switching medium.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinkParams {
    pub capacity: Capacity,
    pub delay: Duration,
    pub jitter: Duration,
    pub loss: f64,
}

impl LinkParams {
    pub fn shared(delay: Duration) -> Self {
        LinkParams { capacity: Capacity::Shared, delay, jitter: Duration::ZERO, loss: 0.0 }
    }

    pub fn dedicated(mbps: f64, delay: Duration) -> Self {
        LinkParams { capacity: Capacity::Dedicated { mbps }, delay, jitter: Duration::ZERO, loss: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassSpec {
    pub weight: u32,
    pub dscp: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SendOptions {
    pub class: QosClass,
    /// Payload is a tunnel frame: sender and receiver pay the crypto cost.
    pub tunneled: bool,
    pub src_port: u16,
    pub dst_port: u16,
}

impl Default for SendOptions {
    fn default() -> Self {
        SendOptions { class: 0, tunneled: false, src_port: 9, dst_port: 9 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub frame: FrameId,
    pub src: NodeId,
    pub dst: NodeId,
    pub link: LinkId,
    pub iface: String,
    pub header: UdpHeader,
    pub payload: Vec<u8>,
    pub class: QosClass,
    pub tunneled: bool,
    pub sent_at: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetEvent {
    Delivery(Delivery),
    Timer { node: NodeId, token: u64 },
}

pub type Handler<'a> = dyn FnMut(&mut Fabric, NetEvent) + 'a;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TapRecord {
    pub timestamp: Duration,
    pub src: String,
    pub dst: String,
    pub link: String,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_delivered: u64,
    pub bytes_delivered: u64,
    pub frames_lost: u64,
    pub frames_dropped: u64,
}

#[derive(Debug)]
struct Site {
    name: String,
    config: SiteConfig,
    medium: Server<FrameId>,
    gateway: NodeId,
    next_host: u8,
}

#[derive(Debug)]
struct Node {
    name: String,
    site: SiteId,
    vcpus: u32,
    internal: Ipv4Addr,
    floating: Ipv4Addr,
    ifaces: BTreeMap<String, LinkId>,
    cpu: Server<FrameId>,
    removed: bool,
}

#[derive(Clone, Debug)]
struct End {
    node: NodeId,
    iface: String,
}

#[derive(Debug)]
struct Link {
    name: String,
    ends: [End; 2],
    params: LinkParams,
    wires: [Server<FrameId>; 2],
    tap: Option<TapId>,
    stats: LinkStats,
    detached: bool,
}

#[derive(Debug)]
struct SiteTunnel {
    link: LinkId,
    /// Session held by the gateway of the lower-numbered site, then the other.
    sessions: Option<[TransportSession; 2]>,
    keys: [StaticKeypair; 2],
    indices: u32,
}

#[derive(Debug)]
struct Tap {
    records: Vec<TapRecord>,
    attached: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum ServerRef {
    Cpu(NodeId),
    Medium(SiteId),
    Wire(LinkId, usize),
}

#[derive(Clone, Copy, Debug)]
enum Stage {
    Cpu { node: NodeId, crypto: bool },
    /// Serialize on `via`, record on `tap_link` if it is tapped, then wait `delay`.
    Transmit { via: ServerRef, link: LinkId, dir: usize, delay: Duration, jitter: Duration, loss: f64, tap_link: Option<LinkId> },
    Seal { from: SiteId, to: SiteId },
    Open { from: SiteId, to: SiteId },
}

#[derive(Debug)]
struct InFlight {
    src: NodeId,
    dst: NodeId,
    link: LinkId,
    class: QosClass,
    tunneled: bool,
    bytes: Vec<u8>,
    plan: Vec<Stage>,
    next: usize,
    sent_at: Duration,
}

#[derive(Debug)]
enum Event {
    Done(ServerRef),
    Arrive(FrameId),
    Timer { node: NodeId, token: u64 },
}

/// The emulated network.
pub struct Fabric {
    config: FabricConfig,
    now: Duration,
    queue: EventQueue<Event>,
    sites: Vec<Site>,
    nodes: Vec<Node>,
    links: Vec<Link>,
    taps: Vec<Tap>,
    site_tunnels: BTreeMap<(SiteId, SiteId), SiteTunnel>,
    classes: BTreeMap<QosClass, ClassSpec>,
    frames: HashMap<FrameId, InFlight>,
    in_service: HashMap<ServerRef, FrameId>,
    /// Latest scheduled arrival per hop and class, to keep classes FIFO under jitter.
    fifo: HashMap<(ServerRef, LinkId, QosClass), Duration>,
    next_frame: u64,
    rng: ChaCha8Rng,
    wall_start: Option<Instant>,
    processed: u64,
}

impl std::fmt::Debug for Fabric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fabric")
            .field("now", &self.now)
            .field("sites", &self.sites.len())
            .field("nodes", &self.nodes.len())
            .field("links", &self.links.len())
            .field("pending", &self.queue.len())
            .finish()
    }
}

fn service_time(bits: u64, mbps: f64) -> Duration {
    Duration::from_nanos((bits as f64 * 1000.0 / mbps).ceil() as u64)
}

fn pair_key(a: SiteId, b: SiteId) -> (SiteId, SiteId) {
    if a <= b { (a, b) } else { (b, a) }
}

impl Fabric {
    pub fn new(config: FabricConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Fabric {
            config,
            now: Duration::ZERO,
            queue: EventQueue::new(),
            sites: Vec::new(),
            nodes: Vec::new(),
            links: Vec::new(),
            taps: Vec::new(),
            site_tunnels: BTreeMap::new(),
            classes: BTreeMap::new(),
            frames: HashMap::new(),
            in_service: HashMap::new(),
            fifo: HashMap::new(),
            next_frame: 0,
            rng,
            wall_start: None,
            processed: 0,
        }
    }

    pub fn config(&self) -> &FabricConfig {
        &self.config
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    // ---- topology ----

    pub fn add_site(&mut self, name: &str, config: SiteConfig) -> Result<SiteId, NetError> {
        if self.site_id(name).is_some() {
            return Err(NetError::DuplicateSite(name.into()));
        }
        if config.medium_mbps <= 0.0 || config.gateway_vcpus == 0 {
            return Err(NetError::InvalidParameter(format!("site {name} needs positive capacity")));
        }
        let id = SiteId(self.sites.len());
        let [a, b, c] = config.internal_prefix;
        let [fa, fb, fc] = config.floating_prefix;
        let gateway = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name: format!("{name}-gw"),
            site: id,
            vcpus: config.gateway_vcpus,
            internal: Ipv4Addr::new(a, b, c, 1),
            floating: Ipv4Addr::new(fa, fb, fc, 1),
            ifaces: BTreeMap::new(),
            cpu: Server::new(),
            removed: false,
        });
        self.sites.push(Site { name: name.into(), config, medium: Server::new(), gateway, next_host: 10 });
        Ok(id)
    }

    pub fn site_id(&self, name: &str) -> Option<SiteId> {
        self.sites.iter().position(|s| s.name == name).map(SiteId)
    }

    pub fn site_name(&self, site: SiteId) -> &str {
        &self.sites[site.0].name
    }

    pub fn gateway(&self, site: SiteId) -> NodeId {
        self.sites[site.0].gateway
    }

    pub fn add_node(&mut self, name: &str, site: SiteId, vcpus: u32) -> Result<NodeId, NetError> {
        if self.nodes.iter().any(|n| n.name == name && !n.removed) {
            return Err(NetError::DuplicateNode(name.into()));
        }
        if vcpus == 0 {
            return Err(NetError::InvalidParameter(format!("node {name} needs at least one vCPU")));
        }
        let s = self.sites.get_mut(site.0).ok_or_else(|| NetError::UnknownSite(format!("#{}", site.0)))?;
        let host = s.next_host;
        s.next_host = s.next_host.checked_add(1).ok_or_else(|| {
            NetError::InvalidParameter(format!("site {} has no free addresses", s.name))
        })?;
        let [a, b, c] = s.config.internal_prefix;
        let [fa, fb, fc] = s.config.floating_prefix;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name: name.into(),
            site,
            vcpus,
            internal: Ipv4Addr::new(a, b, c, host),
            floating: Ipv4Addr::new(fa, fb, fc, host),
            ifaces: BTreeMap::new(),
            cpu: Server::new(),
            removed: false,
        });
        Ok(id)
    }

    /// Detaches every link of `node` and drops its pending work.
    pub fn remove_node(&mut self, node: NodeId) {
        let links: Vec<LinkId> = self.nodes[node.0].ifaces.values().copied().collect();
        for l in links {
            self.disconnect(l);
        }
        let n = &mut self.nodes[node.0];
        n.removed = true;
        n.cpu.clear();
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name && !n.removed).map(NodeId)
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        &self.nodes[node.0].name
    }

    pub fn node_site(&self, node: NodeId) -> SiteId {
        self.nodes[node.0].site
    }

    pub fn node_vcpus(&self, node: NodeId) -> u32 {
        self.nodes[node.0].vcpus
    }

    pub fn internal_address(&self, node: NodeId) -> Ipv4Addr {
        self.nodes[node.0].internal
    }

    pub fn floating_address(&self, node: NodeId) -> Ipv4Addr {
        self.nodes[node.0].floating
    }

    pub fn processing_rate_mbps(&self, node: NodeId) -> f64 {
        self.nodes[node.0].vcpus as f64 * self.config.per_vcpu_rate_mbps
    }

    pub fn crypto_rate_mbps(&self, node: NodeId) -> f64 {
        self.nodes[node.0].vcpus as f64 * self.config.crypto_rate_mbps
    }

    pub fn connect(
        &mut self,
        name: &str,
        a: (NodeId, &str),
        b: (NodeId, &str),
        params: LinkParams,
    ) -> Result<LinkId, NetError> {
        if let Capacity::Dedicated { mbps } = params.capacity {
            if mbps <= 0.0 {
                return Err(NetError::InvalidParameter(format!("link {name} capacity must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&params.loss) {
            return Err(NetError::InvalidParameter(format!("link {name} loss must be within [0, 1]")));
        }
        for (node, iface) in [a, b] {
            let n = self.nodes.get(node.0).filter(|n| !n.removed).ok_or_else(|| NetError::UnknownNode(format!("#{}", node.0)))?;
            if n.ifaces.contains_key(iface) {
                return Err(NetError::InterfaceInUse { node: n.name.clone(), iface: iface.into() });
            }
        }
        if a.0 == b.0 {
            return Err(NetError::InvalidParameter(format!("link {name} must join two nodes")));
        }
        let id = LinkId(self.links.len());
        self.links.push(Link {
            name: name.into(),
            ends: [End { node: a.0, iface: a.1.into() }, End { node: b.0, iface: b.1.into() }],
            params,
            wires: [Server::new(), Server::new()],
            tap: None,
            stats: LinkStats::default(),
            detached: false,
        });
        self.nodes[a.0 .0].ifaces.insert(a.1.into(), id);
        self.nodes[b.0 .0].ifaces.insert(b.1.into(), id);
        Ok(id)
    }

    pub fn disconnect(&mut self, link: LinkId) {
        let Some(l) = self.links.get_mut(link.0) else { return };
        if l.detached {
            return;
        }
        l.detached = true;
        for w in &mut l.wires {
            w.clear();
        }
        let ends = l.ends.clone();
        for e in ends {
            let n = &mut self.nodes[e.node.0];
            if n.ifaces.get(&e.iface) == Some(&link) {
                n.ifaces.remove(&e.iface);
            }
        }
    }

    pub fn link_id(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name && !l.detached).map(LinkId)
    }

    pub fn link_name(&self, link: LinkId) -> &str {
        &self.links[link.0].name
    }

    pub fn link_params(&self, link: LinkId) -> LinkParams {
        self.links[link.0].params
    }

    pub fn set_link_params(&mut self, link: LinkId, params: LinkParams) {
        self.links[link.0].params = params;
    }

    pub fn link_stats(&self, link: LinkId) -> LinkStats {
        self.links[link.0].stats
    }

    pub fn link_endpoints(&self, link: LinkId) -> [(NodeId, &str); 2] {
        let l = &self.links[link.0];
        [(l.ends[0].node, l.ends[0].iface.as_str()), (l.ends[1].node, l.ends[1].iface.as_str())]
    }

    pub fn interface_link(&self, node: NodeId, iface: &str) -> Option<LinkId> {
        self.nodes.get(node.0)?.ifaces.get(iface).copied()
    }

    /// Weight and DSCP marking for a QoS class; applies to every scheduler.
    pub fn define_class(&mut self, class: QosClass, spec: ClassSpec) {
        self.classes.insert(class, spec);
    }

    fn class_weight(classes: &BTreeMap<QosClass, ClassSpec>, class: QosClass) -> u32 {
        classes.get(&class).map_or(1, |c| c.weight)
    }

    pub fn configure_intersite(
        &mut self,
        a: SiteId,
        b: SiteId,
        capacity_mbps: f64,
        delay: Duration,
        site_tunnel: bool,
    ) -> Result<LinkId, NetError> {
        if a == b || a.0 >= self.sites.len() || b.0 >= self.sites.len() {
            return Err(NetError::InvalidParameter("intersite link needs two distinct registered sites".into()));
        }
        let key = pair_key(a, b);
        if self.site_tunnels.contains_key(&key) {
            return Err(NetError::DuplicateIntersiteLink(self.sites[a.0].name.clone(), self.sites[b.0].name.clone()));
        }
        let name = format!("{}<->{}", self.sites[key.0 .0].name, self.sites[key.1 .0].name);
        let (ga, gb) = (self.sites[key.0 .0].gateway, self.sites[key.1 .0].gateway);
        let link = self.connect(
            &name,
            (ga, &format!("to-{}", self.sites[key.1 .0].name)),
            (gb, &format!("to-{}", self.sites[key.0 .0].name)),
            LinkParams::dedicated(capacity_mbps, delay),
        )?;
        let keys = [tunnel::generate_keypair(&mut self.rng), tunnel::generate_keypair(&mut self.rng)];
        let mut t = SiteTunnel { link, sessions: None, keys, indices: 0 };
        if site_tunnel {
            t.sessions = Some(self.site_handshake(&mut t));
        }
        self.site_tunnels.insert(key, t);
        Ok(link)
    }

    fn site_handshake(&mut self, t: &mut SiteTunnel) -> [TransportSession; 2] {
        let now = self.now;
        let psk = tunnel::ZERO_PSK;
        let ia = 2 * t.indices + 1;
        let ib = 2 * t.indices + 2;
        t.indices += 1;
        let (state, init) = tunnel::initiate(&t.keys[0], &t.keys[1].public(), &psk, ia, &now, &mut self.rng)
            .expect("in-memory handshake with fresh keys");
        let incoming = tunnel::decrypt_initiation(&t.keys[1], &init).expect("in-memory handshake");
        let (resp, sb) = tunnel::accept_initiation(&incoming, &psk, ib, &now, &mut self.rng).expect("in-memory handshake");
        let sa = tunnel::finalize(state, &resp, &now).expect("in-memory handshake");
        [sa, sb]
    }

    pub fn intersite_link(&self, a: SiteId, b: SiteId) -> Option<LinkId> {
        self.site_tunnels.get(&pair_key(a, b)).map(|t| t.link)
    }

    pub fn site_tunnel_enabled(&self, a: SiteId, b: SiteId) -> bool {
        self.site_tunnels.get(&pair_key(a, b)).is_some_and(|t| t.sessions.is_some())
    }

    /// Sending key of the site tunnel in the `from` → `to` direction, for
    /// decoding captures in tests and diagnostics.
    pub fn site_tunnel_send_key(&self, from: SiteId, to: SiteId) -> Option<[u8; 32]> {
        let t = self.site_tunnels.get(&pair_key(from, to))?;
        let sessions = t.sessions.as_ref()?;
        let i = if from <= to { 0 } else { 1 };
        Some(*sessions[i].send_key())
    }

    // ---- taps ----

    pub fn attach_tap(&mut self, link: LinkId) -> TapId {
        if let Some(t) = self.links[link.0].tap {
            self.taps[t.0].attached = true;
            return t;
        }
        let id = TapId(self.taps.len());
        self.taps.push(Tap { records: Vec::new(), attached: true });
        self.links[link.0].tap = Some(id);
        id
    }

    /// Stops recording; records taken so far are kept.
    pub fn detach_tap(&mut self, tap: TapId) {
        self.taps[tap.0].attached = false;
    }

    pub fn tap_records(&self, tap: TapId) -> &[TapRecord] {
        &self.taps[tap.0].records
    }

    pub fn scan_tap(&self, tap: TapId, needle: &[u8]) -> usize {
        self.taps[tap.0].records.iter().filter(|r| contains(&r.payload, needle)).count()
    }

    /// One JSON object per line: `{ts_us, src, dst, link, hex_payload}`.
    pub fn export_tap<W: Write>(&self, tap: TapId, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            ts_us: f64,
            src: &'a str,
            dst: &'a str,
            link: &'a str,
            hex_payload: String,
        }
        for r in &self.taps[tap.0].records {
            let line = Line {
                ts_us: r.timestamp.as_nanos() as f64 / 1000.0,
                src: &r.src,
                dst: &r.dst,
                link: &r.link,
                hex_payload: r.payload.iter().map(|b| format!("{b:02x}")).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    // ---- traffic ----

    fn path_mtu(&self, src: NodeId, dst: NodeId) -> usize {
        let (sa, sb) = (self.nodes[src.0].site, self.nodes[dst.0].site);
        if sa != sb && self.site_tunnel_enabled(sa, sb) {
            self.config.mtu - UNDERLAY_HEADER_LEN - TRANSPORT_OVERHEAD
        } else {
            self.config.mtu
        }
    }

    /// Largest UDP payload `src` can send to `dst` without exceeding the path MTU.
    pub fn max_payload(&self, src: NodeId, dst: NodeId) -> usize {
        self.path_mtu(src, dst) - UNDERLAY_HEADER_LEN
    }

    /// Address `src` uses to reach `dst`: internal on the same site, floating otherwise.
    pub fn address_for(&self, src: NodeId, dst: NodeId) -> Ipv4Addr {
        if self.nodes[src.0].site == self.nodes[dst.0].site {
            self.nodes[dst.0].internal
        } else {
            self.nodes[dst.0].floating
        }
    }

    pub fn send(
        &mut self,
        src: NodeId,
        iface: &str,
        dst: NodeId,
        payload: &[u8],
        opts: SendOptions,
    ) -> Result<FrameId, NetError> {
        let no_route = |f: &Fabric| NetError::NoRoute {
            src: f.nodes.get(src.0).map_or_else(|| format!("#{}", src.0), |n| n.name.clone()),
            iface: iface.into(),
            dst: f.nodes.get(dst.0).map_or_else(|| format!("#{}", dst.0), |n| n.name.clone()),
        };
        let src_node = self.nodes.get(src.0).filter(|n| !n.removed).ok_or_else(|| no_route(self))?;
        let link_id = *src_node.ifaces.get(iface).ok_or_else(|| no_route(self))?;
        let link = &self.links[link_id.0];
        let dir = if link.ends[0].node == src { 0 } else { 1 };
        if link.ends[1 - dir].node != dst || self.nodes[dst.0].removed {
            return Err(no_route(self));
        }
        let (sa, sb) = (self.nodes[src.0].site, self.nodes[dst.0].site);
        let cross = sa != sb;
        if cross && !self.site_tunnels.contains_key(&pair_key(sa, sb)) && link.params.capacity == Capacity::Shared {
            return Err(no_route(self));
        }
        let size = UNDERLAY_HEADER_LEN + payload.len();
        let mtu = self.path_mtu(src, dst);
        if size > mtu {
            return Err(NetError::FrameTooLarge { size, mtu });
        }

        let header = UdpHeader {
            src: self.nodes[src.0].internal,
            dst: self.address_for(src, dst),
            src_port: opts.src_port,
            dst_port: opts.dst_port,
            dscp: self.classes.get(&opts.class).map_or(0, |c| c.dscp),
        };
        let id = FrameId(self.next_frame);
        self.next_frame += 1;
        let bytes = wire::encapsulate(&header, id.0 as u16, payload);

        let p = link.params;
        let mut plan = vec![Stage::Cpu { node: src, crypto: opts.tunneled }];
        if let Capacity::Dedicated { .. } = p.capacity {
            plan.push(Stage::Transmit {
                via: ServerRef::Wire(link_id, dir),
                link: link_id,
                dir,
                delay: p.delay,
                jitter: p.jitter,
                loss: p.loss,
                tap_link: Some(link_id),
            });
        } else if !cross {
            plan.push(Stage::Transmit {
                via: ServerRef::Medium(sa),
                link: link_id,
                dir,
                delay: p.delay,
                jitter: p.jitter,
                loss: p.loss,
                tap_link: Some(link_id),
            });
        } else {
            let t = &self.site_tunnels[&pair_key(sa, sb)];
            let inter = t.link;
            let inter_dir = if self.links[inter.0].ends[0].node == self.sites[sa.0].gateway { 0 } else { 1 };
            let ip = self.links[inter.0].params;
            let tunneled_site = t.sessions.is_some();
            let (ga, gb) = (self.sites[sa.0].gateway, self.sites[sb.0].gateway);
            plan.push(Stage::Transmit {
                via: ServerRef::Medium(sa),
                link: link_id,
                dir,
                delay: Duration::ZERO,
                jitter: Duration::ZERO,
                loss: p.loss,
                tap_link: Some(link_id),
            });
            if tunneled_site {
                plan.push(Stage::Seal { from: sa, to: sb });
            }
            plan.push(Stage::Cpu { node: ga, crypto: tunneled_site });
            plan.push(Stage::Transmit {
                via: ServerRef::Wire(inter, inter_dir),
                link: inter,
                dir: inter_dir,
                delay: ip.delay,
                jitter: ip.jitter,
                loss: ip.loss,
                tap_link: Some(inter),
            });
            plan.push(Stage::Cpu { node: gb, crypto: tunneled_site });
            if tunneled_site {
                plan.push(Stage::Open { from: sa, to: sb });
            }
            plan.push(Stage::Transmit {
                via: ServerRef::Medium(sb),
                link: link_id,
                dir,
                delay: Duration::ZERO,
                jitter: Duration::ZERO,
                loss: 0.0,
                tap_link: None,
            });
        }
        plan.push(Stage::Cpu { node: dst, crypto: opts.tunneled });

        let stats = &mut self.links[link_id.0].stats;
        stats.frames_sent += 1;
        stats.bytes_sent += payload.len() as u64;
        self.frames.insert(
            id,
            InFlight {
                src,
                dst,
                link: link_id,
                class: opts.class,
                tunneled: opts.tunneled,
                bytes,
                plan,
                next: 0,
                sent_at: self.now,
            },
        );
        self.step(id, None);
        Ok(id)
    }

    pub fn set_timer(&mut self, node: NodeId, after: Duration, token: u64) {
        self.queue.push(self.now + after, Event::Timer { node, token });
    }

    fn drop_frame(&mut self, id: FrameId) {
        if let Some(f) = self.frames.remove(&id) {
            self.links[f.link.0].stats.frames_dropped += 1;
        }
    }

    /// Runs the frame's stages until it waits on a server or the clock.
    fn step(&mut self, id: FrameId, handler: Option<&mut Handler<'_>>) {
        loop {
            let Some(f) = self.frames.get(&id) else { return };
            let Some(stage) = f.plan.get(f.next).copied() else {
                let f = self.frames.remove(&id).expect("present");
                if self.nodes[f.dst.0].removed || self.links[f.link.0].detached {
                    self.links[f.link.0].stats.frames_dropped += 1;
                    return;
                }
                let stats = &mut self.links[f.link.0].stats;
                let (header, payload) = wire::decapsulate(&f.bytes).expect("fabric builds valid frames");
                stats.frames_delivered += 1;
                stats.bytes_delivered += payload.len() as u64;
                let l = &self.links[f.link.0];
                let iface = if l.ends[0].node == f.dst { l.ends[0].iface.clone() } else { l.ends[1].iface.clone() };
                let delivery = Delivery {
                    frame: id,
                    src: f.src,
                    dst: f.dst,
                    link: f.link,
                    iface,
                    header,
                    payload: payload.to_vec(),
                    class: f.class,
                    tunneled: f.tunneled,
                    sent_at: f.sent_at,
                };
                if let Some(h) = handler {
                    h(self, NetEvent::Delivery(delivery));
                }
                return;
            };
            match stage {
                Stage::Cpu { node, crypto } => {
                    if self.nodes[node.0].removed {
                        self.drop_frame(id);
                        return;
                    }
                    let bits = f.bytes.len() as u64 * 8;
                    let mut service = service_time(bits, self.processing_rate_mbps(node));
                    if crypto {
                        service += service_time(bits, self.crypto_rate_mbps(node));
                    }
                    let bytes = f.bytes.len() as u64;
                    let class = f.class;
                    self.nodes[node.0].cpu.enqueue(class, Job { bytes, service, item: id });
                    self.try_start(ServerRef::Cpu(node));
                    return;
                }
                Stage::Transmit { via, link, .. } => {
                    if self.links[link.0].detached {
                        self.drop_frame(id);
                        return;
                    }
                    let bits = f.bytes.len() as u64 * 8;
                    let rate = match via {
                        ServerRef::Medium(s) => self.sites[s.0].config.medium_mbps,
                        ServerRef::Wire(l, _) => match self.links[l.0].params.capacity {
                            Capacity::Dedicated { mbps } => mbps,
                            Capacity::Shared => unreachable!("shared links use the site medium"),
                        },
                        ServerRef::Cpu(_) => unreachable!("transmit stages never use a CPU"),
                    };
                    let job = Job { bytes: f.bytes.len() as u64, service: service_time(bits, rate), item: id };
                    let class = f.class;
                    self.server(via).enqueue(class, job);
                    self.try_start(via);
                    return;
                }
                Stage::Seal { from, to } => {
                    let outer = self.site_seal(from, to, id);
                    let f = self.frames.get_mut(&id).expect("present");
                    f.bytes = outer;
                    f.next += 1;
                }
                Stage::Open { from, to } => {
                    let f = self.frames.get_mut(&id).expect("present");
                    let outer = std::mem::take(&mut f.bytes);
                    match self.site_open(from, to, &outer) {
                        Some(inner) => {
                            let f = self.frames.get_mut(&id).expect("present");
                            f.bytes = inner;
                            f.next += 1;
                        }
                        None => {
                            self.drop_frame(id);
                            return;
                        }
                    }
                }
            }
        }
    }

    fn site_seal(&mut self, from: SiteId, to: SiteId, id: FrameId) -> Vec<u8> {
        let key = pair_key(from, to);
        let i = if from <= to { 0 } else { 1 };
        let now = self.now;
        let mut t = self.site_tunnels.remove(&key).expect("sealing needs a site tunnel");
        let stale = t.sessions.as_ref().is_some_and(|s| s[i].rekey_status(now) != tunnel::RekeyStatus::Fresh);
        if stale {
            // gateways re-key in place; both directions switch together
            t.sessions = Some(self.site_handshake(&mut t));
        }
        let sessions = t.sessions.as_ref().expect("site tunnel enabled");
        let inner = &self.frames[&id].bytes;
        let sealed = sessions[i].seal(now, inner).expect("fresh site session");
        let (ga, gb) = (self.sites[from.0].gateway, self.sites[to.0].gateway);
        self.site_tunnels.insert(key, t);
        let header = UdpHeader {
            src: self.nodes[ga.0].floating,
            dst: self.nodes[gb.0].floating,
            src_port: SITE_TUNNEL_PORT,
            dst_port: SITE_TUNNEL_PORT,
            dscp: 0,
        };
        wire::encapsulate(&header, id.0 as u16, &sealed)
    }

    fn site_open(&mut self, from: SiteId, to: SiteId, outer: &[u8]) -> Option<Vec<u8>> {
        let t = self.site_tunnels.get(&pair_key(from, to))?;
        let i = if from <= to { 1 } else { 0 };
        let (_, sealed) = wire::decapsulate(outer)?;
        t.sessions.as_ref()?[i].open(self.now, sealed).ok()
    }

    fn server(&mut self, r: ServerRef) -> &mut Server<FrameId> {
        match r {
            ServerRef::Cpu(n) => &mut self.nodes[n.0].cpu,
            ServerRef::Medium(s) => &mut self.sites[s.0].medium,
            ServerRef::Wire(l, d) => &mut self.links[l.0].wires[d],
        }
    }

    fn try_start(&mut self, r: ServerRef) {
        let classes = std::mem::take(&mut self.classes);
        let job = self.server(r).start_next(|c| Self::class_weight(&classes, c));
        self.classes = classes;
        let Some(job) = job else { return };
        if let ServerRef::Medium(_) | ServerRef::Wire(..) = r {
            self.record_tap(job.item);
        }
        self.queue.push(self.now + job.service, Event::Done(r));
        self.in_service.insert(r, job.item);
    }

    fn record_tap(&mut self, id: FrameId) {
        let Some(f) = self.frames.get(&id) else { return };
        let Stage::Transmit { tap_link: Some(link), dir, .. } = f.plan[f.next] else { return };
        let l = &self.links[link.0];
        let Some(tap) = l.tap.filter(|t| self.taps[t.0].attached) else { return };
        let (src, dst) = (l.ends[dir].node, l.ends[1 - dir].node);
        let record = TapRecord {
            timestamp: self.now,
            src: self.nodes[src.0].name.clone(),
            dst: self.nodes[dst.0].name.clone(),
            link: l.name.clone(),
            payload: f.bytes.clone(),
        };
        self.taps[tap.0].records.push(record);
    }

    fn on_done(&mut self, r: ServerRef, handler: &mut Handler<'_>) {
        let id = self.in_service.remove(&r).expect("completed server had a job");
        self.server(r).complete();
        if let Some(f) = self.frames.get_mut(&id) {
            match f.plan[f.next] {
                Stage::Cpu { .. } => {
                    f.next += 1;
                    self.step(id, Some(handler));
                }
                Stage::Transmit { link, delay, jitter, loss, .. } => {
                    let class = f.class;
                    if loss > 0.0 && self.rng.gen::<f64>() < loss {
                        self.frames.remove(&id);
                        self.links[link.0].stats.frames_lost += 1;
                    } else {
                        let mut arrival = self.now + delay;
                        if jitter > Duration::ZERO {
                            arrival += Duration::from_nanos(self.rng.gen_range(0..jitter.as_nanos() as u64));
                        }
                        let last = self.fifo.entry((r, link, class)).or_insert(Duration::ZERO);
                        arrival = arrival.max(*last);
                        *last = arrival;
                        self.queue.push(arrival, Event::Arrive(id));
                    }
                }
                _ => unreachable!("servers only run CPU and transmit stages"),
            }
        }
        self.try_start(r);
    }

    fn dispatch(&mut self, ev: Event, handler: &mut Handler<'_>) {
        match ev {
            Event::Done(r) => self.on_done(r, handler),
            Event::Arrive(id) => {
                if let Some(f) = self.frames.get_mut(&id) {
                    f.next += 1;
                    self.step(id, Some(handler));
                }
            }
            Event::Timer { node, token } => {
                if !self.nodes[node.0].removed {
                    handler(self, NetEvent::Timer { node, token });
                }
            }
        }
    }

    fn wait_wall(&mut self, t: Duration) {
        if self.config.clock != ClockMode::Realtime {
            return;
        }
        let start = *self.wall_start.get_or_insert_with(|| Instant::now() - self.now);
        let due = start + t;
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }

    /// Processes events until none remain. Returns the number processed.
    pub fn run_until_idle(&mut self, handler: &mut Handler<'_>) -> u64 {
        let mut n = 0;
        while let Some((t, ev)) = self.queue.pop() {
            self.wait_wall(t);
            self.now = t;
            self.dispatch(ev, handler);
            n += 1;
        }
        self.processed += n;
        n
    }

    /// Processes events due within `duration` and moves the clock to its end.
    pub fn advance(&mut self, duration: Duration, handler: &mut Handler<'_>) -> u64 {
        let target = self.now + duration;
        let mut n = 0;
        while self.queue.peek_time().is_some_and(|t| t <= target) {
            let (t, ev) = self.queue.pop().expect("peeked");
            self.wait_wall(t);
            self.now = t;
            self.dispatch(ev, handler);
            n += 1;
        }
        self.wait_wall(target);
        self.now = target;
        self.processed += n;
        n
    }

    /// Runs until `stop` returns true after an event, or the queue drains.
    pub fn run_while(&mut self, handler: &mut Handler<'_>, mut stop: impl FnMut(&Fabric) -> bool) -> u64 {
        let mut n = 0;
        while let Some((t, ev)) = self.queue.pop() {
            self.wait_wall(t);
            self.now = t;
            self.dispatch(ev, handler);
            n += 1;
            if stop(self) {
                break;
            }
        }
        self.processed += n;
        n
    }

    /// Processes events due by `deadline` until `stop` holds after an event.
    /// Returns true if `stop` ended the run; otherwise the clock moves to `deadline`.
    pub fn run_until(
        &mut self,
        deadline: Duration,
        handler: &mut Handler<'_>,
        mut stop: impl FnMut(&Fabric) -> bool,
    ) -> bool {
        let mut n = 0;
        let mut stopped = false;
        while self.queue.peek_time().is_some_and(|t| t <= deadline) {
            let (t, ev) = self.queue.pop().expect("peeked");
            self.wait_wall(t);
            self.now = t;
            self.dispatch(ev, handler);
            n += 1;
            if stop(self) {
                stopped = true;
                break;
            }
        }
        if !stopped && deadline > self.now {
            self.wait_wall(deadline);
            self.now = deadline;
        }
        self.processed += n;
        stopped
    }

    /// Time of the earliest pending event.
    pub fn next_event_time(&self) -> Option<Duration> {
        self.queue.peek_time()
    }
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}
