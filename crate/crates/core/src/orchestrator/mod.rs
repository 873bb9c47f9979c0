//! Lifecycle engine: sites, catalog, NS/NSI instantiation, Day-0/1/2
//! primitives executed through unit proxies, and relation-driven peering.

pub mod runtime;
pub mod traffic;
pub mod unit;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::descriptors::{
    serialize_nsd, serialize_nst, serialize_vnfd, validate_package, Decimal, DescriptorPackage, Finding, Nsd, Nst,
    ParamType, QosProfile, RelationRole, SliceType, Vnfd,
};
use crate::eps::{AttachContext, AttachState, EpsError, Nf, NfKind, SrtSample, SubscriberRecord};
use crate::netem::{
    ClassSpec, Fabric, FabricConfig, LinkId, LinkParams, NetError, NodeId, QosClass, SiteConfig, SiteId, TapId,
};
use crate::relation_bus::{
    EventKind, RelationBus, RelationError, RelationId, KEY_ALLOWED_CIDRS, KEY_ENDPOINT_HOST, KEY_ENDPOINT_PORT,
    KEY_PUBLIC_KEY, KEY_TUNNEL_ADDRESS,
};
use crate::tunnel::{encode_key, PublicKey};

use runtime::{AttachOutcome, Runtime};
use traffic::{FlowKind, FlowPath, FlowResult};
use unit::{PeerSpec, TunnelInfo, Unit, UnitError, UnitStats, BASE_PORT};

pub const DEFAULT_PEERING_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_ATTACH_TIMEOUT: Duration = Duration::from_secs(5);
pub const INTRA_SITE_DELAY: Duration = Duration::from_micros(50);
pub const UU_CAPACITY_MBPS: f64 = 2.0;
pub const UU_DELAY: Duration = Duration::from_micros(500);
pub const URLLC_LATENCY_MS: f64 = 1.0;
pub const EMBB_DL_MBPS: f64 = 100.0;
/// Tunnel inner addresses come from 10.200.0.0/16, one /24 per relation.
pub const TUNNEL_NET: [u8; 2] = [10, 200];
const UU_LINK: &str = "Uu";
const THROUGHPUT_WINDOW: u32 = 512;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("duplicate site {0}")]
    DuplicateSite(String),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("site {0} needs positive capacities")]
    InvalidCapacity(String),
    #[error("package failed validation with {} finding(s)", .0.len())]
    ValidationFailed(Vec<Finding>),
    #[error("unknown NSD {0}")]
    UnknownNsd(String),
    #[error("unknown NST {0}")]
    UnknownNst(String),
    #[error("unknown NS instance {0}")]
    UnknownNs(String),
    #[error("unknown unit {0}")]
    UnknownUnit(String),
    #[error("unknown link or interface {0}")]
    UnknownLink(String),
    #[error("placement does not cover member {0}")]
    IncompletePlacement(String),
    #[error("site {site} lacks {resource}: requested {requested}, available {available}")]
    InsufficientResources { site: String, resource: &'static str, requested: String, available: String },
    #[error("no intersite link between {0} and {1}")]
    NoIntersiteLink(String, String),
    #[error("day-1 primitive {action} failed on {unit}: {reason}")]
    Day1Failure { unit: String, action: String, reason: String },
    #[error("peering on relation {0} timed out")]
    PeeringTimeout(String),
    #[error("NS {ns} is {phase}, not ready")]
    NotReady { ns: String, phase: NsPhase },
    #[error("action {action} is not a day-2 primitive of {unit}")]
    UnknownAction { unit: String, action: String },
    #[error("action {action} failed: {reason}")]
    ActionFailed { action: String, reason: String },
    #[error("attach of {0} was rejected")]
    AttachRejected(String),
    #[error("attach of {0} timed out")]
    AttachTimeout(String),
    #[error("UE is not attached")]
    NotAttached,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error(transparent)]
    Eps(#[from] EpsError),
}

pub type Result<T> = std::result::Result<T, OrchestratorError>;

#[derive(Clone, Debug)]
pub struct OrchestratorConfig {
    pub seed: u64,
    pub fabric: FabricConfig,
    pub peering_timeout: Duration,
    pub attach_timeout: Duration,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            seed: 1,
            fabric: FabricConfig::default(),
            peering_timeout: DEFAULT_PEERING_TIMEOUT,
            attach_timeout: DEFAULT_ATTACH_TIMEOUT,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Resources {
    pub vcpus: u32,
    pub ram_gb: Decimal,
    pub storage_gb: u32,
}

impl Resources {
    pub fn new(vcpus: u32, ram_gb: f64, storage_gb: u32) -> Self {
        Resources { vcpus, ram_gb: Decimal::from_f64(ram_gb), storage_gb }
    }

    fn plus(self, o: Resources) -> Resources {
        Resources {
            vcpus: self.vcpus + o.vcpus,
            ram_gb: Decimal::from_thousandths(self.ram_gb.thousandths() + o.ram_gb.thousandths()),
            storage_gb: self.storage_gb + o.storage_gb,
        }
    }

    fn minus(self, o: Resources) -> Resources {
        Resources {
            vcpus: self.vcpus.saturating_sub(o.vcpus),
            ram_gb: Decimal::from_thousandths((self.ram_gb.thousandths() - o.ram_gb.thousandths()).max(0)),
            storage_gb: self.storage_gb.saturating_sub(o.storage_gb),
        }
    }

    /// Scales every dimension by `m`, rounding up.
    fn scaled(self, m: Decimal) -> Resources {
        let t = m.thousandths();
        let up = |v: i64| (v * t + 999) / 1000;
        Resources {
            vcpus: up(i64::from(self.vcpus)) as u32,
            ram_gb: Decimal::from_thousandths(up(self.ram_gb.thousandths())),
            storage_gb: up(i64::from(self.storage_gb)) as u32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VimConfig {
    pub name: String,
    pub capacity: Resources,
    /// Fabric site parameters; numbered defaults when absent.
    pub site: Option<SiteConfig>,
}

impl VimConfig {
    pub fn new(name: &str, capacity: Resources) -> Self {
        VimConfig { name: name.to_string(), capacity, site: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VimHandle {
    pub name: String,
    #[serde(skip)]
    pub site: SiteId,
    pub internal_subnet: String,
    pub capacity: Resources,
    pub allocated: Resources,
    /// Unit name to its external address.
    pub floating: BTreeMap<String, Ipv4Addr>,
}

impl VimHandle {
    pub fn available(&self) -> Resources {
        self.capacity.minus(self.allocated)
    }
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub package: DescriptorPackage,
    pub version: u32,
}

/// Unit-to-site assignment. Keys are VNFD ids or member indexes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub default_site: Option<String>,
    pub sites: BTreeMap<String, String>,
}

impl Placement {
    pub fn all(site: &str) -> Self {
        Placement { default_site: Some(site.to_string()), sites: BTreeMap::new() }
    }

    pub fn with(mut self, unit: &str, site: &str) -> Self {
        self.sites.insert(unit.to_string(), site.to_string());
        self
    }

    fn site_for(&self, member: &str, vnfd: &str) -> Option<&str> {
        self.sites.get(member).or_else(|| self.sites.get(vnfd)).or(self.default_site.as_ref()).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstantiateOptions {
    pub wireguard: bool,
    pub flavor_multiplier: Option<Decimal>,
    /// Link parameters by NSD link name.
    pub link_overrides: BTreeMap<String, LinkParams>,
    pub hss_service_time: Option<Duration>,
    /// Interfaces whose relations stay untunneled even with wireguard on.
    pub untunneled: BTreeSet<String>,
    pub class: QosClass,
    /// Attach an underlay tap to every link of the NS as it is created.
    pub tap_links: bool,
}

impl Default for InstantiateOptions {
    fn default() -> Self {
        InstantiateOptions {
            wireguard: true,
            flavor_multiplier: None,
            link_overrides: BTreeMap::new(),
            hss_service_time: None,
            untunneled: BTreeSet::new(),
            class: 0,
            tap_links: false,
        }
    }
}

impl InstantiateOptions {
    pub fn plain() -> Self {
        InstantiateOptions { wireguard: false, ..Default::default() }
    }

    /// Switch for the MME↔SPGW-C interface tunnel.
    pub fn tunnel_s11(mut self, on: bool) -> Self {
        if on {
            self.untunneled.remove("s11");
        } else {
            self.untunneled.insert("s11".into());
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NsPhase {
    Day0,
    Day1,
    Ready,
    Failed,
    Terminated,
}

impl std::fmt::Display for NsPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NsPhase::Day0 => "day0",
            NsPhase::Day1 => "day1",
            NsPhase::Ready => "ready",
            NsPhase::Failed => "failed",
            NsPhase::Terminated => "terminated",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UnitRecord {
    pub name: String,
    pub vnfd: String,
    pub member_index: String,
    pub site: String,
    #[serde(skip)]
    pub node: NodeId,
    pub resources: Resources,
    pub internal_address: Ipv4Addr,
    pub floating_address: Ipv4Addr,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinkRecord {
    pub name: String,
    pub fabric_name: String,
    #[serde(skip)]
    pub id: LinkId,
    /// (unit, interface) per endpoint, in NSD order.
    pub ends: [(String, String); 2],
    pub tunneled: bool,
    #[serde(skip)]
    pub tap: Option<TapId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelationRecord {
    pub id: RelationId,
    pub name: String,
    pub provider: String,
    pub requirer: String,
    pub interface: String,
    pub link: String,
    pub subnet: String,
    #[serde(skip)]
    octet: u8,
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionLogEntry {
    pub seq: u64,
    pub at_us: u64,
    pub unit: String,
    pub action: String,
    pub phase: &'static str,
    pub params: BTreeMap<String, String>,
    pub ok: bool,
    pub detail: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NsInstance {
    pub id: String,
    pub nsd: String,
    pub phase: NsPhase,
    pub wireguard: bool,
    pub flavor_multiplier: Decimal,
    pub units: Vec<UnitRecord>,
    pub links: Vec<LinkRecord>,
    pub relations: Vec<RelationRecord>,
    pub actions: Vec<ActionLogEntry>,
    pub class: QosClass,
    #[serde(skip)]
    options: InstantiateOptions,
}

impl NsInstance {
    pub fn options(&self) -> &InstantiateOptions {
        &self.options
    }

    pub fn unit(&self, name: &str) -> Option<&UnitRecord> {
        self.units.iter().find(|u| u.name == name || u.vnfd == name || u.member_index == name)
    }

    pub fn link(&self, name: &str) -> Option<&LinkRecord> {
        self.links.iter().find(|l| l.name.eq_ignore_ascii_case(name) || l.fabric_name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceKpi {
    pub latency_ms: Option<f64>,
    pub throughput_mbps: Option<f64>,
}

impl SliceKpi {
    pub fn for_slice(slice: SliceType) -> Self {
        match slice {
            SliceType::Urllc => SliceKpi { latency_ms: Some(URLLC_LATENCY_MS), throughput_mbps: None },
            SliceType::Embb => SliceKpi { latency_ms: None, throughput_mbps: Some(EMBB_DL_MBPS) },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NsiInstance {
    pub id: String,
    pub nst: String,
    pub ns: String,
    pub slice_type: SliceType,
    pub qos: QosProfile,
    pub kpi: SliceKpi,
    pub class: QosClass,
    pub dscp: u8,
    pub exposed_interfaces: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TunnelRegistryEntry {
    pub unit: String,
    pub interface: String,
    pub link: Option<String>,
    pub peer: String,
    pub local_index: u32,
    pub remote_index: u32,
    pub established_at_us: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionResult {
    pub unit: String,
    pub action: String,
    pub output: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttachReport {
    pub context: AttachContext,
    pub attempts: u32,
    pub ue_ip: Option<Ipv4Addr>,
    pub elapsed: Duration,
}

/// DSCP marking for a 5QI: delay-critical GBR as EF, GBR as AF41, the
/// remaining non-GBR classes as AF31, default bearer best effort.
pub fn dscp_for_5qi(five_qi: u32) -> u8 {
    match five_qi {
        82..=90 => 46,
        1..=4 | 65..=67 | 71..=76 => 34,
        5..=8 | 69 | 70 | 79 | 80 => 26,
        _ => 0,
    }
}

fn unit_seed(seed: u64, ns: &str, unit: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(ns.as_bytes());
    h.update([0]);
    h.update(unit.as_bytes());
    h.finalize().into()
}

pub struct Orchestrator {
    config: OrchestratorConfig,
    fabric: Fabric,
    rt: Runtime,
    bus: RelationBus,
    vims: Vec<VimHandle>,
    catalog: BTreeMap<String, CatalogEntry>,
    instances: BTreeMap<String, NsInstance>,
    slices: BTreeMap<String, NsiInstance>,
    subnets: BTreeSet<u8>,
    next_ns: u32,
    next_nsi: u32,
    next_class: QosClass,
    action_seq: u64,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Self {
        let mut fabric_config = config.fabric.clone();
        fabric_config.seed = config.seed;
        Orchestrator {
            fabric: Fabric::new(fabric_config),
            config,
            rt: Runtime::default(),
            bus: RelationBus::new(),
            vims: Vec::new(),
            catalog: BTreeMap::new(),
            instances: BTreeMap::new(),
            slices: BTreeMap::new(),
            subnets: BTreeSet::new(),
            next_ns: 0,
            next_nsi: 0,
            next_class: 0,
            action_seq: 0,
        }
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.fabric
    }

    pub fn now(&self) -> Duration {
        self.fabric.now()
    }

    // ---- sites ----

    pub fn register_vim(&mut self, config: VimConfig) -> Result<&VimHandle> {
        if self.vims.iter().any(|v| v.name == config.name) {
            return Err(OrchestratorError::DuplicateSite(config.name));
        }
        let c = config.capacity;
        if c.vcpus == 0 || c.ram_gb.thousandths() <= 0 || c.storage_gb == 0 {
            return Err(OrchestratorError::InvalidCapacity(config.name));
        }
        let site_config = config.site.unwrap_or_else(|| SiteConfig::numbered(self.vims.len() as u8 + 1));
        let p = site_config.internal_prefix;
        let site = self.fabric.add_site(&config.name, site_config)?;
        self.vims.push(VimHandle {
            name: config.name,
            site,
            internal_subnet: format!("{}.{}.{}.0/24", p[0], p[1], p[2]),
            capacity: c,
            allocated: Resources::default(),
            floating: BTreeMap::new(),
        });
        Ok(self.vims.last().expect("just pushed"))
    }

    pub fn vim(&self, name: &str) -> Option<&VimHandle> {
        self.vims.iter().find(|v| v.name == name)
    }

    pub fn vims(&self) -> &[VimHandle] {
        &self.vims
    }

    fn vim_index(&self, name: &str) -> Result<usize> {
        self.vims.iter().position(|v| v.name == name).ok_or_else(|| OrchestratorError::UnknownSite(name.into()))
    }

    pub fn configure_intersite(&mut self, a: &str, b: &str, capacity_mbps: f64, delay: Duration, site_tunnel: bool) -> Result<LinkId> {
        let (sa, sb) = (self.vims[self.vim_index(a)?].site, self.vims[self.vim_index(b)?].site);
        Ok(self.fabric.configure_intersite(sa, sb, capacity_mbps, delay, site_tunnel)?)
    }

    // ---- catalog ----

    /// Validates and stores a package. Re-onboarding changed content bumps the version.
    pub fn onboard(&mut self, package: DescriptorPackage) -> Result<u32> {
        let findings = validate_package(&package);
        if !findings.is_empty() {
            return Err(OrchestratorError::ValidationFailed(findings));
        }
        let id = package.nsd.id.clone();
        let version = match self.catalog.get(&id) {
            Some(e) if e.package == package => e.version,
            Some(e) => e.version + 1,
            None => 1,
        };
        self.catalog.insert(id, CatalogEntry { package, version });
        Ok(version)
    }

    pub fn catalog(&self) -> &BTreeMap<String, CatalogEntry> {
        &self.catalog
    }

    fn find_nst(&self, id: &str) -> Option<(&Nst, &DescriptorPackage)> {
        self.catalog.values().find_map(|e| e.package.nst(id).map(|n| (n, &e.package)))
    }

    // ---- instances ----

    pub fn instance(&self, ns: &str) -> Option<&NsInstance> {
        self.instances.get(ns)
    }

    pub fn instances(&self) -> impl Iterator<Item = &NsInstance> {
        self.instances.values()
    }

    pub fn slice(&self, nsi: &str) -> Option<&NsiInstance> {
        self.slices.get(nsi)
    }

    pub fn slices(&self) -> impl Iterator<Item = &NsiInstance> {
        self.slices.values()
    }

    fn ns(&self, ns: &str) -> Result<&NsInstance> {
        self.instances.get(ns).ok_or_else(|| OrchestratorError::UnknownNs(ns.into()))
    }

    fn ready(&self, ns: &str) -> Result<&NsInstance> {
        let inst = self.ns(ns)?;
        if inst.phase != NsPhase::Ready {
            return Err(OrchestratorError::NotReady { ns: ns.into(), phase: inst.phase });
        }
        Ok(inst)
    }

    fn unit_record(&self, ns: &str, unit: &str) -> Result<&UnitRecord> {
        self.ns(ns)?.unit(unit).ok_or_else(|| OrchestratorError::UnknownUnit(unit.into()))
    }

    pub fn unit(&self, ns: &str, unit: &str) -> Result<&Unit> {
        let node = self.unit_record(ns, unit)?.node;
        self.rt.units.get(&node).ok_or_else(|| OrchestratorError::UnknownUnit(unit.into()))
    }

    pub fn unit_stats(&self, ns: &str, unit: &str) -> Result<UnitStats> {
        Ok(self.unit(ns, unit)?.stats)
    }

    fn alloc_subnet(&mut self) -> Option<u8> {
        let octet = (0..=u8::MAX).find(|o| !self.subnets.contains(o))?;
        self.subnets.insert(octet);
        Some(octet)
    }

    /// Instantiates and runs Day-1 to readiness. Failures clean up after themselves.
    pub fn instantiate_ns(&mut self, nsd: &str, placement: &Placement, options: InstantiateOptions) -> Result<String> {
        let id = self.begin_instantiate(nsd, placement, options)?;
        match self.complete_instantiation(&id) {
            Ok(()) => Ok(id),
            Err(e) => {
                self.terminate(&id);
                Err(e)
            }
        }
    }

    /// Places units, applies Day-0 and wires the virtual links.
    pub fn begin_instantiate(&mut self, nsd_id: &str, placement: &Placement, options: InstantiateOptions) -> Result<String> {
        let pkg = self
            .catalog
            .get(nsd_id)
            .map(|e| e.package.clone())
            .ok_or_else(|| OrchestratorError::UnknownNsd(nsd_id.into()))?;
        let nsd = &pkg.nsd;
        let multiplier = options.flavor_multiplier.unwrap_or(nsd.flavor_multiplier);
        if multiplier.thousandths() <= 0 {
            return Err(OrchestratorError::ActionFailed {
                action: "instantiate".into(),
                reason: "flavor multiplier must be positive".into(),
            });
        }

        // placement and capacity
        let mut planned: Vec<(&str, &Vnfd, usize, Resources)> = Vec::new();
        let mut demand: BTreeMap<usize, Resources> = BTreeMap::new();
        for m in &nsd.vnf_refs {
            let vnfd = pkg.vnfd(&m.vnfd).ok_or_else(|| OrchestratorError::UnknownNsd(m.vnfd.clone()))?;
            let site = placement
                .site_for(&m.member_index, &m.vnfd)
                .ok_or_else(|| OrchestratorError::IncompletePlacement(m.member_index.clone()))?;
            let vim = self.vim_index(site)?;
            let (vcpus, ram_gb, storage_gb) = vnfd.resources();
            let res = Resources { vcpus, ram_gb, storage_gb }.scaled(multiplier);
            let d = demand.entry(vim).or_default();
            *d = d.plus(res);
            planned.push((&m.member_index, vnfd, vim, res));
        }
        for (&vim, d) in &demand {
            let v = &self.vims[vim];
            let avail = v.available();
            let short = if d.vcpus > avail.vcpus {
                Some(("vcpus", d.vcpus.to_string(), avail.vcpus.to_string()))
            } else if d.ram_gb > avail.ram_gb {
                Some(("ram_gb", d.ram_gb.to_string(), avail.ram_gb.to_string()))
            } else if d.storage_gb > avail.storage_gb {
                Some(("storage_gb", d.storage_gb.to_string(), avail.storage_gb.to_string()))
            } else {
                None
            };
            if let Some((resource, requested, available)) = short {
                return Err(OrchestratorError::InsufficientResources { site: v.name.clone(), resource, requested, available });
            }
        }
        for l in &nsd.virtual_links {
            let sites: Vec<usize> = l
                .endpoints
                .iter()
                .map(|e| planned.iter().find(|p| p.0 == e.member_index).expect("validated endpoint").2)
                .collect();
            if sites[0] != sites[1] && self.fabric.intersite_link(self.vims[sites[0]].site, self.vims[sites[1]].site).is_none() {
                return Err(OrchestratorError::NoIntersiteLink(self.vims[sites[0]].name.clone(), self.vims[sites[1]].name.clone()));
            }
        }

        self.next_ns += 1;
        let ns_id = format!("ns-{}", self.next_ns);
        let mut inst = NsInstance {
            id: ns_id.clone(),
            nsd: nsd.id.clone(),
            phase: NsPhase::Day0,
            wireguard: options.wireguard,
            flavor_multiplier: multiplier,
            units: Vec::new(),
            links: Vec::new(),
            relations: Vec::new(),
            actions: Vec::new(),
            class: options.class,
            options: options.clone(),
        };

        // nodes, Day-0
        for (member, vnfd, vim, res) in &planned {
            let base = format!("{ns_id}-{}", vnfd.id);
            let name = if inst.units.iter().any(|u| u.name == base) { format!("{base}-{member}") } else { base };
            let site = self.vims[*vim].site;
            let node = self.fabric.add_node(&name, site, res.vcpus)?;
            let v = &mut self.vims[*vim];
            v.allocated = v.allocated.plus(*res);
            let (internal, floating) = (self.fabric.internal_address(node), self.fabric.floating_address(node));
            v.floating.insert(name.clone(), floating);
            self.rt.address_book.insert(internal, node);
            self.rt.address_book.insert(floating, node);

            let rng = ChaCha20Rng::from_seed(unit_seed(self.config.seed, &ns_id, &name));
            let mut unit = Unit::new(&name, &vnfd.id, member, node, rng);
            unit.class = options.class;
            let mut day0 = vnfd.cloud_init.clone();
            if options.wireguard && !day0.packages.iter().any(|p| p == "wireguard") {
                day0.packages.push("wireguard".into());
            }
            unit.day0 = Some(day0);
            if let Some(kind) = NfKind::from_vnfd(&vnfd.id) {
                let mut nf = Nf::new(kind);
                if let (Nf::Hss(_), Some(t)) = (&nf, options.hss_service_time) {
                    nf.config_mut().hss_service_time = t;
                }
                unit.nf = Some(nf);
            }
            self.rt.units.insert(node, unit);
            self.bus.register_unit(&name)?;
            inst.units.push(UnitRecord {
                name,
                vnfd: vnfd.id.clone(),
                member_index: member.to_string(),
                site: self.vims[*vim].name.clone(),
                node,
                resources: *res,
                internal_address: internal,
                floating_address: floating,
            });
        }
        inst.phase = NsPhase::Day1;

        // links
        for l in &nsd.virtual_links {
            let ends: Vec<(String, String, NodeId)> = l
                .endpoints
                .iter()
                .map(|e| {
                    let u = inst.units.iter().find(|u| u.member_index == e.member_index).expect("placed");
                    (u.name.clone(), e.interface.clone(), u.node)
                })
                .collect();
            let params = options.link_overrides.get(&l.name).copied().unwrap_or_else(|| {
                if l.name == UU_LINK {
                    LinkParams::dedicated(UU_CAPACITY_MBPS, UU_DELAY)
                } else {
                    LinkParams::shared(INTRA_SITE_DELAY)
                }
            });
            let fabric_name = format!("{ns_id}/{}", l.name);
            let id = self.fabric.connect(&fabric_name, (ends[0].2, &ends[0].1), (ends[1].2, &ends[1].1), params)?;
            let tap = options.tap_links.then(|| self.fabric.attach_tap(id));
            inst.links.push(LinkRecord {
                name: l.name.clone(),
                fabric_name,
                id,
                ends: [(ends[0].0.clone(), ends[0].1.clone()), (ends[1].0.clone(), ends[1].1.clone())],
                tunneled: false,
                tap,
            });
        }

        // relations, one per provider/requirer pair sharing a link
        if options.wireguard {
            for u in inst.units.clone() {
                let vnfd = pkg.vnfd(&u.vnfd).expect("placed");
                for r in vnfd.relations.iter().filter(|r| r.role == RelationRole::Provider) {
                    if options.untunneled.contains(&r.interface) {
                        continue;
                    }
                    for other in inst.units.iter().filter(|o| o.vnfd == r.counterpart) {
                        let ovnfd = pkg.vnfd(&other.vnfd).expect("placed");
                        let Some(back) = ovnfd.relations.iter().find(|b| b.name == r.name && b.role == RelationRole::Requirer) else {
                            continue;
                        };
                        let Some(link) = inst.links.iter_mut().find(|l| {
                            (l.ends[0] == (u.name.clone(), r.interface.clone()) && l.ends[1] == (other.name.clone(), back.interface.clone()))
                                || (l.ends[1] == (u.name.clone(), r.interface.clone())
                                    && l.ends[0] == (other.name.clone(), back.interface.clone()))
                        }) else {
                            continue;
                        };
                        link.tunneled = true;
                        let link_name = link.name.clone();
                        let id = self.bus.create_relation(&r.name, &u.name, &other.name)?;
                        let octet = self.alloc_subnet().ok_or_else(|| OrchestratorError::ActionFailed {
                            action: "instantiate".into(),
                            reason: "tunnel address space exhausted".into(),
                        })?;
                        inst.relations.push(RelationRecord {
                            id,
                            name: r.name.clone(),
                            provider: u.name.clone(),
                            requirer: other.name.clone(),
                            interface: r.interface.clone(),
                            link: link_name,
                            subnet: format!("{}.{}.{octet}.0/24", TUNNEL_NET[0], TUNNEL_NET[1]),
                            octet,
                        });
                        for (unit, iface) in [(&u, &r.interface), (other, &back.interface)] {
                            self.rt.units.get_mut(&unit.node).expect("placed").guard_interface(iface);
                        }
                    }
                }
            }
        }
        self.instances.insert(ns_id.clone(), inst);
        Ok(ns_id)
    }

    /// Runs Day-1 primitives in VNFD order and waits for every relation to peer.
    pub fn complete_instantiation(&mut self, ns: &str) -> Result<()> {
        let inst = self.ns(ns)?;
        if inst.phase != NsPhase::Day1 {
            return Err(OrchestratorError::NotReady { ns: ns.into(), phase: inst.phase });
        }
        let pkg = self.catalog[&inst.nsd].package.clone();
        let units: Vec<(String, String)> = inst.units.iter().map(|u| (u.name.clone(), u.vnfd.clone())).collect();
        for (unit, vnfd_id) in &units {
            let vnfd = pkg.vnfd(vnfd_id).expect("placed");
            for prim in &vnfd.day1_primitives {
                if let Err(reason) = self.exec_primitive(ns, unit, &prim.name, &prim.params, "day1") {
                    self.set_phase(ns, NsPhase::Failed);
                    return Err(OrchestratorError::Day1Failure { unit: unit.clone(), action: prim.name.clone(), reason });
                }
            }
        }
        self.process_relation_events(ns);
        let deadline = self.fabric.now() + self.config.peering_timeout;
        let rels: Vec<RelationRecord> = self.ns(ns)?.relations.clone();
        let pairs = self.relation_pairs(ns, &rels);
        let done = |rt: &Runtime, _: &Fabric| pairs.iter().all(|p| pair_confirmed(rt, p));
        if !self.pump_until(deadline, done) {
            let rt = &self.rt;
            let failed = rels.iter().zip(&pairs).find(|(_, p)| !pair_confirmed(rt, p)).map(|(r, _)| r.name.clone());
            self.set_phase(ns, NsPhase::Failed);
            return Err(OrchestratorError::PeeringTimeout(failed.unwrap_or_default()));
        }
        self.set_phase(ns, NsPhase::Ready);
        Ok(())
    }

    fn set_phase(&mut self, ns: &str, phase: NsPhase) {
        if let Some(i) = self.instances.get_mut(ns) {
            i.phase = phase;
        }
    }

    /// (provider node, provider wg, requirer node, requirer wg) per relation.
    fn relation_pairs(&self, ns: &str, rels: &[RelationRecord]) -> Vec<(NodeId, String, NodeId, String)> {
        let inst = &self.instances[ns];
        rels.iter()
            .map(|r| {
                let p = inst.unit(&r.provider).expect("member").node;
                let q = inst.unit(&r.requirer).expect("member").node;
                let wg = |n: NodeId| self.rt.units[&n].wg_for_relation(r.id).map(|w| w.name.clone()).unwrap_or_default();
                (p, wg(p), q, wg(q))
            })
            .collect()
    }

    /// Drives the fabric until `done` holds or `deadline` passes.
    fn pump_until(&mut self, deadline: Duration, mut done: impl FnMut(&Runtime, &Fabric) -> bool) -> bool {
        if done(&self.rt, &self.fabric) {
            return true;
        }
        let rt = &mut self.rt;
        let flag = Cell::new(false);
        self.fabric.run_until(
            deadline,
            &mut |fab, ev| {
                rt.on_event(fab, ev);
                if done(rt, fab) {
                    flag.set(true);
                }
            },
            |_| flag.get(),
        );
        flag.get()
    }

    /// Advances virtual time, processing traffic, by `duration`.
    pub fn advance(&mut self, duration: Duration) {
        let deadline = self.fabric.now() + duration;
        self.pump_until(deadline, |_, _| false);
    }

    /// Delivers pending relation events to every unit of `ns` until quiescent.
    fn process_relation_events(&mut self, ns: &str) {
        let Some(inst) = self.instances.get(ns) else { return };
        let units: Vec<(String, NodeId)> = inst.units.iter().map(|u| (u.name.clone(), u.node)).collect();
        loop {
            let mut progressed = false;
            for (name, node) in &units {
                while let Some(ev) = self.bus.next_event(name) {
                    progressed = true;
                    if ev.kind != EventKind::Departed {
                        self.apply_remote_bag(name, *node, ev.relation);
                    }
                    self.bus.ack(name);
                }
            }
            if !progressed {
                break;
            }
        }
    }

    /// Relation-changed handler: installs the counterpart as a peer. Idempotent.
    fn apply_remote_bag(&mut self, name: &str, node: NodeId, rel: RelationId) {
        let Ok(bag) = self.bus.read_remote(rel, name) else { return };
        let (Some(key), Some(host), Some(port)) = (bag.get(KEY_PUBLIC_KEY), bag.get(KEY_ENDPOINT_HOST), bag.get(KEY_ENDPOINT_PORT))
        else {
            return;
        };
        let (Ok(public_key), Ok(endpoint), Ok(port)) = (PublicKey::from_base64(key), host.parse::<Ipv4Addr>(), port.parse::<u16>())
        else {
            return;
        };
        let Some(&peer_node) = self.rt.address_book.get(&endpoint) else { return };
        let spec = PeerSpec {
            public_key,
            endpoint,
            port,
            tunnel_address: bag.get(KEY_TUNNEL_ADDRESS).and_then(|a| a.parse().ok()),
            allowed_cidrs: bag.get(KEY_ALLOWED_CIDRS).unwrap_or_default().to_string(),
        };
        let unit = self.rt.units.get_mut(&node).expect("registered");
        let Some(w) = unit.wg_for_relation(rel) else { return };
        let (wg, initiator) = (w.name.clone(), w.initiator);
        let Some((slot, changed)) = unit.apply_peer(&wg, spec, peer_node) else { return };
        if changed && initiator {
            let mut effects = Vec::new();
            if unit.initiate(&mut self.fabric, &wg, slot, &mut effects).is_ok() {
                self.rt.apply_effects(&mut self.fabric, node, effects);
            }
        }
    }

    /// Address and listening port of `unit` as reachable from `requesting_site`.
    pub fn resolve_endpoint(&self, ns: &str, unit: &str, requesting_site: &str, relation: Option<&str>) -> Result<(Ipv4Addr, u16)> {
        let rec = self.unit_record(ns, unit)?;
        self.vim_index(requesting_site)?;
        let addr = if rec.site == requesting_site { rec.internal_address } else { rec.floating_address };
        let u = &self.rt.units[&rec.node];
        let inst = self.ns(ns)?;
        let port = relation
            .and_then(|r| inst.relations.iter().find(|x| x.name == r && (x.provider == rec.name || x.requirer == rec.name)))
            .and_then(|r| u.wg_for_relation(r.id))
            .or_else(|| u.wg_interfaces().next())
            .map_or(BASE_PORT, |w| w.port);
        Ok((addr, port))
    }

    fn log_action(&mut self, ns: &str, unit: &str, action: &str, phase: &'static str, params: &BTreeMap<String, String>, outcome: &std::result::Result<BTreeMap<String, String>, String>) {
        self.action_seq += 1;
        let at_us = self.fabric.now().as_micros() as u64;
        let params = params
            .iter()
            .map(|(k, v)| (k.clone(), if k == "key" { "<redacted>".to_string() } else { v.clone() }))
            .collect();
        let (ok, detail) = match outcome {
            Ok(out) => (true, out.clone()),
            Err(e) => (false, BTreeMap::from([("error".to_string(), e.clone())])),
        };
        if let Some(inst) = self.instances.get_mut(ns) {
            inst.actions.push(ActionLogEntry { seq: self.action_seq, at_us, unit: unit.into(), action: action.into(), phase, params, ok, detail });
        }
    }

    /// Executes one primitive inside a unit through its management proxy.
    fn exec_primitive(
        &mut self,
        ns: &str,
        unit: &str,
        action: &str,
        params: &BTreeMap<String, String>,
        phase: &'static str,
    ) -> std::result::Result<BTreeMap<String, String>, String> {
        let out = self.exec_inner(ns, unit, action, params);
        self.log_action(ns, unit, action, phase, params, &out);
        out
    }

    fn exec_inner(&mut self, ns: &str, unit: &str, action: &str, params: &BTreeMap<String, String>) -> std::result::Result<BTreeMap<String, String>, String> {
        let inst = self.instances.get(ns).ok_or("unknown NS")?;
        let rec = inst.unit(unit).ok_or("unknown unit")?.clone();
        let wireguard = inst.wireguard;
        let rels: Vec<RelationRecord> =
            inst.relations.iter().filter(|r| r.provider == rec.name || r.requirer == rec.name).cloned().collect();
        let mut out = BTreeMap::new();
        match action {
            "configure-nf" => {
                let hostname = params.get("hostname").ok_or("missing hostname")?;
                let u = self.rt.units.get_mut(&rec.node).expect("placed");
                u.hostname = Some(hostname.clone());
                if let Some(nf) = u.nf.as_mut() {
                    nf.config_mut().hostname = hostname.clone();
                }
                out.insert("hostname".into(), hostname.clone());
            }
            "generate-wgkey" => {
                if !wireguard {
                    out.insert("skipped".into(), "wireguard disabled".into());
                    return Ok(out);
                }
                let u = self.rt.units.get_mut(&rec.node).expect("placed");
                for r in &rels {
                    let provider = r.provider == rec.name;
                    let address = Ipv4Addr::new(TUNNEL_NET[0], TUNNEL_NET[1], r.octet, if provider { 1 } else { 2 });
                    let wg = format!("wg-{}", r.interface);
                    let w = u.create_wg(&wg, Some(&r.interface), address, 24, !provider, Some(r.id));
                    out.insert(wg, w.public_key().to_base64());
                }
            }
            "join-wgpeer" => {
                if !wireguard {
                    out.insert("skipped".into(), "wireguard disabled".into());
                    return Ok(out);
                }
                for r in &rels {
                    self.bus.join(r.id, &rec.name).map_err(|e| e.to_string())?;
                    self.publish_unit_data(ns, &rec, r)?;
                    out.insert(r.name.clone(), "joined".into());
                }
            }
            "add-peer" => return self.action_add_peer(&rec, params),
            "rotate-key" => return self.action_rotate_key(ns, &rec, &rels),
            "create-interface" => {
                let name = params.get("name").ok_or("missing name")?;
                let (addr, len) = params.get("address").ok_or("missing address")?.split_once('/').unwrap_or((&params["address"], "32"));
                let address: Ipv4Addr = addr.parse().map_err(|_| format!("bad address {addr}"))?;
                let prefix_len: u8 = len.parse().ok().filter(|l| *l <= 32).ok_or_else(|| format!("bad prefix length {len}"))?;
                let link = params
                    .get("link")
                    .cloned()
                    .or_else(|| name.strip_prefix("wg-").map(str::to_string))
                    .ok_or("missing link")?;
                if self.fabric.interface_link(rec.node, &link).is_none() {
                    return Err(format!("{} has no interface {link}", rec.name));
                }
                let u = self.rt.units.get_mut(&rec.node).expect("placed");
                if u.wg(name).is_some() {
                    return Err(format!("interface {name} already exists"));
                }
                let w = u.create_wg(name, Some(&link), address, prefix_len, true, None);
                out.insert("public_key".into(), w.public_key().to_base64());
                out.insert("port".into(), w.port.to_string());
            }
            "provision-subscribers" => {
                let u = self.rt.units.get_mut(&rec.node).expect("placed");
                let Some(Nf::Hss(hss)) = u.nf.as_mut() else { return Err("not an HSS".into()) };
                let imsi = params.get("imsi").ok_or("missing imsi")?;
                let key = params.get("key").ok_or("missing key")?;
                let realm = hss.config.realm.clone();
                let record = SubscriberRecord::new(imsi, key, params.get("apn").map(String::as_str), Some(&realm))
                    .map_err(|e| e.to_string())?;
                hss.provision(record);
                out.insert("subscribers".into(), hss.subscribers.len().to_string());
            }
            other => return Err(format!("no handler for {other}")),
        }
        Ok(out)
    }

    /// Publishes a unit's public peering data; the endpoint host is resolved by
    /// the orchestrator for the counterpart's site.
    fn publish_unit_data(&mut self, ns: &str, rec: &UnitRecord, r: &RelationRecord) -> std::result::Result<(), String> {
        let inst = &self.instances[ns];
        let other = if r.provider == rec.name { &r.requirer } else { &r.provider };
        let other_site = inst.unit(other).expect("member").site.clone();
        let (host, _) = self.resolve_endpoint(ns, &rec.name, &other_site, None).map_err(|e| e.to_string())?;
        let u = &self.rt.units[&rec.node];
        let w = u.wg_for_relation(r.id).ok_or_else(|| format!("no tunnel interface for {}", r.name))?;
        let entries = [
            (KEY_PUBLIC_KEY, w.public_key().to_base64()),
            (KEY_ENDPOINT_HOST, host.to_string()),
            (KEY_ENDPOINT_PORT, w.port.to_string()),
            (KEY_TUNNEL_ADDRESS, w.address.to_string()),
            (KEY_ALLOWED_CIDRS, r.subnet.clone()),
        ];
        self.bus.publish(r.id, &rec.name, entries).map_err(|e| e.to_string())?;
        Ok(())
    }

    fn action_add_peer(&mut self, rec: &UnitRecord, params: &BTreeMap<String, String>) -> std::result::Result<BTreeMap<String, String>, String> {
        let public_key = PublicKey::from_base64(params.get("public_key").ok_or("missing public_key")?).map_err(|e| e.to_string())?;
        let endpoint: Ipv4Addr = params.get("endpoint").ok_or("missing endpoint")?.parse().map_err(|_| "bad endpoint address")?;
        let port: u16 = params.get("port").ok_or("missing port")?.parse().map_err(|_| "bad port")?;
        let peer_node = *self.rt.address_book.get(&endpoint).ok_or_else(|| format!("no host at {endpoint}"))?;
        let u = self.rt.units.get_mut(&rec.node).expect("placed");
        let wg = match params.get("interface") {
            Some(i) => i.clone(),
            None => {
                let mut names = u.wg_interfaces().map(|w| w.name.clone());
                match (names.next(), names.next()) {
                    (Some(n), None) => n,
                    _ => return Err("interface parameter required".into()),
                }
            }
        };
        let w = u.wg(&wg).ok_or_else(|| format!("no tunnel interface {wg}"))?;
        let link_iface = w.link_iface.clone().ok_or("interface is not bound to a link")?;
        let link = self.fabric.interface_link(rec.node, &link_iface).ok_or("link detached")?;
        if !self.fabric.link_endpoints(link).iter().any(|(n, _)| *n == peer_node) {
            return Err(format!("{endpoint} is not reachable over {link_iface}"));
        }
        let spec = PeerSpec {
            public_key,
            endpoint,
            port,
            tunnel_address: None,
            allowed_cidrs: params.get("allowed_cidrs").cloned().unwrap_or_default(),
        };
        let (slot, _) = u.apply_peer(&wg, spec, peer_node).ok_or("peer rejected")?;
        let mut effects = Vec::new();
        u.initiate(&mut self.fabric, &wg, slot, &mut effects).map_err(|e| e.to_string())?;
        self.rt.apply_effects(&mut self.fabric, rec.node, effects);
        let node = rec.node;
        let deadline = self.fabric.now() + Duration::from_secs(1);
        let established = self.pump_until(deadline, |rt, _| rt.units[&node].peer(&wg, peer_node).is_some_and(|p| p.confirmed()));
        Ok(BTreeMap::from([
            ("interface".to_string(), wg),
            ("established".to_string(), established.to_string()),
        ]))
    }

    fn action_rotate_key(&mut self, ns: &str, rec: &UnitRecord, rels: &[RelationRecord]) -> std::result::Result<BTreeMap<String, String>, String> {
        let t0 = self.fabric.now();
        let node = rec.node;
        let names: Vec<String> = self.rt.units[&node].wg_interfaces().map(|w| w.name.clone()).collect();
        if names.is_empty() {
            return Err("unit has no tunnel interfaces".into());
        }
        let mut out = BTreeMap::new();
        for wg in &names {
            let key = self.rt.units.get_mut(&node).expect("placed").rotate_key(wg).expect("listed");
            out.insert(wg.clone(), key.to_base64());
        }
        for r in rels {
            self.publish_unit_data(ns, rec, r)?;
        }
        self.process_relation_events(ns);
        for wg in &names {
            let u = self.rt.units.get_mut(&node).expect("placed");
            if u.wg(wg).is_some_and(|w| w.initiator) {
                let mut effects = Vec::new();
                u.initiate_all(&mut self.fabric, wg, &mut effects).map_err(|e| e.to_string())?;
                self.rt.apply_effects(&mut self.fabric, node, effects);
            }
        }
        // every peer pair must be running on a session newer than the rotation
        let mut pairs = Vec::new();
        for wg in &names {
            for p in &self.rt.units[&node].wg(wg).expect("listed").peers {
                let remote = &self.rt.units[&p.node];
                if let Some(rw) = remote.wg_interfaces().find(|w| w.peers.iter().any(|q| q.node == node)) {
                    pairs.push((node, wg.clone(), p.node, rw.name.clone()));
                }
            }
        }
        let deadline = t0 + self.config.peering_timeout;
        let fresh = |rt: &Runtime, _: &Fabric| {
            pairs.iter().all(|(a, wa, b, wb)| {
                rt.units[a].peer(wa, *b).is_some_and(|p| p.current_since(t0)) && rt.units[b].peer(wb, *a).is_some_and(|p| p.current_since(t0))
            })
        };
        if !self.pump_until(deadline, fresh) {
            return Err("peers did not re-handshake".into());
        }
        for (a, wa, b, wb) in &pairs {
            self.rt.units.get_mut(a).expect("placed").expire_previous(wa);
            self.rt.units.get_mut(b).expect("placed").expire_previous(wb);
        }
        Ok(out)
    }

    /// Runs a Day-2 primitive declared by the unit's VNFD.
    pub fn run_action(&mut self, ns: &str, unit: &str, action: &str, params: &BTreeMap<String, String>) -> Result<ActionResult> {
        let inst = self.ready(ns)?;
        let rec = inst.unit(unit).ok_or_else(|| OrchestratorError::UnknownUnit(unit.into()))?.clone();
        let vnfd = self.catalog[&inst.nsd].package.vnfd(&rec.vnfd).expect("placed").clone();
        let spec = vnfd
            .action(action)
            .filter(|a| a.phase.allows_day2() && vnfd.day2_primitives.iter().any(|p| p.name == action))
            .ok_or_else(|| OrchestratorError::UnknownAction { unit: rec.name.clone(), action: action.into() })?;
        let failed = |reason: String| OrchestratorError::ActionFailed { action: action.into(), reason };
        for p in &spec.params {
            match params.get(&p.name) {
                None if p.required => return Err(failed(format!("missing required parameter {}", p.name))),
                Some(v) if !p.kind.accepts(v) => {
                    return Err(failed(format!("parameter {} expects {}", p.name, p.kind.as_str())));
                }
                _ => {}
            }
        }
        if let Some(k) = params.keys().find(|k| spec.param(k).is_none()) {
            return Err(failed(format!("unknown parameter {k}")));
        }
        debug_assert!(spec.params.iter().all(|p| p.kind != ParamType::Bool || !p.required || params.contains_key(&p.name)));
        let output = self.exec_primitive(ns, &rec.name, action, params, "day2").map_err(failed)?;
        Ok(ActionResult { unit: rec.name, action: action.into(), output })
    }

    /// Creates a slice: NS with tunnels on, a scheduling class from the QoS profile and KPI thresholds.
    pub fn instantiate_nsi(&mut self, nst_id: &str, placement: &Placement, mut options: InstantiateOptions) -> Result<String> {
        let (nst, _) = self.find_nst(nst_id).ok_or_else(|| OrchestratorError::UnknownNst(nst_id.into()))?;
        let nst = nst.clone();
        self.next_class += 1;
        let class = self.next_class;
        let dscp = dscp_for_5qi(nst.qos.five_qi);
        self.fabric.define_class(class, ClassSpec { weight: nst.qos.weight(), dscp });
        options.wireguard = true;
        options.class = class;
        let ns = self.instantiate_ns(&nst.nsd_ref, placement, options)?;
        self.next_nsi += 1;
        let id = format!("nsi-{}", self.next_nsi);
        self.slices.insert(
            id.clone(),
            NsiInstance {
                id: id.clone(),
                nst: nst.id.clone(),
                ns,
                slice_type: nst.slice_type,
                kpi: SliceKpi::for_slice(nst.slice_type),
                qos: nst.qos.clone(),
                class,
                dscp,
                exposed_interfaces: nst.exposed_interfaces.clone(),
            },
        );
        Ok(id)
    }

    /// Tears an NS down and returns every resource. Repeated calls do nothing.
    pub fn terminate(&mut self, ns: &str) -> NsPhase {
        let Some(inst) = self.instances.get(ns) else { return NsPhase::Terminated };
        if inst.phase == NsPhase::Terminated {
            return NsPhase::Terminated;
        }
        let inst = inst.clone();
        for r in &inst.relations {
            let _ = self.bus.depart(r.id);
            self.subnets.remove(&r.octet);
        }
        for l in &inst.links {
            if let Some(t) = l.tap {
                self.fabric.detach_tap(t);
            }
            self.fabric.disconnect(l.id);
        }
        for u in &inst.units {
            self.bus.remove_unit(&u.name);
            self.fabric.remove_node(u.node);
            self.rt.units.remove(&u.node);
            self.rt.address_book.retain(|_, n| *n != u.node);
            self.rt.attach_results.retain(|(n, _), _| *n != u.node);
            if let Some(v) = self.vims.iter_mut().find(|v| v.name == u.site) {
                v.allocated = v.allocated.minus(u.resources);
                v.floating.remove(&u.name);
            }
        }
        let nodes: BTreeSet<NodeId> = inst.units.iter().map(|u| u.node).collect();
        self.rt.flows.retain(|_, f| match &f.path {
            FlowPath::Interface { src, dst, .. } => !nodes.contains(src) && !nodes.contains(dst),
            FlowPath::UserPlane { ue, spgwu } => !nodes.contains(ue) && !nodes.contains(spgwu),
        });
        self.set_phase(ns, NsPhase::Terminated);
        NsPhase::Terminated
    }

    // ---- registry and state ----

    /// Established interface sessions of `ns`; empty when tunnels are off.
    pub fn tunnel_registry(&self, ns: &str) -> Result<Vec<TunnelRegistryEntry>> {
        let inst = self.ns(ns)?;
        let mut out = Vec::new();
        for u in &inst.units {
            let Some(unit) = self.rt.units.get(&u.node) else { continue };
            for w in unit.wg_interfaces() {
                for p in &w.peers {
                    let Some(s) = p.session() else { continue };
                    out.push(TunnelRegistryEntry {
                        unit: u.name.clone(),
                        interface: w.name.clone(),
                        link: w.link_iface.clone(),
                        peer: self.fabric.node_name(p.node).to_string(),
                        local_index: s.local_index(),
                        remote_index: s.remote_index(),
                        established_at_us: s.established_at().as_micros() as u64,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn tunnels(&self, ns: &str, unit: &str) -> Result<Vec<TunnelInfo>> {
        Ok(self.unit(ns, unit)?.tunnels())
    }

    /// Relation bags of `ns`, keyed by relation name then unit.
    pub fn relation_show(&self, ns: &str) -> Result<Value> {
        let inst = self.ns(ns)?;
        let mut rels = Vec::new();
        for r in &inst.relations {
            let state = self.bus.relation(r.id).map(|x| format!("{:?}", x.state)).unwrap_or_default();
            let mut bags = serde_json::Map::new();
            for unit in [&r.provider, &r.requirer] {
                if let Ok(bag) = self.bus.read_local(r.id, unit) {
                    bags.insert(unit.clone(), json!(bag.entries));
                }
            }
            rels.push(json!({
                "id": r.id.to_string(),
                "name": r.name,
                "provider": r.provider,
                "requirer": r.requirer,
                "interface": r.interface,
                "subnet": r.subnet,
                "state": state,
                "bags": bags,
            }));
        }
        Ok(Value::Array(rels))
    }

    /// Bag of `unit` on relation `relation`.
    pub fn relation_bag(&self, ns: &str, relation: &str, unit: &str) -> Result<BTreeMap<String, String>> {
        let inst = self.ns(ns)?;
        let rec = inst.unit(unit).ok_or_else(|| OrchestratorError::UnknownUnit(unit.into()))?;
        let r = inst
            .relations
            .iter()
            .find(|r| r.name == relation && (r.provider == rec.name || r.requirer == rec.name))
            .ok_or_else(|| OrchestratorError::UnknownLink(relation.into()))?;
        Ok(self.bus.read_local(r.id, &rec.name)?.entries)
    }

    /// JSON state dump with public data only.
    pub fn show(&self, ns: &str) -> Result<Value> {
        let inst = self.ns(ns)?;
        let mut tunnels = serde_json::Map::new();
        for u in &inst.units {
            if let Some(unit) = self.rt.units.get(&u.node) {
                let t = unit.tunnels();
                if !t.is_empty() {
                    tunnels.insert(u.name.clone(), json!(t));
                }
            }
        }
        let slice = self.slices.values().find(|s| s.ns == ns);
        Ok(json!({
            "id": inst.id,
            "nsd": inst.nsd,
            "phase": inst.phase,
            "wireguard": inst.wireguard,
            "flavor_multiplier": inst.flavor_multiplier.to_string(),
            "placement": inst.units.iter().map(|u| (u.name.clone(), u.site.clone())).collect::<BTreeMap<_, _>>(),
            "units": inst.units,
            "links": inst.links,
            "relations": self.relation_show(ns)?,
            "tunnels": tunnels,
            "registry": self.tunnel_registry(ns)?,
            "actions": inst.actions,
            "slice": slice,
        }))
    }

    /// Counts occurrences of the given secrets, in any common text or binary
    /// encoding, across orchestrator state, relation bags and the catalog.
    pub fn sweep_for_secrets(&self, secrets: &[[u8; 32]]) -> usize {
        let mut corpus = String::new();
        for ns in self.instances.keys() {
            if let Ok(v) = self.show(ns) {
                corpus.push_str(&v.to_string());
            }
        }
        for v in self.bus.all_bag_values() {
            corpus.push_str(v);
            corpus.push('\n');
        }
        for e in self.catalog.values() {
            let p = &e.package;
            for v in &p.vnfds {
                corpus.push_str(&serialize_vnfd(v));
            }
            corpus.push_str(&serialize_nsd(&p.nsd));
            for n in &p.nsts {
                corpus.push_str(&serialize_nst(n));
            }
        }
        corpus.push_str(&serde_json::to_string(&self.vims).unwrap_or_default());
        corpus.push_str(&serde_json::to_string(&self.slices).unwrap_or_default());
        let bytes = corpus.as_bytes();
        secrets
            .iter()
            .map(|s| {
                let hex: String = s.iter().map(|b| format!("{b:02x}")).collect();
                [encode_key(s).into_bytes(), hex.into_bytes(), s.to_vec()]
                    .iter()
                    .filter(|n| crate::netem::contains(bytes, n))
                    .count()
            })
            .sum()
    }

    /// Private keys held by the units of `ns`, for locality checks.
    #[doc(hidden)]
    pub fn unit_private_keys(&self, ns: &str) -> Vec<[u8; 32]> {
        let Ok(inst) = self.ns(ns) else { return Vec::new() };
        inst.units.iter().filter_map(|u| self.rt.units.get(&u.node)).flat_map(Unit::private_keys).collect()
    }

    // ---- EPS runtime ----

    fn node_of_kind(&self, ns: &str, kind: NfKind) -> Result<NodeId> {
        let inst = self.ns(ns)?;
        inst.units
            .iter()
            .find(|u| self.rt.units.get(&u.node).and_then(|x| x.nf.as_ref()).is_some_and(|nf| nf.kind() == kind))
            .map(|u| u.node)
            .ok_or_else(|| OrchestratorError::UnknownUnit(kind.as_str().into()))
    }

    /// Runs one UE attach and waits for its outcome.
    pub fn attach(&mut self, ns: &str, imsi: &str) -> Result<AttachReport> {
        self.ready(ns)?;
        let ue = self.node_of_kind(ns, NfKind::Ue)?;
        let mme = self.node_of_kind(ns, NfKind::Mme)?;
        let start = self.fabric.now();
        self.rt.attach_results.remove(&(ue, imsi.to_string()));
        let mut out = Vec::new();
        let Some(Nf::Ue(u)) = self.rt.units.get_mut(&ue).and_then(|u| u.nf.as_mut()) else {
            return Err(OrchestratorError::UnknownUnit("ue".into()));
        };
        let before = u.attempts();
        u.start_attach(imsi, &mut out);
        self.rt.process_actions(&mut self.fabric, ue, out);
        let key = (ue, imsi.to_string());
        let deadline = start + self.config.attach_timeout;
        if !self.pump_until(deadline, |rt, _| rt.attach_results.contains_key(&key)) {
            return Err(OrchestratorError::AttachTimeout(imsi.into()));
        }
        let AttachOutcome { accepted, ue_ip, at } = self.rt.attach_results[&key].clone();
        if !accepted {
            return Err(OrchestratorError::AttachRejected(imsi.into()));
        }
        let Some(Nf::Mme(m)) = self.rt.units[&mme].nf.as_ref() else { unreachable!("mme node") };
        let context = m.context(imsi).cloned().ok_or_else(|| OrchestratorError::AttachRejected(imsi.into()))?;
        debug_assert_eq!(context.state, AttachState::Attached);
        let Some(Nf::Ue(u)) = self.rt.units[&ue].nf.as_ref() else { unreachable!("ue node") };
        Ok(AttachReport { context, attempts: u.attempts() - before, ue_ip, elapsed: at - start })
    }

    /// Diameter service-response samples recorded at the MME.
    pub fn srt_samples(&self, ns: &str) -> Result<Vec<SrtSample>> {
        let mme = self.node_of_kind(ns, NfKind::Mme)?;
        let Some(Nf::Mme(m)) = self.rt.units[&mme].nf.as_ref() else { unreachable!("mme node") };
        Ok(m.srt_samples().to_vec())
    }

    pub fn nf(&self, ns: &str, unit: &str) -> Result<&Nf> {
        self.unit(ns, unit)?.nf.as_ref().ok_or_else(|| OrchestratorError::UnknownUnit(unit.into()))
    }

    pub fn nf_mut(&mut self, ns: &str, unit: &str) -> Result<&mut Nf> {
        let node = self.unit_record(ns, unit)?.node;
        self.rt.units.get_mut(&node).and_then(|u| u.nf.as_mut()).ok_or_else(|| OrchestratorError::UnknownUnit(unit.into()))
    }

    /// Sends an EPS message from `unit` on `iface` as its NF would.
    pub fn send_eps(&mut self, ns: &str, unit: &str, iface: &str, msg: &crate::eps::EpsMessage) -> Result<()> {
        let node = self.unit_record(ns, unit)?.node;
        self.rt.send_eps(&mut self.fabric, node, iface, msg);
        Ok(())
    }

    // ---- probes ----

    fn interface_path(&self, ns: &str, link: &str) -> Result<FlowPath> {
        let inst = self.ready(ns)?;
        let l = inst.link(link).ok_or_else(|| OrchestratorError::UnknownLink(link.into()))?;
        let src = inst.unit(&l.ends[0].0).expect("member").node;
        let dst = inst.unit(&l.ends[1].0).expect("member").node;
        Ok(FlowPath::Interface { src, iface: l.ends[0].1.clone(), dst })
    }

    fn user_path(&self, ns: &str) -> Result<FlowPath> {
        self.ready(ns)?;
        let ue = self.node_of_kind(ns, NfKind::Ue)?;
        let spgwu = self.node_of_kind(ns, NfKind::Spgwu)?;
        match self.rt.units[&ue].nf.as_ref() {
            Some(Nf::Ue(u)) if u.state() == AttachState::Attached => Ok(FlowPath::UserPlane { ue, spgwu }),
            _ => Err(OrchestratorError::NotAttached),
        }
    }

    /// Starts an echo flow over `link` from its first endpoint to its second.
    pub fn start_latency(&mut self, ns: &str, link: &str, count: u32, interval: Duration, size: usize) -> Result<u32> {
        let path = self.interface_path(ns, link)?;
        Ok(self.rt.start_flow(&mut self.fabric, path, FlowKind::Latency { count, interval, size }))
    }

    /// Starts a greedy flow over `link` from its first endpoint to its second.
    pub fn start_throughput(&mut self, ns: &str, link: &str, duration: Duration, size: usize) -> Result<u32> {
        let path = self.interface_path(ns, link)?;
        let kind = FlowKind::Throughput { duration, size, window: THROUGHPUT_WINDOW };
        Ok(self.rt.start_flow(&mut self.fabric, path, kind))
    }

    pub fn start_user_latency(&mut self, ns: &str, count: u32, interval: Duration, size: usize) -> Result<u32> {
        let path = self.user_path(ns)?;
        Ok(self.rt.start_flow(&mut self.fabric, path, FlowKind::Latency { count, interval, size }))
    }

    pub fn start_user_throughput(&mut self, ns: &str, duration: Duration, size: usize) -> Result<u32> {
        let path = self.user_path(ns)?;
        let kind = FlowKind::Throughput { duration, size, window: THROUGHPUT_WINDOW };
        Ok(self.rt.start_flow(&mut self.fabric, path, kind))
    }

    /// Runs the fabric until every listed flow has finished, then collects results.
    pub fn wait_flows(&mut self, ids: &[u32]) -> Vec<FlowResult> {
        let horizon = ids
            .iter()
            .filter_map(|id| self.rt.flows.get(id))
            .map(|f| match f.kind {
                FlowKind::Latency { count, interval, .. } => f.start + interval * count + runtime::ECHO_GRACE,
                FlowKind::Throughput { duration, .. } => f.start + duration,
            })
            .max()
            .unwrap_or_default()
            + Duration::from_secs(1);
        let ids_owned = ids.to_vec();
        self.pump_until(horizon.max(self.fabric.now()), |rt, _| rt.flows_done(&ids_owned));
        ids.iter()
            .map(|id| {
                self.rt
                    .flows
                    .remove(id)
                    .map(|mut f| {
                        f.finish();
                        f.result
                    })
                    .unwrap_or_default()
            })
            .collect()
    }

    pub fn latency_probe(&mut self, ns: &str, link: &str, count: u32, interval: Duration, size: usize) -> Result<FlowResult> {
        let id = self.start_latency(ns, link, count, interval, size)?;
        Ok(self.wait_flows(&[id]).remove(0))
    }

    pub fn throughput_probe(&mut self, ns: &str, link: &str, duration: Duration, size: usize) -> Result<FlowResult> {
        let id = self.start_throughput(ns, link, duration, size)?;
        Ok(self.wait_flows(&[id]).remove(0))
    }

    /// Largest application payload one frame on `link` carries from its first endpoint.
    pub fn payload_cap(&self, ns: &str, link: &str) -> Result<usize> {
        let inst = self.ns(ns)?;
        let l = inst.link(link).ok_or_else(|| OrchestratorError::UnknownLink(link.into()))?;
        let node = inst.unit(&l.ends[0].0).expect("member").node;
        self.rt.units[&node].payload_cap(&self.fabric, &l.ends[0].1).ok_or_else(|| OrchestratorError::UnknownLink(link.into()))
    }

    // ---- taps and injection ----

    /// Attaches taps to every link of `ns` and returns (link name, tap).
    pub fn tap_links(&mut self, ns: &str) -> Result<Vec<(String, TapId)>> {
        let links: Vec<(usize, LinkId)> = self.ns(ns)?.links.iter().enumerate().map(|(i, l)| (i, l.id)).collect();
        let mut out = Vec::new();
        for (i, id) in links {
            let tap = self.fabric.attach_tap(id);
            let inst = self.instances.get_mut(ns).expect("checked");
            inst.links[i].tap = Some(tap);
            out.push((inst.links[i].name.clone(), tap));
        }
        Ok(out)
    }

    /// Stops recording on every tapped link of `ns`; captured frames stay readable.
    pub fn untap_links(&mut self, ns: &str) -> Result<()> {
        let taps: Vec<TapId> = self.ns(ns)?.links.iter().filter_map(|l| l.tap).collect();
        for t in taps {
            self.fabric.detach_tap(t);
        }
        Ok(())
    }

    /// Needle matches per tapped link of `ns`.
    pub fn scan_taps(&self, ns: &str, needle: &[u8]) -> Result<BTreeMap<String, usize>> {
        Ok(self
            .ns(ns)?
            .links
            .iter()
            .filter_map(|l| l.tap.map(|t| (l.name.clone(), self.fabric.scan_tap(t, needle))))
            .collect())
    }

    /// Hands application bytes to `unit` for sending on `iface`, as its software would.
    pub fn inject_app_frame(&mut self, ns: &str, unit: &str, iface: &str, payload: &[u8]) -> Result<()> {
        let node = self.unit_record(ns, unit)?.node;
        let u = self.rt.units.get_mut(&node).expect("placed");
        let mut effects = Vec::new();
        u.send_app(&mut self.fabric, iface, payload, &mut effects)?;
        self.rt.apply_effects(&mut self.fabric, node, effects);
        Ok(())
    }

    /// Puts raw bytes on the wire from `unit` over `iface`, bypassing its tunnel.
    pub fn inject_raw(&mut self, ns: &str, unit: &str, iface: &str, payload: &[u8], dst_port: u16) -> Result<()> {
        let node = self.unit_record(ns, unit)?.node;
        let link = self.fabric.interface_link(node, iface).ok_or_else(|| OrchestratorError::UnknownLink(iface.into()))?;
        let ends = self.fabric.link_endpoints(link);
        let dst = if ends[0].0 == node { ends[1].0 } else { ends[0].0 };
        let opts = crate::netem::SendOptions { dst_port, ..Default::default() };
        self.fabric.send(node, iface, dst, payload, opts)?;
        Ok(())
    }

    /// Site of a unit.
    pub fn unit_site(&self, ns: &str, unit: &str) -> Result<String> {
        Ok(self.unit_record(ns, unit)?.site.clone())
    }

    /// Public key of the tunnel interface `wg` in `unit`.
    pub fn public_key(&self, ns: &str, unit: &str, wg: &str) -> Result<PublicKey> {
        self.unit(ns, unit)?.wg(wg).map(|w| w.public_key()).ok_or_else(|| OrchestratorError::UnknownLink(wg.into()))
    }

    /// Underlying NSD of an instance.
    pub fn nsd_of(&self, ns: &str) -> Result<&Nsd> {
        let inst = self.ns(ns)?;
        Ok(&self.catalog[&inst.nsd].package.nsd)
    }
}

fn pair_confirmed(rt: &Runtime, (p, pw, q, qw): &(NodeId, String, NodeId, String)) -> bool {
    let ok = |a: &NodeId, w: &str, b: &NodeId| rt.units.get(a).and_then(|u| u.peer(w, *b)).is_some_and(|x| x.confirmed());
    ok(p, pw, q) && ok(q, qw, p)
}
