//! Measurement harness: scenario recipes, probe statistics, KPI verdicts
//! and report export.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{eps_package, Decimal, SliceType};
use crate::netem::{Capacity, LinkParams};
use crate::orchestrator::{
    InstantiateOptions, Orchestrator, OrchestratorConfig, OrchestratorError, Placement, Resources, VimConfig,
    EMBB_DL_MBPS, URLLC_LATENCY_MS,
};

pub const REPORT_FORMAT: &str = "sliceguard-report/1";

pub const SCENARIOS: [&str; 8] =
    ["eps-plain", "eps-wg", "eps-wg-2x", "nsi-embb", "nsi-urllc", "nsi-both", "multisite-plain", "multisite-wg"];

pub const PRIMARY_SITE: &str = "vim1";
pub const SECONDARY_SITE: &str = "vim2";
pub const INTERSITE_MBPS: f64 = 180.0;
pub const INTERSITE_DELAY: Duration = Duration::from_micros(9180);
pub const SUBSCRIBER_KEY: &str = "8baf473f2f8fd09487cccbd7097c6862";
pub const DEFAULT_PROBE_INTERFACES: [&str; 3] = ["S1-C", "S1-U", "S6a"];
/// ICMP echo with the default 56-byte body.
pub const LATENCY_PROBE_SIZE: usize = 64;
pub const USER_PLANE_INTERFACE: &str = "Uu";
const SETTLE: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown scenario {name}; valid scenarios: {}", SCENARIOS.join(", "))]
    UnknownScenario { name: String },
    #[error("probe {0} produced no samples")]
    EmptyProbe(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed report: {0}")]
    Format(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiThresholds {
    pub urllc_latency_ms: f64,
    pub embb_dl_mbps: f64,
}

impl Default for KpiThresholds {
    fn default() -> Self {
        KpiThresholds { urllc_latency_ms: URLLC_LATENCY_MS, embb_dl_mbps: EMBB_DL_MBPS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Latency,
    Throughput,
    Srt,
}

impl Metric {
    pub fn unit(self) -> &'static str {
        match self {
            Metric::Latency | Metric::Srt => "ms",
            Metric::Throughput => "Mbps",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub interface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<String>,
    pub metric: Metric,
    pub count: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub mdev: f64,
    pub unit: String,
    /// Probe path crosses the intersite link.
    #[serde(default)]
    pub remote: bool,
    #[serde(default)]
    pub lost: u64,
}

impl ProbeStats {
    /// Aggregates samples; `mdev` is the population standard deviation, as ping reports it.
    pub fn from_samples(interface: &str, metric: Metric, samples: &[f64]) -> Result<ProbeStats> {
        if samples.is_empty() {
            return Err(BenchError::EmptyProbe(interface.to_string()));
        }
        let n = samples.len() as f64;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // summation rounding must not push the mean outside [min, max]
        let mean = (samples.iter().sum::<f64>() / n).clamp(min, max);
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Ok(ProbeStats {
            interface: interface.to_string(),
            slice: None,
            metric,
            count: samples.len() as u64,
            min,
            mean,
            max,
            mdev: var.sqrt(),
            unit: metric.unit().to_string(),
            remote: false,
            lost: 0,
        })
    }

    fn tagged(mut self, slice: Option<&str>, remote: bool) -> Self {
        self.slice = slice.map(str::to_string);
        self.remote = remote;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotEvaluated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapScan {
    pub link: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<String>,
    pub needle: String,
    pub matches: usize,
    pub tunneled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSnapshot {
    /// None for links riding the shared site medium.
    pub capacity_mbps: Option<f64>,
    pub delay_us: u64,
}

impl From<LinkParams> for LinkSnapshot {
    fn from(p: LinkParams) -> Self {
        let capacity_mbps = match p.capacity {
            Capacity::Dedicated { mbps } => Some(mbps),
            Capacity::Shared => None,
        };
        LinkSnapshot { capacity_mbps, delay_us: p.delay.as_micros() as u64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub seed: u64,
    pub wireguard: bool,
    pub multiplier: Decimal,
    /// Unit to site, per NS.
    pub placement: BTreeMap<String, BTreeMap<String, String>>,
    pub links: BTreeMap<String, LinkSnapshot>,
    pub latency_count: u32,
    pub latency_interval_us: u64,
    pub throughput_duration_ms: u64,
    pub attach_count: u32,
    pub hss_service_time_us: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub scenario: String,
    pub config: ConfigSnapshot,
    pub probes: Vec<ProbeStats>,
    pub isolation: Vec<TapScan>,
    /// Attaches that ended in a rejection, excluded from SRT statistics.
    pub failed_attaches: u64,
    pub kpi: BTreeMap<String, Verdict>,
}

impl BenchReport {
    pub fn probe(&self, interface: &str, metric: Metric, slice: Option<&str>) -> Option<&ProbeStats> {
        self.probes
            .iter()
            .find(|p| p.interface == interface && p.metric == metric && (slice.is_none() || p.slice.as_deref() == slice))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is plain data");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<BenchReport> {
        let r: BenchReport = serde_json::from_str(text).map_err(|e| BenchError::Format(e.to_string()))?;
        if r.format != REPORT_FORMAT {
            return Err(BenchError::Format(format!("unsupported format {}", r.format)));
        }
        Ok(r)
    }

    /// One row per probe plus a header.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            scenario: &'a str,
            slice: &'a str,
            interface: &'a str,
            metric: Metric,
            count: u64,
            min: f64,
            mean: f64,
            max: f64,
            mdev: f64,
            unit: &'a str,
            remote: bool,
            lost: u64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.probes {
            w.serialize(Row {
                scenario: &self.scenario,
                slice: p.slice.as_deref().unwrap_or(""),
                interface: &p.interface,
                metric: p.metric,
                count: p.count,
                min: p.min,
                mean: p.mean,
                max: p.max,
                mdev: p.mdev,
                unit: &p.unit,
                remote: p.remote,
                lost: p.lost,
            })
            .expect("in-memory csv");
        }
        if self.probes.is_empty() {
            w.write_record(["scenario", "slice", "interface", "metric", "count", "min", "mean", "max", "mdev", "unit", "remote", "lost"])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

pub fn export(report: &BenchReport, format: ExportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ExportFormat::Json => report.to_json(),
        ExportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, text).map_err(|e| BenchError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn import(path: &Path) -> Result<BenchReport> {
    let text =
        std::fs::read_to_string(path).map_err(|e| BenchError::Io { path: path.display().to_string(), message: e.to_string() })?;
    BenchReport::from_json(&text)
}

/// Evaluates thresholds from the probes alone.
///
/// URLLC latency covers single-site interface probes of untagged or URLLC
/// slices; eMBB throughput covers S1-U of untagged or eMBB slices.
pub fn kpi_check(probes: &[ProbeStats], thresholds: &KpiThresholds) -> BTreeMap<String, Verdict> {
    let fold = |selected: Vec<bool>| match selected.is_empty() {
        true => Verdict::NotEvaluated,
        false if selected.iter().all(|&ok| ok) => Verdict::Pass,
        false => Verdict::Fail,
    };
    let latency: Vec<bool> = probes
        .iter()
        .filter(|p| p.metric == Metric::Latency && !p.remote && p.interface != USER_PLANE_INTERFACE)
        .filter(|p| p.slice.as_deref().is_none_or(|s| s == "urllc"))
        .map(|p| p.mean < thresholds.urllc_latency_ms)
        .collect();
    let throughput: Vec<bool> = probes
        .iter()
        .filter(|p| p.metric == Metric::Throughput && p.interface == "S1-U")
        .filter(|p| p.slice.as_deref().is_none_or(|s| s == "embb"))
        .map(|p| p.mean >= thresholds.embb_dl_mbps)
        .collect();
    BTreeMap::from([
        (format!("urllc_latency_ms<{}", thresholds.urllc_latency_ms), fold(latency)),
        (format!("embb_dl_mbps>={}", thresholds.embb_dl_mbps), fold(throughput)),
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub seed: u64,
    pub latency_count: u32,
    pub latency_interval: Duration,
    pub throughput_duration: Duration,
    pub attach_count: u32,
    pub hss_service_time: Option<Duration>,
    /// Overrides the scenario's flavor multiplier.
    pub multiplier: Option<Decimal>,
    pub link_overrides: BTreeMap<String, LinkParams>,
    pub interfaces: Vec<String>,
    pub user_plane: bool,
    pub thresholds: KpiThresholds,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            seed: 1,
            latency_count: 1000,
            latency_interval: Duration::from_millis(10),
            throughput_duration: Duration::from_secs(10),
            attach_count: 10,
            hss_service_time: None,
            multiplier: None,
            link_overrides: BTreeMap::new(),
            interfaces: DEFAULT_PROBE_INTERFACES.iter().map(|s| s.to_string()).collect(),
            user_plane: true,
            thresholds: KpiThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub wireguard: bool,
    pub multiplier: Decimal,
    /// NST ids instantiated side by side; empty means one plain NS.
    pub slices: Vec<&'static str>,
    pub multisite: bool,
}

pub fn recipe(name: &str) -> Result<Recipe> {
    let one = Decimal::from_thousandths(1000);
    let r = |wireguard, multiplier, slices: &[&'static str], multisite| Recipe {
        wireguard,
        multiplier,
        slices: slices.to_vec(),
        multisite,
    };
    Ok(match name {
        "eps-plain" => r(false, one, &[], false),
        "eps-wg" => r(true, one, &[], false),
        "eps-wg-2x" => r(true, Decimal::from_thousandths(2000), &[], false),
        "nsi-embb" => r(true, one, &["eps-embb"], false),
        "nsi-urllc" => r(true, one, &["eps-urllc"], false),
        "nsi-both" => r(true, one, &["eps-embb", "eps-urllc"], false),
        "multisite-plain" => r(false, one, &[], true),
        "multisite-wg" => r(true, one, &[], true),
        _ => return Err(BenchError::UnknownScenario { name: name.into() }),
    })
}

/// Testbed sites: the primary VIM and, for multi-site runs, the smaller
/// second VIM behind a site-tunnelled intersite link.
pub fn testbed(seed: u64, multisite: bool) -> Result<Orchestrator> {
    let mut o = Orchestrator::new(OrchestratorConfig { seed, ..Default::default() });
    o.register_vim(VimConfig::new(PRIMARY_SITE, Resources::new(56, 126.0, 915)))?;
    if multisite {
        o.register_vim(VimConfig::new(SECONDARY_SITE, Resources::new(9, 32.0, 150)))?;
        o.configure_intersite(PRIMARY_SITE, SECONDARY_SITE, INTERSITE_MBPS, INTERSITE_DELAY, true)?;
    }
    o.onboard(eps_package())?;
    Ok(o)
}

pub fn subscriber_imsi(i: u32) -> String {
    format!("00101{:010}", i + 1)
}

struct Target {
    ns: String,
    slice: Option<String>,
}

/// Provisions `attach_count` subscribers, attaches each once and aggregates
/// SRT over successful Diameter exchanges. Returns the stats and the number
/// of rejected attaches.
pub fn srt_stats(o: &mut Orchestrator, ns: &str, attach_count: u32) -> Result<(ProbeStats, u64)> {
    if attach_count == 0 {
        return Err(BenchError::EmptyProbe("S6a".into()));
    }
    let before = o.srt_samples(ns)?.len();
    let mut failed = 0;
    for i in 0..attach_count {
        let imsi = subscriber_imsi(i);
        let params = BTreeMap::from([("imsi".to_string(), imsi.clone()), ("key".to_string(), SUBSCRIBER_KEY.to_string())]);
        o.run_action(ns, "hss", "provision-subscribers", &params)?;
        match o.attach(ns, &imsi) {
            Ok(_) => {}
            Err(OrchestratorError::AttachRejected(_)) => failed += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let samples: Vec<f64> = o.srt_samples(ns)?[before..].iter().filter(|s| s.success).map(|s| s.srt_ms()).collect();
    Ok((ProbeStats::from_samples("S6a", Metric::Srt, &samples)?, failed))
}

fn rtt_stats(interface: &str, r: &crate::orchestrator::traffic::FlowResult) -> Result<ProbeStats> {
    let samples: Vec<f64> = r.rtts.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    let mut s = ProbeStats::from_samples(interface, Metric::Latency, &samples)?;
    s.lost = r.lost;
    Ok(s)
}

fn throughput_stats(interface: &str, r: &crate::orchestrator::traffic::FlowResult) -> Result<ProbeStats> {
    let mbps = r.throughput_mbps().ok_or_else(|| BenchError::EmptyProbe(interface.into()))?;
    ProbeStats::from_samples(interface, Metric::Throughput, &[mbps])
}

fn is_remote(o: &Orchestrator, ns: &str, link: &str) -> Result<bool> {
    let inst = o.instance(ns).ok_or_else(|| OrchestratorError::UnknownNs(ns.into()))?;
    let l = inst.link(link).ok_or_else(|| OrchestratorError::UnknownLink(link.into()))?;
    Ok(o.unit_site(ns, &l.ends[0].0)? != o.unit_site(ns, &l.ends[1].0)?)
}

/// Instantiates the scenario, runs the probe battery, evaluates KPIs and tears down.
pub fn run_scenario(name: &str, opts: &BenchOptions) -> Result<BenchReport> {
    let recipe = recipe(name)?;
    let mut o = testbed(opts.seed, recipe.multisite)?;
    let multiplier = opts.multiplier.unwrap_or(recipe.multiplier);
    let placement = if recipe.multisite {
        Placement::all(PRIMARY_SITE).with("hss", SECONDARY_SITE)
    } else {
        Placement::all(PRIMARY_SITE)
    };
    let base = InstantiateOptions {
        wireguard: recipe.wireguard,
        flavor_multiplier: Some(multiplier),
        link_overrides: opts.link_overrides.clone(),
        hss_service_time: opts.hss_service_time,
        tap_links: true,
        ..Default::default()
    };
    let mut targets = Vec::new();
    if recipe.slices.is_empty() {
        let ns = o.instantiate_ns("eps-ns", &placement, base.clone())?;
        targets.push(Target { ns, slice: None });
    } else {
        for nst in &recipe.slices {
            let nsi = o.instantiate_nsi(nst, &placement, base.clone())?;
            let slice = o.slice(&nsi).expect("just created");
            let tag = match slice.slice_type {
                SliceType::Embb => "embb",
                SliceType::Urllc => "urllc",
            };
            targets.push(Target { ns: slice.ns.clone(), slice: Some(tag.to_string()) });
        }
    }
    let intersite_tap = recipe
        .multisite
        .then(|| {
            let (a, b) = (o.vim(PRIMARY_SITE)?.site, o.vim(SECONDARY_SITE)?.site);
            let link = o.fabric().intersite_link(a, b)?;
            Some(o.fabric_mut().attach_tap(link))
        })
        .flatten();

    let mut config = ConfigSnapshot {
        seed: opts.seed,
        wireguard: recipe.wireguard,
        multiplier,
        placement: BTreeMap::new(),
        links: BTreeMap::new(),
        latency_count: opts.latency_count,
        latency_interval_us: opts.latency_interval.as_micros() as u64,
        throughput_duration_ms: opts.throughput_duration.as_millis() as u64,
        attach_count: opts.attach_count,
        hss_service_time_us: opts.hss_service_time.map(|t| t.as_micros() as u64),
    };
    for t in &targets {
        let inst = o.instance(&t.ns).expect("instantiated");
        config.placement.insert(t.ns.clone(), inst.units.iter().map(|u| (u.vnfd.clone(), u.site.clone())).collect());
        for l in &inst.links {
            let p = o.fabric().link_params(l.id);
            config.links.insert(l.name.clone(), p.into());
        }
    }

    let mut probes = Vec::new();
    let mut failed_attaches = 0;
    // control plane: attaches and SRT while the taps record
    for t in &targets {
        if opts.attach_count > 0 {
            let (s, failed) = srt_stats(&mut o, &t.ns, opts.attach_count)?;
            failed_attaches += failed;
            probes.push(s.tagged(t.slice.as_deref(), recipe.multisite));
        }
    }
    let mut isolation = Vec::new();
    for t in &targets {
        let inst = o.instance(&t.ns).expect("instantiated");
        let needles = [subscriber_imsi(0), crate::eps::DEFAULT_REALM.to_string(), hss_hostname()];
        let links: Vec<(String, bool)> = inst.links.iter().map(|l| (l.name.clone(), l.tunneled)).collect();
        for needle in &needles {
            let counts = o.scan_taps(&t.ns, needle.as_bytes())?;
            for (link, tunneled) in &links {
                isolation.push(TapScan {
                    link: link.clone(),
                    slice: t.slice.clone(),
                    needle: needle.clone(),
                    matches: counts.get(link).copied().unwrap_or(0),
                    tunneled: *tunneled,
                });
            }
        }
        o.untap_links(&t.ns)?;
    }
    if let Some(tap) = intersite_tap {
        for needle in [subscriber_imsi(0), crate::eps::DEFAULT_REALM.to_string(), hss_hostname()] {
            isolation.push(TapScan {
                link: "intersite".into(),
                slice: None,
                needle: needle.clone(),
                matches: o.fabric().scan_tap(tap, needle.as_bytes()),
                tunneled: true,
            });
        }
        o.fabric_mut().detach_tap(tap);
    }
    o.advance(SETTLE);

    // interface probes, all slices at once
    for iface in &opts.interfaces {
        let mut ids = Vec::new();
        for t in &targets {
            ids.push(o.start_latency(&t.ns, iface, opts.latency_count, opts.latency_interval, LATENCY_PROBE_SIZE)?);
        }
        for (t, r) in targets.iter().zip(o.wait_flows(&ids)) {
            probes.push(rtt_stats(iface, &r)?.tagged(t.slice.as_deref(), is_remote(&o, &t.ns, iface)?));
        }
        o.advance(SETTLE);
        let mut ids = Vec::new();
        for t in &targets {
            let size = o.payload_cap(&t.ns, iface)?;
            ids.push(o.start_throughput(&t.ns, iface, opts.throughput_duration, size)?);
        }
        for (t, r) in targets.iter().zip(o.wait_flows(&ids)) {
            probes.push(throughput_stats(iface, &r)?.tagged(t.slice.as_deref(), is_remote(&o, &t.ns, iface)?));
        }
        o.advance(SETTLE);
    }

    // user plane through the radio link and SPGW-U
    if opts.user_plane && opts.attach_count > 0 {
        let mut ids = Vec::new();
        for t in &targets {
            ids.push(o.start_user_latency(&t.ns, opts.latency_count, opts.latency_interval, LATENCY_PROBE_SIZE)?);
        }
        for (t, r) in targets.iter().zip(o.wait_flows(&ids)) {
            probes.push(rtt_stats(USER_PLANE_INTERFACE, &r)?.tagged(t.slice.as_deref(), false));
        }
        o.advance(SETTLE);
        let mut ids = Vec::new();
        for t in &targets {
            ids.push(o.start_user_throughput(&t.ns, opts.throughput_duration, crate::orchestrator::runtime::USER_PLANE_PIECE)?);
        }
        for (t, r) in targets.iter().zip(o.wait_flows(&ids)) {
            probes.push(throughput_stats(USER_PLANE_INTERFACE, &r)?.tagged(t.slice.as_deref(), false));
        }
    }

    for t in &targets {
        o.terminate(&t.ns);
    }
    let kpi = kpi_check(&probes, &opts.thresholds);
    Ok(BenchReport {
        format: REPORT_FORMAT.to_string(),
        scenario: name.to_string(),
        config,
        probes,
        isolation,
        failed_attaches,
        kpi,
    })
}

pub fn hss_hostname() -> String {
    format!("hss.{}", crate::eps::DEFAULT_REALM)
}
