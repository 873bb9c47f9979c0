//! `sliceguard` command-line driver.
//!
//! Lifecycle commands share a state file holding the operations applied so
//! far. The emulator runs on a virtual clock with seeded randomness, so each
//! invocation replays the log to rebuild the testbed and then applies its own
//! command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sliceguard::bench::{self, BenchError, BenchOptions, ExportFormat, KpiThresholds, PRIMARY_SITE};
use sliceguard::descriptors::{self, Decimal, DescriptorError, DescriptorPackage};
use sliceguard::orchestrator::{InstantiateOptions, Orchestrator, OrchestratorError, Placement};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "sliceguard", version, about = "Emulated network-slicing testbed with automatic tunnel peering")]
struct Cli {
    /// Session state file for lifecycle commands.
    #[arg(long, global = true, env = "SLICEGUARD_STATE", default_value = "sliceguard-state.json")]
    state: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and add a descriptor package to the catalog.
    Onboard { dir: PathBuf },
    /// Check a descriptor package and list findings.
    Validate { dir: PathBuf },
    /// Instantiate a network service or slice.
    Instantiate(InstantiateArgs),
    /// Run a day-2 action in a unit: `action <ns> <unit> <name> [key=value]...`.
    Action {
        ns: String,
        unit: String,
        name: String,
        #[arg(value_parser = parse_kv)]
        params: Vec<(String, String)>,
    },
    /// Attach the UE of an instance with a provisioned subscriber.
    Attach { ns: String, imsi: String },
    /// Tear an instance down.
    Terminate { ns: String },
    #[command(subcommand)]
    Relation(RelationCommand),
    #[command(subcommand)]
    Ns(NsCommand),
    #[command(subcommand)]
    Tap(TapCommand),
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Ns,
    Nsi,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct InstantiateArgs {
    kind: Kind,
    /// NSD id for `ns`, NST id for `nsi`.
    id: String,
    /// Place a unit (VNFD id or member index) on a site.
    #[arg(long = "site", value_parser = parse_kv)]
    sites: Vec<(String, String)>,
    /// Site for units without an explicit placement.
    #[arg(long, default_value = PRIMARY_SITE)]
    default_site: String,
    /// Leave interfaces in plaintext.
    #[arg(long)]
    no_wireguard: bool,
    #[arg(long)]
    multiplier: Option<Decimal>,
}

#[derive(Subcommand)]
enum RelationCommand {
    /// Relations and their data bags.
    Show { ns: String },
}

#[derive(Subcommand)]
enum NsCommand {
    /// Instances and their phases.
    Show {
        ns: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum TapCommand {
    /// Count frames carrying `needle` on each link of an instance.
    Scan { ns: String, needle: String },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a scenario and report its probe statistics.
    Run {
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the probe rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        latency_count: u32,
        /// Throughput probe duration in virtual seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 10)]
        attaches: u32,
    },
    /// Recompute KPI verdicts from a JSON report.
    Kpi {
        report: PathBuf,
        #[arg(long)]
        urllc_latency_ms: Option<f64>,
        #[arg(long)]
        embb_dl_mbps: Option<f64>,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op {
    Onboard { package: DescriptorPackage },
    Instantiate(InstantiateArgs),
    Action { ns: String, unit: String, name: String, params: BTreeMap<String, String> },
    Attach { ns: String, imsi: String },
    Terminate { ns: String },
}

#[derive(Default, Serialize, Deserialize)]
struct Session {
    seed: u64,
    ops: Vec<Op>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn orchestrator_failure(e: OrchestratorError) -> Failure {
    match e {
        OrchestratorError::ValidationFailed(findings) => {
            let lines: Vec<String> = findings.iter().map(|f| format!("  {}: {} ({})", f.path, f.message, f.code)).collect();
            Failure::Validation(anyhow!("package failed validation:\n{}", lines.join("\n")))
        }
        other => Failure::Runtime(other.into()),
    }
}

fn descriptor_failure(e: DescriptorError) -> Failure {
    match e {
        DescriptorError::Io { .. } => Failure::Runtime(e.into()),
        _ => Failure::Validation(e.into()),
    }
}

fn load_session(path: &Path) -> anyhow::Result<Session> {
    if !path.exists() {
        return Ok(Session { seed: 1, ops: Vec::new() });
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save_session(path: &Path, s: &Session) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(s).expect("plain data") + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn apply(o: &mut Orchestrator, op: &Op) -> Result<String, Failure> {
    match op {
        Op::Onboard { package } => {
            let id = package.nsd.id.clone();
            let v = o.onboard(package.clone()).map_err(orchestrator_failure)?;
            Ok(format!("onboarded {id} (version {v})"))
        }
        Op::Instantiate(a) => {
            let mut placement = Placement::all(&a.default_site);
            for (unit, site) in &a.sites {
                placement = placement.with(unit, site);
            }
            let opts = InstantiateOptions {
                wireguard: !a.no_wireguard,
                flavor_multiplier: a.multiplier,
                tap_links: true,
                ..Default::default()
            };
            let id = match a.kind {
                Kind::Ns => o.instantiate_ns(&a.id, &placement, opts),
                Kind::Nsi => o.instantiate_nsi(&a.id, &placement, opts),
            }
            .map_err(orchestrator_failure)?;
            let ns = o.slice(&id).map_or(id.clone(), |s| s.ns.clone());
            let phase = o.instance(&ns).map(|i| i.phase.to_string()).unwrap_or_default();
            Ok(if ns == id { format!("{id} {phase}") } else { format!("{id} {ns} {phase}") })
        }
        Op::Action { ns, unit, name, params } => {
            let r = o.run_action(ns, unit, name, params).map_err(orchestrator_failure)?;
            Ok(serde_json::to_string_pretty(&r).expect("plain data"))
        }
        Op::Attach { ns, imsi } => {
            let r = o.attach(ns, imsi).map_err(orchestrator_failure)?;
            let ip = r.ue_ip.map(|i| i.to_string()).unwrap_or_default();
            Ok(format!("{imsi} attached ip={ip} attempts={} elapsed_ms={:.3}", r.attempts, r.elapsed.as_secs_f64() * 1e3))
        }
        Op::Terminate { ns } => Ok(format!("{ns} {}", o.terminate(ns))),
    }
}

/// Rebuilds the testbed from the session log.
fn replay(s: &Session) -> Result<Orchestrator, Failure> {
    let mut o = bench::testbed(s.seed, true).map_err(|e| Failure::Runtime(e.into()))?;
    for op in &s.ops {
        apply(&mut o, op).map_err(|f| match f {
            Failure::Validation(e) | Failure::Runtime(e) => Failure::Runtime(e.context("replaying session state")),
        })?;
    }
    Ok(o)
}

/// Applies a recorded operation and appends it to the session on success.
fn record(state: &Path, op: Op) -> Result<(), Failure> {
    let mut s = load_session(state)?;
    let mut o = replay(&s)?;
    let out = apply(&mut o, &op)?;
    println!("{out}");
    s.ops.push(op);
    save_session(state, &s)?;
    Ok(())
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("plain data"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    let state = cli.state.as_path();
    match cli.command {
        Command::Onboard { dir } => {
            let package = descriptors::load_package(&dir).map_err(descriptor_failure)?;
            record(state, Op::Onboard { package })
        }
        Command::Validate { dir } => {
            let package = descriptors::load_package(&dir).map_err(descriptor_failure)?;
            let findings = descriptors::validate_package(&package);
            if findings.is_empty() {
                println!(
                    "{}: valid ({} VNFDs, NSD {}, {} NSTs)",
                    dir.display(),
                    package.vnfds.len(),
                    package.nsd.id,
                    package.nsts.len()
                );
                return Ok(());
            }
            for f in &findings {
                println!("{}: {} ({})", f.path, f.message, f.code);
            }
            Err(Failure::Validation(anyhow!("{} finding(s)", findings.len())))
        }
        Command::Instantiate(a) => record(state, Op::Instantiate(a)),
        Command::Action { ns, unit, name, params } => {
            record(state, Op::Action { ns, unit, name, params: params.into_iter().collect() })
        }
        Command::Attach { ns, imsi } => record(state, Op::Attach { ns, imsi }),
        Command::Terminate { ns } => record(state, Op::Terminate { ns }),
        Command::Relation(RelationCommand::Show { ns }) => {
            let o = replay(&load_session(state)?)?;
            print_json(&o.relation_show(&ns).map_err(orchestrator_failure)?);
            Ok(())
        }
        Command::Ns(NsCommand::Show { ns, json }) => {
            let o = replay(&load_session(state)?)?;
            let ids: Vec<String> = match ns {
                Some(n) => vec![n],
                None => o.instances().map(|i| i.id.clone()).collect(),
            };
            if json {
                let mut all = Vec::new();
                for id in &ids {
                    all.push(o.show(id).map_err(orchestrator_failure)?);
                }
                print_json(&all);
            } else {
                for id in &ids {
                    let i = o.instance(id).ok_or_else(|| anyhow!("unknown NS instance {id}"))?;
                    let tunnels = o.tunnel_registry(id).map_err(orchestrator_failure)?.len();
                    println!("{:<8} {:<10} {:<10} units={} tunnels={}", i.id, i.nsd, i.phase, i.units.len(), tunnels);
                }
            }
            Ok(())
        }
        Command::Tap(TapCommand::Scan { ns, needle }) => {
            let o = replay(&load_session(state)?)?;
            let counts = o.scan_taps(&ns, needle.as_bytes()).map_err(orchestrator_failure)?;
            let inst = o.instance(&ns).expect("scan succeeded");
            for l in &inst.links {
                let tag = if l.tunneled { "tunneled" } else { "plain" };
                println!("{:<6} {:<9} {}", l.name, tag, counts.get(&l.name).copied().unwrap_or(0));
            }
            Ok(())
        }
        Command::Bench(BenchCommand::Run { scenario, seed, out, csv, latency_count, duration, attaches }) => {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(Failure::Runtime(anyhow!("duration must be positive")));
            }
            let opts = BenchOptions {
                seed,
                latency_count,
                throughput_duration: std::time::Duration::from_secs_f64(duration),
                attach_count: attaches,
                ..Default::default()
            };
            let report = bench::run_scenario(&scenario, &opts).map_err(bench_failure)?;
            for p in &report.probes {
                println!(
                    "{:<6} {:<6} {:<10} n={:<5} min={:.4} mean={:.4} max={:.4} mdev={:.4} {}",
                    p.slice.as_deref().unwrap_or("-"),
                    p.interface,
                    format!("{:?}", p.metric).to_lowercase(),
                    p.count,
                    p.min,
                    p.mean,
                    p.max,
                    p.mdev,
                    p.unit
                );
            }
            for (k, v) in &report.kpi {
                println!("kpi {k}: {}", serde_json::to_value(v).expect("plain data").as_str().unwrap_or("?"));
            }
            if let Some(path) = out {
                bench::export(&report, ExportFormat::Json, &path).map_err(bench_failure)?;
            }
            if let Some(path) = csv {
                bench::export(&report, ExportFormat::Csv, &path).map_err(bench_failure)?;
            }
            Ok(())
        }
        Command::Bench(BenchCommand::Kpi { report, urllc_latency_ms, embb_dl_mbps }) => {
            let r = bench::import(&report).map_err(bench_failure)?;
            let d = KpiThresholds::default();
            let t = KpiThresholds {
                urllc_latency_ms: urllc_latency_ms.unwrap_or(d.urllc_latency_ms),
                embb_dl_mbps: embb_dl_mbps.unwrap_or(d.embb_dl_mbps),
            };
            if t.urllc_latency_ms <= 0.0 || t.embb_dl_mbps <= 0.0 {
                return Err(Failure::Runtime(anyhow!("thresholds must be positive")));
            }
            print_json(&bench::kpi_check(&r.probes, &t));
            Ok(())
        }
    }
}

fn bench_failure(e: BenchError) -> Failure {
    match e {
        BenchError::Orchestrator(o) => orchestrator_failure(o),
        BenchError::Format(_) => Failure::Validation(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
