//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always print.
//! Expected values are computed here from first principles (integer
//! nanosecond arithmetic over the stage model, naive replay bookkeeping)
//! rather than read back from the library.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sliceguard::bench::{self, BenchOptions, BenchReport, Metric, Verdict, PRIMARY_SITE, SECONDARY_SITE};
use sliceguard::descriptors::{self, parse_nsd, parse_nst, parse_vnfd, serialize};
use sliceguard::netem::{wire, LinkParams};
use sliceguard::orchestrator::{InstantiateOptions, Orchestrator, Placement};
use sliceguard::tunnel::{
    finalize, initiate, open_with_key, respond, Initiation, InitiationGuard, Psk, Response, StaticKeypair,
    TransportSession, TunnelError, TunnelFrame, ZERO_PSK,
};

const HANDSHAKE_TRIALS: usize = 1000;
const CORRUPTED_HANDSHAKES: usize = 8;
const INTERIOR_SAMPLES: usize = 6;
const REPLAY_FRAMES: u64 = 10_000;
const WINDOW: u64 = 2048;
const TUNNEL_OVERHEAD_BYTES: u64 = 32;
/// IPv4 (20) plus UDP (8).
const UNDERLAY_BYTES: usize = 28;

const C5_LINK_MBPS: u64 = 200;
const C5_PAYLOAD: u64 = 1420;
const C5_THROUGHPUT_TOL: f64 = 0.02;
const C5_SURCHARGE_TOL: f64 = 0.05;
const C5_PING_SIZE: u64 = 64;

const C6_PLAIN_RTT_MS: f64 = 18.36;
const C6_PLAIN_RTT_TOL_MS: f64 = 0.1;
const C6_WG_RTT_MAX_MS: f64 = 21.0;
const C6_THROUGHPUT_BAND: (f64, f64) = (0.85, 0.99);

const C7_MIN_GAIN: f64 = 1.5;
const C7_LATENCY_TOL: f64 = 0.20;

const C8_TOL: f64 = 0.10;

const C9_ATTACHES: u32 = 10;
const C9_SERVICE_MS: f64 = 5.4;
const C9_SRT_TOL_MS: f64 = 0.05;
/// Mean SRT difference may deviate from the computed surcharge by this much.
const C9_SURCHARGE_TOL_NS: f64 = 1.0;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ceil_ns(bits: u64, mbps: u64) -> u64 {
    (bits * 1000).div_ceil(mbps)
}

/// Scenario reports shared between criteria.
struct Reports {
    opts: BenchOptions,
    cache: BTreeMap<String, BenchReport>,
}

impl Reports {
    fn new() -> Self {
        let opts = BenchOptions {
            seed: 11,
            latency_count: 200,
            throughput_duration: Duration::from_secs(1),
            attach_count: 4,
            ..Default::default()
        };
        Reports { opts, cache: BTreeMap::new() }
    }

    fn get(&mut self, name: &str) -> Result<&BenchReport, String> {
        if !self.cache.contains_key(name) {
            let r = bench::run_scenario(name, &self.opts).map_err(|e| format!("{name}: {e}"))?;
            self.cache.insert(name.to_string(), r);
        }
        Ok(&self.cache[name])
    }
}

fn mean(r: &BenchReport, iface: &str, metric: Metric, slice: Option<&str>) -> Result<f64, String> {
    r.probe(iface, metric, slice)
        .map(|p| p.mean)
        .ok_or_else(|| format!("{}: no {metric:?} probe on {iface} ({slice:?})", r.scenario))
}

// ---- 1: handshake agreement ----

struct Flight {
    b: StaticKeypair,
    psk: Psk,
    state: sliceguard::tunnel::HandshakeState,
    init: Initiation,
    resp: Response,
    sessions: (TransportSession, TransportSession),
}

fn fly(rng: &mut ChaCha20Rng, psk: Psk) -> Result<Flight, TunnelError> {
    let now = Duration::from_secs(1);
    let a = StaticKeypair::from_private(rng.gen());
    let b = StaticKeypair::from_private(rng.gen());
    let (state, init) = initiate(&a, &b.public(), &psk, rng.gen(), &now, rng)?;
    let r = respond(&b, &psk, &init, rng.gen(), &mut InitiationGuard::new(), &now, rng)?;
    let ia = finalize(state.clone(), &r.response, &now)?;
    Ok(Flight { b, psk, state, init, resp: r.response, sessions: (ia, r.session) })
}

/// Every bit of each field's first and last byte, plus sampled interior bits.
fn flip_positions(fields: &[(usize, usize)], rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut bits = Vec::new();
    for &(start, end) in fields {
        for byte in [start, end - 1] {
            bits.extend((0..8).map(|b| byte * 8 + b));
        }
        if end - start > 2 {
            for _ in 0..INTERIOR_SAMPLES {
                bits.push(rng.gen_range((start + 1) * 8..(end - 1) * 8));
            }
        }
    }
    bits.sort_unstable();
    bits.dedup();
    bits
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(0xc1);
    let now = Duration::from_secs(1);
    let mut flights = Vec::new();
    for trial in 0..HANDSHAKE_TRIALS {
        let psk = if trial % 2 == 0 { ZERO_PSK } else { rng.gen() };
        let f = fly(&mut rng, psk).map_err(|e| format!("trial {trial}: {e}"))?;
        let (ia, rb) = &f.sessions;
        ensure!(ia.send_key() == rb.recv_key() && ia.recv_key() == rb.send_key(), "trial {trial}: keys differ");
        let msg = trial.to_be_bytes();
        ensure!(rb.open(now, &ia.seal(now, &msg).map_err(fail)?).map_err(fail)? == msg, "trial {trial}: a->b");
        ensure!(ia.open(now, &rb.seal(now, &msg).map_err(fail)?).map_err(fail)? == msg, "trial {trial}: b->a");
        if flights.len() < CORRUPTED_HANDSHAKES {
            flights.push(f);
        }
    }

    // initiation: type+reserved, sender, ephemeral, sealed static, sealed timestamp
    let init_fields = [(0, 4), (4, 8), (8, 40), (40, 88), (88, 116)];
    // response: type+reserved, sender, receiver, ephemeral, sealed empty
    let resp_fields = [(0, 4), (4, 8), (8, 12), (12, 44), (44, 60)];
    let mut flips = 0;
    for f in &flights {
        let bytes = f.init.to_bytes();
        ensure!(bytes.len() == 116, "initiation is {} bytes", bytes.len());
        for bit in flip_positions(&init_fields, &mut rng) {
            let mut m = bytes.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            let accepted = Initiation::parse(&m)
                .and_then(|i| respond(&f.b, &f.psk, &i, 7, &mut InitiationGuard::new(), &now, &mut rng))
                .is_ok();
            ensure!(!accepted, "initiation bit {bit} flip accepted");
            flips += 1;
        }
        let bytes = f.resp.to_bytes();
        ensure!(bytes.len() == 60, "response is {} bytes", bytes.len());
        for bit in flip_positions(&resp_fields, &mut rng) {
            let mut m = bytes.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            let accepted = Response::parse(&m).and_then(|r| finalize(f.state.clone(), &r, &now)).is_ok();
            ensure!(!accepted, "response bit {bit} flip accepted");
            flips += 1;
        }
        ensure!(finalize(f.state.clone(), &f.resp, &now).is_ok(), "unmodified response rejected");
    }
    Ok(format!("{HANDSHAKE_TRIALS} pairs agree; {flips} single-bit corruptions rejected"))
}

// ---- 2: replay window ----

fn replay_run(order: &[(u64, usize)], frames: &[Vec<u8>], rx: &TransportSession) -> Result<(usize, usize), String> {
    let now = Duration::from_secs(1);
    let mut seen = HashSet::new();
    let mut greatest: Option<u64> = None;
    let (mut accepted, mut duplicates) = (0, 0);
    for &(c, repeat) in order {
        let expect = !seen.contains(&c) && greatest.is_none_or(|g| c > g || g - c < WINDOW);
        let got = match rx.open(now, &frames[c as usize]) {
            Ok(pt) => {
                ensure!(pt == c.to_be_bytes(), "counter {c}: wrong plaintext");
                true
            }
            Err(TunnelError::Replay(r)) if r == c => false,
            Err(e) => return Err(format!("counter {c}: {e}")),
        };
        ensure!(got == expect, "counter {c}: accepted={got}, expected {expect}");
        if repeat > 0 {
            ensure!(!got, "counter {c}: repeated delivery accepted");
            duplicates += 1;
        }
        if got {
            seen.insert(c);
            greatest = Some(greatest.map_or(c, |g| g.max(c)));
            accepted += 1;
        }
    }
    Ok((accepted, duplicates))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(0xc2);
    let mut summary = Vec::new();
    // global shuffle, then shuffles confined to blocks narrower than the window
    for block in [REPLAY_FRAMES as usize, 1500] {
        let f = fly(&mut rng, ZERO_PSK).map_err(fail)?;
        let (tx, rx) = f.sessions;
        let now = Duration::from_secs(1);
        let frames: Vec<Vec<u8>> =
            (0..REPLAY_FRAMES).map(|c| tx.seal(now, &c.to_be_bytes())).collect::<Result<_, _>>().map_err(fail)?;
        let mut order: Vec<(u64, usize)> = (0..REPLAY_FRAMES).map(|c| (c, 0)).collect();
        for chunk in order.chunks_mut(block) {
            chunk.shuffle(&mut rng);
        }
        // every frame is delivered a second time somewhere later
        let mut dups: Vec<(u64, usize)> = (0..REPLAY_FRAMES).map(|c| (c, 1)).collect();
        dups.shuffle(&mut rng);
        for d in dups {
            let first = order.iter().position(|&(c, k)| c == d.0 && k == 0).expect("present");
            let at = rng.gen_range(first + 1..=order.len());
            order.insert(at, d);
        }
        let (accepted, duplicates) = replay_run(&order, &frames, &rx)?;
        ensure!(duplicates as u64 >= REPLAY_FRAMES, "only {duplicates} duplicate deliveries");
        summary.push(format!("block {block}: {accepted}/{REPLAY_FRAMES} accepted"));
    }
    Ok(format!("{}; all duplicates rejected", summary.join(", ")))
}

// ---- 3: isolation ----

fn criterion_3(reports: &mut Reports) -> Outcome {
    let plain = reports.get("eps-plain")?.clone();
    let needles: BTreeMap<&str, Vec<_>> = plain.isolation.iter().filter(|s| s.link == "S6a").fold(BTreeMap::new(), |mut m, s| {
        m.entry(s.needle.as_str()).or_insert_with(Vec::new).push(s.matches);
        m
    });
    ensure!(needles.len() >= 3, "eps-plain scanned {} needles on S6a", needles.len());
    for (needle, hits) in &needles {
        ensure!(hits.iter().sum::<usize>() >= 1, "eps-plain: {needle} not seen on S6a");
    }
    let wg = reports.get("eps-wg")?;
    let tunneled: Vec<_> = wg.isolation.iter().filter(|s| s.tunneled).collect();
    ensure!(!tunneled.is_empty(), "eps-wg: no tunneled links scanned");
    for s in &tunneled {
        ensure!(s.matches == 0, "eps-wg: {} matches for {} on {}", s.matches, s.needle, s.link);
    }

    // raw frames on tunneled links carry only tunnel message types
    let mut o = bench::testbed(3, false).map_err(fail)?;
    let opts = InstantiateOptions { tap_links: true, ..Default::default() };
    let ns = o.instantiate_ns("eps-ns", &Placement::all(PRIMARY_SITE), opts).map_err(fail)?;
    bench::srt_stats(&mut o, &ns, 2).map_err(fail)?;
    let inst = o.instance(&ns).expect("instantiated");
    let mut frames = 0;
    for l in inst.links.iter().filter(|l| l.tunneled) {
        for rec in o.fabric().tap_records(l.tap.expect("tapped")) {
            let body = &rec.payload[UNDERLAY_BYTES..];
            ensure!(matches!(body.first(), Some(1 | 2 | 4)) && body[1..4] == [0, 0, 0], "{}: non-tunnel frame", l.name);
            ensure!(TunnelFrame::parse(body).is_ok(), "{}: malformed tunnel frame", l.name);
            frames += 1;
        }
    }
    ensure!(frames > 0, "no frames captured");
    Ok(format!(
        "plain S6a exposes {} needles; wg: 0 matches on {} tunneled scans, {frames} frames all tunnel-typed",
        needles.len(),
        tunneled.len()
    ))
}

// ---- 4: readiness gate ----

fn criterion_4() -> Outcome {
    let mut o = bench::testbed(4, false).map_err(fail)?;
    let ns = o.begin_instantiate("eps-ns", &Placement::all(PRIMARY_SITE), InstantiateOptions::default()).map_err(fail)?;
    let early = o.inject_app_frame(&ns, "mme", "s6a", b"EchoRequest|seq=1:1|origin_host=1:x");
    ensure!(early.is_err(), "frame accepted before ready");
    ensure!(o.attach(&ns, &bench::subscriber_imsi(0)).is_err(), "attach accepted before ready");
    o.terminate(&ns);

    let ns = o.instantiate_ns("eps-ns", &Placement::all(PRIMARY_SITE), InstantiateOptions::default()).map_err(fail)?;
    let phase = o.instance(&ns).expect("instantiated").phase.to_string();
    ensure!(phase == "ready", "phase after instantiate is {phase}");
    let imsi = bench::subscriber_imsi(0);
    let params = BTreeMap::from([
        ("imsi".to_string(), imsi.clone()),
        ("key".to_string(), "000102030405060708090a0b0c0d0e0f".to_string()),
    ]);
    o.run_action(&ns, "hss", "provision-subscribers", &params).map_err(fail)?;
    let r = o.attach(&ns, &imsi).map_err(fail)?;
    ensure!(r.attempts == 1, "attach needed {} attempts", r.attempts);
    Ok(format!(
        "pre-ready frame and attach refused ({}); post-ready attach in 1 attempt, {:.3} ms",
        early.unwrap_err(),
        r.elapsed.as_secs_f64() * 1e3
    ))
}

// ---- 5: tunnel overhead analytics ----

struct Endpoints {
    vcpus: [u64; 2],
    cpu_mbps: u64,
    crypto_mbps: u64,
}

impl Endpoints {
    /// One-way time of a `bytes`-long wire frame over a dedicated link.
    fn one_way(&self, bytes: u64, link_mbps: u64, tunneled: bool) -> u64 {
        let bits = bytes * 8;
        let node = |v: u64| ceil_ns(bits, self.cpu_mbps * v) + if tunneled { ceil_ns(bits, self.crypto_mbps * v) } else { 0 };
        node(self.vcpus[0]) + ceil_ns(bits, link_mbps) + node(self.vcpus[1])
    }
}

fn s1c_instance(wireguard: bool) -> Result<(Orchestrator, String, Endpoints), String> {
    let mut o = bench::testbed(5, false).map_err(fail)?;
    let opts = InstantiateOptions {
        wireguard,
        link_overrides: BTreeMap::from([(
            "S1-C".to_string(),
            LinkParams::dedicated(C5_LINK_MBPS as f64, Duration::from_micros(50)),
        )]),
        ..Default::default()
    };
    let ns = o.instantiate_ns("eps-ns", &Placement::all(PRIMARY_SITE), opts).map_err(fail)?;
    let inst = o.instance(&ns).expect("instantiated");
    let link = inst.link("S1-C").ok_or("no S1-C")?;
    let v = |i: usize| o.fabric().node_vcpus(inst.unit(&link.ends[i].0).expect("member").node) as u64;
    let cfg = o.fabric().config();
    let ends = Endpoints { vcpus: [v(0), v(1)], cpu_mbps: cfg.per_vcpu_rate_mbps as u64, crypto_mbps: cfg.crypto_rate_mbps as u64 };
    Ok((o, ns, ends))
}

fn criterion_5() -> Outcome {
    let header = UNDERLAY_BYTES as u64;
    let mut thr = Vec::new();
    let mut rtt = Vec::new();
    let mut ends = None;
    for wg in [false, true] {
        let (mut o, ns, e) = s1c_instance(wg)?;
        // pings first: a greedy flow leaves a queue behind that would inflate them
        let l = o.latency_probe(&ns, "S1-C", 200, Duration::from_millis(10), C5_PING_SIZE as usize).map_err(fail)?;
        ensure!(!l.rtts.is_empty(), "no echo replies");
        rtt.push(l.rtts.iter().map(|d| d.as_nanos() as f64).sum::<f64>() / l.rtts.len() as f64);
        let t = o.throughput_probe(&ns, "S1-C", Duration::from_secs(1), C5_PAYLOAD as usize).map_err(fail)?;
        thr.push(t.throughput_mbps().ok_or("no throughput")?);
        ends = Some(e);
    }
    let e = ends.expect("ran");
    let c = C5_LINK_MBPS as f64;
    let p = C5_PAYLOAD as f64;
    let expect_plain = c * p / (p + header as f64);
    let expect_wg = c * p / (p + (TUNNEL_OVERHEAD_BYTES + header) as f64);
    let expect_ratio = expect_wg / expect_plain;
    let ratio = thr[1] / thr[0];
    for (got, want, what) in [(thr[0], expect_plain, "plain"), (thr[1], expect_wg, "tunneled"), (ratio, expect_ratio, "ratio")] {
        ensure!((got / want - 1.0).abs() <= C5_THROUGHPUT_TOL, "{what} throughput {got:.4} vs analytic {want:.4}");
    }

    let f = C5_PING_SIZE + header;
    let round = |bytes, tunneled| 2 * e.one_way(bytes, C5_LINK_MBPS, tunneled);
    let surcharge = (round(f + TUNNEL_OVERHEAD_BYTES, true) - round(f, false)) as f64;
    let delta = rtt[1] - rtt[0];
    ensure!((delta / surcharge - 1.0).abs() <= C5_SURCHARGE_TOL, "latency surcharge {delta:.1} ns vs configured {surcharge:.1} ns");
    Ok(format!(
        "throughput {:.2}/{:.2} Mbps (analytic {expect_plain:.2}/{expect_wg:.2}), ratio {ratio:.4} vs {expect_ratio:.4}; RTT +{delta:.1} ns vs {surcharge:.0} ns",
        thr[0], thr[1]
    ))
}

// ---- 6: multi-site ----

fn criterion_6(reports: &mut Reports) -> Outcome {
    let plain = reports.get("multisite-plain")?.clone();
    let wg = reports.get("multisite-wg")?.clone();
    let rtt_p = mean(&plain, "S6a", Metric::Latency, None)?;
    let rtt_w = mean(&wg, "S6a", Metric::Latency, None)?;
    let thr_p = mean(&plain, "S6a", Metric::Throughput, None)?;
    let thr_w = mean(&wg, "S6a", Metric::Throughput, None)?;
    ensure!((rtt_p - C6_PLAIN_RTT_MS).abs() <= C6_PLAIN_RTT_TOL_MS, "plaintext RTT {rtt_p:.4} ms");
    ensure!(rtt_w > rtt_p && rtt_w < C6_WG_RTT_MAX_MS, "tunneled RTT {rtt_w:.4} ms vs plaintext {rtt_p:.4}");
    let ratio = thr_w / thr_p;
    ensure!((C6_THROUGHPUT_BAND.0..=C6_THROUGHPUT_BAND.1).contains(&ratio), "throughput ratio {ratio:.4}");

    // nested tunnel: strip the site tunnel and find interface tunnel frames inside
    let mut o = bench::testbed(6, true).map_err(fail)?;
    let placement = Placement::all(PRIMARY_SITE).with("hss", SECONDARY_SITE);
    let ns = o.instantiate_ns("eps-ns", &placement, InstantiateOptions::default()).map_err(fail)?;
    let (sa, sb) = (o.fabric().site_id(PRIMARY_SITE).expect("site"), o.fabric().site_id(SECONDARY_SITE).expect("site"));
    let inter = o.fabric().intersite_link(sa, sb).ok_or("no intersite link")?;
    let tap = o.fabric_mut().attach_tap(inter);
    bench::srt_stats(&mut o, &ns, 2).map_err(fail)?;
    let keys = [sa, sb].map(|from| o.fabric().site_tunnel_send_key(from, if from == sa { sb } else { sa }).expect("site key"));
    let (mut outer, mut inner4) = (0, 0);
    for rec in o.fabric().tap_records(tap) {
        let (_, sealed) = wire::decapsulate(&rec.payload).ok_or("bad outer frame")?;
        if sealed.first() != Some(&4) {
            continue;
        }
        outer += 1;
        let (_, _, inner) = keys.iter().find_map(|k| open_with_key(k, sealed).ok()).ok_or("outer frame does not open")?;
        let (_, body) = wire::decapsulate(&inner).ok_or("bad inner frame")?;
        ensure!(matches!(body.first(), Some(1 | 2 | 4)), "inner frame type {:?} is not a tunnel frame", body.first());
        if body[0] == 4 {
            inner4 += 1;
        }
    }
    ensure!(inner4 > 0, "no inner type-4 frames among {outer} outer frames");
    Ok(format!(
        "RTT {rtt_p:.3} -> {rtt_w:.3} ms; throughput {thr_p:.1} -> {thr_w:.1} Mbps ({:.1}%); {inner4}/{outer} outer frames carry type-4",
        ratio * 100.0
    ))
}

// ---- 7: resource scaling ----

fn criterion_7(reports: &mut Reports) -> Outcome {
    let one = reports.get("eps-wg")?.clone();
    let two = reports.get("eps-wg-2x")?.clone();
    let (t1, t2) = (mean(&one, "S1-U", Metric::Throughput, None)?, mean(&two, "S1-U", Metric::Throughput, None)?);
    ensure!(t2 >= C7_MIN_GAIN * t1, "S1-U {t2:.1} vs {t1:.1} Mbps");
    let mut worst: f64 = 0.0;
    for p in one.probes.iter().filter(|p| p.metric == Metric::Latency) {
        let q = mean(&two, &p.interface, Metric::Latency, None)?;
        let d = (q - p.mean).abs() / p.mean;
        ensure!(d < C7_LATENCY_TOL, "{} latency {:.4} vs {q:.4} ms", p.interface, p.mean);
        worst = worst.max(d);
    }
    Ok(format!("S1-U {t1:.1} -> {t2:.1} Mbps (x{:.2}); latency within {:.1}%", t2 / t1, worst * 100.0))
}

// ---- 8: slice simultaneity ----

fn criterion_8(reports: &mut Reports) -> Outcome {
    let both = reports.get("nsi-both")?.clone();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (solo_name, slice) in [("nsi-embb", "embb"), ("nsi-urllc", "urllc")] {
        let solo = reports.get(solo_name)?.clone();
        for p in solo.probes.iter().filter(|p| p.metric == Metric::Throughput) {
            let q = mean(&both, &p.interface, Metric::Throughput, Some(slice))?;
            let d = (q - p.mean).abs() / p.mean;
            ensure!(d <= C8_TOL, "{slice} {}: {q:.2} together vs {:.2} solo", p.interface, p.mean);
            worst = worst.max(d);
            compared += 1;
        }
    }
    ensure!(compared > 0, "no throughput probes compared");
    for (k, v) in &both.kpi {
        ensure!(*v == Verdict::Pass, "KPI {k}: {v:?}");
    }
    Ok(format!("{compared} slice throughputs within {:.2}% of solo; KPIs {:?} pass", worst * 100.0, both.kpi.keys().collect::<Vec<_>>()))
}

// ---- 9: SRT ----

/// Mean SRT and the per-exchange surcharge the tunnel would add to it.
fn srt_run(wireguard: bool) -> Result<(f64, f64), String> {
    let mut o = bench::testbed(9, false).map_err(fail)?;
    let opts = InstantiateOptions {
        wireguard,
        hss_service_time: Some(Duration::from_micros((C9_SERVICE_MS * 1000.0) as u64)),
        link_overrides: BTreeMap::from([("S6a".to_string(), LinkParams::shared(Duration::ZERO))]),
        tap_links: true,
        ..Default::default()
    };
    let ns = o.instantiate_ns("eps-ns", &Placement::all(PRIMARY_SITE), opts).map_err(fail)?;
    let start = o.now();
    let (stats, failed) = bench::srt_stats(&mut o, &ns, C9_ATTACHES).map_err(fail)?;
    ensure!(failed == 0, "{failed} attaches failed");

    let inst = o.instance(&ns).expect("instantiated");
    let link = inst.link("S6a").ok_or("no S6a")?;
    let vcpus = |unit: &str| o.fabric().node_vcpus(inst.unit(unit).expect("member").node) as u64;
    let cfg = o.fabric().config();
    let (cpu, crypto) = (cfg.per_vcpu_rate_mbps as u64, cfg.crypto_rate_mbps as u64);
    let medium = MEDIUM_MBPS;
    let mut surcharge = 0u64;
    for rec in o.fabric().tap_records(link.tap.expect("tapped")).iter().filter(|r| r.timestamp >= start) {
        if wireguard {
            continue;
        }
        let f = rec.payload.len() as u64 * 8;
        let t = f + TUNNEL_OVERHEAD_BYTES * 8;
        for unit in [&rec.src, &rec.dst] {
            let v = vcpus(unit);
            surcharge += ceil_ns(t, cpu * v) + ceil_ns(t, crypto * v) - ceil_ns(f, cpu * v);
        }
        surcharge += ceil_ns(t, medium) - ceil_ns(f, medium);
    }
    Ok((stats.mean, surcharge as f64 / stats.count as f64))
}

/// Site switching medium rate.
const MEDIUM_MBPS: u64 = 20_000;

fn criterion_9() -> Outcome {
    let (plain, surcharge_ns) = srt_run(false)?;
    let (tunneled, _) = srt_run(true)?;
    ensure!((plain - C9_SERVICE_MS).abs() <= C9_SRT_TOL_MS, "mean SRT {plain:.4} ms");
    let delta_ns = (tunneled - plain) * 1e6;
    ensure!(
        (delta_ns - surcharge_ns).abs() <= C9_SURCHARGE_TOL_NS,
        "tunnel adds {delta_ns:.2} ns per exchange, configured surcharge {surcharge_ns:.2} ns"
    );
    Ok(format!("mean SRT {plain:.4} ms; tunneled +{delta_ns:.1} ns (surcharge {surcharge_ns:.1} ns)"))
}

// ---- 10: determinism and formats ----

fn criterion_10(reports: &mut Reports) -> Outcome {
    let opts = reports.opts.clone();
    let first = reports.get("eps-wg")?.to_json();
    let again = bench::run_scenario("eps-wg", &opts).map_err(fail)?;
    ensure!(again.to_json() == first, "repeated eps-wg report differs");
    let back = BenchReport::from_json(&first).map_err(fail)?;
    ensure!(back == again && back.to_json() == first, "report JSON round-trip is not an identity");

    let pkg = descriptors::eps_package();
    for v in &pkg.vnfds {
        ensure!(parse_vnfd(&serialize(v)).map_err(fail)? == *v, "VNFD {} round-trip", v.id);
    }
    ensure!(parse_nsd(&serialize(&pkg.nsd)).map_err(fail)? == pkg.nsd, "NSD round-trip");
    for t in &pkg.nsts {
        ensure!(parse_nst(&serialize(t)).map_err(fail)? == *t, "NST {} round-trip", t.id);
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("packages/eps");
    let on_disk = descriptors::load_package(&dir).map_err(fail)?;
    ensure!(on_disk == pkg, "bundled package differs from {}", dir.display());
    let findings = descriptors::validate_package(&pkg);
    ensure!(findings.is_empty(), "{} validation findings", findings.len());
    Ok(format!("report {} bytes reproduced; {} descriptors round-trip; 0 findings", first.len(), pkg.vnfds.len() + 1 + pkg.nsts.len()))
}

fn main() -> ExitCode {
    // honour `cargo test -- --list` and filters without running the suite twice
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut reports = Reports::new();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Reports) -> Outcome>)> = vec![
        ("handshake agreement", Box::new(|_| criterion_1())),
        ("replay window", Box::new(|_| criterion_2())),
        ("isolation dichotomy", Box::new(criterion_3)),
        ("readiness gate", Box::new(|_| criterion_4())),
        ("tunnel overhead analytics", Box::new(|_| criterion_5())),
        ("multi-site reproduction", Box::new(criterion_6)),
        ("resource scaling", Box::new(criterion_7)),
        ("slice simultaneity", Box::new(criterion_8)),
        ("SRT harness", Box::new(|_| criterion_9())),
        ("determinism and formats", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = run(&mut reports);
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
