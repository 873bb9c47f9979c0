use std::time::Duration;

use proptest::prelude::*;
use sliceguard::netem::{
    wire, Capacity, Fabric, FabricConfig, LinkParams, NetError, NetEvent, NodeId, SendOptions, SiteConfig,
};
use sliceguard::tunnel::{open_with_key, TunnelFrame};

fn two_nodes(vcpus: u32, params: LinkParams) -> (Fabric, NodeId, NodeId) {
    let mut f = Fabric::new(FabricConfig::default());
    let s = f.add_site("lab", SiteConfig::numbered(1)).unwrap();
    let a = f.add_node("a", s, vcpus).unwrap();
    let b = f.add_node("b", s, vcpus).unwrap();
    f.connect("ab", (a, "eth1"), (b, "eth1"), params).unwrap();
    (f, a, b)
}

fn collect(f: &mut Fabric) -> Vec<(Duration, Vec<u8>)> {
    let mut got = Vec::new();
    f.run_until_idle(&mut |f, ev| {
        if let NetEvent::Delivery(d) = ev {
            got.push((f.now(), d.payload));
        }
    });
    got
}

#[test]
fn megabyte_over_200_mbps_takes_40_ms() {
    // nodes fast enough that only the wire matters
    let (mut f, a, b) = two_nodes(1000, LinkParams::dedicated(200.0, Duration::ZERO));
    for _ in 0..1000 {
        f.send(a, "eth1", b, &[0u8; 1000 - wire::UNDERLAY_HEADER_LEN], SendOptions::default()).unwrap();
    }
    let got = collect(&mut f);
    assert_eq!(got.len(), 1000);
    let oracle = 8.0e6 / 200.0e6;
    let done = got.last().unwrap().0.as_secs_f64();
    assert!((done - oracle).abs() < 1e-6, "{done} vs {oracle}");
}

#[test]
fn small_frame_arrival_is_serialization_plus_delay() {
    let (mut f, a, b) = two_nodes(1000, LinkParams::dedicated(200.0, Duration::from_micros(350)));
    f.send(a, "eth1", b, &[7u8; 100 - wire::UNDERLAY_HEADER_LEN], SendOptions::default()).unwrap();
    let got = collect(&mut f);
    let oracle = 800.0 / 200.0e6 + 350e-6;
    assert!((got[0].0.as_secs_f64() - oracle).abs() < 1e-8, "{:?}", got[0].0);
    assert_eq!(got[0].1, vec![7u8; 72]);
}

#[test]
fn total_loss_delivers_nothing() {
    let mut p = LinkParams::dedicated(200.0, Duration::ZERO);
    p.loss = 1.0;
    let (mut f, a, b) = two_nodes(4, p);
    for _ in 0..10 {
        f.send(a, "eth1", b, b"x", SendOptions::default()).unwrap();
    }
    assert!(collect(&mut f).is_empty());
    assert_eq!(f.link_stats(f.link_id("ab").unwrap()).frames_lost, 10);
}

#[test]
fn oversize_and_unrouted_sends_fail() {
    let (mut f, a, b) = two_nodes(4, LinkParams::shared(Duration::ZERO));
    assert!(matches!(
        f.send(a, "eth1", b, &[0u8; 1473], SendOptions::default()),
        Err(NetError::FrameTooLarge { size: 1501, mtu: 1500 })
    ));
    assert!(f.send(a, "eth1", b, &[0u8; 1472], SendOptions::default()).is_ok());
    assert!(matches!(f.send(a, "eth9", b, b"x", SendOptions::default()), Err(NetError::NoRoute { .. })));
    assert!(matches!(f.send(a, "eth1", a, b"x", SendOptions::default()), Err(NetError::NoRoute { .. })));
}

#[test]
fn idle_and_zero_advance() {
    let (mut f, a, _) = two_nodes(4, LinkParams::shared(Duration::ZERO));
    assert_eq!(f.run_until_idle(&mut |_, _| {}), 0);
    f.set_timer(a, Duration::from_millis(1), 1);
    assert_eq!(f.advance(Duration::ZERO, &mut |_, _| {}), 0);
    assert_eq!(f.now(), Duration::ZERO);
}

#[test]
fn equal_timestamps_keep_insertion_order() {
    let (mut f, a, _) = two_nodes(4, LinkParams::shared(Duration::ZERO));
    for token in [3, 1, 2] {
        f.set_timer(a, Duration::from_millis(5), token);
    }
    let mut order = Vec::new();
    f.run_until_idle(&mut |_, ev| {
        if let NetEvent::Timer { token, .. } = ev {
            order.push(token);
        }
    });
    assert_eq!(order, [3, 1, 2]);
}

#[test]
fn advance_stops_at_target() {
    let (mut f, a, _) = two_nodes(4, LinkParams::shared(Duration::ZERO));
    f.set_timer(a, Duration::from_millis(5), 1);
    f.set_timer(a, Duration::from_millis(15), 2);
    let mut seen = Vec::new();
    f.advance(Duration::from_millis(10), &mut |_, ev| seen.push(ev));
    assert_eq!(seen.len(), 1);
    assert_eq!(f.now(), Duration::from_millis(10));
    f.advance(Duration::from_millis(10), &mut |_, ev| seen.push(ev));
    assert_eq!(seen.len(), 2);
}

#[test]
fn tap_scan_and_export() {
    let (mut f, a, b) = two_nodes(4, LinkParams::shared(Duration::from_micros(50)));
    let tap = f.attach_tap(f.link_id("ab").unwrap());
    f.send(a, "eth1", b, b"imsi=001010123456789", SendOptions::default()).unwrap();
    f.send(a, "eth1", b, b"nothing here", SendOptions::default()).unwrap();
    collect(&mut f);
    assert_eq!(f.scan_tap(tap, b"001010123456789"), 1);
    assert_eq!(f.scan_tap(tap, b""), f.tap_records(tap).len());
    let mut out = Vec::new();
    f.export_tap(tap, &mut out).unwrap();
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for key in ["ts_us", "src", "dst", "link", "hex_payload"] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }
    f.detach_tap(tap);
    f.send(a, "eth1", b, b"later", SendOptions::default()).unwrap();
    collect(&mut f);
    assert_eq!(f.tap_records(tap).len(), 2);
}

fn two_sites(site_tunnel: bool) -> (Fabric, NodeId, NodeId) {
    let mut f = Fabric::new(FabricConfig::default());
    let s1 = f.add_site("vim1", SiteConfig::numbered(1)).unwrap();
    let s2 = f.add_site("vim2", SiteConfig::numbered(2)).unwrap();
    f.configure_intersite(s1, s2, 180.0, Duration::from_micros(9180), site_tunnel).unwrap();
    let a = f.add_node("mme", s1, 2).unwrap();
    let b = f.add_node("hss", s2, 4).unwrap();
    f.connect("S6a", (a, "s6a"), (b, "s6a"), LinkParams::shared(Duration::from_micros(50))).unwrap();
    (f, a, b)
}

#[test]
fn duplicate_intersite_link_is_refused() {
    let (mut f, _, _) = two_sites(true);
    let (s1, s2) = (f.site_id("vim1").unwrap(), f.site_id("vim2").unwrap());
    assert!(matches!(
        f.configure_intersite(s2, s1, 100.0, Duration::ZERO, false),
        Err(NetError::DuplicateIntersiteLink(..))
    ));
}

#[test]
fn cross_site_round_trip_is_dominated_by_propagation() {
    let (mut f, a, b) = two_sites(true);
    f.send(a, "s6a", b, &[1u8; 64], SendOptions::default()).unwrap();
    let mut rtt = None;
    f.run_until_idle(&mut |f, ev| {
        if let NetEvent::Delivery(d) = ev {
            if d.dst == b {
                f.send(b, "s6a", a, &d.payload, SendOptions::default()).unwrap();
            } else {
                rtt = Some(f.now());
            }
        }
    });
    let rtt = rtt.unwrap().as_secs_f64() * 1e3;
    assert!(rtt > 18.36 && rtt < 18.46, "{rtt}");
}

#[test]
fn site_tunnel_shrinks_the_path_mtu() {
    let (mut f, a, b) = two_sites(true);
    assert_eq!(f.max_payload(a, b), 1412);
    assert!(matches!(
        f.send(a, "s6a", b, &[0u8; 1413], SendOptions::default()),
        Err(NetError::FrameTooLarge { .. })
    ));
    let (f2, a2, b2) = two_sites(false);
    assert_eq!(f2.max_payload(a2, b2), 1472);
    f.send(a, "s6a", b, &[0u8; 1412], SendOptions::default()).unwrap();
}

#[test]
fn intersite_capture_decodes_to_inner_frame() {
    let (mut f, a, b) = two_sites(true);
    let (s1, s2) = (f.site_id("vim1").unwrap(), f.site_id("vim2").unwrap());
    let inter = f.intersite_link(s1, s2).unwrap();
    let tap = f.attach_tap(inter);
    let s6a_tap = f.attach_tap(f.link_id("S6a").unwrap());
    f.send(a, "s6a", b, b"secret imsi 001010123456789", SendOptions::default()).unwrap();
    collect(&mut f);
    assert_eq!(f.scan_tap(s6a_tap, b"001010123456789"), 1);
    assert_eq!(f.scan_tap(tap, b"001010123456789"), 0);
    let rec = &f.tap_records(tap)[0];
    let (_, outer) = wire::decapsulate(&rec.payload).unwrap();
    assert!(matches!(TunnelFrame::parse(outer).unwrap(), TunnelFrame::Transport(_)));
    let key = f.site_tunnel_send_key(s1, s2).unwrap();
    let (_, _, inner) = open_with_key(&key, outer).unwrap();
    let (_, app) = wire::decapsulate(&inner).unwrap();
    assert_eq!(app, b"secret imsi 001010123456789");
}

#[test]
fn same_program_same_tap_log() {
    let run = || {
        let mut p = LinkParams::dedicated(100.0, Duration::from_micros(200));
        p.jitter = Duration::from_micros(80);
        p.loss = 0.2;
        let mut f = Fabric::new(FabricConfig { seed: 42, ..Default::default() });
        let s = f.add_site("lab", SiteConfig::numbered(1)).unwrap();
        let a = f.add_node("a", s, 2).unwrap();
        let b = f.add_node("b", s, 2).unwrap();
        let l = f.connect("ab", (a, "e"), (b, "e"), p).unwrap();
        let tap = f.attach_tap(l);
        for i in 0..200u32 {
            f.send(a, "e", b, &i.to_le_bytes(), SendOptions::default()).unwrap();
        }
        let got = collect(&mut f);
        (f.tap_records(tap).to_vec(), got)
    };
    assert_eq!(run(), run());
}

#[test]
fn jitter_keeps_class_fifo() {
    let mut p = LinkParams::dedicated(1000.0, Duration::from_micros(100));
    p.jitter = Duration::from_micros(500);
    let (mut f, a, b) = two_nodes(8, p);
    for i in 0..500u32 {
        f.send(a, "eth1", b, &i.to_le_bytes(), SendOptions::default()).unwrap();
    }
    let got: Vec<u32> = collect(&mut f).into_iter().map(|(_, p)| u32::from_le_bytes(p.try_into().unwrap())).collect();
    assert_eq!(got, (0..500).collect::<Vec<_>>());
}

#[test]
fn node_rate_caps_throughput() {
    // 1 vCPU at 500 Mbps behind a 10 Gbps link: the node is the bottleneck
    let (mut f, a, b) = two_nodes(1, LinkParams::dedicated(10_000.0, Duration::ZERO));
    let n = 2000u64;
    for _ in 0..n {
        f.send(a, "eth1", b, &[0u8; 1472], SendOptions::default()).unwrap();
    }
    let got = collect(&mut f);
    let secs = got.last().unwrap().0.as_secs_f64();
    let mbps = (n * 1500 * 8) as f64 / secs / 1e6;
    assert!(mbps <= 500.0 + 1e-6 && mbps > 490.0, "{mbps}");
}

#[test]
fn tunneled_frames_pay_crypto_time() {
    let (mut f, a, b) = two_nodes(1, LinkParams::dedicated(10_000.0, Duration::ZERO));
    f.send(a, "eth1", b, &[0u8; 972], SendOptions { tunneled: true, ..Default::default() }).unwrap();
    let t = collect(&mut f)[0].0.as_nanos() as f64;
    let bits = 8000.0;
    // egress cpu + wire + ingress cpu, each cpu pass with its crypto share
    let oracle = 2.0 * (bits / 500e6 + bits / 2000e6) * 1e9 + bits / 10e9 * 1e9;
    assert!((t - oracle).abs() <= 3.0, "{t} vs {oracle}");
}

#[test]
fn removed_node_gets_nothing() {
    let (mut f, a, b) = two_nodes(2, LinkParams::shared(Duration::from_micros(10)));
    f.send(a, "eth1", b, b"x", SendOptions::default()).unwrap();
    f.remove_node(b);
    assert!(collect(&mut f).is_empty());
    assert!(f.send(a, "eth1", b, b"x", SendOptions::default()).is_err());
}

#[test]
fn dedicated_capacity_reported() {
    let (f, _, _) = two_nodes(2, LinkParams::dedicated(2.0, Duration::ZERO));
    assert_eq!(f.link_params(f.link_id("ab").unwrap()).capacity, Capacity::Dedicated { mbps: 2.0 });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn delivered_rate_never_exceeds_capacity(
        sizes in proptest::collection::vec(1usize..1472, 1..300),
        mbps in 10.0f64..1000.0,
        loss in prop_oneof![Just(0.0), 0.0f64..0.5],
    ) {
        let mut p = LinkParams::dedicated(mbps, Duration::from_micros(30));
        p.loss = loss;
        let (mut f, a, b) = two_nodes(64, p);
        for s in &sizes {
            f.send(a, "eth1", b, &vec![0u8; *s], SendOptions::default()).unwrap();
        }
        let got = collect(&mut f);
        let sent: usize = sizes.iter().sum();
        let delivered: usize = got.iter().map(|(_, p)| p.len()).sum();
        prop_assert!(delivered <= sent);
        if loss == 0.0 {
            prop_assert_eq!(delivered, sent);
        }
        // any prefix of deliveries fits in capacity * elapsed plus one frame quantum
        let mut bits = 0.0;
        for (t, payload) in &got {
            bits += ((payload.len() + wire::UNDERLAY_HEADER_LEN) * 8) as f64;
            let budget = mbps * 1e6 * t.as_secs_f64() + 1500.0 * 8.0;
            prop_assert!(bits <= budget, "{} > {}", bits, budget);
        }
    }
}
