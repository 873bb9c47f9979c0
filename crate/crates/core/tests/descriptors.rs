use std::collections::BTreeMap;

use proptest::prelude::*;
use sliceguard::descriptors::*;

const MINIMAL: &str = "
id: probe
vdus:
  - name: probe
    vcpus: 1
    ram_gb: 0.5
    storage_gb: 5
    image: alpine
cloud_init:
  admin_user: ops
interfaces:
  - name: mgmt
    mgmt: true
";

fn schema_path(text: &str) -> String {
    match parse_vnfd(text) {
        Err(DescriptorError::Schema { path, .. }) => path,
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn minimal_vnfd_has_empty_primitive_lists() {
    let v = parse_vnfd(MINIMAL).unwrap();
    assert!(v.day1_primitives.is_empty());
    assert!(v.day2_primitives.is_empty());
    assert!(v.actions.is_empty());
    assert_eq!(v.mgmt_interface(), Some("mgmt"));
}

#[test]
fn table_one_flavors() {
    let pkg = eps_package();
    let expect = [
        ("hss", 4, 8000, 20),
        ("mme", 2, 4000, 20),
        ("spgwu", 1, 3000, 20),
        ("spgwc", 3, 4000, 30),
        ("enb", 4, 8000, 20),
        ("ue", 2, 4000, 20),
    ];
    for (id, cpu, ram, disk) in expect {
        let (c, r, s) = pkg.vnfd(id).unwrap().resources();
        assert_eq!((c, r.thousandths(), s), (cpu, ram, disk), "{id}");
    }
    // the NS totals exclude the UE, which runs outside the service
    let core: Vec<_> = pkg.vnfds.iter().filter(|v| v.id != "ue").map(|v| v.resources()).collect();
    assert_eq!(core.iter().map(|r| r.0).sum::<u32>(), 14);
    assert_eq!(core.iter().map(|r| r.1.thousandths()).sum::<i64>(), 27_000);
    assert_eq!(core.iter().map(|r| r.2).sum::<u32>(), 110);
}

#[test]
fn dangling_day1_reference_rejected() {
    let text = format!("{MINIMAL}day1_primitives:\n  - join-wgpeer\n");
    assert_eq!(schema_path(&text), "day1_primitives[0]");
}

#[test]
fn day2_action_in_day1_list_rejected() {
    let text = format!("{MINIMAL}actions:\n  - name: rotate-key\n    phase: day2\nday1_primitives:\n  - rotate-key\n");
    assert_eq!(schema_path(&text), "day1_primitives[0]");
}

#[test]
fn schema_errors_name_the_path() {
    assert_eq!(schema_path(&MINIMAL.replace("vcpus: 1", "vcpus: 0")), "vdus[0].vcpus");
    assert_eq!(schema_path(&MINIMAL.replace("ram_gb: 0.5", "ram_gb: -1")), "vdus[0].ram_gb");
    assert_eq!(schema_path(&MINIMAL.replace("storage_gb: 5", "storage_gb: 0")), "vdus[0].storage_gb");
    assert_eq!(schema_path(&MINIMAL.replace("admin_user: ops", "admin_user: \"\"")), "cloud_init.admin_user");
    assert_eq!(schema_path(&MINIMAL.replace("    mgmt: true\n", "")), "interfaces");
    assert_eq!(schema_path(&format!("{MINIMAL}colour: red\n")), "colour");
    assert_eq!(schema_path(&MINIMAL.replace("    image: alpine\n", "")), "vdus[0].image");
    let dup = MINIMAL.replace("    image: alpine\n", "    image: alpine\n  - name: probe\n    vcpus: 1\n    ram_gb: 1\n    storage_gb: 1\n    image: x\n");
    assert_eq!(schema_path(&dup), "vdus");
    let rel = format!("{MINIMAL}relations:\n  - name: wgpeer-x\n    role: provider\n    counterpart: other\n    interface: s9\n");
    assert_eq!(schema_path(&rel), "relations[0].interface");
}

#[test]
fn syntax_errors_carry_position() {
    match parse_vnfd("id: [unterminated\nvdus: x\n") {
        Err(DescriptorError::Syntax { line, .. }) => assert!(line >= 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn nsd_link_needs_two_endpoints() {
    let text = "id: n\nvnf_refs:\n  - member_index: \"1\"\n    vnfd: a\nvirtual_links:\n  - name: L\n    endpoints:\n      - member_index: \"1\"\n        interface: x\n";
    match parse_nsd(text) {
        Err(DescriptorError::Schema { path, .. }) => assert_eq!(path, "virtual_links[0].endpoints"),
        other => panic!("{other:?}"),
    }
    let low = "id: n\nflavor_multiplier: 0.5\nvnf_refs:\n  - member_index: \"1\"\n    vnfd: a\n";
    assert!(parse_nsd(low).is_err());
    let default = parse_nsd("id: n\nvnf_refs:\n  - member_index: \"1\"\n    vnfd: a\n").unwrap();
    assert_eq!(default.flavor_multiplier, Decimal::ONE);
}

#[test]
fn nst_defaults_and_qos() {
    let pkg = eps_package();
    let embb = pkg.nst("eps-embb").unwrap();
    let urllc = pkg.nst("eps-urllc").unwrap();
    assert_eq!((embb.slice_type, embb.qos.five_qi), (SliceType::Embb, 9));
    assert_eq!((urllc.slice_type, urllc.qos.five_qi), (SliceType::Urllc, 82));
    assert_eq!(embb.exposed_interfaces, vec!["mgmt"]);
    assert!(urllc.qos.weight() > embb.qos.weight());
}

#[test]
fn eps_package_is_valid() {
    let pkg = eps_package();
    assert_eq!(pkg.vnfds.len(), 6);
    assert_eq!(pkg.nsts.len(), 2);
    let names: Vec<_> = pkg.nsd.virtual_links.iter().map(|l| l.name.as_str()).collect();
    for n in ["S1-C", "S1-U", "S6a", "S11"] {
        assert!(names.contains(&n), "{n}");
    }
    assert_eq!(validate_package(&pkg), vec![]);
}

#[test]
fn directory_package_matches_bundled() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/packages/eps");
    assert_eq!(load_package(std::path::Path::new(dir)).unwrap(), eps_package());
}

#[test]
fn write_then_load_round_trips() {
    let pkg = eps_package();
    let tmp = tempfile::tempdir().unwrap();
    write_package(&pkg, tmp.path()).unwrap();
    let back = load_package(tmp.path()).unwrap();
    assert_eq!(back.nsd, pkg.nsd);
    assert_eq!(back.nsts.len(), 2);
    for v in &pkg.vnfds {
        assert_eq!(back.vnfd(&v.id), Some(v));
    }
}

fn codes(pkg: &DescriptorPackage) -> Vec<&'static str> {
    validate_package(pkg).into_iter().map(|f| f.code).collect()
}

#[test]
fn two_providers_is_unmatched() {
    let mut pkg = eps_package();
    let mme = pkg.vnfds.iter_mut().find(|v| v.id == "mme").unwrap();
    mme.relations.iter_mut().find(|r| r.name == "wgpeer-s6a").unwrap().role = RelationRole::Provider;
    let findings = validate_package(&pkg);
    assert!(findings.iter().any(|f| f.message.contains("unmatched relation role")), "{findings:?}");
}

#[test]
fn dangling_references_reported() {
    let mut pkg = eps_package();
    pkg.nsts[0].nsd_ref = "nope".into();
    assert_eq!(codes(&pkg), vec!["unknown-nsd"]);

    let mut pkg = eps_package();
    pkg.nsd.vnf_refs[0].vnfd = "ghost".into();
    assert!(codes(&pkg).contains(&"unknown-vnfd"));

    let mut pkg = eps_package();
    pkg.nsd.virtual_links[0].endpoints[0].interface = "s99".into();
    assert!(codes(&pkg).contains(&"unknown-interface"));

    let mut pkg = eps_package();
    pkg.nsts[1].exposed_interfaces.push("s1u".into());
    assert_eq!(codes(&pkg), vec!["exposed-non-mgmt"]);

    let mut pkg = eps_package();
    pkg.nsd.virtual_links.retain(|l| l.name != "S6a");
    let c = codes(&pkg);
    assert!(c.contains(&"unlinked-relation"), "{c:?}");

    let mut pkg = eps_package();
    pkg.vnfds.iter_mut().find(|v| v.id == "hss").unwrap().relations.clear();
    assert!(codes(&pkg).contains(&"missing-counterpart"));

    let mut pkg = eps_package();
    let dup = pkg.nsd.virtual_links[0].clone();
    pkg.nsd.virtual_links.push(VirtualLink { name: "copy".into(), ..dup });
    assert!(codes(&pkg).contains(&"duplicate-link"));
}

#[test]
fn serialization_is_stable_and_round_trips() {
    let pkg = eps_package();
    let text = serialize(&pkg.nsd);
    assert_eq!(text, serialize(&pkg.nsd.clone()));
    assert_eq!(parse_nsd(&text).unwrap(), pkg.nsd);
    assert!(text.contains("flavor_multiplier: 1.000"));
    for v in &pkg.vnfds {
        let back = parse_vnfd(&serialize(v)).unwrap();
        assert_eq!(&back, v);
        let order: Vec<_> = back.day1_primitives.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(order, ["configure-nf", "generate-wgkey", "join-wgpeer"]);
    }
    let nst = pkg.nst("eps-urllc").unwrap();
    let text = serialize(nst);
    assert!(text.contains("latency_budget_ms: 10.000"));
    assert_eq!(&parse_nst(&text).unwrap(), nst);
}

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9-]{0,10}"
}

fn text() -> impl Strategy<Value = String> {
    // quotes, colons, hashes and newlines must survive the quoting
    "[a-zA-Z0-9 :#'\"\\\\\n\t{}\\[\\],é-]{0,24}".prop_map(|s| format!("x{s}"))
}

fn decimal() -> impl Strategy<Value = Decimal> {
    (1i64..10_000_000).prop_map(Decimal::from_thousandths)
}

prop_compose! {
    fn vnfd()(
        id in name(),
        vdus in prop::collection::btree_map(name(), (1u32..64, decimal(), 1u32..2000, text()), 1..4),
        admin in text(),
        packages in prop::collection::vec(name(), 0..3),
        files in prop::collection::vec((text(), text()), 0..3),
        ifaces in prop::collection::btree_set(name(), 1..5),
        actions in prop::collection::btree_map(name(), (0u8..3, prop::collection::btree_map(name(), (0u8..3, any::<bool>()), 0..3)), 0..4),
        picks in prop::collection::vec((any::<prop::sample::Index>(), any::<i64>(), any::<bool>(), text()), 0..5),
        rels in prop::collection::btree_map(name(), (any::<bool>(), name(), any::<prop::sample::Index>()), 0..3),
    ) -> Vnfd {
        let ifaces: Vec<String> = ifaces.into_iter().collect();
        let actions: Vec<ActionSpec> = actions.into_iter().map(|(n, (ph, params))| ActionSpec {
            name: n,
            phase: [Phase::Day1, Phase::Day2, Phase::Both][ph as usize],
            params: params.into_iter().map(|(pn, (t, required))| ParamSpec {
                name: pn,
                kind: [ParamType::String, ParamType::Int, ParamType::Bool][t as usize],
                required,
            }).collect(),
        }).collect();
        let mut day1 = Vec::new();
        let mut day2 = Vec::new();
        if !actions.is_empty() {
            for (ix, int, b, s) in picks {
                let a = ix.get(&actions);
                let mut params = BTreeMap::new();
                for p in &a.params {
                    let v = match p.kind {
                        ParamType::String => s.clone(),
                        ParamType::Int => int.to_string(),
                        ParamType::Bool => b.to_string(),
                    };
                    params.insert(p.name.clone(), v);
                }
                let r = ActionRef { name: a.name.clone(), params };
                if a.phase.allows_day1() { day1.push(r) } else { day2.push(r) }
            }
        }
        Vnfd {
            id,
            vdus: vdus.into_iter().map(|(n, (c, r, s, img))| VduSpec { name: n, vcpus: c, ram_gb: r, storage_gb: s, image: img }).collect(),
            cloud_init: Day0Config {
                admin_user: admin,
                packages,
                files: files.into_iter().map(|(path, content)| FileSpec { path, content }).collect(),
            },
            interfaces: ifaces.iter().enumerate().map(|(i, n)| InterfaceSpec { name: n.clone(), mgmt: i == 0 }).collect(),
            actions,
            day1_primitives: day1,
            day2_primitives: day2,
            relations: rels.into_iter().map(|(n, (p, cp, ix))| RelationSpec {
                name: n,
                role: if p { RelationRole::Provider } else { RelationRole::Requirer },
                counterpart: cp,
                interface: ix.get(&ifaces).clone(),
            }).collect(),
        }
    }
}

proptest! {
    #[test]
    fn vnfd_round_trip(v in vnfd()) {
        let text = serialize(&v);
        prop_assert_eq!(parse_vnfd(&text).unwrap(), v.clone());
        prop_assert_eq!(serialize(&v), text);
    }

    #[test]
    fn nst_decimals_keep_three_places(lat in decimal(), dl in decimal(), qi in 1u32..300, pr in 1u32..128) {
        let n = Nst {
            id: "s".into(),
            nsd_ref: "n".into(),
            slice_type: SliceType::Urllc,
            qos: QosProfile { five_qi: qi, latency_budget_ms: lat, dl_target_mbps: dl, priority: pr },
            exposed_interfaces: vec!["mgmt".into()],
        };
        prop_assert_eq!(parse_nst(&serialize(&n)).unwrap(), n);
    }
}
