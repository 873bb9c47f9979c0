use std::collections::BTreeSet;

use serde::Serialize;

use super::model::*;

/// Relation names must map onto a registered charm handler.
pub const RELATION_HANDLER_PREFIX: &str = "wgpeer-";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub path: String,
    pub code: &'static str,
    pub message: String,
}

struct Report(Vec<Finding>);

impl Report {
    fn push(&mut self, path: String, code: &'static str, message: String) {
        self.0.push(Finding { path, code, message });
    }
}

/// Resolves cross-document references. An empty result means the package is valid.
pub fn validate_package(pkg: &DescriptorPackage) -> Vec<Finding> {
    let mut r = Report(Vec::new());
    let nsd = &pkg.nsd;

    let mut seen_ids = BTreeSet::new();
    for (i, v) in pkg.vnfds.iter().enumerate() {
        if !seen_ids.insert(v.id.as_str()) {
            r.push(format!("vnfds[{i}].id"), "duplicate-vnfd", format!("VNFD {:?} is defined twice", v.id));
        }
    }

    for (i, m) in nsd.vnf_refs.iter().enumerate() {
        if pkg.vnfd(&m.vnfd).is_none() {
            r.push(
                format!("nsd.vnf_refs[{i}].vnfd"),
                "unknown-vnfd",
                format!("member {:?} references unknown VNFD {:?}", m.member_index, m.vnfd),
            );
        }
    }

    let mut link_sets = BTreeSet::new();
    for (i, l) in nsd.virtual_links.iter().enumerate() {
        for (j, e) in l.endpoints.iter().enumerate() {
            let path = format!("nsd.virtual_links[{i}].endpoints[{j}]");
            let Some(m) = nsd.member(&e.member_index) else {
                r.push(path, "unknown-member", format!("member {:?} is not declared", e.member_index));
                continue;
            };
            if let Some(v) = pkg.vnfd(&m.vnfd) {
                if !v.has_interface(&e.interface) {
                    r.push(
                        format!("{path}.interface"),
                        "unknown-interface",
                        format!("VNFD {:?} has no interface {:?}", v.id, e.interface),
                    );
                }
            }
        }
        let mut key: Vec<(&str, &str)> =
            l.endpoints.iter().map(|e| (e.member_index.as_str(), e.interface.as_str())).collect();
        key.sort();
        if !link_sets.insert(key) {
            r.push(
                format!("nsd.virtual_links[{i}]"),
                "duplicate-link",
                format!("link {:?} joins the same endpoints as an earlier link", l.name),
            );
        }
    }

    let members: Vec<(&VnfRef, &Vnfd)> =
        nsd.vnf_refs.iter().filter_map(|m| pkg.vnfd(&m.vnfd).map(|v| (m, v))).collect();
    let mut checked = BTreeSet::new();
    for (m, v) in &members {
        if !checked.insert(v.id.as_str()) {
            continue;
        }
        for (k, rel) in v.relations.iter().enumerate() {
            let path = format!("vnfd[{}].relations[{k}]", v.id);
            if !rel.name.starts_with(RELATION_HANDLER_PREFIX) {
                r.push(
                    format!("{path}.name"),
                    "unknown-handler",
                    format!("relation {:?} has no registered handler", rel.name),
                );
            }
            let peers: Vec<&(&VnfRef, &Vnfd)> = members.iter().filter(|(_, pv)| pv.id == rel.counterpart).collect();
            if peers.is_empty() {
                r.push(
                    format!("{path}.counterpart"),
                    "missing-counterpart",
                    format!("counterpart VNFD {:?} is not a member of {:?}", rel.counterpart, nsd.id),
                );
                continue;
            }
            let pv = peers[0].1;
            let Some(back) = pv.relations.iter().find(|b| b.name == rel.name && b.counterpart == v.id) else {
                r.push(
                    format!("{path}.counterpart"),
                    "missing-counterpart",
                    format!("VNFD {:?} declares no relation {:?} towards {:?}", pv.id, rel.name, v.id),
                );
                continue;
            };
            if back.role != rel.role.complement() {
                r.push(
                    format!("{path}.role"),
                    "unmatched-relation-role",
                    format!(
                        "unmatched relation role: {:?} is {} on both {:?} and {:?}",
                        rel.name,
                        rel.role.as_str(),
                        v.id,
                        pv.id
                    ),
                );
            }
            let linked = nsd.virtual_links.iter().any(|l| {
                let has = |member: &str, iface: &str| {
                    l.endpoints.iter().any(|e| e.member_index == member && e.interface == iface)
                };
                has(&m.member_index, &rel.interface)
                    && peers.iter().any(|(pm, _)| has(&pm.member_index, &back.interface))
            });
            if !linked {
                r.push(
                    path,
                    "unlinked-relation",
                    format!("no virtual link joins {}.{} and {}.{}", v.id, rel.interface, pv.id, back.interface),
                );
            }
        }
    }

    let mgmt: BTreeSet<&str> = members.iter().filter_map(|(_, v)| v.mgmt_interface()).collect();
    for (i, n) in pkg.nsts.iter().enumerate() {
        if n.nsd_ref != nsd.id {
            r.push(format!("nsts[{i}].nsd_ref"), "unknown-nsd", format!("NST {:?} references unknown NSD {:?}", n.id, n.nsd_ref));
        }
        for (j, e) in n.exposed_interfaces.iter().enumerate() {
            if !mgmt.contains(e.as_str()) {
                r.push(
                    format!("nsts[{i}].exposed_interfaces[{j}]"),
                    "exposed-non-mgmt",
                    format!("NST {:?} exposes {e:?}, which is not a management interface", n.id),
                );
            }
        }
    }
    r.0
}
