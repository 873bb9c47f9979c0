//! Deterministic YAML output. Strings are always double-quoted, decimals
//! carry three fractional digits.

use std::fmt::Write;

use super::model::*;

pub trait ToYaml {
    fn to_yaml(&self) -> String;
}

pub fn serialize<T: ToYaml + ?Sized>(obj: &T) -> String {
    obj.to_yaml()
}

fn q(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

struct Out {
    buf: String,
}

impl Out {
    fn new() -> Self {
        Out { buf: String::new() }
    }

    fn line(&mut self, indent: usize, text: impl AsRef<str>) {
        let _ = writeln!(self.buf, "{:indent$}{}", "", text.as_ref(), indent = indent);
    }

    /// Writes `key:` followed by either `[]` or one `- "item"` line per entry.
    fn strings(&mut self, indent: usize, key: &str, items: &[String]) {
        if items.is_empty() {
            self.line(indent, format!("{key}: []"));
        } else {
            self.line(indent, format!("{key}:"));
            for s in items {
                self.line(indent + 2, format!("- {}", q(s)));
            }
        }
    }

    /// Emits a list of mappings; `item` writes the fields after the first line's `- `.
    fn list<T>(&mut self, indent: usize, key: &str, items: &[T], mut item: impl FnMut(&mut Out, usize, &T)) {
        if items.is_empty() {
            self.line(indent, format!("{key}: []"));
            return;
        }
        self.line(indent, format!("{key}:"));
        for it in items {
            let start = self.buf.len();
            item(self, indent + 4, it);
            // turn the first field's indentation into a sequence marker
            let marker = format!("{:w$}- ", "", w = indent + 2);
            self.buf.replace_range(start..start + indent + 4, &marker);
        }
    }
}

fn action_ref(o: &mut Out, ind: usize, r: &ActionRef) {
    o.line(ind, format!("name: {}", q(&r.name)));
    if !r.params.is_empty() {
        o.line(ind, "params:");
        for (k, v) in &r.params {
            o.line(ind + 2, format!("{}: {}", q(k), q(v)));
        }
    }
}

pub fn serialize_vnfd(v: &Vnfd) -> String {
    let mut o = Out::new();
    o.line(0, format!("id: {}", q(&v.id)));
    o.list(0, "vdus", &v.vdus, |o, ind, d| {
        o.line(ind, format!("name: {}", q(&d.name)));
        o.line(ind, format!("vcpus: {}", d.vcpus));
        o.line(ind, format!("ram_gb: {}", d.ram_gb));
        o.line(ind, format!("storage_gb: {}", d.storage_gb));
        o.line(ind, format!("image: {}", q(&d.image)));
    });
    o.line(0, "cloud_init:");
    o.line(2, format!("admin_user: {}", q(&v.cloud_init.admin_user)));
    o.strings(2, "packages", &v.cloud_init.packages);
    o.list(2, "files", &v.cloud_init.files, |o, ind, f| {
        o.line(ind, format!("path: {}", q(&f.path)));
        o.line(ind, format!("content: {}", q(&f.content)));
    });
    o.list(0, "interfaces", &v.interfaces, |o, ind, i| {
        o.line(ind, format!("name: {}", q(&i.name)));
        o.line(ind, format!("mgmt: {}", i.mgmt));
    });
    o.list(0, "actions", &v.actions, |o, ind, a| {
        o.line(ind, format!("name: {}", q(&a.name)));
        o.line(ind, format!("phase: {}", a.phase.as_str()));
        o.list(ind, "params", &a.params, |o, ind, p| {
            o.line(ind, format!("name: {}", q(&p.name)));
            o.line(ind, format!("type: {}", p.kind.as_str()));
            o.line(ind, format!("required: {}", p.required));
        });
    });
    o.list(0, "day1_primitives", &v.day1_primitives, action_ref);
    o.list(0, "day2_primitives", &v.day2_primitives, action_ref);
    o.list(0, "relations", &v.relations, |o, ind, r| {
        o.line(ind, format!("name: {}", q(&r.name)));
        o.line(ind, format!("role: {}", r.role.as_str()));
        o.line(ind, format!("counterpart: {}", q(&r.counterpart)));
        o.line(ind, format!("interface: {}", q(&r.interface)));
    });
    o.buf
}

pub fn serialize_nsd(n: &Nsd) -> String {
    let mut o = Out::new();
    o.line(0, format!("id: {}", q(&n.id)));
    o.line(0, format!("flavor_multiplier: {}", n.flavor_multiplier));
    o.list(0, "vnf_refs", &n.vnf_refs, |o, ind, m| {
        o.line(ind, format!("member_index: {}", q(&m.member_index)));
        o.line(ind, format!("vnfd: {}", q(&m.vnfd)));
    });
    o.list(0, "virtual_links", &n.virtual_links, |o, ind, l| {
        o.line(ind, format!("name: {}", q(&l.name)));
        o.list(ind, "endpoints", &l.endpoints, |o, ind, e| {
            o.line(ind, format!("member_index: {}", q(&e.member_index)));
            o.line(ind, format!("interface: {}", q(&e.interface)));
        });
    });
    o.buf
}

pub fn serialize_nst(n: &Nst) -> String {
    let mut o = Out::new();
    o.line(0, format!("id: {}", q(&n.id)));
    o.line(0, format!("nsd_ref: {}", q(&n.nsd_ref)));
    o.line(0, format!("slice_type: {}", n.slice_type.as_str()));
    o.line(0, "qos:");
    o.line(2, format!("five_qi: {}", n.qos.five_qi));
    o.line(2, format!("latency_budget_ms: {}", n.qos.latency_budget_ms));
    o.line(2, format!("dl_target_mbps: {}", n.qos.dl_target_mbps));
    o.line(2, format!("priority: {}", n.qos.priority));
    o.strings(0, "exposed_interfaces", &n.exposed_interfaces);
    o.buf
}

impl ToYaml for Vnfd {
    fn to_yaml(&self) -> String {
        serialize_vnfd(self)
    }
}

impl ToYaml for Nsd {
    fn to_yaml(&self) -> String {
        serialize_nsd(self)
    }
}

impl ToYaml for Nst {
    fn to_yaml(&self) -> String {
        serialize_nst(self)
    }
}
