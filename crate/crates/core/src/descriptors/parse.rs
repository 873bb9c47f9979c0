//! YAML to descriptor records, with path-annotated schema errors.

use std::collections::{BTreeMap, BTreeSet};

use serde_yaml::{Mapping, Value};

use super::model::*;
use super::DescriptorError;

fn schema(path: &str, message: impl Into<String>) -> DescriptorError {
    DescriptorError::Schema { file: None, path: path.to_string(), message: message.into() }
}

fn load(text: &str) -> Result<Value, DescriptorError> {
    serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map_or((0, 0), |l| (l.line(), l.column()));
        DescriptorError::Syntax { file: None, line, column, message: e.to_string() }
    })
}

#[derive(Clone, Copy)]
struct Node<'a> {
    value: &'a Value,
}

struct Fields<'a> {
    map: &'a Mapping,
    path: String,
    used: BTreeSet<String>,
}

fn child(path: &str, key: &str) -> String {
    if path.is_empty() { key.to_string() } else { format!("{path}.{key}") }
}

impl<'a> Node<'a> {
    fn fields(self, path: &str) -> Result<Fields<'a>, DescriptorError> {
        match self.value {
            Value::Mapping(map) => Ok(Fields { map, path: path.to_string(), used: BTreeSet::new() }),
            _ => Err(schema(path, "expected a mapping")),
        }
    }

    fn seq(self, path: &str) -> Result<Vec<(String, Node<'a>)>, DescriptorError> {
        match self.value {
            Value::Sequence(items) => Ok(items
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("{path}[{i}]"), Node { value: v }))
                .collect()),
            Value::Null => Ok(Vec::new()),
            _ => Err(schema(path, "expected a sequence")),
        }
    }

    fn string(self, path: &str) -> Result<String, DescriptorError> {
        match self.value {
            Value::String(s) => Ok(s.clone()),
            _ => Err(schema(path, "expected a string")),
        }
    }

    fn non_empty(self, path: &str) -> Result<String, DescriptorError> {
        let s = self.string(path)?;
        if s.trim().is_empty() {
            return Err(schema(path, "must not be empty"));
        }
        Ok(s)
    }

    /// Any scalar rendered as text (parameter values).
    fn scalar(self, path: &str) -> Result<String, DescriptorError> {
        match self.value {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            _ => Err(schema(path, "expected a scalar")),
        }
    }

    fn uint(self, path: &str) -> Result<u32, DescriptorError> {
        self.value
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| schema(path, "expected a non-negative integer"))
    }

    fn boolean(self, path: &str) -> Result<bool, DescriptorError> {
        self.value.as_bool().ok_or_else(|| schema(path, "expected true or false"))
    }

    fn decimal(self, path: &str) -> Result<Decimal, DescriptorError> {
        match self.value {
            Value::Number(n) => n
                .as_f64()
                .filter(|v| v.is_finite())
                .map(Decimal::from_f64)
                .ok_or_else(|| schema(path, "expected a finite number")),
            Value::String(s) => s.parse().map_err(|e: String| schema(path, e)),
            _ => Err(schema(path, "expected a number")),
        }
    }
}

impl<'a> Fields<'a> {
    fn get(&mut self, key: &str) -> Option<(String, Node<'a>)> {
        let value = self.map.get(key)?;
        self.used.insert(key.to_string());
        Some((child(&self.path, key), Node { value }))
    }

    fn req(&mut self, key: &str) -> Result<(String, Node<'a>), DescriptorError> {
        self.get(key).ok_or_else(|| schema(&child(&self.path, key), "missing required field"))
    }

    /// Rejects keys that were never read.
    fn finish(self) -> Result<(), DescriptorError> {
        for k in self.map.keys() {
            let name = match k {
                Value::String(s) => s.clone(),
                other => format!("{other:?}"),
            };
            if !self.used.contains(&name) {
                return Err(schema(&child(&self.path, &name), "unknown field"));
            }
        }
        Ok(())
    }
}

macro_rules! req {
    ($fields:expr, $key:literal, $method:ident) => {{
        let (p, n) = $fields.req($key)?;
        n.$method(&p)?
    }};
}

fn string_list(path: &str, node: Node<'_>) -> Result<Vec<String>, DescriptorError> {
    node.seq(path)?.into_iter().map(|(p, n)| n.non_empty(&p)).collect()
}

fn unique<'s>(path: &str, what: &str, names: impl IntoIterator<Item = &'s str>) -> Result<(), DescriptorError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(schema(path, format!("duplicate {what} {n:?}")));
        }
    }
    Ok(())
}

fn vdu(path: &str, node: Node<'_>) -> Result<VduSpec, DescriptorError> {
    let mut f = node.fields(path)?;
    let v = VduSpec {
        name: req!(f, "name", non_empty),
        vcpus: req!(f, "vcpus", uint),
        ram_gb: req!(f, "ram_gb", decimal),
        storage_gb: req!(f, "storage_gb", uint),
        image: req!(f, "image", non_empty),
    };
    f.finish()?;
    if v.vcpus == 0 {
        return Err(schema(&child(path, "vcpus"), "must be at least 1"));
    }
    if v.ram_gb.thousandths() <= 0 {
        return Err(schema(&child(path, "ram_gb"), "must be positive"));
    }
    if v.storage_gb == 0 {
        return Err(schema(&child(path, "storage_gb"), "must be positive"));
    }
    Ok(v)
}

fn day0(path: &str, node: Node<'_>) -> Result<Day0Config, DescriptorError> {
    let mut f = node.fields(path)?;
    let admin_user = req!(f, "admin_user", non_empty);
    let packages = match f.get("packages") {
        Some((p, n)) => string_list(&p, n)?,
        None => Vec::new(),
    };
    let mut files = Vec::new();
    if let Some((p, n)) = f.get("files") {
        for (ip, item) in n.seq(&p)? {
            let mut ff = item.fields(&ip)?;
            files.push(FileSpec { path: req!(ff, "path", non_empty), content: req!(ff, "content", string) });
            ff.finish()?;
        }
    }
    f.finish()?;
    Ok(Day0Config { admin_user, packages, files })
}

fn param_type(path: &str, node: Node<'_>) -> Result<ParamType, DescriptorError> {
    match node.string(path)?.as_str() {
        "string" => Ok(ParamType::String),
        "int" => Ok(ParamType::Int),
        "bool" => Ok(ParamType::Bool),
        other => Err(schema(path, format!("unknown parameter type {other:?}"))),
    }
}

fn action(path: &str, node: Node<'_>) -> Result<ActionSpec, DescriptorError> {
    let mut f = node.fields(path)?;
    let name = req!(f, "name", non_empty);
    let phase = {
        let (p, n) = f.req("phase")?;
        match n.string(&p)?.as_str() {
            "day1" => Phase::Day1,
            "day2" => Phase::Day2,
            "both" => Phase::Both,
            other => return Err(schema(&p, format!("unknown phase {other:?}"))),
        }
    };
    let mut params = Vec::new();
    if let Some((p, n)) = f.get("params") {
        for (ip, item) in n.seq(&p)? {
            let mut pf = item.fields(&ip)?;
            let name = req!(pf, "name", non_empty);
            let kind = {
                let (tp, tn) = pf.req("type")?;
                param_type(&tp, tn)?
            };
            let required = match pf.get("required") {
                Some((rp, rn)) => rn.boolean(&rp)?,
                None => false,
            };
            pf.finish()?;
            params.push(ParamSpec { name, kind, required });
        }
        unique(&p, "parameter", params.iter().map(|x| x.name.as_str()))?;
    }
    f.finish()?;
    Ok(ActionSpec { name, phase, params })
}

fn action_ref(path: &str, node: Node<'_>) -> Result<ActionRef, DescriptorError> {
    // a bare string is shorthand for a reference without parameters
    if let Value::String(s) = node.value {
        return Ok(ActionRef { name: s.clone(), params: BTreeMap::new() });
    }
    let mut f = node.fields(path)?;
    let name = req!(f, "name", non_empty);
    let mut params = BTreeMap::new();
    if let Some((p, n)) = f.get("params") {
        let mut pf = n.fields(&p)?;
        let keys: Vec<String> = pf.map.keys().filter_map(|k| k.as_str().map(str::to_string)).collect();
        for k in keys {
            let (vp, vn) = pf.req(&k)?;
            params.insert(k, vn.scalar(&vp)?);
        }
        pf.finish()?;
    }
    f.finish()?;
    Ok(ActionRef { name, params })
}

fn relation(path: &str, node: Node<'_>) -> Result<RelationSpec, DescriptorError> {
    let mut f = node.fields(path)?;
    let name = req!(f, "name", non_empty);
    let role = {
        let (p, n) = f.req("role")?;
        match n.string(&p)?.as_str() {
            "provider" => RelationRole::Provider,
            "requirer" => RelationRole::Requirer,
            other => return Err(schema(&p, format!("unknown role {other:?}"))),
        }
    };
    let r = RelationSpec {
        name,
        role,
        counterpart: req!(f, "counterpart", non_empty),
        interface: req!(f, "interface", non_empty),
    };
    f.finish()?;
    Ok(r)
}

pub fn parse_vnfd(text: &str) -> Result<Vnfd, DescriptorError> {
    let value = load(text)?;
    let mut f = Node { value: &value }.fields("")?;
    let id = req!(f, "id", non_empty);
    let mut vdus = Vec::new();
    let (vp, vn) = f.req("vdus")?;
    for (p, n) in vn.seq(&vp)? {
        vdus.push(vdu(&p, n)?);
    }
    if vdus.is_empty() {
        return Err(schema(&vp, "at least one VDU is required"));
    }
    unique(&vp, "VDU", vdus.iter().map(|v| v.name.as_str()))?;
    let cloud_init = {
        let (p, n) = f.req("cloud_init")?;
        day0(&p, n)?
    };
    let mut interfaces = Vec::new();
    let (ip, inode) = f.req("interfaces")?;
    for (p, n) in inode.seq(&ip)? {
        let mut ff = n.fields(&p)?;
        let name = req!(ff, "name", non_empty);
        let mgmt = match ff.get("mgmt") {
            Some((mp, mn)) => mn.boolean(&mp)?,
            None => false,
        };
        ff.finish()?;
        interfaces.push(InterfaceSpec { name, mgmt });
    }
    unique(&ip, "interface", interfaces.iter().map(|i| i.name.as_str()))?;
    let mgmt = interfaces.iter().filter(|i| i.mgmt).count();
    if mgmt != 1 {
        return Err(schema(&ip, format!("exactly one management interface is required, found {mgmt}")));
    }

    let mut actions = Vec::new();
    let ap = child("", "actions");
    if let Some((p, n)) = f.get("actions") {
        for (p, n) in n.seq(&p)? {
            actions.push(action(&p, n)?);
        }
    }
    unique(&ap, "action", actions.iter().map(|a| a.name.as_str()))?;

    let mut refs = |key: &str, day1: bool| -> Result<Vec<ActionRef>, DescriptorError> {
        let mut out = Vec::new();
        if let Some((p, n)) = f.get(key) {
            for (rp, rn) in n.seq(&p)? {
                let r = action_ref(&rp, rn)?;
                let Some(spec) = actions.iter().find(|a| a.name == r.name) else {
                    return Err(schema(&rp, format!("action {:?} is not declared in actions", r.name)));
                };
                let allowed = if day1 { spec.phase.allows_day1() } else { spec.phase.allows_day2() };
                if !allowed {
                    return Err(schema(&rp, format!("action {:?} is a {} action", r.name, spec.phase.as_str())));
                }
                for (k, v) in &r.params {
                    let Some(ps) = spec.param(k) else {
                        return Err(schema(&child(&rp, k), format!("action {:?} has no parameter {k:?}", r.name)));
                    };
                    if !ps.kind.accepts(v) {
                        return Err(schema(&child(&rp, k), format!("{v:?} is not a valid {}", ps.kind.as_str())));
                    }
                }
                out.push(r);
            }
        }
        Ok(out)
    };
    let day1_primitives = refs("day1_primitives", true)?;
    let day2_primitives = refs("day2_primitives", false)?;

    let mut relations = Vec::new();
    if let Some((p, n)) = f.get("relations") {
        for (rp, rn) in n.seq(&p)? {
            let r = relation(&rp, rn)?;
            if !interfaces.iter().any(|i| i.name == r.interface) {
                return Err(schema(&child(&rp, "interface"), format!("interface {:?} is not declared", r.interface)));
            }
            relations.push(r);
        }
        unique(&p, "relation", relations.iter().map(|r| r.name.as_str()))?;
    }
    f.finish()?;
    Ok(Vnfd { id, vdus, cloud_init, interfaces, actions, day1_primitives, day2_primitives, relations })
}

pub fn parse_nsd(text: &str) -> Result<Nsd, DescriptorError> {
    let value = load(text)?;
    let mut f = Node { value: &value }.fields("")?;
    let id = req!(f, "id", non_empty);
    let flavor_multiplier = match f.get("flavor_multiplier") {
        Some((p, n)) => {
            let m = n.decimal(&p)?;
            if m < Decimal::ONE {
                return Err(schema(&p, "must be at least 1"));
            }
            m
        }
        None => Decimal::ONE,
    };
    let mut vnf_refs = Vec::new();
    let (rp, rn) = f.req("vnf_refs")?;
    for (p, n) in rn.seq(&rp)? {
        let mut ff = n.fields(&p)?;
        vnf_refs.push(VnfRef { member_index: req!(ff, "member_index", non_empty), vnfd: req!(ff, "vnfd", non_empty) });
        ff.finish()?;
    }
    if vnf_refs.is_empty() {
        return Err(schema(&rp, "at least one member is required"));
    }
    unique(&rp, "member_index", vnf_refs.iter().map(|m| m.member_index.as_str()))?;

    let mut virtual_links = Vec::new();
    if let Some((lp, ln)) = f.get("virtual_links") {
        for (p, n) in ln.seq(&lp)? {
            let mut ff = n.fields(&p)?;
            let name = req!(ff, "name", non_empty);
            let mut endpoints = Vec::new();
            let (ep, en) = ff.req("endpoints")?;
            for (p2, n2) in en.seq(&ep)? {
                let mut ef = n2.fields(&p2)?;
                let e = LinkEndpoint {
                    member_index: req!(ef, "member_index", non_empty),
                    interface: req!(ef, "interface", non_empty),
                };
                ef.finish()?;
                if !vnf_refs.iter().any(|m| m.member_index == e.member_index) {
                    return Err(schema(&child(&p2, "member_index"), format!("member {:?} is not declared", e.member_index)));
                }
                endpoints.push(e);
            }
            if endpoints.len() != 2 {
                return Err(schema(&ep, format!("a virtual link joins exactly two endpoints, found {}", endpoints.len())));
            }
            ff.finish()?;
            virtual_links.push(VirtualLink { name, endpoints });
        }
        unique(&lp, "virtual link", virtual_links.iter().map(|l| l.name.as_str()))?;
    }
    f.finish()?;
    Ok(Nsd { id, flavor_multiplier, vnf_refs, virtual_links })
}

pub fn parse_nst(text: &str) -> Result<Nst, DescriptorError> {
    let value = load(text)?;
    let mut f = Node { value: &value }.fields("")?;
    let id = req!(f, "id", non_empty);
    let nsd_ref = req!(f, "nsd_ref", non_empty);
    let slice_type = {
        let (p, n) = f.req("slice_type")?;
        match n.string(&p)?.as_str() {
            "embb" => SliceType::Embb,
            "urllc" => SliceType::Urllc,
            other => return Err(schema(&p, format!("unknown slice type {other:?}"))),
        }
    };
    let (qp, qn) = f.req("qos")?;
    let mut qf = qn.fields(&qp)?;
    let qos = QosProfile {
        five_qi: req!(qf, "five_qi", uint),
        latency_budget_ms: req!(qf, "latency_budget_ms", decimal),
        dl_target_mbps: req!(qf, "dl_target_mbps", decimal),
        priority: req!(qf, "priority", uint),
    };
    qf.finish()?;
    if qos.five_qi == 0 || qos.priority == 0 {
        return Err(schema(&qp, "five_qi and priority must be positive"));
    }
    if qos.latency_budget_ms.thousandths() <= 0 || qos.dl_target_mbps.thousandths() <= 0 {
        return Err(schema(&qp, "latency budget and downlink target must be positive"));
    }
    let exposed_interfaces = match f.get("exposed_interfaces") {
        Some((p, n)) => string_list(&p, n)?,
        None => vec!["mgmt".to_string()],
    };
    f.finish()?;
    Ok(Nst { id, nsd_ref, slice_type, qos, exposed_interfaces })
}
