use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Fixed-point number with three fractional digits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Decimal(i64);

impl Decimal {
    pub const ONE: Decimal = Decimal(1000);

    pub fn from_thousandths(t: i64) -> Self {
        Decimal(t)
    }

    pub fn from_int(i: i64) -> Self {
        Decimal(i * 1000)
    }

    /// Rounds to the nearest thousandth.
    pub fn from_f64(v: f64) -> Self {
        Decimal((v * 1000.0).round() as i64)
    }

    pub fn thousandths(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", abs / 1000, abs % 1000)
    }
}

impl FromStr for Decimal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a decimal number"))?;
        if !v.is_finite() {
            return Err(format!("{s:?} is not finite"));
        }
        Ok(Decimal::from_f64(v))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VduSpec {
    pub name: String,
    pub vcpus: u32,
    pub ram_gb: Decimal,
    pub storage_gb: u32,
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSpec {
    pub path: String,
    pub content: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Day0Config {
    pub admin_user: String,
    pub packages: Vec<String>,
    pub files: Vec<FileSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Int,
    Bool,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Int => "int",
            ParamType::Bool => "bool",
        }
    }

    /// Whether `value` is a valid textual value of this type.
    pub fn accepts(self, value: &str) -> bool {
        match self {
            ParamType::String => true,
            ParamType::Int => value.parse::<i64>().is_ok(),
            ParamType::Bool => matches!(value, "true" | "false"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub required: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Day1,
    Day2,
    Both,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Day1 => "day1",
            Phase::Day2 => "day2",
            Phase::Both => "both",
        }
    }

    pub fn allows_day1(self) -> bool {
        matches!(self, Phase::Day1 | Phase::Both)
    }

    pub fn allows_day2(self) -> bool {
        matches!(self, Phase::Day2 | Phase::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub phase: Phase,
    pub params: Vec<ParamSpec>,
}

impl ActionSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// A primitive invocation with preset parameter values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRef {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationRole {
    Provider,
    Requirer,
}

impl RelationRole {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationRole::Provider => "provider",
            RelationRole::Requirer => "requirer",
        }
    }

    pub fn complement(self) -> Self {
        match self {
            RelationRole::Provider => RelationRole::Requirer,
            RelationRole::Requirer => RelationRole::Provider,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub role: RelationRole,
    pub counterpart: String,
    pub interface: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceSpec {
    pub name: String,
    pub mgmt: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vnfd {
    pub id: String,
    pub vdus: Vec<VduSpec>,
    pub cloud_init: Day0Config,
    pub interfaces: Vec<InterfaceSpec>,
    pub actions: Vec<ActionSpec>,
    pub day1_primitives: Vec<ActionRef>,
    pub day2_primitives: Vec<ActionRef>,
    pub relations: Vec<RelationSpec>,
}

impl Vnfd {
    pub fn action(&self, name: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn mgmt_interface(&self) -> Option<&str> {
        self.interfaces.iter().find(|i| i.mgmt).map(|i| i.name.as_str())
    }

    pub fn has_interface(&self, name: &str) -> bool {
        self.interfaces.iter().any(|i| i.name == name)
    }

    /// Totals over all VDUs: (vcpus, ram_gb, storage_gb).
    pub fn resources(&self) -> (u32, Decimal, u32) {
        self.vdus.iter().fold((0, Decimal::default(), 0), |(c, r, s), v| {
            (c + v.vcpus, Decimal(r.0 + v.ram_gb.0), s + v.storage_gb)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VnfRef {
    pub member_index: String,
    pub vnfd: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkEndpoint {
    pub member_index: String,
    pub interface: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualLink {
    pub name: String,
    pub endpoints: Vec<LinkEndpoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nsd {
    pub id: String,
    pub flavor_multiplier: Decimal,
    pub vnf_refs: Vec<VnfRef>,
    pub virtual_links: Vec<VirtualLink>,
}

impl Nsd {
    pub fn member(&self, index: &str) -> Option<&VnfRef> {
        self.vnf_refs.iter().find(|m| m.member_index == index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceType {
    Embb,
    Urllc,
}

impl SliceType {
    pub fn as_str(self) -> &'static str {
        match self {
            SliceType::Embb => "embb",
            SliceType::Urllc => "urllc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosProfile {
    pub five_qi: u32,
    pub latency_budget_ms: Decimal,
    pub dl_target_mbps: Decimal,
    pub priority: u32,
}

impl QosProfile {
    /// Scheduler weight: lower priority values are more important.
    pub fn weight(&self) -> u32 {
        100u32.div_ceil(self.priority.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nst {
    pub id: String,
    pub nsd_ref: String,
    pub slice_type: SliceType,
    pub qos: QosProfile,
    pub exposed_interfaces: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorPackage {
    pub vnfds: Vec<Vnfd>,
    pub nsd: Nsd,
    pub nsts: Vec<Nst>,
}

impl DescriptorPackage {
    pub fn vnfd(&self, id: &str) -> Option<&Vnfd> {
        self.vnfds.iter().find(|v| v.id == id)
    }

    pub fn nst(&self, id: &str) -> Option<&Nst> {
        self.nsts.iter().find(|n| n.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_text() {
        assert_eq!(Decimal::from_f64(8.0).to_string(), "8.000");
        assert_eq!(Decimal::from_f64(0.0005).to_string(), "0.001");
        assert_eq!(Decimal::from_f64(-1.25).to_string(), "-1.250");
        assert_eq!("5.4".parse::<Decimal>().unwrap(), Decimal::from_thousandths(5400));
    }

    #[test]
    fn qos_weight_rounds_up() {
        let q = |priority| QosProfile {
            five_qi: 9,
            latency_budget_ms: Decimal::ONE,
            dl_target_mbps: Decimal::ONE,
            priority,
        };
        assert_eq!(q(90).weight(), 2);
        assert_eq!(q(19).weight(), 6);
        assert_eq!(q(100).weight(), 1);
    }
}
