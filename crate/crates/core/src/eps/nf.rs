//! Network-function state machines. Each consumes one message at a time and
//! emits actions for the hosting unit to carry out.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::codec::EpsMessage;
use super::subscriber::{SubscriberDb, SubscriberRecord};
use super::{EpsError, DEFAULT_APN, DEFAULT_HSS_SERVICE_TIME, DEFAULT_REALM, UE_POOL_PREFIX};

pub const IF_UU: &str = "uu";
pub const IF_S1C: &str = "s1c";
pub const IF_S1U: &str = "s1u";
pub const IF_S6A: &str = "s6a";
pub const IF_S11: &str = "s11";
pub const IF_SX: &str = "sx";

pub const DIAMETER_SUCCESS: u32 = 2001;
pub const DIAMETER_ERROR_USER_UNKNOWN: u32 = 5001;
pub const GTP_REQUEST_ACCEPTED: u32 = 16;
pub const GTP_NO_RESOURCES: u32 = 73;
/// EMM cause "IMSI unknown in HSS".
pub const EMM_IMSI_UNKNOWN: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NfKind {
    Hss,
    Mme,
    Spgwc,
    Spgwu,
    Enb,
    Ue,
}

impl NfKind {
    pub fn from_vnfd(id: &str) -> Option<NfKind> {
        Some(match id {
            "hss" => NfKind::Hss,
            "mme" => NfKind::Mme,
            "spgwc" => NfKind::Spgwc,
            "spgwu" => NfKind::Spgwu,
            "enb" => NfKind::Enb,
            "ue" => NfKind::Ue,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NfKind::Hss => "hss",
            NfKind::Mme => "mme",
            NfKind::Spgwc => "spgwc",
            NfKind::Spgwu => "spgwu",
            NfKind::Enb => "enb",
            NfKind::Ue => "ue",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NfConfig {
    pub hostname: String,
    pub realm: String,
    pub apn: String,
    pub hss_service_time: Duration,
    pub ue_pool: [u8; 3],
}

impl NfConfig {
    pub fn for_kind(kind: NfKind) -> Self {
        NfConfig {
            hostname: format!("{}.{DEFAULT_REALM}", kind.as_str()),
            realm: DEFAULT_REALM.to_string(),
            apn: DEFAULT_APN.to_string(),
            hss_service_time: DEFAULT_HSS_SERVICE_TIME,
            ue_pool: UE_POOL_PREFIX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NfAction {
    Send { iface: String, msg: EpsMessage },
    SendAfter { delay: Duration, iface: String, msg: EpsMessage },
    /// Uplink user data leaving the core towards the packet data network.
    ToPdn { ue_ip: Ipv4Addr, payload: Vec<u8> },
    /// Downlink user data arriving at the UE.
    ToUser { payload: Vec<u8> },
    Srt(SrtSample),
    AttachFinished { imsi: String, accepted: bool, ue_ip: Option<Ipv4Addr> },
}

fn send(out: &mut Vec<NfAction>, iface: &str, msg: EpsMessage) {
    out.push(NfAction::Send { iface: iface.to_string(), msg });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachState {
    Idle,
    Authenticating,
    Locating,
    SessionSetup,
    Attached,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttachContext {
    pub imsi: String,
    pub ue_id: u32,
    pub state: AttachState,
    pub ue_ip: Option<Ipv4Addr>,
    pub teid_ul: u32,
    pub teid_dl: u32,
    pub timestamps: Vec<(AttachState, Duration)>,
}

impl AttachContext {
    fn enter(&mut self, state: AttachState, now: Duration) {
        debug_assert!(state > self.state, "attach states only move forward");
        self.state = state;
        self.timestamps.push((state, now));
    }
}

/// Request-to-answer time of one Diameter exchange, seen from the MME.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SrtSample {
    pub imsi: String,
    pub request: String,
    pub sent: Duration,
    pub received: Duration,
    pub success: bool,
}

impl SrtSample {
    pub fn srt(&self) -> Duration {
        self.received - self.sent
    }

    pub fn srt_ms(&self) -> f64 {
        self.srt().as_secs_f64() * 1e3
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct Hss {
    pub config: NfConfig,
    pub subscribers: SubscriberDb,
}

impl Hss {
    pub fn provision(&mut self, record: SubscriberRecord) {
        self.subscribers.insert(record);
    }

    /// Builds the answer to an S6a request. Unknown subscribers get an error answer.
    pub fn answer(&self, msg: &EpsMessage) -> Result<EpsMessage, EpsError> {
        let c = &self.config;
        match msg {
            EpsMessage::AuthInfoRequest { imsi, session_id, .. } => {
                let (result_code, rand, xres) = match self.subscribers.get(imsi) {
                    Some(s) => {
                        let rand = Sha256::new().chain_update(imsi).chain_update(session_id).finalize();
                        let xres = Sha256::new().chain_update(s.key).chain_update(&rand[..16]).finalize();
                        (DIAMETER_SUCCESS, hex(&rand[..16]), hex(&xres[..8]))
                    }
                    None => (DIAMETER_ERROR_USER_UNKNOWN, String::new(), String::new()),
                };
                Ok(EpsMessage::AuthInfoAnswer {
                    imsi: imsi.clone(),
                    session_id: session_id.clone(),
                    result_code,
                    origin_host: c.hostname.clone(),
                    origin_realm: c.realm.clone(),
                    rand,
                    xres,
                })
            }
            EpsMessage::UpdateLocationRequest { imsi, session_id, .. } => {
                let (result_code, apn) = match self.subscribers.get(imsi) {
                    Some(s) => (DIAMETER_SUCCESS, s.apn.clone()),
                    None => (DIAMETER_ERROR_USER_UNKNOWN, String::new()),
                };
                Ok(EpsMessage::UpdateLocationAnswer {
                    imsi: imsi.clone(),
                    session_id: session_id.clone(),
                    result_code,
                    origin_host: c.hostname.clone(),
                    origin_realm: c.realm.clone(),
                    apn,
                })
            }
            other => Err(EpsError::Unexpected { nf: "hss", kind: other.kind() }),
        }
    }

    fn handle(&mut self, iface: &str, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        let answer = self.answer(&msg)?;
        out.push(NfAction::SendAfter { delay: self.config.hss_service_time, iface: iface.to_string(), msg: answer });
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mme {
    pub config: NfConfig,
    contexts: BTreeMap<String, AttachContext>,
    pending: BTreeMap<String, (String, Duration)>,
    sessions: u64,
    next_teid: u32,
    samples: Vec<SrtSample>,
}

impl Mme {
    pub fn context(&self, imsi: &str) -> Option<&AttachContext> {
        self.contexts.get(imsi)
    }

    pub fn srt_samples(&self) -> &[SrtSample] {
        &self.samples
    }

    fn diameter_request(&mut self, imsi: &str, now: Duration, kind: &str) -> (String, [String; 4]) {
        self.sessions += 1;
        let sid = format!("{};{};{}", self.config.hostname, self.sessions, kind);
        self.pending.insert(sid.clone(), (imsi.to_string(), now));
        let c = &self.config;
        (sid, [c.hostname.clone(), c.realm.clone(), format!("hss.{}", c.realm), c.realm.clone()])
    }

    fn reject(&mut self, imsi: &str, now: Duration, out: &mut Vec<NfAction>) {
        if let Some(ctx) = self.contexts.get_mut(imsi) {
            ctx.enter(AttachState::Rejected, now);
            let ue_id = ctx.ue_id;
            send(out, IF_S1C, EpsMessage::AttachReject { imsi: imsi.into(), ue_id, cause: EMM_IMSI_UNKNOWN });
        }
    }

    fn answered(&mut self, sid: &str, now: Duration, ok: bool, out: &mut Vec<NfAction>, kind: &str) -> Option<String> {
        let (imsi, sent) = self.pending.remove(sid)?;
        let sample = SrtSample { imsi: imsi.clone(), request: kind.to_string(), sent, received: now, success: ok };
        self.samples.push(sample.clone());
        out.push(NfAction::Srt(sample));
        Some(imsi)
    }

    fn handle(&mut self, now: Duration, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        match msg {
            EpsMessage::AttachRequest { imsi, ue_id, .. } => {
                let mut ctx = AttachContext {
                    imsi: imsi.clone(),
                    ue_id,
                    state: AttachState::Idle,
                    ue_ip: None,
                    teid_ul: 0,
                    teid_dl: 0,
                    timestamps: vec![(AttachState::Idle, now)],
                };
                ctx.enter(AttachState::Authenticating, now);
                self.contexts.insert(imsi.clone(), ctx);
                let (session_id, [origin_host, origin_realm, destination_host, destination_realm]) =
                    self.diameter_request(&imsi, now, "air");
                send(
                    out,
                    IF_S6A,
                    EpsMessage::AuthInfoRequest { imsi, session_id, origin_host, origin_realm, destination_host, destination_realm },
                );
            }
            EpsMessage::AuthInfoAnswer { session_id, result_code, .. } => {
                let ok = result_code == DIAMETER_SUCCESS;
                let Some(imsi) = self.answered(&session_id, now, ok, out, "AuthInfoRequest") else {
                    return Err(EpsError::UnknownSession(session_id));
                };
                if !ok {
                    self.reject(&imsi, now, out);
                    return Ok(());
                }
                if let Some(ctx) = self.contexts.get_mut(&imsi) {
                    ctx.enter(AttachState::Locating, now);
                }
                let (session_id, [origin_host, origin_realm, destination_host, destination_realm]) =
                    self.diameter_request(&imsi, now, "ulr");
                send(
                    out,
                    IF_S6A,
                    EpsMessage::UpdateLocationRequest {
                        imsi,
                        session_id,
                        origin_host,
                        origin_realm,
                        destination_host,
                        destination_realm,
                    },
                );
            }
            EpsMessage::UpdateLocationAnswer { session_id, result_code, apn, .. } => {
                let ok = result_code == DIAMETER_SUCCESS;
                let Some(imsi) = self.answered(&session_id, now, ok, out, "UpdateLocationRequest") else {
                    return Err(EpsError::UnknownSession(session_id));
                };
                if !ok {
                    self.reject(&imsi, now, out);
                    return Ok(());
                }
                if let Some(ctx) = self.contexts.get_mut(&imsi) {
                    ctx.enter(AttachState::SessionSetup, now);
                }
                self.next_teid += 1;
                send(out, IF_S11, EpsMessage::CreateSessionRequest { imsi, apn, sender_teid: self.next_teid });
            }
            EpsMessage::CreateSessionResponse { imsi, cause, ue_ip, teid_ul, teid_dl } => {
                let Some(ctx) = self.contexts.get_mut(&imsi) else {
                    return Err(EpsError::UnknownSession(imsi));
                };
                if cause != GTP_REQUEST_ACCEPTED {
                    self.reject(&imsi, now, out);
                    return Ok(());
                }
                ctx.ue_ip = Some(ue_ip);
                ctx.teid_ul = teid_ul;
                ctx.teid_dl = teid_dl;
                ctx.enter(AttachState::Attached, now);
                let ue_id = ctx.ue_id;
                send(
                    out,
                    IF_S1C,
                    EpsMessage::InitialContextSetup { imsi, ue_id, ue_ip, teid_ul, teid_dl, apn: self.config.apn.clone() },
                );
            }
            other => return Err(EpsError::Unexpected { nf: "mme", kind: other.kind() }),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Spgwc {
    pub config: NfConfig,
    leases: BTreeMap<String, Ipv4Addr>,
    next_teid: u32,
    waiting: BTreeMap<String, EpsMessage>,
}

impl Spgwc {
    fn allocate(&mut self, imsi: &str) -> Option<Ipv4Addr> {
        if let Some(ip) = self.leases.get(imsi) {
            return Some(*ip);
        }
        let [a, b, c] = self.config.ue_pool;
        let used: std::collections::BTreeSet<Ipv4Addr> = self.leases.values().copied().collect();
        let ip = (2..=254).map(|d| Ipv4Addr::new(a, b, c, d)).find(|ip| !used.contains(ip))?;
        self.leases.insert(imsi.to_string(), ip);
        Some(ip)
    }

    pub fn lease(&self, imsi: &str) -> Option<Ipv4Addr> {
        self.leases.get(imsi).copied()
    }

    fn handle(&mut self, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        match msg {
            EpsMessage::CreateSessionRequest { imsi, .. } => match self.allocate(&imsi) {
                Some(ue_ip) => {
                    self.next_teid += 1;
                    let teid_ul = self.next_teid;
                    let teid_dl = 0x8000_0000 | self.next_teid;
                    self.waiting.insert(
                        imsi.clone(),
                        EpsMessage::CreateSessionResponse { imsi: imsi.clone(), cause: GTP_REQUEST_ACCEPTED, ue_ip, teid_ul, teid_dl },
                    );
                    send(out, IF_SX, EpsMessage::SessionInstall { imsi, ue_ip, teid_ul, teid_dl });
                }
                None => send(
                    out,
                    IF_S11,
                    EpsMessage::CreateSessionResponse {
                        imsi,
                        cause: GTP_NO_RESOURCES,
                        ue_ip: Ipv4Addr::UNSPECIFIED,
                        teid_ul: 0,
                        teid_dl: 0,
                    },
                ),
            },
            EpsMessage::SessionInstallAck { imsi, .. } => {
                let reply = self.waiting.remove(&imsi).ok_or(EpsError::UnknownSession(imsi))?;
                send(out, IF_S11, reply);
            }
            other => return Err(EpsError::Unexpected { nf: "spgwc", kind: other.kind() }),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Spgwu {
    pub config: NfConfig,
    by_teid: BTreeMap<u32, (Ipv4Addr, u32)>,
    by_ip: BTreeMap<Ipv4Addr, u32>,
    by_imsi: BTreeMap<String, u32>,
    pub unknown_teid: u64,
}

impl Spgwu {
    /// Resolves an uplink tunnel id to the UE address.
    pub fn forward_uplink(&mut self, teid: u32) -> Result<Ipv4Addr, EpsError> {
        match self.by_teid.get(&teid) {
            Some((ip, _)) => Ok(*ip),
            None => {
                self.unknown_teid += 1;
                Err(EpsError::UnknownTeid(teid))
            }
        }
    }

    /// Wraps downlink data for `ue_ip` in its tunnel.
    pub fn downlink(&self, ue_ip: Ipv4Addr, payload: Vec<u8>) -> Result<EpsMessage, EpsError> {
        let teid = *self.by_ip.get(&ue_ip).ok_or(EpsError::UnknownUe(ue_ip))?;
        Ok(EpsMessage::GtpData { teid, payload })
    }

    pub fn remove_session(&mut self, imsi: &str) {
        if let Some(ul) = self.by_imsi.remove(imsi) {
            if let Some((ip, _)) = self.by_teid.remove(&ul) {
                self.by_ip.remove(&ip);
            }
        }
    }

    fn handle(&mut self, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        match msg {
            EpsMessage::SessionInstall { imsi, ue_ip, teid_ul, teid_dl } => {
                self.remove_session(&imsi);
                self.by_teid.insert(teid_ul, (ue_ip, teid_dl));
                self.by_ip.insert(ue_ip, teid_dl);
                self.by_imsi.insert(imsi.clone(), teid_ul);
                send(out, IF_SX, EpsMessage::SessionInstallAck { imsi, teid_ul });
            }
            EpsMessage::GtpData { teid, payload } => {
                let ue_ip = self.forward_uplink(teid)?;
                out.push(NfAction::ToPdn { ue_ip, payload });
            }
            other => return Err(EpsError::Unexpected { nf: "spgwu", kind: other.kind() }),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Enb {
    pub config: NfConfig,
    uplink: BTreeMap<Ipv4Addr, u32>,
    downlink: BTreeMap<u32, Ipv4Addr>,
}

impl Enb {
    fn handle(&mut self, iface: &str, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        match (iface, msg) {
            (IF_UU, EpsMessage::AttachRequest { imsi, ue_id, .. }) => {
                let origin_host = self.config.hostname.clone();
                send(out, IF_S1C, EpsMessage::AttachRequest { imsi, ue_id, origin_host });
            }
            (IF_S1C, EpsMessage::InitialContextSetup { imsi, ue_id, ue_ip, teid_ul, teid_dl, apn }) => {
                self.uplink.retain(|_, t| *t != teid_ul);
                self.downlink.retain(|_, ip| *ip != ue_ip);
                self.uplink.insert(ue_ip, teid_ul);
                self.downlink.insert(teid_dl, ue_ip);
                send(out, IF_UU, EpsMessage::AttachAccept { imsi, ue_id, ue_ip, apn });
            }
            (IF_S1C, m @ EpsMessage::AttachReject { .. }) => send(out, IF_UU, m),
            (IF_UU, EpsMessage::UuData { ue_ip, payload }) => {
                let teid = *self.uplink.get(&ue_ip).ok_or(EpsError::UnknownUe(ue_ip))?;
                send(out, IF_S1U, EpsMessage::GtpData { teid, payload });
            }
            (IF_S1U, EpsMessage::GtpData { teid, payload }) => {
                let ue_ip = *self.downlink.get(&teid).ok_or(EpsError::UnknownTeid(teid))?;
                send(out, IF_UU, EpsMessage::UuData { ue_ip, payload });
            }
            (_, other) => return Err(EpsError::Unexpected { nf: "enb", kind: other.kind() }),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Ue {
    pub config: NfConfig,
    imsi: Option<String>,
    attempts: u32,
    state: AttachState,
    ue_ip: Option<Ipv4Addr>,
}

impl Ue {
    pub fn start_attach(&mut self, imsi: &str, out: &mut Vec<NfAction>) {
        self.attempts += 1;
        self.imsi = Some(imsi.to_string());
        self.state = AttachState::Authenticating;
        self.ue_ip = None;
        let origin_host = self.config.hostname.clone();
        send(out, IF_UU, EpsMessage::AttachRequest { imsi: imsi.to_string(), ue_id: self.attempts, origin_host });
    }

    pub fn state(&self) -> AttachState {
        self.state
    }

    /// Attach requests sent so far.
    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn ue_ip(&self) -> Option<Ipv4Addr> {
        self.ue_ip
    }

    pub fn uplink(&self, payload: Vec<u8>, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        let ue_ip = self.ue_ip.filter(|_| self.state == AttachState::Attached).ok_or(EpsError::NotAttached)?;
        send(out, IF_UU, EpsMessage::UuData { ue_ip, payload });
        Ok(())
    }

    fn handle(&mut self, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        match msg {
            EpsMessage::AttachAccept { imsi, ue_id, ue_ip, .. } if ue_id == self.attempts => {
                self.state = AttachState::Attached;
                self.ue_ip = Some(ue_ip);
                out.push(NfAction::AttachFinished { imsi, accepted: true, ue_ip: Some(ue_ip) });
            }
            EpsMessage::AttachReject { imsi, ue_id, .. } if ue_id == self.attempts => {
                self.state = AttachState::Rejected;
                out.push(NfAction::AttachFinished { imsi, accepted: false, ue_ip: None });
            }
            EpsMessage::AttachAccept { .. } | EpsMessage::AttachReject { .. } => {}
            EpsMessage::UuData { payload, .. } => out.push(NfAction::ToUser { payload }),
            other => return Err(EpsError::Unexpected { nf: "ue", kind: other.kind() }),
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Nf {
    Hss(Hss),
    Mme(Mme),
    Spgwc(Spgwc),
    Spgwu(Spgwu),
    Enb(Enb),
    Ue(Ue),
}

impl Nf {
    pub fn new(kind: NfKind) -> Self {
        let config = NfConfig::for_kind(kind);
        match kind {
            NfKind::Hss => Nf::Hss(Hss { config, subscribers: SubscriberDb::default() }),
            NfKind::Mme => Nf::Mme(Mme {
                config,
                contexts: BTreeMap::new(),
                pending: BTreeMap::new(),
                sessions: 0,
                next_teid: 0,
                samples: Vec::new(),
            }),
            NfKind::Spgwc => Nf::Spgwc(Spgwc { config, leases: BTreeMap::new(), next_teid: 0, waiting: BTreeMap::new() }),
            NfKind::Spgwu => Nf::Spgwu(Spgwu {
                config,
                by_teid: BTreeMap::new(),
                by_ip: BTreeMap::new(),
                by_imsi: BTreeMap::new(),
                unknown_teid: 0,
            }),
            NfKind::Enb => Nf::Enb(Enb { config, uplink: BTreeMap::new(), downlink: BTreeMap::new() }),
            NfKind::Ue => Nf::Ue(Ue { config, imsi: None, attempts: 0, state: AttachState::Idle, ue_ip: None }),
        }
    }

    pub fn kind(&self) -> NfKind {
        match self {
            Nf::Hss(_) => NfKind::Hss,
            Nf::Mme(_) => NfKind::Mme,
            Nf::Spgwc(_) => NfKind::Spgwc,
            Nf::Spgwu(_) => NfKind::Spgwu,
            Nf::Enb(_) => NfKind::Enb,
            Nf::Ue(_) => NfKind::Ue,
        }
    }

    pub fn config(&self) -> &NfConfig {
        match self {
            Nf::Hss(n) => &n.config,
            Nf::Mme(n) => &n.config,
            Nf::Spgwc(n) => &n.config,
            Nf::Spgwu(n) => &n.config,
            Nf::Enb(n) => &n.config,
            Nf::Ue(n) => &n.config,
        }
    }

    pub fn config_mut(&mut self) -> &mut NfConfig {
        match self {
            Nf::Hss(n) => &mut n.config,
            Nf::Mme(n) => &mut n.config,
            Nf::Spgwc(n) => &mut n.config,
            Nf::Spgwu(n) => &mut n.config,
            Nf::Enb(n) => &mut n.config,
            Nf::Ue(n) => &mut n.config,
        }
    }

    /// Processes one message received on `iface`.
    pub fn handle(&mut self, now: Duration, iface: &str, msg: EpsMessage, out: &mut Vec<NfAction>) -> Result<(), EpsError> {
        if let EpsMessage::EchoRequest { seq, .. } = msg {
            let origin_host = self.config().hostname.clone();
            send(out, iface, EpsMessage::EchoReply { seq, origin_host });
            return Ok(());
        }
        if let EpsMessage::EchoReply { .. } = msg {
            return Ok(());
        }
        match self {
            Nf::Hss(n) => n.handle(iface, msg, out),
            Nf::Mme(n) => n.handle(now, msg, out),
            Nf::Spgwc(n) => n.handle(msg, out),
            Nf::Spgwu(n) => n.handle(msg, out),
            Nf::Enb(n) => n.handle(iface, msg, out),
            Nf::Ue(n) => n.handle(msg, out),
        }
    }
}
