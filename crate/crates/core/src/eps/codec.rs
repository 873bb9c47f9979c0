//! Flat ASCII encoding of the EPS message set.
//!
//! A message is its kind name followed by `|key=len:value` fields in a fixed
//! order. Identifiers therefore appear verbatim on the wire.

use std::fmt;
use std::net::Ipv4Addr;

use super::EpsError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EpsMessage {
    AttachRequest { imsi: String, ue_id: u32, origin_host: String },
    AuthInfoRequest {
        imsi: String,
        session_id: String,
        origin_host: String,
        origin_realm: String,
        destination_host: String,
        destination_realm: String,
    },
    AuthInfoAnswer {
        imsi: String,
        session_id: String,
        result_code: u32,
        origin_host: String,
        origin_realm: String,
        rand: String,
        xres: String,
    },
    UpdateLocationRequest {
        imsi: String,
        session_id: String,
        origin_host: String,
        origin_realm: String,
        destination_host: String,
        destination_realm: String,
    },
    UpdateLocationAnswer {
        imsi: String,
        session_id: String,
        result_code: u32,
        origin_host: String,
        origin_realm: String,
        apn: String,
    },
    CreateSessionRequest { imsi: String, apn: String, sender_teid: u32 },
    CreateSessionResponse { imsi: String, cause: u32, ue_ip: Ipv4Addr, teid_ul: u32, teid_dl: u32 },
    SessionInstall { imsi: String, ue_ip: Ipv4Addr, teid_ul: u32, teid_dl: u32 },
    SessionInstallAck { imsi: String, teid_ul: u32 },
    InitialContextSetup { imsi: String, ue_id: u32, ue_ip: Ipv4Addr, teid_ul: u32, teid_dl: u32, apn: String },
    AttachAccept { imsi: String, ue_id: u32, ue_ip: Ipv4Addr, apn: String },
    AttachReject { imsi: String, ue_id: u32, cause: u32 },
    GtpData { teid: u32, payload: Vec<u8> },
    UuData { ue_ip: Ipv4Addr, payload: Vec<u8> },
    EchoRequest { seq: u64, origin_host: String },
    EchoReply { seq: u64, origin_host: String },
}

/// Kind tags, in declaration order.
pub const KINDS: [&str; 16] = [
    "AttachRequest",
    "AuthInfoRequest",
    "AuthInfoAnswer",
    "UpdateLocationRequest",
    "UpdateLocationAnswer",
    "CreateSessionRequest",
    "CreateSessionResponse",
    "SessionInstall",
    "SessionInstallAck",
    "InitialContextSetup",
    "AttachAccept",
    "AttachReject",
    "GtpData",
    "UuData",
    "EchoRequest",
    "EchoReply",
];

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: &str) -> Self {
        Writer { buf: kind.as_bytes().to_vec() }
    }

    fn bytes(mut self, key: &str, value: &[u8]) -> Self {
        self.buf.push(b'|');
        self.buf.extend_from_slice(key.as_bytes());
        self.buf.push(b'=');
        self.buf.extend_from_slice(value.len().to_string().as_bytes());
        self.buf.push(b':');
        self.buf.extend_from_slice(value);
        self
    }

    fn text(self, key: &str, value: &str) -> Self {
        self.bytes(key, value.as_bytes())
    }

    fn num(self, key: &str, value: impl fmt::Display) -> Self {
        self.text(key, &value.to_string())
    }
}

struct Reader<'a> {
    rest: &'a [u8],
}

fn malformed(what: impl Into<String>) -> EpsError {
    EpsError::Malformed(what.into())
}

impl<'a> Reader<'a> {
    fn field(&mut self, key: &str) -> Result<&'a [u8], EpsError> {
        let rest = self.rest.strip_prefix(b"|").ok_or_else(|| malformed(format!("expected field {key}")))?;
        let rest = rest
            .strip_prefix(key.as_bytes())
            .and_then(|r| r.strip_prefix(b"="))
            .ok_or_else(|| malformed(format!("expected field {key}")))?;
        let colon = rest.iter().position(|&b| b == b':').ok_or_else(|| malformed("missing length"))?;
        let digits = std::str::from_utf8(&rest[..colon]).map_err(|_| malformed("bad length"))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed(format!("bad length for {key}")));
        }
        let len: usize = digits.parse().map_err(|_| malformed("bad length"))?;
        let body = &rest[colon + 1..];
        if body.len() < len {
            return Err(malformed(format!("field {key} truncated")));
        }
        self.rest = &body[len..];
        Ok(&body[..len])
    }

    fn text(&mut self, key: &str) -> Result<String, EpsError> {
        String::from_utf8(self.field(key)?.to_vec()).map_err(|_| malformed(format!("field {key} is not UTF-8")))
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, EpsError> {
        self.text(key)?.parse().map_err(|_| malformed(format!("field {key} is not a number")))
    }

    fn ip(&mut self, key: &str) -> Result<Ipv4Addr, EpsError> {
        self.text(key)?.parse().map_err(|_| malformed(format!("field {key} is not an IPv4 address")))
    }
}

impl EpsMessage {
    pub fn kind(&self) -> &'static str {
        use EpsMessage::*;
        let i = match self {
            AttachRequest { .. } => 0,
            AuthInfoRequest { .. } => 1,
            AuthInfoAnswer { .. } => 2,
            UpdateLocationRequest { .. } => 3,
            UpdateLocationAnswer { .. } => 4,
            CreateSessionRequest { .. } => 5,
            CreateSessionResponse { .. } => 6,
            SessionInstall { .. } => 7,
            SessionInstallAck { .. } => 8,
            InitialContextSetup { .. } => 9,
            AttachAccept { .. } => 10,
            AttachReject { .. } => 11,
            GtpData { .. } => 12,
            UuData { .. } => 13,
            EchoRequest { .. } => 14,
            EchoReply { .. } => 15,
        };
        KINDS[i]
    }

    pub fn imsi(&self) -> Option<&str> {
        use EpsMessage::*;
        match self {
            AttachRequest { imsi, .. }
            | AuthInfoRequest { imsi, .. }
            | AuthInfoAnswer { imsi, .. }
            | UpdateLocationRequest { imsi, .. }
            | UpdateLocationAnswer { imsi, .. }
            | CreateSessionRequest { imsi, .. }
            | CreateSessionResponse { imsi, .. }
            | SessionInstall { imsi, .. }
            | SessionInstallAck { imsi, .. }
            | InitialContextSetup { imsi, .. }
            | AttachAccept { imsi, .. }
            | AttachReject { imsi, .. } => Some(imsi),
            GtpData { .. } | UuData { .. } | EchoRequest { .. } | EchoReply { .. } => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        use EpsMessage::*;
        let w = Writer::new(self.kind());
        let w = match self {
            AttachRequest { imsi, ue_id, origin_host } => {
                w.text("imsi", imsi).num("ue_id", ue_id).text("origin_host", origin_host)
            }
            AuthInfoRequest { imsi, session_id, origin_host, origin_realm, destination_host, destination_realm }
            | UpdateLocationRequest {
                imsi,
                session_id,
                origin_host,
                origin_realm,
                destination_host,
                destination_realm,
            } => w
                .text("imsi", imsi)
                .text("session_id", session_id)
                .text("origin_host", origin_host)
                .text("origin_realm", origin_realm)
                .text("destination_host", destination_host)
                .text("destination_realm", destination_realm),
            AuthInfoAnswer { imsi, session_id, result_code, origin_host, origin_realm, rand, xres } => w
                .text("imsi", imsi)
                .text("session_id", session_id)
                .num("result_code", result_code)
                .text("origin_host", origin_host)
                .text("origin_realm", origin_realm)
                .text("rand", rand)
                .text("xres", xres),
            UpdateLocationAnswer { imsi, session_id, result_code, origin_host, origin_realm, apn } => w
                .text("imsi", imsi)
                .text("session_id", session_id)
                .num("result_code", result_code)
                .text("origin_host", origin_host)
                .text("origin_realm", origin_realm)
                .text("apn", apn),
            CreateSessionRequest { imsi, apn, sender_teid } => {
                w.text("imsi", imsi).text("apn", apn).num("sender_teid", sender_teid)
            }
            CreateSessionResponse { imsi, cause, ue_ip, teid_ul, teid_dl } => w
                .text("imsi", imsi)
                .num("cause", cause)
                .num("ue_ip", ue_ip)
                .num("teid_ul", teid_ul)
                .num("teid_dl", teid_dl),
            SessionInstall { imsi, ue_ip, teid_ul, teid_dl } => {
                w.text("imsi", imsi).num("ue_ip", ue_ip).num("teid_ul", teid_ul).num("teid_dl", teid_dl)
            }
            SessionInstallAck { imsi, teid_ul } => w.text("imsi", imsi).num("teid_ul", teid_ul),
            InitialContextSetup { imsi, ue_id, ue_ip, teid_ul, teid_dl, apn } => w
                .text("imsi", imsi)
                .num("ue_id", ue_id)
                .num("ue_ip", ue_ip)
                .num("teid_ul", teid_ul)
                .num("teid_dl", teid_dl)
                .text("apn", apn),
            AttachAccept { imsi, ue_id, ue_ip, apn } => {
                w.text("imsi", imsi).num("ue_id", ue_id).num("ue_ip", ue_ip).text("apn", apn)
            }
            AttachReject { imsi, ue_id, cause } => w.text("imsi", imsi).num("ue_id", ue_id).num("cause", cause),
            GtpData { teid, payload } => w.num("teid", teid).bytes("payload", payload),
            UuData { ue_ip, payload } => w.num("ue_ip", ue_ip).bytes("payload", payload),
            EchoRequest { seq, origin_host } | EchoReply { seq, origin_host } => {
                w.num("seq", seq).text("origin_host", origin_host)
            }
        };
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EpsError> {
        use EpsMessage::*;
        let end = bytes.iter().position(|&b| b == b'|').unwrap_or(bytes.len());
        let kind = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("kind is not ASCII"))?;
        let mut r = Reader { rest: &bytes[end..] };
        let r = &mut r;
        let diameter_request = |r: &mut Reader<'_>| -> Result<[String; 6], EpsError> {
            Ok([
                r.text("imsi")?,
                r.text("session_id")?,
                r.text("origin_host")?,
                r.text("origin_realm")?,
                r.text("destination_host")?,
                r.text("destination_realm")?,
            ])
        };
        let msg = match kind {
            "AttachRequest" => AttachRequest { imsi: r.text("imsi")?, ue_id: r.num("ue_id")?, origin_host: r.text("origin_host")? },
            "AuthInfoRequest" => {
                let [imsi, session_id, origin_host, origin_realm, destination_host, destination_realm] =
                    diameter_request(r)?;
                AuthInfoRequest { imsi, session_id, origin_host, origin_realm, destination_host, destination_realm }
            }
            "UpdateLocationRequest" => {
                let [imsi, session_id, origin_host, origin_realm, destination_host, destination_realm] =
                    diameter_request(r)?;
                UpdateLocationRequest { imsi, session_id, origin_host, origin_realm, destination_host, destination_realm }
            }
            "AuthInfoAnswer" => AuthInfoAnswer {
                imsi: r.text("imsi")?,
                session_id: r.text("session_id")?,
                result_code: r.num("result_code")?,
                origin_host: r.text("origin_host")?,
                origin_realm: r.text("origin_realm")?,
                rand: r.text("rand")?,
                xres: r.text("xres")?,
            },
            "UpdateLocationAnswer" => UpdateLocationAnswer {
                imsi: r.text("imsi")?,
                session_id: r.text("session_id")?,
                result_code: r.num("result_code")?,
                origin_host: r.text("origin_host")?,
                origin_realm: r.text("origin_realm")?,
                apn: r.text("apn")?,
            },
            "CreateSessionRequest" => {
                CreateSessionRequest { imsi: r.text("imsi")?, apn: r.text("apn")?, sender_teid: r.num("sender_teid")? }
            }
            "CreateSessionResponse" => CreateSessionResponse {
                imsi: r.text("imsi")?,
                cause: r.num("cause")?,
                ue_ip: r.ip("ue_ip")?,
                teid_ul: r.num("teid_ul")?,
                teid_dl: r.num("teid_dl")?,
            },
            "SessionInstall" => SessionInstall {
                imsi: r.text("imsi")?,
                ue_ip: r.ip("ue_ip")?,
                teid_ul: r.num("teid_ul")?,
                teid_dl: r.num("teid_dl")?,
            },
            "SessionInstallAck" => SessionInstallAck { imsi: r.text("imsi")?, teid_ul: r.num("teid_ul")? },
            "InitialContextSetup" => InitialContextSetup {
                imsi: r.text("imsi")?,
                ue_id: r.num("ue_id")?,
                ue_ip: r.ip("ue_ip")?,
                teid_ul: r.num("teid_ul")?,
                teid_dl: r.num("teid_dl")?,
                apn: r.text("apn")?,
            },
            "AttachAccept" => AttachAccept {
                imsi: r.text("imsi")?,
                ue_id: r.num("ue_id")?,
                ue_ip: r.ip("ue_ip")?,
                apn: r.text("apn")?,
            },
            "AttachReject" => AttachReject { imsi: r.text("imsi")?, ue_id: r.num("ue_id")?, cause: r.num("cause")? },
            "GtpData" => GtpData { teid: r.num("teid")?, payload: r.field("payload")?.to_vec() },
            "UuData" => UuData { ue_ip: r.ip("ue_ip")?, payload: r.field("payload")?.to_vec() },
            "EchoRequest" => EchoRequest { seq: r.num("seq")?, origin_host: r.text("origin_host")? },
            "EchoReply" => EchoReply { seq: r.num("seq")?, origin_host: r.text("origin_host")? },
            other => return Err(malformed(format!("unknown message kind {other:?}"))),
        };
        if !r.rest.is_empty() {
            return Err(malformed("trailing bytes"));
        }
        Ok(msg)
    }
}

/// Bytes added by wrapping a payload of `len` bytes in a `GtpData` with `teid`.
pub fn gtp_overhead(teid: u32, len: usize) -> usize {
    EpsMessage::GtpData { teid, payload: Vec::new() }.encode().len() + len.to_string().len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn air_carries_identifiers_verbatim() {
        let m = EpsMessage::AuthInfoRequest {
            imsi: "001010123456789".into(),
            session_id: "mme;1".into(),
            origin_host: "mme.epc.mnc001.mcc001.3gppnetwork.org".into(),
            origin_realm: "epc.mnc001.mcc001.3gppnetwork.org".into(),
            destination_host: "hss.epc.mnc001.mcc001.3gppnetwork.org".into(),
            destination_realm: "epc.mnc001.mcc001.3gppnetwork.org".into(),
        };
        let bytes = m.encode();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("AuthInfoRequest|imsi=15:001010123456789|"));
        assert!(text.contains("hss.epc.mnc001.mcc001.3gppnetwork.org"));
        assert_eq!(EpsMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = EpsMessage::EchoRequest { seq: 7, origin_host: "x".into() }.encode();
        assert!(EpsMessage::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(b'!');
        assert!(EpsMessage::decode(&extra).is_err());
        assert!(EpsMessage::decode(b"Nope|a=1:b").is_err());
    }

    #[test]
    fn gtp_overhead_matches_encoding() {
        for len in [0usize, 9, 10, 99, 100, 1420] {
            let m = EpsMessage::GtpData { teid: 77, payload: vec![0; len] };
            assert_eq!(m.encode().len(), len + gtp_overhead(77, len), "{len}");
        }
    }
}
