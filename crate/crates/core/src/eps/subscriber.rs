use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{EpsError, DEFAULT_APN, DEFAULT_REALM};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubscriberRecord {
    pub imsi: String,
    pub key: [u8; 16],
    pub apn: String,
    pub realm: String,
}

pub fn valid_imsi(imsi: &str) -> bool {
    imsi.len() == 15 && imsi.bytes().all(|b| b.is_ascii_digit())
}

fn parse_key(text: &str) -> Result<[u8; 16], EpsError> {
    let t = text.trim();
    if t.len() != 32 || !t.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(EpsError::InvalidSubscriber(format!("key must be 32 hex digits, got {t:?}")));
    }
    let mut key = [0u8; 16];
    for (i, k) in key.iter_mut().enumerate() {
        *k = u8::from_str_radix(&t[2 * i..2 * i + 2], 16).expect("checked hex");
    }
    Ok(key)
}

impl SubscriberRecord {
    pub fn new(imsi: &str, key_hex: &str, apn: Option<&str>, realm: Option<&str>) -> Result<Self, EpsError> {
        if !valid_imsi(imsi) {
            return Err(EpsError::InvalidSubscriber(format!("IMSI must be 15 digits, got {imsi:?}")));
        }
        Ok(SubscriberRecord {
            imsi: imsi.to_string(),
            key: parse_key(key_hex)?,
            apn: apn.unwrap_or(DEFAULT_APN).to_string(),
            realm: realm.unwrap_or(DEFAULT_REALM).to_string(),
        })
    }

    pub fn key_hex(&self) -> String {
        self.key.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    imsi: String,
    key_hex: String,
    #[serde(default)]
    apn: Option<String>,
    #[serde(default)]
    realm: Option<String>,
}

/// Reads a JSON-lines provisioning file. Blank lines are skipped.
pub fn read_subscribers<R: BufRead>(input: R) -> Result<Vec<SubscriberRecord>, EpsError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EpsError::InvalidSubscriber(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line)
            .map_err(|e| EpsError::InvalidSubscriber(format!("line {}: {e}", n + 1)))?;
        out.push(SubscriberRecord::new(&l.imsi, &l.key_hex, l.apn.as_deref(), l.realm.as_deref())?);
    }
    Ok(out)
}

pub fn write_subscribers(records: &[SubscriberRecord]) -> String {
    records
        .iter()
        .map(|r| {
            let l = Line { imsi: r.imsi.clone(), key_hex: r.key_hex(), apn: Some(r.apn.clone()), realm: Some(r.realm.clone()) };
            serde_json::to_string(&l).expect("plain strings") + "\n"
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct SubscriberDb {
    records: BTreeMap<String, SubscriberRecord>,
}

impl SubscriberDb {
    pub fn insert(&mut self, r: SubscriberRecord) {
        self.records.insert(r.imsi.clone(), r);
    }

    pub fn get(&self, imsi: &str) -> Option<&SubscriberRecord> {
        self.records.get(imsi)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
