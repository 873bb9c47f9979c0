//! Relation data bags exchanged between pairs of units, with ordered
//! change events and at-least-once delivery.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub const KEY_PUBLIC_KEY: &str = "public_key";
pub const KEY_ENDPOINT_HOST: &str = "endpoint_host";
pub const KEY_ENDPOINT_PORT: &str = "endpoint_port";
pub const KEY_TUNNEL_ADDRESS: &str = "tunnel_address";
pub const KEY_ALLOWED_CIDRS: &str = "allowed_cidrs";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelationError {
    #[error("relation {name:?} between {a} and {b} already exists")]
    DuplicateRelation { name: String, a: String, b: String },
    #[error("unknown unit {0}")]
    UnknownUnit(String),
    #[error("unknown relation {0}")]
    UnknownRelation(RelationId),
    #[error("relation {0} has departed")]
    RelationDeparted(RelationId),
    #[error("unit {unit} is not part of relation {relation}")]
    NotParticipant { relation: RelationId, unit: String },
    #[error("a unit cannot relate to itself ({0})")]
    SelfRelation(String),
    #[error("unit {0} is already registered")]
    DuplicateUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RelationId(pub u64);

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rel-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationState {
    Created,
    JoinedOne,
    JoinedBoth,
    Departed,
}

/// A string map plus a version bumped on every publish.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RelationDataBag {
    pub entries: BTreeMap<String, String>,
    pub version: u64,
}

impl RelationDataBag {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Joined,
    Changed,
    Departed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelationEvent {
    pub kind: EventKind,
    pub relation: RelationId,
    /// Side whose action caused the event.
    pub origin: Side,
    /// Version of the origin side's bag when the event was queued.
    pub version: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationInstance {
    pub id: RelationId,
    pub name: String,
    pub units: [String; 2],
    pub bags: [RelationDataBag; 2],
    pub joined: [bool; 2],
    pub state: RelationState,
}

impl RelationInstance {
    pub fn side_of(&self, unit: &str) -> Option<Side> {
        if self.units[0] == unit {
            Some(Side::A)
        } else if self.units[1] == unit {
            Some(Side::B)
        } else {
            None
        }
    }

    pub fn unit(&self, side: Side) -> &str {
        &self.units[side.index()]
    }
}

#[derive(Default)]
struct Inbox {
    /// Per-relation FIFO of (global sequence, event); released once the side joins.
    queues: BTreeMap<RelationId, VecDeque<(u64, RelationEvent)>>,
    in_flight: Vec<(u64, RelationEvent)>,
}

#[derive(Default)]
pub struct RelationBus {
    units: BTreeSet<String>,
    relations: BTreeMap<RelationId, RelationInstance>,
    inboxes: HashMap<String, Inbox>,
    next_id: u64,
    seq: u64,
}

impl RelationBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_unit(&mut self, unit: &str) -> Result<(), RelationError> {
        if !self.units.insert(unit.to_string()) {
            return Err(RelationError::DuplicateUnit(unit.to_string()));
        }
        self.inboxes.insert(unit.to_string(), Inbox::default());
        Ok(())
    }

    /// Departs every relation of `unit` and forgets it.
    pub fn remove_unit(&mut self, unit: &str) {
        let ids: Vec<RelationId> =
            self.relations.values().filter(|r| r.side_of(unit).is_some()).map(|r| r.id).collect();
        for id in ids {
            let _ = self.depart(id);
        }
        self.units.remove(unit);
        self.inboxes.remove(unit);
    }

    pub fn has_unit(&self, unit: &str) -> bool {
        self.units.contains(unit)
    }

    pub fn create_relation(&mut self, name: &str, a: &str, b: &str) -> Result<RelationId, RelationError> {
        for u in [a, b] {
            if !self.units.contains(u) {
                return Err(RelationError::UnknownUnit(u.to_string()));
            }
        }
        if a == b {
            return Err(RelationError::SelfRelation(a.to_string()));
        }
        let dup = self.relations.values().any(|r| {
            r.name == name
                && r.state != RelationState::Departed
                && r.side_of(a).is_some()
                && r.side_of(b).is_some()
        });
        if dup {
            return Err(RelationError::DuplicateRelation { name: name.into(), a: a.into(), b: b.into() });
        }
        self.next_id += 1;
        let id = RelationId(self.next_id);
        self.relations.insert(
            id,
            RelationInstance {
                id,
                name: name.to_string(),
                units: [a.to_string(), b.to_string()],
                bags: Default::default(),
                joined: [false, false],
                state: RelationState::Created,
            },
        );
        for u in [a, b] {
            self.inboxes.get_mut(u).expect("registered").queues.insert(id, VecDeque::new());
        }
        Ok(id)
    }

    pub fn relation(&self, id: RelationId) -> Option<&RelationInstance> {
        self.relations.get(&id)
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationInstance> {
        self.relations.values()
    }

    pub fn relations_of<'a>(&'a self, unit: &'a str) -> impl Iterator<Item = &'a RelationInstance> + 'a {
        self.relations.values().filter(move |r| r.side_of(unit).is_some())
    }

    fn locate(&self, id: RelationId, unit: &str) -> Result<(&RelationInstance, Side), RelationError> {
        let r = self.relations.get(&id).ok_or(RelationError::UnknownRelation(id))?;
        let side = r
            .side_of(unit)
            .ok_or_else(|| RelationError::NotParticipant { relation: id, unit: unit.to_string() })?;
        Ok((r, side))
    }

    fn enqueue(&mut self, id: RelationId, to: Side, event: RelationEvent) {
        self.seq += 1;
        let unit = self.relations[&id].unit(to).to_string();
        if let Some(inbox) = self.inboxes.get_mut(&unit) {
            inbox.queues.entry(id).or_default().push_back((self.seq, event));
        }
    }

    /// Attaches `unit`'s handler; the counterpart learns about it through a joined event.
    pub fn join(&mut self, id: RelationId, unit: &str) -> Result<RelationState, RelationError> {
        let (r, side) = self.locate(id, unit)?;
        if r.state == RelationState::Departed {
            return Err(RelationError::RelationDeparted(id));
        }
        if r.joined[side.index()] {
            return Ok(r.state);
        }
        let r = self.relations.get_mut(&id).expect("located");
        r.joined[side.index()] = true;
        r.state = if r.joined == [true, true] { RelationState::JoinedBoth } else { RelationState::JoinedOne };
        let state = r.state;
        let version = r.bags[side.index()].version;
        self.enqueue(id, side.opposite(), RelationEvent { kind: EventKind::Joined, relation: id, origin: side, version });
        Ok(state)
    }

    /// Merges `entries` into the unit's own bag and returns the new version.
    pub fn publish<I, K, V>(&mut self, id: RelationId, unit: &str, entries: I) -> Result<u64, RelationError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let (r, side) = self.locate(id, unit)?;
        if r.state == RelationState::Departed {
            return Err(RelationError::RelationDeparted(id));
        }
        let r = self.relations.get_mut(&id).expect("located");
        let bag = &mut r.bags[side.index()];
        for (k, v) in entries {
            bag.entries.insert(k.into(), v.into());
        }
        bag.version += 1;
        let version = bag.version;
        self.enqueue(id, side.opposite(), RelationEvent { kind: EventKind::Changed, relation: id, origin: side, version });
        Ok(version)
    }

    /// Snapshot of the counterpart's bag. Empty until both sides have joined.
    pub fn read_remote(&self, id: RelationId, unit: &str) -> Result<RelationDataBag, RelationError> {
        let (r, side) = self.locate(id, unit)?;
        if r.state < RelationState::JoinedBoth {
            return Ok(RelationDataBag::default());
        }
        Ok(r.bags[side.opposite().index()].clone())
    }

    /// The unit's own bag, as last published.
    pub fn read_local(&self, id: RelationId, unit: &str) -> Result<RelationDataBag, RelationError> {
        let (r, side) = self.locate(id, unit)?;
        Ok(r.bags[side.index()].clone())
    }

    pub fn depart(&mut self, id: RelationId) -> Result<(), RelationError> {
        let r = self.relations.get_mut(&id).ok_or(RelationError::UnknownRelation(id))?;
        if r.state == RelationState::Departed {
            return Ok(());
        }
        r.state = RelationState::Departed;
        let versions = [r.bags[0].version, r.bags[1].version];
        for side in [Side::A, Side::B] {
            let origin = side.opposite();
            self.enqueue(
                id,
                side,
                RelationEvent { kind: EventKind::Departed, relation: id, origin, version: versions[origin.index()] },
            );
        }
        Ok(())
    }

    /// Oldest deliverable event for `unit`. The event stays in flight until acknowledged.
    pub fn next_event(&mut self, unit: &str) -> Option<RelationEvent> {
        let joined: BTreeSet<RelationId> = self
            .relations
            .values()
            .filter(|r| r.side_of(unit).is_some_and(|s| r.joined[s.index()]))
            .map(|r| r.id)
            .collect();
        let inbox = self.inboxes.get_mut(unit)?;
        let (&id, _) = inbox
            .queues
            .iter()
            .filter(|(id, q)| joined.contains(id) && !q.is_empty())
            .min_by_key(|(_, q)| q.front().map(|(s, _)| *s))?;
        let (seq, event) = inbox.queues.get_mut(&id)?.pop_front()?;
        inbox.in_flight.push((seq, event.clone()));
        Some(event)
    }

    /// Marks every in-flight event of `unit` as handled.
    pub fn ack(&mut self, unit: &str) {
        if let Some(inbox) = self.inboxes.get_mut(unit) {
            inbox.in_flight.clear();
        }
    }

    /// Requeues unacknowledged events at the front, as after a handler crash.
    pub fn redeliver(&mut self, unit: &str) -> usize {
        let Some(inbox) = self.inboxes.get_mut(unit) else { return 0 };
        let pending = std::mem::take(&mut inbox.in_flight);
        let n = pending.len();
        for (seq, event) in pending.into_iter().rev() {
            inbox.queues.entry(event.relation).or_default().push_front((seq, event));
        }
        n
    }

    pub fn pending_events(&self, unit: &str) -> usize {
        self.inboxes.get(unit).map_or(0, |i| i.queues.values().map(VecDeque::len).sum())
    }

    /// Every value in every bag, for key-material sweeps.
    pub fn all_bag_values(&self) -> impl Iterator<Item = &str> {
        self.relations.values().flat_map(|r| r.bags.iter()).flat_map(|b| b.entries.values().map(String::as_str))
    }
}
