use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::machine::MachineId;
use crate::value::Location;

/// A pair `(R-Loc, W-Loc)` of requested or held read and write locks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LockPair {
    pub r_loc: BTreeSet<Location>,
    pub w_loc: BTreeSet<Location>,
}

impl LockPair {
    pub fn new(r_loc: BTreeSet<Location>, w_loc: BTreeSet<Location>) -> Self {
        LockPair { r_loc, w_loc }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.r_loc.is_empty() && self.w_loc.is_empty()
    }

    /// `R-Loc ∪ W-Loc`.
    pub fn all(&self) -> BTreeSet<Location> {
        self.r_loc.union(&self.w_loc).cloned().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Holders {
    r: BTreeSet<MachineId>,
    w: BTreeSet<MachineId>,
}

/// Ownership of read and write locks per location.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockTable {
    table: BTreeMap<Location, Holders>,
}

/// A location whose holders break the two-phase-locking invariant.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("lock conflict at {location}: writers {writers:?}, readers {readers:?}")]
pub struct LockViolation {
    pub location: Location,
    pub writers: Vec<MachineId>,
    pub readers: Vec<MachineId>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn r_locked(&self, l: &Location, m: MachineId) -> bool {
        self.table.get(l).is_some_and(|h| h.r.contains(&m))
    }

    pub fn w_locked(&self, l: &Location, m: MachineId) -> bool {
        self.table.get(l).is_some_and(|h| h.w.contains(&m))
    }

    /// `LockedBy(m)`: locations m holds in either mode.
    pub fn locked_by(&self, m: MachineId) -> BTreeSet<Location> {
        self.table
            .iter()
            .filter(|(_, h)| h.r.contains(&m) || h.w.contains(&m))
            .map(|(l, _)| l.clone())
            .collect()
    }

    pub fn w_locked_by(&self, m: MachineId) -> BTreeSet<Location> {
        self.table
            .iter()
            .filter(|(_, h)| h.w.contains(&m))
            .map(|(l, _)| l.clone())
            .collect()
    }

    /// Everything m holds, as a pair.
    pub fn held_by(&self, m: MachineId) -> LockPair {
        let mut pair = LockPair::empty();
        for (l, h) in &self.table {
            if h.r.contains(&m) {
                pair.r_loc.insert(l.clone());
            }
            if h.w.contains(&m) {
                pair.w_loc.insert(l.clone());
            }
        }
        pair
    }

    pub fn readers(&self, l: &Location) -> impl Iterator<Item = MachineId> + '_ {
        self.table.get(l).into_iter().flat_map(|h| h.r.iter().copied())
    }

    pub fn writers(&self, l: &Location) -> impl Iterator<Item = MachineId> + '_ {
        self.table.get(l).into_iter().flat_map(|h| h.w.iter().copied())
    }

    pub fn grant(&mut self, m: MachineId, pair: &LockPair) {
        for l in &pair.r_loc {
            self.table.entry(l.clone()).or_default().r.insert(m);
        }
        for l in &pair.w_loc {
            self.table.entry(l.clone()).or_default().w.insert(m);
        }
    }

    /// Drop exactly the modes listed in `pair`.
    pub fn release(&mut self, m: MachineId, pair: &LockPair) {
        for l in &pair.r_loc {
            self.remove(l, m, false);
        }
        for l in &pair.w_loc {
            self.remove(l, m, true);
        }
    }

    /// `Unlock(l, m)` for every l held by m.
    pub fn release_all(&mut self, m: MachineId) -> LockPair {
        let held = self.held_by(m);
        self.release(m, &held);
        held
    }

    fn remove(&mut self, l: &Location, m: MachineId, write: bool) {
        if let Some(h) = self.table.get_mut(l) {
            if write {
                h.w.remove(&m);
            } else {
                h.r.remove(&m);
            }
            if h.r.is_empty() && h.w.is_empty() {
                self.table.remove(l);
            }
        }
    }

    /// Two-phase-locking safety: at most one writer per location, and a
    /// writer excludes readers other than itself.
    pub fn check(&self) -> Result<(), LockViolation> {
        for (l, h) in &self.table {
            let bad = h.w.len() > 1 || h.w.iter().any(|w| h.r.iter().any(|r| r != w));
            if bad {
                return Err(LockViolation {
                    location: l.clone(),
                    writers: h.w.iter().copied().collect(),
                    readers: h.r.iter().copied().collect(),
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// All `(location, machine, is_write)` entries in canonical order.
    pub fn entries(&self) -> Vec<(Location, MachineId, bool)> {
        let mut out = Vec::new();
        for (l, h) in &self.table {
            out.extend(h.r.iter().map(|m| (l.clone(), *m, false)));
            out.extend(h.w.iter().map(|m| (l.clone(), *m, true)));
        }
        out
    }
}
