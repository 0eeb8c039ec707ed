//! States, interpretations and update sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::AsmError;
use crate::value::{Location, Value};

/// Assignment of logical variables to values.
pub type Interpretation = BTreeMap<String, Value>;

/// Finite map from locations to values. Absent locations hold `undef`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "StateRepr", try_from = "StateRepr")]
pub struct State {
    values: BTreeMap<Location, Value>,
    domain: Vec<Value>,
}

impl State {
    /// A state with no defined locations over the given quantifier domain.
    pub fn new(domain: Vec<Value>) -> Result<Self, AsmError> {
        if domain.is_empty() {
            return Err(AsmError::InvalidDomain("domain must be nonempty".into()));
        }
        let distinct: BTreeSet<&Value> = domain.iter().collect();
        if distinct.len() != domain.len() {
            return Err(AsmError::InvalidDomain("domain contains duplicates".into()));
        }
        Ok(State {
            values: BTreeMap::new(),
            domain,
        })
    }

    /// Integer domain `{0, ..., size-1}`.
    pub fn with_int_domain(size: usize) -> Result<Self, AsmError> {
        Self::new((0..size as i64).map(Value::int).collect())
    }

    pub fn domain(&self) -> &[Value] {
        &self.domain
    }

    pub fn get(&self, loc: &Location) -> Value {
        self.values.get(loc).cloned().unwrap_or(Value::Undef)
    }

    pub fn set(&mut self, loc: Location, v: Value) {
        if v.is_undef() {
            self.values.remove(&loc);
        } else {
            self.values.insert(loc, v);
        }
    }

    pub fn locations(&self) -> impl Iterator<Item = (&Location, &Value)> {
        self.values.iter()
    }

    /// `S + U`. Fails if `u` is inconsistent.
    pub fn apply(&self, u: &UpdateSet) -> Result<State, AsmError> {
        if let Some(loc) = u.first_clash() {
            return Err(AsmError::InconsistentUpdateSet(loc));
        }
        let mut next = self.clone();
        for (loc, v) in u.iter() {
            next.set(loc.clone(), v.clone());
        }
        Ok(next)
    }

    /// Stable 64-bit digest of the location map, in canonical order.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        for v in &self.domain {
            h.update(v.to_string().as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for (loc, v) in &self.values {
            h.update(loc.to_string().as_bytes());
            h.update([0u8]);
            h.update(v.to_string().as_bytes());
            h.update([0u8]);
        }
        let out = h.finalize();
        u64::from_be_bytes(out[..8].try_into().unwrap())
    }
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    domain: Vec<Value>,
    values: Vec<(Location, Value)>,
}

impl From<State> for StateRepr {
    fn from(s: State) -> Self {
        StateRepr {
            domain: s.domain,
            values: s.values.into_iter().collect(),
        }
    }
}

impl TryFrom<StateRepr> for State {
    type Error = AsmError;

    fn try_from(r: StateRepr) -> Result<Self, Self::Error> {
        let mut s = State::new(r.domain)?;
        for (loc, v) in r.values {
            s.set(loc, v);
        }
        Ok(s)
    }
}

/// Set of `(location, value)` updates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UpdateSet(BTreeSet<(Location, Value)>);

impl UpdateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(loc: Location, v: Value) -> Self {
        let mut u = Self::new();
        u.insert(loc, v);
        u
    }

    pub fn insert(&mut self, loc: Location, v: Value) {
        self.0.insert((loc, v));
    }

    pub fn extend(&mut self, other: UpdateSet) {
        self.0.extend(other.0);
    }

    pub fn union(mut self, other: UpdateSet) -> Self {
        self.extend(other);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Location, Value)> {
        self.0.iter()
    }

    pub fn locations(&self) -> BTreeSet<Location> {
        self.0.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn contains(&self, loc: &Location, v: &Value) -> bool {
        self.0.contains(&(loc.clone(), v.clone()))
    }

    /// The first location (in canonical order) updated with two distinct values.
    pub fn first_clash(&self) -> Option<Location> {
        let mut prev: Option<&Location> = None;
        for (loc, _) in &self.0 {
            if prev == Some(loc) {
                return Some(loc.clone());
            }
            prev = Some(loc);
        }
        None
    }

    pub fn is_consistent(&self) -> bool {
        self.first_clash().is_none()
    }

    /// `self ⊕ later`: updates of `later` override those of `self` on shared locations.
    pub fn overridden_by(&self, later: &UpdateSet) -> UpdateSet {
        let overridden = later.locations();
        let mut out: BTreeSet<(Location, Value)> = self.0.iter().filter(|(l, _)| !overridden.contains(l)).cloned().collect();
        out.extend(later.0.iter().cloned());
        UpdateSet(out)
    }
}

impl FromIterator<(Location, Value)> for UpdateSet {
    fn from_iter<I: IntoIterator<Item = (Location, Value)>>(iter: I) -> Self {
        UpdateSet(iter.into_iter().collect())
    }
}

impl IntoIterator for UpdateSet {
    type Item = (Location, Value);
    type IntoIter = std::collections::btree_set::IntoIter<(Location, Value)>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(i: i64) -> Location {
        Location::new("f", vec![Value::int(i)])
    }

    #[test]
    fn domain_must_be_nonempty_and_distinct() {
        assert!(State::new(vec![]).is_err());
        assert!(State::new(vec![Value::int(1), Value::int(1)]).is_err());
    }

    #[test]
    fn unmapped_reads_undef() {
        let s = State::with_int_domain(2).unwrap();
        assert_eq!(s.get(&f(9)), Value::Undef);
    }

    #[test]
    fn apply_empty_is_identity() {
        let mut s = State::with_int_domain(2).unwrap();
        s.set(f(1), Value::int(3));
        assert_eq!(s.apply(&UpdateSet::new()).unwrap(), s);
    }

    #[test]
    fn apply_then_read() {
        let s = State::with_int_domain(2).unwrap();
        let s2 = s.apply(&UpdateSet::singleton(f(1), Value::int(3))).unwrap();
        assert_eq!(s2.get(&f(1)), Value::int(3));
    }

    #[test]
    fn apply_rejects_clash() {
        let s = State::with_int_domain(2).unwrap();
        let u: UpdateSet = [(f(1), Value::int(3)), (f(1), Value::int(4))].into_iter().collect();
        assert!(!u.is_consistent());
        assert_eq!(s.apply(&u), Err(AsmError::InconsistentUpdateSet(f(1))));
    }

    #[test]
    fn override_prefers_later() {
        let a: UpdateSet = [(f(1), Value::int(1)), (f(2), Value::int(2))].into_iter().collect();
        let b = UpdateSet::singleton(f(1), Value::int(9));
        let c = a.overridden_by(&b);
        assert!(c.contains(&f(1), &Value::int(9)));
        assert!(c.contains(&f(2), &Value::int(2)));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn digest_ignores_insertion_order() {
        let mut a = State::with_int_domain(2).unwrap();
        let mut b = a.clone();
        a.set(f(1), Value::int(1));
        a.set(f(2), Value::int(2));
        b.set(f(2), Value::int(2));
        b.set(f(1), Value::int(1));
        assert_eq!(a.digest(), b.digest());
        b.set(f(2), Value::int(3));
        assert_ne!(a.digest(), b.digest());
    }
}
