//! The transaction controller: lock handler, commit, deadlock handler and
//! recovery, operating on a shared lock table and victim set.
//!
//! Each component is a pure function of a pre-step snapshot that returns at
//! most one decision; the run engine applies all decisions of a global step
//! together.

pub mod locks;
pub mod policy;
pub mod wait;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use locks::{LockPair, LockTable, LockViolation};
pub use policy::{Policies, ReleasePolicy, SelectPolicy, UnknownPolicy, VictimCandidate, VictimPolicy, WaitMode};
pub use wait::WaitGraph;

use crate::machine::MachineId;
use crate::rng::SeedStream;
use crate::state::UpdateSet;
use crate::wrapper::HistoryEntry;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub locks: LockPair,
    /// Global step in which the request was inserted.
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefuseReason {
    Conflict,
    /// The machine no longer needs exactly these locks.
    Stale,
    Victim,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LockOutcome {
    Grant,
    Refuse(RefuseReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LockDecision {
    pub machine: MachineId,
    pub request: PendingRequest,
    pub outcome: LockOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryAction {
    Unvictimize(MachineId),
    Undo(MachineId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControllerError {
    #[error("machine {0} has no history to undo")]
    EmptyHistory(MachineId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerState {
    pub transact: BTreeSet<MachineId>,
    pub lock_requests: BTreeMap<MachineId, PendingRequest>,
    /// Machine and the step its commit was requested in.
    pub commit_requests: BTreeMap<MachineId, u64>,
    pub victims: BTreeSet<MachineId>,
    /// How often each machine has been made a victim.
    pub victimized: BTreeMap<MachineId, u64>,
    pub locks: LockTable,
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// True iff some requested location is W-locked by another transactional
    /// machine, or is requested for writing and R-locked by another one.
    pub fn cannot_be_granted(&self, m: MachineId, pair: &LockPair) -> bool {
        let other = |n: MachineId| n != m && self.transact.contains(&n);
        pair.all()
            .iter()
            .any(|l| self.locks.writers(l).any(other) || (pair.w_loc.contains(l) && self.locks.readers(l).any(other)))
    }

    pub fn wait_relation(&self, needs: &BTreeMap<MachineId, LockPair>) -> WaitGraph {
        WaitGraph::build(&self.transact, needs, &self.locks)
    }

    pub fn deadlocked(&self, needs: &BTreeMap<MachineId, LockPair>) -> BTreeSet<MachineId> {
        self.wait_relation(needs).deadlocked()
    }

    fn decide(&self, m: MachineId, req: &PendingRequest, needs: &BTreeMap<MachineId, LockPair>) -> LockOutcome {
        if self.victims.contains(&m) {
            LockOutcome::Refuse(RefuseReason::Victim)
        } else if needs.get(&m) != Some(&req.locks) {
            LockOutcome::Refuse(RefuseReason::Stale)
        } else if self.cannot_be_granted(m, &req.locks) {
            LockOutcome::Refuse(RefuseReason::Conflict)
        } else {
            LockOutcome::Grant
        }
    }

    /// Handles one pending lock request. In suspend mode requests that would
    /// be refused for a conflict are left pending.
    pub fn lock_handler_step(
        &self,
        needs: &BTreeMap<MachineId, LockPair>,
        policy: SelectPolicy,
        mode: WaitMode,
        rng: &mut SeedStream,
    ) -> Option<LockDecision> {
        let decided: Vec<(MachineId, &PendingRequest, LockOutcome)> = self
            .lock_requests
            .iter()
            .map(|(m, req)| (*m, req, self.decide(*m, req, needs)))
            .filter(|(_, _, out)| mode == WaitMode::Retry || *out != LockOutcome::Refuse(RefuseReason::Conflict))
            .collect();
        let candidates: Vec<(MachineId, u64)> = decided.iter().map(|(m, req, _)| (*m, req.step)).collect();
        let chosen = policy.pick(&candidates, rng)?;
        let (machine, req, outcome) = decided.into_iter().find(|(m, _, _)| *m == chosen)?;
        Some(LockDecision {
            machine,
            request: req.clone(),
            outcome,
        })
    }

    pub fn commit_step(&self, policy: SelectPolicy, rng: &mut SeedStream) -> Option<MachineId> {
        let candidates: Vec<(MachineId, u64)> = self.commit_requests.iter().map(|(m, t)| (*m, *t)).collect();
        policy.pick(&candidates, rng)
    }

    /// Picks a new victim among deadlocked machines that are not victims yet.
    /// Cycles that already contain a victim are left to recovery.
    pub fn deadlock_handler_step(
        &self,
        needs: &BTreeMap<MachineId, LockPair>,
        history_len: &BTreeMap<MachineId, usize>,
        policy: VictimPolicy,
        rng: &mut SeedStream,
    ) -> Option<MachineId> {
        let graph = self.wait_relation(needs);
        let candidates: Vec<VictimCandidate> = graph
            .deadlocked()
            .into_iter()
            .filter(|m| !self.victims.contains(m))
            .filter(|m| graph.component(*m).is_disjoint(&self.victims))
            .map(|m| VictimCandidate {
                machine: m,
                history: history_len.get(&m).copied().unwrap_or(0),
                victimized: self.victimized.get(&m).copied().unwrap_or(0),
            })
            .collect();
        policy.pick(&candidates, rng)
    }

    /// Picks one victim that waits for recovery; it is released once `release`
    /// allows and otherwise loses its youngest step.
    pub fn recovery_step(
        &self,
        needs: &BTreeMap<MachineId, LockPair>,
        recovering: &BTreeSet<MachineId>,
        policy: SelectPolicy,
        release: ReleasePolicy,
        rng: &mut SeedStream,
    ) -> Option<RecoveryAction> {
        let candidates: Vec<(MachineId, u64)> = self
            .victims
            .iter()
            .filter(|m| recovering.contains(m))
            .map(|m| (*m, m.0 as u64))
            .collect();
        let m = policy.pick(&candidates, rng)?;
        let graph = self.wait_relation(needs);
        let stuck = graph.deadlocked().contains(&m) || (release == ReleasePolicy::NotBlocking && graph.edges().any(|(_, n)| n == m));
        if stuck {
            Some(RecoveryAction::Undo(m))
        } else {
            Some(RecoveryAction::Unvictimize(m))
        }
    }

    pub fn victimize(&mut self, m: MachineId) {
        self.victims.insert(m);
        *self.victimized.entry(m).or_default() += 1;
    }

    pub fn register(&mut self, m: MachineId) {
        self.transact.insert(m);
    }

    pub fn insert_lock_request(&mut self, m: MachineId, locks: LockPair, step: u64) {
        self.lock_requests.insert(m, PendingRequest { locks, step });
    }

    pub fn insert_commit_request(&mut self, m: MachineId, step: u64) {
        self.commit_requests.insert(m, step);
    }

    pub fn apply_lock_decision(&mut self, d: &LockDecision) {
        self.lock_requests.remove(&d.machine);
        if d.outcome == LockOutcome::Grant {
            self.locks.grant(d.machine, &d.request.locks);
        }
    }

    /// Releases every lock of `m` and removes it from the transaction set.
    pub fn apply_commit(&mut self, m: MachineId) -> LockPair {
        self.commit_requests.remove(&m);
        self.transact.remove(&m);
        self.locks.release_all(m)
    }

    /// Restore and release for the youngest history entry; the caller pops it.
    pub fn undo(&mut self, m: MachineId, youngest: Option<&HistoryEntry>) -> Result<UpdateSet, ControllerError> {
        let entry = youngest.ok_or(ControllerError::EmptyHistory(m))?;
        self.locks.release(m, &entry.lock_set);
        Ok(entry.restore_updates())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{Location, Value};

    fn l(name: &str) -> Location {
        Location::nullary(name)
    }

    fn r(names: &[&str]) -> LockPair {
        LockPair::new(names.iter().map(|n| l(n)).collect(), BTreeSet::new())
    }

    fn w(names: &[&str]) -> LockPair {
        LockPair::new(BTreeSet::new(), names.iter().map(|n| l(n)).collect())
    }

    fn cs(n: usize) -> ControllerState {
        let mut c = ControllerState::new();
        for i in 0..n {
            c.register(MachineId(i));
        }
        c
    }

    fn rng() -> SeedStream {
        SeedStream::from_seed(7)
    }

    const A: MachineId = MachineId(0);
    const B: MachineId = MachineId(1);

    #[test]
    fn cannot_be_granted_cases() {
        let mut c = cs(2);
        assert!(!c.cannot_be_granted(A, &LockPair::empty()));
        c.locks.grant(B, &w(&["x"]));
        assert!(c.cannot_be_granted(A, &r(&["x"])));
        let mut c = cs(2);
        c.locks.grant(B, &r(&["x"]));
        assert!(c.cannot_be_granted(A, &w(&["x"])));
        assert!(!c.cannot_be_granted(A, &r(&["x"])));
        // own locks never block
        assert!(!c.cannot_be_granted(B, &w(&["x"])));
    }

    #[test]
    fn locks_of_non_transactional_machines_do_not_block() {
        let mut c = cs(1);
        c.locks.grant(B, &w(&["x"]));
        assert!(!c.cannot_be_granted(A, &w(&["x"])));
    }

    #[test]
    fn lock_handler_grants_single_request() {
        let mut c = cs(2);
        let pair = LockPair::new([Location::new("f", vec![Value::int(1)])].into(), BTreeSet::new());
        c.insert_lock_request(A, pair.clone(), 3);
        let needs = BTreeMap::from([(A, pair.clone())]);
        let d = c
            .lock_handler_step(&needs, SelectPolicy::Random, WaitMode::Retry, &mut rng())
            .unwrap();
        assert_eq!(d.outcome, LockOutcome::Grant);
        c.apply_lock_decision(&d);
        assert!(c.locks.r_locked(&Location::new("f", vec![Value::int(1)]), A));
        assert!(c.lock_requests.is_empty());
    }

    #[test]
    fn empty_queues_do_nothing() {
        let c = cs(2);
        let needs = BTreeMap::new();
        assert!(c
            .lock_handler_step(&needs, SelectPolicy::Random, WaitMode::Retry, &mut rng())
            .is_none());
        assert!(c.commit_step(SelectPolicy::Random, &mut rng()).is_none());
        assert!(c
            .deadlock_handler_step(&needs, &BTreeMap::new(), VictimPolicy::ShortestHistory, &mut rng())
            .is_none());
        assert!(c
            .recovery_step(&needs, &BTreeSet::new(), SelectPolicy::Random, ReleasePolicy::default(), &mut rng())
            .is_none());
    }

    #[test]
    fn conflicting_requests_one_per_step() {
        let mut c = cs(2);
        c.insert_lock_request(A, w(&["x"]), 0);
        c.insert_lock_request(B, w(&["x"]), 0);
        let needs = BTreeMap::from([(A, w(&["x"])), (B, w(&["x"]))]);
        let d = c
            .lock_handler_step(&needs, SelectPolicy::Random, WaitMode::Retry, &mut rng())
            .unwrap();
        assert_eq!(d.outcome, LockOutcome::Grant);
        c.apply_lock_decision(&d);
        assert_eq!(c.lock_requests.len(), 1);
        let d = c
            .lock_handler_step(&needs, SelectPolicy::Random, WaitMode::Retry, &mut rng())
            .unwrap();
        assert_eq!(d.outcome, LockOutcome::Refuse(RefuseReason::Conflict));
        c.apply_lock_decision(&d);
        assert!(c.locks.check().is_ok());
    }

    #[test]
    fn suspend_leaves_blocked_requests_pending() {
        let mut c = cs(2);
        c.locks.grant(B, &w(&["x"]));
        c.insert_lock_request(A, w(&["x"]), 0);
        let needs = BTreeMap::from([(A, w(&["x"]))]);
        assert!(c
            .lock_handler_step(&needs, SelectPolicy::Fifo, WaitMode::Suspend, &mut rng())
            .is_none());
        let d = c
            .lock_handler_step(&needs, SelectPolicy::Fifo, WaitMode::Retry, &mut rng())
            .unwrap();
        assert_eq!(d.outcome, LockOutcome::Refuse(RefuseReason::Conflict));
    }

    #[test]
    fn stale_and_victim_requests_are_refused() {
        let mut c = cs(2);
        c.insert_lock_request(A, w(&["x"]), 0);
        let stale = BTreeMap::from([(A, w(&["y"]))]);
        let d = c
            .lock_handler_step(&stale, SelectPolicy::Fifo, WaitMode::Suspend, &mut rng())
            .unwrap();
        assert_eq!(d.outcome, LockOutcome::Refuse(RefuseReason::Stale));
        c.victims.insert(A);
        let fresh = BTreeMap::from([(A, w(&["x"]))]);
        let d = c
            .lock_handler_step(&fresh, SelectPolicy::Fifo, WaitMode::Retry, &mut rng())
            .unwrap();
        assert_eq!(d.outcome, LockOutcome::Refuse(RefuseReason::Victim));
    }

    #[test]
    fn commit_releases_everything() {
        let mut c = cs(2);
        let g2 = Location::new("g", vec![Value::int(2)]);
        let f1 = Location::new("f", vec![Value::int(1)]);
        c.locks.grant(A, &LockPair::new([f1.clone()].into(), [g2.clone()].into()));
        c.insert_commit_request(A, 0);
        let m = c.commit_step(SelectPolicy::Random, &mut rng()).unwrap();
        assert_eq!(c.apply_commit(m), LockPair::new([f1].into(), [g2].into()));
        assert!(c.locks.is_empty());
        assert!(!c.transact.contains(&A));
    }

    #[test]
    fn deadlock_picks_one_victim_and_respects_existing_victims() {
        let mut c = cs(2);
        c.locks.grant(A, &w(&["x"]));
        c.locks.grant(B, &w(&["y"]));
        let needs = BTreeMap::from([(A, w(&["y"])), (B, w(&["x"]))]);
        assert_eq!(c.deadlocked(&needs), [A, B].into());
        let hist = BTreeMap::from([(A, 2), (B, 1)]);
        let v = c.deadlock_handler_step(&needs, &hist, VictimPolicy::ShortestHistory, &mut rng());
        assert_eq!(v, Some(B));
        c.victims.insert(B);
        assert_eq!(
            c.deadlock_handler_step(&needs, &hist, VictimPolicy::ShortestHistory, &mut rng()),
            None
        );
    }

    #[test]
    fn recovery_undoes_or_releases() {
        let mut c = cs(2);
        c.locks.grant(A, &w(&["x"]));
        c.locks.grant(B, &w(&["y"]));
        c.victims.insert(B);
        let recovering = BTreeSet::from([B]);
        let step = |c: &ControllerState, needs: &BTreeMap<MachineId, LockPair>, rec: &BTreeSet<MachineId>, p| {
            c.recovery_step(needs, rec, SelectPolicy::Random, p, &mut rng())
        };
        let needs = BTreeMap::from([(A, w(&["y"])), (B, w(&["x"]))]);
        for p in [ReleasePolicy::NotDeadlocked, ReleasePolicy::NotBlocking] {
            assert_eq!(step(&c, &needs, &recovering, p), Some(RecoveryAction::Undo(B)));
        }
        // B is off the cycle but A still waits for its lock on y
        let needs = BTreeMap::from([(A, w(&["y"]))]);
        assert_eq!(
            step(&c, &needs, &recovering, ReleasePolicy::NotDeadlocked),
            Some(RecoveryAction::Unvictimize(B))
        );
        assert_eq!(
            step(&c, &needs, &recovering, ReleasePolicy::NotBlocking),
            Some(RecoveryAction::Undo(B))
        );
        let needs = BTreeMap::new();
        assert_eq!(
            step(&c, &needs, &recovering, ReleasePolicy::NotBlocking),
            Some(RecoveryAction::Unvictimize(B))
        );
        // victims not yet waiting for recovery are left alone
        assert_eq!(step(&c, &needs, &BTreeSet::new(), ReleasePolicy::NotBlocking), None);
    }

    #[test]
    fn undo_restores_and_releases_youngest() {
        let mut c = cs(1);
        let f1 = Location::new("f", vec![Value::int(1)]);
        c.locks.grant(A, &LockPair::new(BTreeSet::new(), [f1.clone()].into()));
        let entry = HistoryEntry {
            val_set: UpdateSet::singleton(f1.clone(), Value::int(3)),
            private_set: UpdateSet::new(),
            lock_set: LockPair::new(BTreeSet::new(), [f1.clone()].into()),
            origin_step: 0,
            request_step: None,
        };
        let u = c.undo(A, Some(&entry)).unwrap();
        assert_eq!(u, UpdateSet::singleton(f1.clone(), Value::int(3)));
        assert!(!c.locks.w_locked(&f1, A));
        assert_eq!(c.undo(A, None), Err(ControllerError::EmptyHistory(A)));
    }

    #[test]
    fn undo_of_upgrade_keeps_read_lock() {
        let mut c = cs(1);
        c.locks.grant(A, &r(&["x"]));
        c.locks.grant(A, &w(&["x"]));
        let entry = HistoryEntry {
            val_set: UpdateSet::new(),
            private_set: UpdateSet::new(),
            lock_set: w(&["x"]),
            origin_step: 0,
            request_step: None,
        };
        assert!(c.undo(A, Some(&entry)).unwrap().is_empty());
        assert!(c.locks.r_locked(&l("x"), A));
        assert!(!c.locks.w_locked(&l("x"), A));
    }
}
