use std::collections::{BTreeMap, BTreeSet};

use crate::machine::MachineId;
use crate::txctl::locks::{LockPair, LockTable};

/// The `Wait` relation between machines, derived from the machines' current
/// lock needs and the lock table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WaitGraph {
    edges: BTreeMap<MachineId, BTreeSet<MachineId>>,
}

impl WaitGraph {
    pub fn from_edges(edges: impl IntoIterator<Item = (MachineId, MachineId)>) -> Self {
        let mut g = WaitGraph::default();
        for (a, b) in edges {
            g.edges.entry(a).or_default().insert(b);
        }
        g
    }

    /// `Wait(M, N)` iff some `l ∈ newLocks(M)` is W-locked by `N ≠ M` in
    /// TransAct, or l is needed for writing and R-locked by N.
    pub fn build(transact: &BTreeSet<MachineId>, needs: &BTreeMap<MachineId, LockPair>, locks: &LockTable) -> Self {
        let mut g = WaitGraph::default();
        for (&m, pair) in needs {
            if !transact.contains(&m) {
                continue;
            }
            for l in pair.all() {
                let write = pair.w_loc.contains(&l);
                let blockers = locks
                    .writers(&l)
                    .chain(locks.readers(&l).filter(|_| write))
                    .filter(|n| *n != m && transact.contains(n));
                for n in blockers {
                    g.edges.entry(m).or_default().insert(n);
                }
            }
        }
        g
    }

    pub fn edges(&self) -> impl Iterator<Item = (MachineId, MachineId)> + '_ {
        self.edges.iter().flat_map(|(a, bs)| bs.iter().map(move |b| (*a, *b)))
    }

    pub fn successors(&self, m: MachineId) -> impl Iterator<Item = MachineId> + '_ {
        self.edges.get(&m).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Machines reachable from `m` by one or more edges.
    pub fn reachable_from(&self, m: MachineId) -> BTreeSet<MachineId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<MachineId> = self.successors(m).collect();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.successors(n));
            }
        }
        seen
    }

    /// `Deadlocked = {M | (M, M) ∈ Wait*}` with `Wait*` the transitive,
    /// non-reflexive closure.
    pub fn deadlocked(&self) -> BTreeSet<MachineId> {
        self.edges
            .keys()
            .copied()
            .filter(|&m| self.reachable_from(m).contains(&m))
            .collect()
    }

    /// The cycle-sharing component of `m`: machines that reach `m` and are
    /// reachable from it.
    pub fn component(&self, m: MachineId) -> BTreeSet<MachineId> {
        let forward = self.reachable_from(m);
        let mut out: BTreeSet<MachineId> = forward.iter().copied().filter(|&n| self.reachable_from(n).contains(&m)).collect();
        out.insert(m);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Location;

    fn ids(v: &[usize]) -> BTreeSet<MachineId> {
        v.iter().map(|&i| MachineId(i)).collect()
    }

    fn g(edges: &[(usize, usize)]) -> WaitGraph {
        WaitGraph::from_edges(edges.iter().map(|&(a, b)| (MachineId(a), MachineId(b))))
    }

    /// Independent cycle finder: node m is on a cycle iff a DFS from m's
    /// successors can get back to m, computed by Floyd-Warshall closure.
    fn oracle(n: usize, edges: &[(usize, usize)]) -> BTreeSet<MachineId> {
        let mut reach = vec![vec![false; n]; n];
        for &(a, b) in edges {
            reach[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..n).filter(|&i| reach[i][i]).map(MachineId).collect()
    }

    #[test]
    fn acyclic_chain() {
        assert!(g(&[(0, 1), (1, 2)]).deadlocked().is_empty());
    }

    #[test]
    fn two_cycle() {
        assert_eq!(g(&[(0, 1), (1, 0)]).deadlocked(), ids(&[0, 1]));
    }

    #[test]
    fn three_cycle_with_tail() {
        let edges = [(0, 1), (1, 2), (2, 0), (3, 0), (4, 3)];
        assert_eq!(g(&edges).deadlocked(), ids(&[0, 1, 2]));
        assert_eq!(oracle(5, &edges), ids(&[0, 1, 2]));
        assert_eq!(g(&edges).component(MachineId(1)), ids(&[0, 1, 2]));
    }

    #[test]
    fn matches_closure_oracle_on_all_small_graphs() {
        // every edge set on 4 nodes without self loops
        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| *p)
                .collect();
            assert_eq!(g(&edges).deadlocked(), oracle(4, &edges), "edges {edges:?}");
        }
    }

    #[test]
    fn build_from_locks() {
        let x = Location::nullary("x");
        let mut locks = LockTable::new();
        locks.grant(MachineId(1), &LockPair::new([x.clone()].into(), Default::default()));
        let transact = ids(&[0, 1]);

        // M0 needs W on x, M1 R-locks x: edge.
        let mut needs = BTreeMap::new();
        needs.insert(MachineId(0), LockPair::new(Default::default(), [x.clone()].into()));
        let wg = WaitGraph::build(&transact, &needs, &locks);
        assert_eq!(wg.edges().collect::<Vec<_>>(), vec![(MachineId(0), MachineId(1))]);

        // M0 needs R on x, M1 R-locks x: no edge.
        needs.insert(MachineId(0), LockPair::new([x.clone()].into(), Default::default()));
        assert!(WaitGraph::build(&transact, &needs, &locks).is_empty());

        // No needs at all.
        assert!(WaitGraph::build(&transact, &BTreeMap::new(), &locks).is_empty());
    }
}
