use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::machine::MachineId;
use crate::rng::SeedStream;

/// How a controller component picks one of several pending requests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectPolicy {
    #[default]
    Random,
    /// Oldest request first; ties by machine id.
    Fifo,
    LowestId,
}

impl SelectPolicy {
    /// Picks from `(machine, arrival)` candidates; `None` when empty.
    pub fn pick(self, candidates: &[(MachineId, u64)], rng: &mut SeedStream) -> Option<MachineId> {
        if candidates.is_empty() {
            return None;
        }
        Some(match self {
            SelectPolicy::Random => candidates[rng.pick(candidates.len())].0,
            SelectPolicy::Fifo => candidates.iter().min_by_key(|(m, t)| (*t, *m)).unwrap().0,
            SelectPolicy::LowestId => candidates.iter().map(|(m, _)| *m).min().unwrap(),
        })
    }
}

/// Victim selection for the deadlock handler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VictimPolicy {
    /// Among the machines victimized least often so far, the one with the
    /// shortest history, then the lowest id. Without the first criterion a
    /// machine with a long history can be starved by victims that keep
    /// coming back for the same locks.
    #[default]
    LeastVictimized,
    /// The shortest history, lowest id on ties.
    ShortestHistory,
    LowestId,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VictimCandidate {
    pub machine: MachineId,
    pub history: usize,
    /// Earlier victimizations of the machine in this run.
    pub victimized: u64,
}

impl VictimPolicy {
    pub fn pick(self, candidates: &[VictimCandidate], rng: &mut SeedStream) -> Option<MachineId> {
        if candidates.is_empty() {
            return None;
        }
        Some(match self {
            VictimPolicy::LeastVictimized => {
                candidates
                    .iter()
                    .min_by_key(|c| (c.victimized, c.history, c.machine))
                    .unwrap()
                    .machine
            }
            VictimPolicy::ShortestHistory => candidates.iter().min_by_key(|c| (c.history, c.machine)).unwrap().machine,
            VictimPolicy::LowestId => candidates.iter().map(|c| c.machine).min().unwrap(),
            VictimPolicy::Random => candidates[rng.pick(candidates.len())].machine,
        })
    }
}

/// When recovery stops undoing a victim and lets it continue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReleasePolicy {
    /// As soon as the victim is off every wait cycle. A victim that still
    /// holds a lock its cycle partner needs can then redo the same steps and
    /// close the same cycle again, forever.
    NotDeadlocked,
    /// Only once no other machine waits for the victim either.
    #[default]
    NotBlocking,
}

/// What a machine does while its lock request cannot be granted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaitMode {
    /// Refused requests send the machine back to TA-ctl, which asks again.
    #[default]
    Retry,
    /// The machine stays in waitForLocks; blocked requests are left pending.
    Suspend,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policies {
    #[serde(default)]
    pub lock_requests: SelectPolicy,
    #[serde(default)]
    pub commits: SelectPolicy,
    #[serde(default)]
    pub victims: VictimPolicy,
    #[serde(default)]
    pub recovery: SelectPolicy,
    #[serde(default)]
    pub release: ReleasePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct UnknownPolicy {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! kebab_enum {
    ($ty:ty, $kind:literal, { $($name:literal => $variant:expr),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = UnknownPolicy;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(UnknownPolicy { kind: $kind, value: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })*
                unreachable!()
            }
        }
    };
}

kebab_enum!(SelectPolicy, "selection policy", {
    "random" => SelectPolicy::Random,
    "fifo" => SelectPolicy::Fifo,
    "lowest-id" => SelectPolicy::LowestId,
});

kebab_enum!(VictimPolicy, "victim policy", {
    "least-victimized" => VictimPolicy::LeastVictimized,
    "shortest-history" => VictimPolicy::ShortestHistory,
    "lowest-id" => VictimPolicy::LowestId,
    "random" => VictimPolicy::Random,
});

kebab_enum!(ReleasePolicy, "release policy", {
    "not-deadlocked" => ReleasePolicy::NotDeadlocked,
    "not-blocking" => ReleasePolicy::NotBlocking,
});

kebab_enum!(WaitMode, "wait mode", {
    "retry" => WaitMode::Retry,
    "suspend" => WaitMode::Suspend,
});
