//! Run configurations and the TOML manifest format.
//!
//! ```toml
//! programs = ["counter.ta"]
//! domain = 4
//! seed = 7
//! max_steps = 500
//! wait_mode = "suspend"
//! registration = { B = 3 }
//!
//! [policies]
//! lock_requests = "fifo"
//! victims = "shortest-history"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::{self, DslError};
use crate::machine::{Class, Machine, MachineId};
use crate::state::State;
use crate::txctl::{Policies, WaitMode};
use crate::value::{Location, Value};

pub const DEFAULT_MAX_STEPS: u64 = 10_000;
pub const DEFAULT_DOMAIN_SIZE: usize = 4;

/// How agents are scheduled within a global step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Every agent steps in every global step.
    #[default]
    Sync,
    /// One seeded-random enabled agent per global step.
    Interleave,
}

impl std::str::FromStr for Composition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sync" => Ok(Composition::Sync),
            "interleave" => Ok(Composition::Interleave),
            _ => Err(format!("unknown composition `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(with = "crate::dsl::program_text")]
    pub machines: Vec<Machine>,
    pub domain: Vec<Value>,
    /// Registration step per machine; missing entries register at step 0.
    #[serde(default)]
    pub registration: Vec<u64>,
    pub max_steps: u64,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub wait_mode: WaitMode,
    #[serde(default)]
    pub composition: Composition,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Dsl(#[from] DslError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// A closed-system violation. The serializability guarantee assumes none.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Warning(pub String);

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn new(machines: Vec<Machine>, domain_size: usize) -> Self {
        RunConfig {
            machines,
            domain: (0..domain_size as i64).map(Value::int).collect(),
            registration: Vec::new(),
            max_steps: DEFAULT_MAX_STEPS,
            policies: Policies::default(),
            wait_mode: WaitMode::default(),
            composition: Composition::default(),
        }
    }

    pub fn from_source(src: &str, domain_size: usize) -> Result<Self, ConfigError> {
        let cfg = Self::new(dsl::parse_programs(src)?, domain_size);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_steps(mut self, n: u64) -> Self {
        self.max_steps = n;
        self
    }

    pub fn with_wait_mode(mut self, mode: WaitMode) -> Self {
        self.wait_mode = mode;
        self
    }

    pub fn with_composition(mut self, c: Composition) -> Self {
        self.composition = c;
        self
    }

    pub fn registration_step(&self, m: MachineId) -> u64 {
        self.registration.get(m.0).copied().unwrap_or(0)
    }

    pub fn machine_id(&self, name: &str) -> Option<MachineId> {
        self.machines.iter().position(|m| m.name == name).map(MachineId)
    }

    pub fn ids(&self) -> impl Iterator<Item = MachineId> {
        (0..self.machines.len()).map(MachineId)
    }

    /// The same run parameters with only machine `m`, registered at step 0.
    pub fn solo(&self, m: MachineId) -> RunConfig {
        RunConfig {
            machines: vec![self.machines[m.0].clone()],
            registration: Vec::new(),
            ..self.clone()
        }
    }

    /// Stable hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let out = Sha256::digest(json.as_bytes());
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `S_0`: the union of every machine's initial values.
    pub fn initial_state(&self) -> Result<State, ConfigError> {
        let mut s = State::new(self.domain.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut seen: BTreeMap<&Location, (&str, &Value)> = BTreeMap::new();
        for m in &self.machines {
            for (loc, v) in &m.init {
                if let Some((other, prev)) = seen.insert(loc, (&m.name, v)) {
                    if prev != v {
                        return Err(ConfigError::Invalid(format!(
                            "{loc} initialised to {prev} by {other} and to {v} by {}",
                            m.name
                        )));
                    }
                }
                s.set(loc.clone(), v.clone());
            }
        }
        Ok(s)
    }

    /// Hard errors, then closed-system warnings.
    pub fn validate(&self) -> Result<Vec<Warning>, ConfigError> {
        if self.machines.is_empty() {
            return Err(ConfigError::Invalid("no machines".into()));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::Invalid("max_steps must be at least 1".into()));
        }
        if self.registration.len() > self.machines.len() {
            return Err(ConfigError::Invalid("more registration steps than machines".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.machines {
            if !names.insert(&m.name) {
                return Err(ConfigError::Invalid(format!("machine `{}` defined twice", m.name)));
            }
            dsl::validate_machine(m)?;
        }
        self.initial_state()?;

        let used: Vec<BTreeSet<String>> = self.machines.iter().map(|m| m.used_functions()).collect();
        for (i, m) in self.machines.iter().enumerate() {
            for f in m.controlled_functions() {
                for (j, other) in self.machines.iter().enumerate() {
                    if i != j && (used[j].contains(&f) || other.classes.declared().any(|d| *d == f)) {
                        return Err(ConfigError::Invalid(format!(
                            "`{f}` is private to {} but also used by {}",
                            m.name, other.name
                        )));
                    }
                }
            }
        }
        Ok(self.closed_system_warnings())
    }

    fn closed_system_warnings(&self) -> Vec<Warning> {
        let mut out = Vec::new();
        for (i, m) in self.machines.iter().enumerate() {
            let others = || self.machines.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, o)| o);
            for f in m.classes.shared.iter().chain(&m.classes.monitored) {
                let provided = others().any(|o| {
                    matches!(o.classes.class_of(f), Class::Shared | Class::Output)
                        || (o.classes.class_of(f) == Class::Controlled && o.used_functions().contains(f))
                });
                if !provided {
                    out.push(Warning(format!(
                        "{}: `{f}` is not written by any other machine (closed-system assumption)",
                        m.name
                    )));
                }
            }
            for f in &m.classes.output {
                let consumed = others().any(|o| matches!(o.classes.class_of(f), Class::Shared | Class::Monitored));
                if !consumed {
                    out.push(Warning(format!(
                        "{}: output `{f}` is not read by any other machine (closed-system assumption)",
                        m.name
                    )));
                }
            }
        }
        out
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    programs: Vec<PathBuf>,
    #[serde(default)]
    domain: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    max_steps: Option<u64>,
    #[serde(default)]
    wait_mode: Option<WaitMode>,
    #[serde(default)]
    composition: Option<Composition>,
    #[serde(default)]
    registration: BTreeMap<String, u64>,
    #[serde(default)]
    policies: Policies,
}

/// A loaded configuration plus the seed the manifest asks for, if any.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub warnings: Vec<Warning>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a `.toml` manifest, or a bare program file with default settings.
pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        load_manifest(path, &text)
    } else {
        let config = RunConfig::from_source(&text, DEFAULT_DOMAIN_SIZE)?;
        let warnings = config.validate()?;
        Ok(Loaded {
            config,
            seed: None,
            warnings,
        })
    }
}

fn load_manifest(path: &Path, text: &str) -> Result<Loaded, ConfigError> {
    let bad = |message: String| ConfigError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let man: Manifest = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut machines = Vec::new();
    for p in &man.programs {
        machines.extend(dsl::parse_programs(&read(&base.join(p))?)?);
    }
    let mut config = RunConfig::new(machines, man.domain.unwrap_or(DEFAULT_DOMAIN_SIZE));
    config.max_steps = man.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    config.wait_mode = man.wait_mode.unwrap_or_default();
    config.composition = man.composition.unwrap_or_default();
    config.policies = man.policies;
    if !man.registration.is_empty() {
        let mut reg = vec![0; config.machines.len()];
        for (name, step) in &man.registration {
            let id = config
                .machine_id(name)
                .ok_or_else(|| bad(format!("registration for unknown machine `{name}`")))?;
            reg[id.0] = *step;
        }
        config.registration = reg;
    }
    let warnings = config.validate()?;
    Ok(Loaded {
        config,
        seed: man.seed,
        warnings,
    })
}
