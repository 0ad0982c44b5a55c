//! Scenario files: strict JSON configuration for simulation sweeps.
//!
//! The schema is exhaustive: unknown keys are rejected so a typo in a tuning
//! parameter fails loudly instead of silently falling back to a default.
//! Paths inside a scenario resolve relative to the scenario file's own
//! directory. Gains may be set globally, per granularity, or left out
//! entirely, in which case the engine's fallback rule applies; whatever was
//! resolved is echoed into every output file's metadata.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::Hyperparams;
use crate::disruption::{DisruptionError, DisruptionEvent, LinkSchedule};
use crate::grid::{CommGraph, NodeId, SuperAgent};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("granularity list is empty")]
    EmptyGranularities,
    #[error("granularity {0} listed twice")]
    DuplicateGranularity(usize),
    #[error("granularity {0} has no max_iterations entry")]
    MissingCap(usize),
    #[error("key {0:?} is not a listed granularity")]
    ExtraCap(String),
    #[error("{0:?} is not a positive integer")]
    BadKey(String),
    #[error("epsilon must be > 0, got {0}")]
    BadEpsilon(f64),
    #[error("max_iterations must be >= 1 for granularity {0}")]
    BadCap(usize),
    #[error("gains must be positive: {0}")]
    BadGains(String),
    #[error(transparent)]
    BadSchedule(#[from] DisruptionError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    feeder: String,
    dataset: String,
    granularities: Vec<usize>,
    epsilon: f64,
    max_iterations: BTreeMap<String, u32>,
    #[serde(default)]
    hyper: Option<HyperSection>,
    #[serde(default)]
    lambda0: Option<f64>,
    #[serde(default)]
    schedule: Vec<ScheduleEntry>,
    seed: u64,
    #[serde(default)]
    output_dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperSection {
    #[serde(default)]
    alpha0: Option<f64>,
    #[serde(default)]
    beta0: Option<f64>,
    #[serde(default)]
    per_k: BTreeMap<String, HyperOverride>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperOverride {
    #[serde(default)]
    alpha0: Option<f64>,
    #[serde(default)]
    beta0: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleEntry {
    nodes: [u32; 2],
    start: u32,
    end: u32,
}

/// Gain overrides as resolved from the file; `None` defers to the engine's
/// fallback rule for the granularity at hand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GainOverride {
    pub alpha0: Option<f64>,
    pub beta0: Option<f64>,
}

/// Validated scenario with defaults filled in.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioConfig {
    pub feeder: String,
    pub dataset: String,
    pub granularities: Vec<usize>,
    pub epsilon: f64,
    pub max_iterations: BTreeMap<usize, u32>,
    pub gains: GainOverride,
    pub gains_per_k: BTreeMap<usize, GainOverride>,
    pub lambda0: f64,
    pub schedule_entries: Vec<(u32, u32, u32, u32)>,
    pub seed: u64,
    /// Where outputs land. Not part of the canonical form: it does not
    /// affect results, and runs into different directories must hash alike.
    #[serde(skip)]
    pub output_dir: String,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ScenarioConfig {
    /// Feeder topology path, relative paths anchored at the scenario file.
    pub fn feeder_path(&self) -> PathBuf {
        self.base_dir.join(&self.feeder)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.base_dir.join(&self.dataset)
    }

    pub fn schedule(&self) -> LinkSchedule {
        LinkSchedule {
            events: self
                .schedule_entries
                .iter()
                .map(|&(a, b, start, end)| DisruptionEvent {
                    nodes: (NodeId(a), NodeId(b)),
                    start,
                    end,
                })
                .collect(),
        }
    }

    /// Gains for one granularity: per-K override, then global override,
    /// then the engine fallback rule.
    pub fn gains_for(&self, k: usize, agents: &[SuperAgent], comm: &CommGraph) -> Hyperparams {
        let fallback = Hyperparams::default_for(agents, comm);
        let per_k = self.gains_per_k.get(&k).copied().unwrap_or_default();
        Hyperparams {
            alpha0: per_k
                .alpha0
                .or(self.gains.alpha0)
                .unwrap_or(fallback.alpha0),
            beta0: per_k.beta0.or(self.gains.beta0).unwrap_or(fallback.beta0),
        }
    }

    /// Canonical single-line form used in output metadata.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }
}

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    parse_scenario(&text, base_dir)
}

/// Parse and validate scenario text. Exposed separately so untrusted input
/// can be checked without touching the filesystem.
pub fn parse_scenario(text: &str, base_dir: PathBuf) -> Result<ScenarioConfig, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text)?;

    if file.granularities.is_empty() {
        return Err(ScenarioError::EmptyGranularities);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &k in &file.granularities {
        if k == 0 {
            return Err(ScenarioError::BadKey("0".to_string()));
        }
        if !seen.insert(k) {
            return Err(ScenarioError::DuplicateGranularity(k));
        }
    }
    if !(file.epsilon > 0.0 && file.epsilon.is_finite()) {
        return Err(ScenarioError::BadEpsilon(file.epsilon));
    }

    let mut max_iterations = BTreeMap::new();
    for (key, cap) in &file.max_iterations {
        let k = parse_k_key(key)?;
        if !seen.contains(&k) {
            return Err(ScenarioError::ExtraCap(key.clone()));
        }
        if *cap < 1 {
            return Err(ScenarioError::BadCap(k));
        }
        max_iterations.insert(k, *cap);
    }
    for &k in &file.granularities {
        if !max_iterations.contains_key(&k) {
            return Err(ScenarioError::MissingCap(k));
        }
    }

    let mut gains = GainOverride::default();
    let mut gains_per_k = BTreeMap::new();
    if let Some(hyper) = &file.hyper {
        check_gain("alpha0", hyper.alpha0)?;
        check_gain("beta0", hyper.beta0)?;
        gains = GainOverride {
            alpha0: hyper.alpha0,
            beta0: hyper.beta0,
        };
        for (key, over) in &hyper.per_k {
            let k = parse_k_key(key)?;
            if !seen.contains(&k) {
                return Err(ScenarioError::ExtraCap(key.clone()));
            }
            check_gain("alpha0", over.alpha0)?;
            check_gain("beta0", over.beta0)?;
            gains_per_k.insert(
                k,
                GainOverride {
                    alpha0: over.alpha0,
                    beta0: over.beta0,
                },
            );
        }
    }

    let mut schedule_entries = Vec::new();
    for entry in &file.schedule {
        // constructing the event validates the window
        let event = DisruptionEvent::new(
            NodeId(entry.nodes[0]),
            NodeId(entry.nodes[1]),
            entry.start,
            entry.end,
        )?;
        schedule_entries.push((event.nodes.0 .0, event.nodes.1 .0, event.start, event.end));
    }

    Ok(ScenarioConfig {
        feeder: file.feeder,
        dataset: file.dataset,
        granularities: file.granularities,
        epsilon: file.epsilon,
        max_iterations,
        gains,
        gains_per_k,
        lambda0: file.lambda0.unwrap_or(0.0),
        schedule_entries,
        seed: file.seed,
        output_dir: file.output_dir.unwrap_or_else(|| "out".to_string()),
        base_dir,
    })
}

fn parse_k_key(key: &str) -> Result<usize, ScenarioError> {
    key.parse::<usize>()
        .ok()
        .filter(|&k| k >= 1)
        .ok_or_else(|| ScenarioError::BadKey(key.to_string()))
}

fn check_gain(what: &str, value: Option<f64>) -> Result<(), ScenarioError> {
    match value {
        Some(v) if !(v > 0.0 && v.is_finite()) => {
            Err(ScenarioError::BadGains(format!("{what} = {v}")))
        }
        _ => Ok(()),
    }
}

/// FNV-1a 64-bit hash, used to fingerprint scenarios and data files in
/// output metadata.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
