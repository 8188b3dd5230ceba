//! Run configuration: one TOML file per run, overridden by flags.
//!
//! ```toml
//! seed = 7
//! network_file = "campus.toml"   # or an inline [network] table
//!
//! [sim]
//! snapshots = 20000
//! replications = 4
//!
//! [compare]
//! subset_sizes = [1, 2, 3, 4]
//! repeats = 100
//! distance_max = 500.0
//!
//! [preprocess]
//! preset = "dartmouth"
//! exclude_mode = 1
//!
//! [fixture]
//! days = 40
//! ```

use std::path::{Path, PathBuf};

use cellnet_core::model::NetworkSpec;
use cellnet_core::sim::{SimConfig, DEFAULT_MAX_EVENTS};
use cellnet_core::trace::fixture::FixtureConfig;
use cellnet_core::trace::PreprocessConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub network: Option<NetworkSpec>,
    /// Network spec in its own file, relative to the run config.
    pub network_file: Option<PathBuf>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub compare: CompareSection,
    /// `preset` plus any [`PreprocessConfig`] field.
    #[serde(default)]
    pub preprocess: toml::Table,
    pub fixture: Option<FixtureConfig>,
    #[serde(default)]
    pub trace: TraceSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Snapshots per replication when `horizon` is not given.
    pub snapshots: usize,
    pub horizon: Option<f64>,
    pub warmup: Option<f64>,
    pub interval: Option<f64>,
    pub replications: usize,
    pub max_events: u64,
    /// Sessions drawn to estimate moments of laws without a closed form.
    pub moment_samples: usize,
    /// Also write snapshots in the binary format.
    pub binary: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            snapshots: 10_000,
            horizon: None,
            warmup: None,
            interval: None,
            replications: 1,
            max_events: DEFAULT_MAX_EVENTS,
            moment_samples: 200_000,
            binary: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub subset_sizes: Vec<usize>,
    pub repeats: usize,
    /// Pairwise distance limit for subsets, meters.
    pub distance_max: Option<f64>,
    /// Snapshot CSV to compare; simulated in-process when neither this nor
    /// `polls` is set.
    pub snapshots: Option<PathBuf>,
    /// Poll trace to compare instead of snapshots.
    pub polls: Option<PathBuf>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { subset_sizes: vec![1, 2, 3, 4], repeats: 100, distance_max: None, snapshots: None, polls: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub polls: Option<PathBuf>,
}

/// Config as loaded, with paths resolved against the config's directory.
#[derive(Clone, Debug, Default)]
pub struct Loaded {
    pub path: Option<PathBuf>,
    pub raw: RunConfig,
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// Overlays `over` onto `base`, descending into nested tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Loaded {
    pub fn read(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut raw: RunConfig = toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut raw.network_file);
        resolve(&mut raw.compare.snapshots);
        resolve(&mut raw.compare.polls);
        resolve(&mut raw.trace.polls);
        Ok(Self { path: Some(path.to_path_buf()), raw })
    }

    pub fn seed(&self) -> u64 {
        self.raw.seed.unwrap_or(DEFAULT_SEED)
    }

    /// The network spec, validated.
    pub fn network(&self) -> Result<NetworkSpec, CliError> {
        let spec = match (&self.raw.network, &self.raw.network_file) {
            (Some(_), Some(_)) => return Err(validation("give either [network] or network_file, not both")),
            (Some(n), None) => n.clone(),
            (None, Some(p)) => NetworkSpec::load(p).map_err(|e| validation(format!("{}: {e}", p.display())))?,
            (None, None) => return Err(validation("the config has no [network] table or network_file")),
        };
        spec.validated().map_err(validation)
    }

    /// `[preprocess]` on top of its preset (`default` when absent).
    pub fn preprocess(&self) -> Result<PreprocessConfig, CliError> {
        let mut table = self.raw.preprocess.clone();
        let preset = match table.remove("preset") {
            None => "default".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(v) => return Err(validation(format!("preprocess.preset must be a string, got {v}"))),
        };
        let base = PreprocessConfig::preset(&preset).map_err(validation)?;
        let mut merged = toml::Table::try_from(&base).map_err(validation)?;
        merge(&mut merged, table);
        let cfg: PreprocessConfig = merged.try_into().map_err(|e| validation(format!("[preprocess]: {e}")))?;
        cfg.check().map_err(validation)?;
        Ok(cfg)
    }

    pub fn preset_name(&self) -> String {
        match self.raw.preprocess.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            _ => "default".into(),
        }
    }

    pub fn fixture(&self) -> FixtureConfig {
        self.raw.fixture.clone().unwrap_or_default()
    }

    /// Simulation settings; unset timing fields take the defaults of
    /// [`SimConfig::for_spec`].
    pub fn sim(&self, spec: &NetworkSpec, seed: u64) -> Result<SimConfig, CliError> {
        let s = &self.raw.sim;
        let base = SimConfig::for_spec(spec, s.snapshots, seed).map_err(CliError::from)?;
        let warmup = s.warmup.unwrap_or(base.warmup);
        let snapshot_interval = s.interval.unwrap_or(base.snapshot_interval);
        let horizon = s.horizon.unwrap_or(warmup + snapshot_interval * s.snapshots.saturating_sub(1) as f64);
        Ok(SimConfig {
            horizon,
            warmup,
            snapshot_interval,
            seed,
            replications: s.replications,
            track_stages: false,
            max_events: s.max_events,
        })
    }
}
