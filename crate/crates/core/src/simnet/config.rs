use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::fe::{MAX_LAMBDA, MIN_LAMBDA};
use crate::tasks::TaskTemplate;

/// How training time is charged to the simulated clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// `steps * seconds_per_step`; bit-reproducible.
    #[default]
    Deterministic,
    /// Measured host time of the training run. Not reproducible.
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Heights to produce after genesis.
    pub blocks: u64,
    pub miners: usize,
    pub data_nodes: usize,
    /// One-way message delay in simulated seconds.
    pub latency: f64,
    /// Data-node reaction time before releasing a test set.
    pub release_delay: f64,
    /// Candidates a data node waits for before releasing its test set.
    pub wait_count: usize,
    pub seconds_per_step: f64,
    pub eval_every: u64,
    pub clock: ClockMode,
    pub lambda: u32,
    /// Whole tokens minted to each winner.
    pub block_reward: u64,
    /// Whole tokens each data node starts with.
    pub initial_balance: u64,
    /// Failed selections tolerated at one height before giving up.
    pub max_attempts: u32,
    /// Miner indices that publish models under a foreign mapping layer.
    pub cheaters: Vec<usize>,
    /// Data node `i` posts tasks from `tasks[i % tasks.len()]`.
    pub tasks: Vec<TaskTemplate>,
    /// Directory holding `iris.csv` and `mnist-subset/`; defaults to the
    /// repository copy.
    pub data_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            blocks: 20,
            miners: 3,
            data_nodes: 5,
            latency: 0.1,
            release_delay: 0.1,
            wait_count: 2,
            seconds_per_step: 0.01,
            eval_every: 1,
            clock: ClockMode::Deterministic,
            lambda: 32,
            block_reward: 2,
            initial_balance: 1000,
            max_attempts: 3,
            cheaters: Vec::new(),
            tasks: vec![TaskTemplate::iris()],
            data_dir: None,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.miners == 0 || self.data_nodes == 0 {
            return bad("need at least one miner and one data node");
        }
        if self.blocks == 0 {
            return bad("blocks must be positive");
        }
        if self.data_nodes == 1 && self.blocks > 1 {
            // Reposts reach the chain through the next block, so a lone
            // data node leaves nothing pending after its first task.
            return bad("more than one block needs at least two data nodes");
        }
        if self.wait_count == 0 {
            return bad("wait_count must be positive");
        }
        for v in [self.latency, self.release_delay, self.seconds_per_step] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("times must be finite and non-negative");
            }
        }
        if self.release_delay == 0.0 {
            // A release at the instant of the triggering candidate would make
            // that candidate late.
            return bad("release_delay must be positive");
        }
        if !(MIN_LAMBDA..=MAX_LAMBDA).contains(&self.lambda) {
            return bad("lambda out of range");
        }
        if self.tasks.is_empty() {
            return bad("at least one task template is required");
        }
        if self.cheaters.iter().any(|&c| c >= self.miners) {
            return bad("cheater index out of range");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(crate::data::default_data_dir)
    }
}
