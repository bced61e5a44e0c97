//! Discrete-event network of data nodes and miners.
//!
//! Every node keeps its own chain replica and runs full verification; the
//! only shared state is a cache of decrypted SML views keyed by everything
//! that determines them. Events are processed in `(time, recipient, seq)`
//! order, so a deterministic-clock run is a pure function of its config.
//!
//! A height proceeds as follows. Miners pick the most valuable pending task
//! and request functional keys for the current head from the task's data
//! node. Each trains on simulated time and broadcasts its candidate. The
//! data node releases the test set `release_delay` after the
//! `wait_count`-th candidate arrives, or at the task's deadline. One
//! latency later every node ranks the candidates it holds, verifies them
//! and appends the same finalized block.

mod config;
mod datanode;
mod network;

pub use config::{ClockMode, SimConfig};
pub use datanode::DataNodeState;
pub use network::run_simulation;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::codec::Canonical;
use crate::consensus::{ConsensusError, Rejection};
use crate::data::DataError;
use crate::fe::{FeError, FunctionalKey};
use crate::hash::{sha256, sha256_concat, Hash256};
use crate::ledger::{
    AccountId, Block, Chain, CiphertextBatch, LedgerError, Task, TaskId, TestData,
};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no events left at {time} with the slowest node at height {height}")]
    Deadlock { height: u64, time: SimTime },
    #[error("node chains disagree at height {height}")]
    ChainDivergence { height: u64 },
    #[error("height {height} failed selection too many times")]
    HeightStalled { height: u64 },
    #[error("test set for {0} already released")]
    DoubleRelease(TaskId),
    #[error("{0} was not posted by this data node")]
    UnknownTask(TaskId),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Timer events a node schedules for itself.
#[derive(Debug, Clone)]
pub enum Tick {
    Start,
    /// A miner's training run ends; broadcast if still relevant.
    Emit {
        task: TaskId,
        phs: Hash256,
    },
    /// Enough candidates arrived; release after the reaction delay.
    ReleaseDue {
        task: TaskId,
    },
    /// Nobody finished in time; release anyway.
    Deadline {
        task: TaskId,
        phs: Hash256,
    },
    /// The releasing data node settles one latency after releasing, when
    /// every other node receives the test set.
    Settle(Box<TestData>),
}

#[derive(Debug, Clone)]
pub enum Payload {
    TaskPost {
        task: Task,
        batches: Vec<CiphertextBatch>,
    },
    CandidateBlock(Box<Block>),
    TestRelease(Box<TestData>),
    KeyRequest {
        task: TaskId,
        phs: Hash256,
    },
    KeyResponse {
        task: TaskId,
        phs: Hash256,
        keys: Vec<FunctionalKey>,
    },
    Tick(Tick),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::TaskPost { .. } => "TaskPost",
            Payload::CandidateBlock(_) => "CandidateBlock",
            Payload::TestRelease(_) => "TestRelease",
            Payload::KeyRequest { .. } => "KeyRequest",
            Payload::KeyResponse { .. } => "KeyResponse",
            Payload::Tick(Tick::Start) => "Tick.Start",
            Payload::Tick(Tick::Emit { .. }) => "Tick.Emit",
            Payload::Tick(Tick::ReleaseDue { .. }) => "Tick.ReleaseDue",
            Payload::Tick(Tick::Deadline { .. }) => "Tick.Deadline",
            Payload::Tick(Tick::Settle(_)) => "Tick.Settle",
        }
    }

    pub fn digest(&self) -> Hash256 {
        match self {
            Payload::TaskPost { task, batches } => {
                let mut parts = vec![task.to_canonical_bytes()];
                parts.extend(batches.iter().map(|b| b.to_canonical_bytes()));
                let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
                sha256_concat(&refs)
            }
            Payload::CandidateBlock(b) => b.hash(),
            Payload::TestRelease(td) | Payload::Tick(Tick::Settle(td)) => {
                sha256(&td.to_canonical_bytes())
            }
            Payload::KeyRequest { task, phs }
            | Payload::Tick(Tick::Emit { task, phs })
            | Payload::Tick(Tick::Deadline { task, phs }) => {
                sha256_concat(&[&task.0.to_be_bytes(), phs.as_bytes()])
            }
            Payload::KeyResponse { keys, .. } => keys_digest(keys),
            Payload::Tick(Tick::ReleaseDue { task }) => sha256(&task.0.to_be_bytes()),
            Payload::Tick(Tick::Start) => sha256(b"start"),
        }
    }
}

pub(crate) fn keys_digest(keys: &[FunctionalKey]) -> Hash256 {
    let bytes: Vec<Vec<u8>> = keys.iter().map(|k| k.to_canonical_bytes()).collect();
    let refs: Vec<&[u8]> = bytes.iter().map(|b| b.as_slice()).collect();
    sha256_concat(&refs)
}

#[derive(Debug, Clone)]
pub struct SimEvent {
    pub time: SimTime,
    pub recipient: usize,
    pub seq: u64,
    pub sender: usize,
    pub payload: Payload,
}

/// One line of the event log, written when the event is processed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub seq: u64,
    pub time_us: u64,
    pub from: String,
    pub to: String,
    pub kind: &'static str,
    pub digest: String,
}

/// A node's verdict on one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRecord {
    pub node: usize,
    pub height: u64,
    pub candidate: Hash256,
    pub producer: AccountId,
    pub timestamp: SimTime,
    pub rejection: Option<Rejection>,
}

/// Timing and outcome of one height, as observed by the first miner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeightStats {
    pub height: u64,
    pub task: u64,
    pub winner: u32,
    /// When the observer began working on this height.
    pub started_at: f64,
    pub released_at: f64,
    /// The winning candidate's timestamp.
    pub timestamp: f64,
    /// `timestamp - started_at`, taken on the microsecond clock.
    pub generation_time: f64,
    pub appended_at: f64,
    pub candidates: usize,
    pub rejected: usize,
    pub ommers_cited: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Selections attempted at this height, the successful one included.
    pub attempts: u32,
    /// Simulated length of the observer's own training run.
    pub observer_training_time: Option<f64>,
}

#[derive(Debug)]
pub struct SimOutcome {
    /// The first miner's replica.
    pub chain: Chain,
    /// Head hash of every node, in node order.
    pub heads: Vec<Hash256>,
    pub node_names: Vec<String>,
    pub stats: Vec<HeightStats>,
    pub log: Vec<LogRecord>,
    pub verifications: Vec<VerificationRecord>,
    /// Miner accounts that published under a foreign mapping layer.
    pub cheaters: Vec<AccountId>,
}

impl SimOutcome {
    /// Seconds between consecutive appends at the observer, the first
    /// measured from genesis.
    pub fn block_intervals(&self) -> Vec<f64> {
        let mut last = 0.0;
        self.stats
            .iter()
            .map(|s| {
                let d = s.appended_at - last;
                last = s.appended_at;
                d
            })
            .collect()
    }

    pub fn generation_times(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.generation_time).collect()
    }

    pub fn log_ndjson(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.log {
            serde_json::to_writer(&mut out, r).expect("log records serialize");
            out.push(b'\n');
        }
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<(), SimError> {
        let io = |source| SimError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.log_ndjson()).map_err(io)
    }
}
