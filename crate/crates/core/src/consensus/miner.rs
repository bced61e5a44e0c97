use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{training_view, ConsensusError, KeyAuthority, SmlView};
use crate::hash::Hash256;
use crate::ledger::{
    most_valuable, AccountId, Block, BlockBody, BlockHeader, Chain, CiphertextBatch, DataPointer,
    Task, TaskId,
};
use crate::nn::{ModelSolution, Normalizer, Params, TrainingSession};
use crate::rng::derive_seed;
use crate::sml::SmlWeights;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Training,
    AwaitTest,
    Verifying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Training accuracy reached the task's requirement.
    Threshold,
    /// The time limit ran out; the best model so far is published.
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Simulated seconds charged per SGD step.
    pub seconds_per_step: f64,
    /// Training accuracy is checked every this many steps.
    pub eval_every: u64,
    /// Root seed; each miner and height derive their own stream.
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            seconds_per_step: 0.01,
            eval_every: 1,
            seed: 0,
        }
    }
}

/// Highest reward per second of time limit, skipping `excluded`.
pub fn select_task<'a>(tasks: &'a [Task], excluded: &BTreeSet<TaskId>) -> Option<&'a Task> {
    most_valuable(tasks.iter().filter(|t| !excluded.contains(&t.id)))
}

/// Training of one task against one chain position, advanced on simulated
/// time.
#[derive(Debug, Clone)]
pub struct MiningSession {
    task: Task,
    phs: Hash256,
    sml: SmlWeights,
    norm: Normalizer,
    session: TrainingSession,
    started: SimTime,
    seconds_per_step: f64,
    eval_every: u64,
    best_accuracy: f64,
    best_params: Params,
    last_accuracy: f64,
}

impl MiningSession {
    pub fn start(
        task: &Task,
        phs: Hash256,
        view: SmlView,
        cfg: &MiningConfig,
        miner: AccountId,
        started: SimTime,
    ) -> Result<Self, ConsensusError> {
        let norm = Normalizer::fit(&view.features);
        let data = norm.apply(&view.features);
        let seed = derive_seed(cfg.seed ^ task.id.0, "miner", miner.0 as u64)
            ^ u64::from_be_bytes(phs.as_bytes()[..8].try_into().unwrap());
        let session = TrainingSession::new(&task.model_spec, data, seed)?;
        let initial = session.train_accuracy();
        Ok(Self {
            task: task.clone(),
            phs,
            sml: view.sml,
            norm,
            best_params: session.params.clone(),
            session,
            started,
            seconds_per_step: cfg.seconds_per_step,
            eval_every: cfg.eval_every.max(1),
            best_accuracy: initial,
            last_accuracy: initial,
        })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn phs(&self) -> &Hash256 {
        &self.phs
    }

    pub fn steps(&self) -> u64 {
        self.session.steps()
    }

    /// Simulated seconds spent training so far.
    pub fn elapsed(&self) -> f64 {
        self.session.steps() as f64 * self.seconds_per_step
    }

    pub fn now(&self) -> SimTime {
        self.started + SimTime::from_secs_f64(self.elapsed())
    }

    pub fn last_accuracy(&self) -> f64 {
        self.last_accuracy
    }

    /// One pass of the mining loop. `Some` when the loop exits.
    pub fn step(&mut self) -> Result<Option<StopReason>, ConsensusError> {
        if self.elapsed() >= self.task.model_spec.time_limit {
            return Ok(Some(StopReason::Timeout));
        }
        self.session.step()?;
        if self.session.steps() % self.eval_every == 0 {
            let acc = self.session.train_accuracy();
            self.last_accuracy = acc;
            if acc > self.best_accuracy {
                self.best_accuracy = acc;
                self.best_params = self.session.params.clone();
            }
            if acc >= self.task.model_spec.required_accuracy {
                self.best_accuracy = acc;
                self.best_params = self.session.params.clone();
                return Ok(Some(StopReason::Threshold));
            }
        }
        Ok(None)
    }

    pub fn run(&mut self) -> Result<StopReason, ConsensusError> {
        loop {
            if let Some(reason) = self.step()? {
                return Ok(reason);
            }
        }
    }

    /// The model to publish: the threshold-reaching parameters, or the
    /// best seen so far after a timeout.
    pub fn solution(&self) -> ModelSolution {
        ModelSolution {
            spec_id: self.task.id.0,
            sml: self.sml.clone(),
            norm: self.norm.clone(),
            params: self.best_params.clone(),
            train_accuracy: self.best_accuracy,
        }
    }
}

/// Candidate for the next height: parent's pending tasks minus the solved
/// one, plus `posts` (tasks first seen by this miner, with their data),
/// whose pointers are rewritten to this block's data section.
pub fn build_candidate(
    chain: &Chain,
    miner: AccountId,
    solved: TaskId,
    model: ModelSolution,
    timestamp: SimTime,
    posts: &[(Task, Vec<CiphertextBatch>)],
) -> Block {
    let height = chain.height() + 1;
    let mut pending: Vec<Task> = chain
        .pending_tasks()
        .iter()
        .filter(|t| t.id != solved)
        .cloned()
        .collect();
    let mut data = Vec::new();
    for (task, batches) in posts {
        if chain.pending_task(task.id).is_some()
            || chain.is_solved(task.id)
            || pending.iter().any(|t| t.id == task.id)
        {
            continue;
        }
        let mut task = task.clone();
        task.data_pointers = batches
            .iter()
            .map(|b| {
                data.push(b.clone());
                DataPointer {
                    height,
                    index: (data.len() - 1) as u32,
                }
            })
            .collect();
        pending.push(task);
    }
    let train_accuracy = model.train_accuracy;
    let mut block = Block {
        header: BlockHeader {
            height,
            winner: miner,
            task_id: Some(solved),
            prev_hash: chain.head_hash(),
            model: Some(model),
            train_accuracy,
            test_accuracy: 0.0,
            ommer_hashes: Vec::new(),
            merkle_root: Hash256::ZERO,
            timestamp,
        },
        body: BlockBody {
            pending_tasks: pending,
            new_ciphertext_data: data,
            ..BlockBody::default()
        },
    };
    block.seal();
    block
}

/// Per-miner protocol state.
#[derive(Debug, Clone)]
pub struct MinerState {
    pub id: AccountId,
    pub phase: Phase,
    pub current_task: Option<TaskId>,
    pub session: Option<MiningSession>,
    /// Candidates from any miner for the current height, own included.
    pub received_blks: Vec<Block>,
    pub clock: SimTime,
    /// Tasks whose data failed to decrypt; skipped when choosing work.
    pub flagged: BTreeSet<TaskId>,
}

impl MinerState {
    pub fn new(id: AccountId) -> Self {
        Self {
            id,
            phase: Phase::Idle,
            current_task: None,
            session: None,
            received_blks: Vec::new(),
            clock: SimTime::ZERO,
            flagged: BTreeSet::new(),
        }
    }

    /// Clears per-height state.
    pub fn reset_height(&mut self) {
        self.phase = Phase::Idle;
        self.current_task = None;
        self.session = None;
        self.received_blks.clear();
    }
}

#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub candidate: Block,
    pub emitted_at: SimTime,
    pub steps: u64,
    pub reason: StopReason,
}

/// Runs the mining loop for the current height in one go: choose a task,
/// decrypt its data through the SML derived from `phs`, train until the
/// threshold or the time limit, and build the candidate block.
pub fn pole_mine(
    state: &mut MinerState,
    chain: &Chain,
    phs: &Hash256,
    authority: &dyn KeyAuthority,
    cfg: &MiningConfig,
    posts: &[(Task, Vec<CiphertextBatch>)],
) -> Result<MiningOutcome, ConsensusError> {
    state.reset_height();
    let task = select_task(chain.pending_tasks(), &state.flagged)
        .ok_or(ConsensusError::NoTask)?
        .clone();
    state.current_task = Some(task.id);
    let view = match training_view(chain, &task, phs, authority) {
        Ok(v) => v,
        Err(e @ ConsensusError::Sml(_)) => {
            state.flagged.insert(task.id);
            state.phase = Phase::Idle;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    state.phase = Phase::Training;
    let mut session = MiningSession::start(&task, *phs, view, cfg, state.id, state.clock)?;
    let reason = session.run()?;
    let emitted_at = session.now();
    let candidate = build_candidate(
        chain,
        state.id,
        task.id,
        session.solution(),
        emitted_at,
        posts,
    );
    let steps = session.steps();
    state.session = Some(session);
    state.clock = emitted_at;
    state.phase = Phase::AwaitTest;
    state.received_blks.push(candidate.clone());
    Ok(MiningOutcome {
        candidate,
        emitted_at,
        steps,
        reason,
    })
}
