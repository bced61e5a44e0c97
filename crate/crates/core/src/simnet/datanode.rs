use std::collections::{BTreeMap, BTreeSet};

use super::SimError;
use crate::consensus::{derive_task_keys, ConsensusError, KeyAuthority};
use crate::fe::FunctionalKey;
use crate::hash::Hash256;
use crate::ledger::{AccountId, Block, Task, TaskId, TestData};
use crate::tasks::PreparedTask;
use crate::time::SimTime;

#[derive(Debug, Clone, Default)]
struct Round {
    candidates: BTreeSet<Hash256>,
    triggered: bool,
}

/// What a data node holds off-chain: master keys and withheld test sets
/// for the tasks it posted, and release bookkeeping.
#[derive(Debug, Clone)]
pub struct DataNodeState {
    pub id: AccountId,
    pub wait_count: usize,
    posted: BTreeMap<TaskId, PreparedTask>,
    released: BTreeSet<TaskId>,
    rounds: BTreeMap<(TaskId, Hash256), Round>,
}

impl DataNodeState {
    pub fn new(id: AccountId, wait_count: usize) -> Self {
        Self {
            id,
            wait_count,
            posted: BTreeMap::new(),
            released: BTreeSet::new(),
            rounds: BTreeMap::new(),
        }
    }

    pub fn post(&mut self, prepared: PreparedTask) {
        self.posted.insert(prepared.task.id, prepared);
    }

    pub fn posted_task(&self, id: TaskId) -> Option<&Task> {
        self.posted.get(&id).map(|p| &p.task)
    }

    pub fn prepared(&self, id: TaskId) -> Option<&PreparedTask> {
        self.posted.get(&id)
    }

    pub fn posted_count(&self) -> usize {
        self.posted.len()
    }

    pub fn is_released(&self, id: TaskId) -> bool {
        self.released.contains(&id)
    }

    /// Signs and timestamps the withheld test set. A task's test set goes
    /// out once.
    pub fn release_test_set(&mut self, task: TaskId, now: SimTime) -> Result<TestData, SimError> {
        let prepared = self.posted.get(&task).ok_or(SimError::UnknownTask(task))?;
        if !self.released.insert(task) {
            return Err(SimError::DoubleRelease(task));
        }
        Ok(prepared.release(now, self.id))
    }

    /// `eta_i = <s, z_i>` for every query vector derived from `phs`.
    pub fn serve_functional_keys(
        &self,
        task: TaskId,
        phs: &Hash256,
    ) -> Result<Vec<FunctionalKey>, SimError> {
        let prepared = self.posted.get(&task).ok_or(SimError::UnknownTask(task))?;
        Ok(derive_task_keys(&prepared.task, &prepared.keys, phs)?)
    }

    /// Counts a candidate toward its round. Returns true exactly once per
    /// round, when the count first reaches `wait_count`.
    pub fn note_candidate(&mut self, blk: &Block) -> bool {
        let Some(task) = blk.header.task_id else {
            return false;
        };
        if !self.posted.contains_key(&task) || self.released.contains(&task) {
            return false;
        }
        let round = self.rounds.entry((task, blk.header.prev_hash)).or_default();
        round.candidates.insert(blk.hash());
        if !round.triggered && round.candidates.len() >= self.wait_count {
            round.triggered = true;
            return true;
        }
        false
    }

    /// Records the first key request for a round; true if it was the first.
    pub fn note_request(&mut self, task: TaskId, phs: Hash256) -> bool {
        use std::collections::btree_map::Entry;
        match self.rounds.entry((task, phs)) {
            Entry::Vacant(v) => {
                v.insert(Round::default());
                true
            }
            Entry::Occupied(_) => false,
        }
    }
}

impl KeyAuthority for DataNodeState {
    fn functional_keys(
        &self,
        task: &Task,
        phs: &Hash256,
    ) -> Result<Vec<FunctionalKey>, ConsensusError> {
        self.serve_functional_keys(task.id, phs)
            .map_err(|e| ConsensusError::KeyAuthority(e.to_string()))
    }
}
