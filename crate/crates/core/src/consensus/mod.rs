//! Mining, verification and winner selection.
//!
//! A miner picks the most valuable pending task, asks the task's key
//! authority for functional keys bound to the current chain head, decrypts
//! the task's ciphertexts through the head's secure mapping layer and trains
//! until it reaches the required accuracy or runs out of time. Verifiers
//! regenerate the layer from the same hash and recompute the training
//! accuracy; test accuracy, computed once the data node releases the test
//! set, ranks the verified candidates.
//!
//! [`pow`] holds the proof-of-work baseline used for block-time comparisons.

mod miner;
pub mod pow;
mod verify;

pub use miner::{
    build_candidate, pole_mine, select_task, MinerState, MiningConfig, MiningOutcome,
    MiningSession, Phase, StopReason,
};
pub use verify::{
    choose_ommers, finalize, ommer_records, rank_candidates, select_winner, test_accuracy,
    verify_block, Rejection, Selection,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::fe::{derive_functional_key, Ciphertext, FeError, FunctionalKey, MasterKeys};
use crate::hash::Hash256;
use crate::ledger::{Chain, LedgerError, Task, TaskId, TestData};
use crate::nn::NnError;
use crate::sml::{apply_sml, generate_for_shape, SmlError, SmlWeights};

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("no pending task")]
    NoTask,
    #[error("no candidate passed verification")]
    NoValidBlock,
    #[error("key authority: {0}")]
    KeyAuthority(String),
    #[error(transparent)]
    Sml(#[from] SmlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Source of functional keys for a task's data, bound to a chain position.
pub trait KeyAuthority {
    fn functional_keys(
        &self,
        task: &Task,
        phs: &Hash256,
    ) -> Result<Vec<FunctionalKey>, ConsensusError>;
}

/// One key per SML query vector derived from `phs`.
pub fn derive_task_keys(
    task: &Task,
    keys: &MasterKeys,
    phs: &Hash256,
) -> Result<Vec<FunctionalKey>, ConsensusError> {
    let sml = generate_for_shape(phs, task.sml)?;
    sml.rows()
        .map(|z| derive_functional_key(&task.group, keys, z).map_err(ConsensusError::from))
        .collect()
}

/// In-process authority holding master keys directly.
#[derive(Debug, Clone, Default)]
pub struct LocalAuthority {
    keys: BTreeMap<TaskId, MasterKeys>,
}

impl LocalAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: TaskId, keys: MasterKeys) {
        self.keys.insert(task, keys);
    }

    pub fn master_keys(&self, task: TaskId) -> Option<&MasterKeys> {
        self.keys.get(&task)
    }
}

impl KeyAuthority for LocalAuthority {
    fn functional_keys(
        &self,
        task: &Task,
        phs: &Hash256,
    ) -> Result<Vec<FunctionalKey>, ConsensusError> {
        let keys = self
            .keys
            .get(&task.id)
            .ok_or_else(|| ConsensusError::KeyAuthority(format!("unknown {}", task.id)))?;
        derive_task_keys(task, keys, phs)
    }
}

/// Samples as seen through one secure mapping layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SmlView {
    pub sml: SmlWeights,
    pub features: Dataset,
}

/// Decrypts `cts` through `sml` into a dataset of SML features.
pub fn decrypt_features(
    task: &Task,
    sml: &SmlWeights,
    cts: &[Ciphertext],
    labels: &[u32],
    keys: &[FunctionalKey],
) -> Result<Dataset, ConsensusError> {
    let outputs = apply_sml(sml, &task.group, cts, keys, &task.disc)?;
    let features = outputs.into_iter().flat_map(|o| o.features).collect();
    let labels = labels.iter().map(|&l| l as usize).collect();
    Ok(Dataset::new(
        sml.queries(),
        task.model_spec.classes(),
        features,
        labels,
    )?)
}

/// The task's on-chain training data seen through the layer derived from
/// `phs`, decrypted with the supplied keys.
pub fn training_view_with_keys(
    chain: &Chain,
    task: &Task,
    phs: &Hash256,
    keys: &[FunctionalKey],
) -> Result<SmlView, ConsensusError> {
    let sml = generate_for_shape(phs, task.sml)?;
    let mut cts = Vec::new();
    let mut labels = Vec::new();
    for batch in chain.training_batches(task)? {
        cts.extend_from_slice(&batch.ciphertexts);
        labels.extend_from_slice(&batch.labels);
    }
    let features = decrypt_features(task, &sml, &cts, &labels, keys)?;
    Ok(SmlView { sml, features })
}

pub fn training_view(
    chain: &Chain,
    task: &Task,
    phs: &Hash256,
    authority: &dyn KeyAuthority,
) -> Result<SmlView, ConsensusError> {
    let keys = authority.functional_keys(task, phs)?;
    training_view_with_keys(chain, task, phs, &keys)
}

/// Released test data seen through the layer derived from `phs`.
pub fn test_view_with_keys(
    task: &Task,
    test: &TestData,
    phs: &Hash256,
    keys: &[FunctionalKey],
) -> Result<SmlView, ConsensusError> {
    let sml = generate_for_shape(phs, task.sml)?;
    let features = decrypt_features(task, &sml, &test.ciphertexts, &test.labels, keys)?;
    Ok(SmlView { sml, features })
}

pub fn test_view(
    task: &Task,
    test: &TestData,
    phs: &Hash256,
    authority: &dyn KeyAuthority,
) -> Result<SmlView, ConsensusError> {
    let keys = authority.functional_keys(task, phs)?;
    test_view_with_keys(task, test, phs, &keys)
}
