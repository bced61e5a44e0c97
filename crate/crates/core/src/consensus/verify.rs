use std::collections::{BTreeMap, HashSet};
use std::fmt;

use log::debug;

use super::{ConsensusError, SmlView};
use crate::codec::Canonical;
use crate::hash::Hash256;
use crate::ledger::{Block, Chain, OmmerRecord, Task, TestData, OMMER_WINDOW};
use crate::sml::generate_for_shape;

/// Why a candidate failed verification.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    WrongParent,
    WrongTask,
    MissingModel,
    /// The embedded SML is not the one derived from the parent hash.
    SmlMismatch,
    ShapeMismatch,
    BelowRequiredAccuracy {
        recomputed: f64,
        required: f64,
    },
    /// Timestamped at or after the test-set release.
    LateTimestamp,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::WrongParent => f.write_str("previous hash is not the chain head"),
            Rejection::WrongTask => f.write_str("block solves a different task"),
            Rejection::MissingModel => f.write_str("block carries no model"),
            Rejection::SmlMismatch => f.write_str("SML differs from the parent-hash derivation"),
            Rejection::ShapeMismatch => f.write_str("network shape differs from the task spec"),
            Rejection::BelowRequiredAccuracy {
                recomputed,
                required,
            } => write!(f, "training accuracy {recomputed:.4} below {required:.4}"),
            Rejection::LateTimestamp => f.write_str("timestamp not before test release"),
        }
    }
}

/// Full check of a candidate against the parent hash, the task's training
/// data seen through the parent-derived SML, and the released test set.
pub fn verify_block(
    blk: &Block,
    phs: &Hash256,
    task: &Task,
    train: &SmlView,
    test: &TestData,
) -> Result<(), Rejection> {
    let h = &blk.header;
    if h.timestamp >= test.released_at {
        return Err(Rejection::LateTimestamp);
    }
    if h.prev_hash != *phs {
        return Err(Rejection::WrongParent);
    }
    if h.task_id != Some(task.id) || test.task_id != task.id {
        return Err(Rejection::WrongTask);
    }
    let model = h.model.as_ref().ok_or(Rejection::MissingModel)?;
    if model.spec_id != task.id.0 {
        return Err(Rejection::WrongTask);
    }
    let regenerated = generate_for_shape(phs, task.sml).map_err(|_| Rejection::ShapeMismatch)?;
    let expected = regenerated.to_canonical_bytes();
    if model.sml.to_canonical_bytes() != expected || train.sml.to_canonical_bytes() != expected {
        return Err(Rejection::SmlMismatch);
    }
    let sizes: Vec<usize> = std::iter::once(model.params.input_dim())
        .chain(model.params.layers.iter().map(|l| l.fan_out))
        .collect();
    if sizes != task.model_spec.layer_sizes || model.norm.mean.len() != task.sml.queries {
        return Err(Rejection::ShapeMismatch);
    }
    let recomputed = model.accuracy(&train.features);
    let required = task.model_spec.required_accuracy;
    if recomputed < required {
        return Err(Rejection::BelowRequiredAccuracy {
            recomputed,
            required,
        });
    }
    Ok(())
}

/// Accuracy of the block's model on test data seen through `test`'s SML.
/// Zero for blocks without a model.
pub fn test_accuracy(blk: &Block, test: &SmlView) -> f64 {
    blk.header
        .model
        .as_ref()
        .map_or(0.0, |m| m.accuracy(&test.features))
}

/// Candidates with their test accuracy, best first: higher accuracy, then
/// earlier timestamp, then lower hash. Duplicates are dropped.
pub fn rank_candidates(candidates: &[Block], test: &SmlView) -> Vec<(Block, f64)> {
    let mut seen = HashSet::new();
    let mut ranked: Vec<(Block, f64, Hash256)> = candidates
        .iter()
        .filter(|b| seen.insert(b.hash()))
        .map(|b| (b.clone(), test_accuracy(b, test), b.hash()))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.header.timestamp.cmp(&b.0.header.timestamp))
            .then(a.2.cmp(&b.2))
    });
    ranked.into_iter().map(|(b, acc, _)| (b, acc)).collect()
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub winner: Block,
    pub winner_test_accuracy: f64,
    /// Verified losers, best first.
    pub ommers: Vec<(Block, f64)>,
    pub rejected: Vec<(Hash256, Rejection)>,
}

/// Ranks by test accuracy and keeps the first candidate that verifies;
/// the other verified candidates become ommers.
pub fn select_winner(
    received: &[Block],
    phs: &Hash256,
    task: &Task,
    train: &SmlView,
    test_view: &SmlView,
    test: &TestData,
) -> Result<Selection, ConsensusError> {
    let mut verified = Vec::new();
    let mut rejected = Vec::new();
    for (blk, acc) in rank_candidates(received, test_view) {
        match verify_block(&blk, phs, task, train, test) {
            Ok(()) => verified.push((blk, acc)),
            Err(why) => {
                debug!(
                    "rejecting candidate {} from {}: {why}",
                    blk.hash().short(),
                    blk.header.winner
                );
                rejected.push((blk.hash(), why));
            }
        }
    }
    if verified.is_empty() {
        return Err(ConsensusError::NoValidBlock);
    }
    let (winner, winner_test_accuracy) = verified.remove(0);
    Ok(Selection {
        winner,
        winner_test_accuracy,
        ommers: verified,
        rejected,
    })
}

/// Turns the winning candidate into the block appended to the chain: test
/// accuracy, test set and ommer citations filled in, Merkle root resealed.
pub fn finalize(
    candidate: &Block,
    test: TestData,
    test_accuracy: f64,
    ommers: Vec<OmmerRecord>,
) -> Block {
    let mut b = candidate.clone();
    b.header.test_accuracy = test_accuracy;
    b.body.test_data = Some(test);
    b.body.ommers = ommers;
    b.seal();
    b
}

/// Ommer records from a selection at `height`.
pub fn ommer_records(selection: &Selection, height: u64) -> Vec<OmmerRecord> {
    let count = selection.ommers.len() as u32;
    selection
        .ommers
        .iter()
        .map(|(b, acc)| OmmerRecord {
            height,
            producer: b.header.winner,
            block_hash: b.hash(),
            test_accuracy: *acc,
            ommer_count: count,
        })
        .collect()
}

/// Citations for a block at `height`: for every height in the window, the
/// uncited ommer with the highest test accuracy (ties to the lower hash).
pub fn choose_ommers(
    chain: &Chain,
    pool: &BTreeMap<u64, Vec<OmmerRecord>>,
    height: u64,
) -> Vec<OmmerRecord> {
    let from = height.saturating_sub(OMMER_WINDOW);
    pool.range(from..height)
        .filter_map(|(_, records)| {
            records
                .iter()
                .filter(|r| !chain.is_ommer_cited(&r.block_hash))
                .min_by(|a, b| {
                    b.test_accuracy
                        .total_cmp(&a.test_accuracy)
                        .then(a.block_hash.cmp(&b.block_hash))
                })
                .cloned()
        })
        .filter(|r| {
            !chain
                .blocks()
                .iter()
                .any(|b| b.body.ommers.iter().any(|o| o.height == r.height))
        })
        .collect()
}
