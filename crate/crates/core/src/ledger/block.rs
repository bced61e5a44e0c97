use serde::{Deserialize, Serialize};

use super::merkle::merkle_root;
use super::types::{AccountId, CiphertextBatch, OmmerRecord, Task, TaskId, TestData, Transaction};
use super::{LedgerError, RESERVOIR};
use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::hash::{sha256, Hash256};
use crate::nn::ModelSolution;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub winner: AccountId,
    /// `None` only for genesis.
    pub task_id: Option<TaskId>,
    pub prev_hash: Hash256,
    pub model: Option<ModelSolution>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub ommer_hashes: Vec<Hash256>,
    pub merkle_root: Hash256,
    pub timestamp: SimTime,
}

impl Canonical for BlockHeader {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.height);
        self.winner.encode(w);
        w.put_option(self.task_id.as_ref());
        w.put_hash(&self.prev_hash);
        w.put_option(self.model.as_ref());
        w.put_f64(self.train_accuracy);
        w.put_f64(self.test_accuracy);
        w.put_seq(&self.ommer_hashes);
        w.put_hash(&self.merkle_root);
        w.put_u64(self.timestamp.micros());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            height: r.get_u64()?,
            winner: AccountId::decode(r)?,
            task_id: r.get_option()?,
            prev_hash: r.get_hash()?,
            model: r.get_option()?,
            train_accuracy: r.get_f64()?,
            test_accuracy: r.get_f64()?,
            ommer_hashes: r.get_seq()?,
            merkle_root: r.get_hash()?,
            timestamp: SimTime(r.get_u64()?),
        })
    }
}

/// SHA-256 of the header's canonical bytes.
pub fn hash_block(header: &BlockHeader) -> Hash256 {
    sha256(&header.to_canonical_bytes())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockBody {
    /// Unsolved tasks after this block: the parent's list minus the solved
    /// task, plus tasks first included here.
    pub pending_tasks: Vec<Task>,
    pub new_ciphertext_data: Vec<CiphertextBatch>,
    pub transactions: Vec<Transaction>,
    /// Test set of the solved task; absent on genesis and on candidates.
    pub test_data: Option<TestData>,
    pub ommers: Vec<OmmerRecord>,
}

impl Canonical for BlockBody {
    fn encode(&self, w: &mut Writer) {
        w.put_seq(&self.pending_tasks);
        w.put_seq(&self.new_ciphertext_data);
        w.put_seq(&self.transactions);
        w.put_option(self.test_data.as_ref());
        w.put_seq(&self.ommers);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            pending_tasks: r.get_seq()?,
            new_ciphertext_data: r.get_seq()?,
            transactions: r.get_seq()?,
            test_data: r.get_option()?,
            ommers: r.get_seq()?,
        })
    }
}

const LEAF_SHAPE: u8 = 0;
const LEAF_TASK: u8 = 1;
const LEAF_DATA: u8 = 2;
const LEAF_TX: u8 = 3;
const LEAF_TEST: u8 = 4;
const LEAF_OMMER: u8 = 5;

fn tagged<T: Canonical>(tag: u8, item: &T) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_u8(tag);
    item.encode(&mut w);
    w.into_bytes()
}

/// Merkle leaves of a body: a leaf recording the section sizes, then every
/// item prefixed with its section tag.
pub fn body_leaves(body: &BlockBody) -> Vec<Vec<u8>> {
    let mut shape = Writer::new();
    shape.put_u8(LEAF_SHAPE);
    shape.put_len(body.pending_tasks.len());
    shape.put_len(body.new_ciphertext_data.len());
    shape.put_len(body.transactions.len());
    shape.put_bool(body.test_data.is_some());
    shape.put_len(body.ommers.len());
    let mut leaves = vec![shape.into_bytes()];
    leaves.extend(body.pending_tasks.iter().map(|t| tagged(LEAF_TASK, t)));
    leaves.extend(
        body.new_ciphertext_data
            .iter()
            .map(|b| tagged(LEAF_DATA, b)),
    );
    leaves.extend(body.transactions.iter().map(|t| tagged(LEAF_TX, t)));
    leaves.extend(body.test_data.iter().map(|t| tagged(LEAF_TEST, t)));
    leaves.extend(body.ommers.iter().map(|o| tagged(LEAF_OMMER, o)));
    leaves
}

impl BlockBody {
    pub fn merkle_root(&self) -> Hash256 {
        merkle_root(&body_leaves(self)).expect("body always has a shape leaf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub body: BlockBody,
}

impl Block {
    /// Height-0 block with the given body; no winner, no model.
    pub fn genesis(body: BlockBody, timestamp: SimTime) -> Block {
        let mut b = Block {
            header: BlockHeader {
                height: 0,
                winner: RESERVOIR,
                task_id: None,
                prev_hash: Hash256::ZERO,
                model: None,
                train_accuracy: 0.0,
                test_accuracy: 0.0,
                ommer_hashes: Vec::new(),
                merkle_root: Hash256::ZERO,
                timestamp,
            },
            body,
        };
        b.seal();
        b
    }

    /// Recomputes the header's Merkle root and ommer hash list from the body.
    pub fn seal(&mut self) {
        self.header.ommer_hashes = self.body.ommers.iter().map(|o| o.block_hash).collect();
        self.header.merkle_root = self.body.merkle_root();
    }

    pub fn hash(&self) -> Hash256 {
        hash_block(&self.header)
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn check_merkle(&self) -> Result<(), LedgerError> {
        if self.body.merkle_root() != self.header.merkle_root {
            return Err(LedgerError::MerkleMismatch {
                height: self.header.height,
            });
        }
        let listed: Vec<Hash256> = self.body.ommers.iter().map(|o| o.block_hash).collect();
        if listed != self.header.ommer_hashes {
            return Err(LedgerError::InvalidOmmer(
                "header ommer hashes differ from body",
            ));
        }
        Ok(())
    }

    /// Finalized blocks carry their task's test set.
    pub fn is_finalized(&self) -> bool {
        self.header.height == 0 || self.body.test_data.is_some()
    }
}

impl Canonical for Block {
    fn encode(&self, w: &mut Writer) {
        self.header.encode(w);
        self.body.encode(w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            header: BlockHeader::decode(r)?,
            body: BlockBody::decode(r)?,
        })
    }
}
