//! Blocks, the chain, accounts and rewards.
//!
//! Token amounts are integers in base units ([`UNITS_PER_TOKEN`] per token)
//! so balances are exact. A block body is committed to its header by a
//! SHA-256 Merkle root; headers are chained by SHA-256 of their canonical
//! encoding.

mod accounts;
mod block;
mod chain;
mod merkle;
mod types;

pub use accounts::{
    ommer_reward, ommer_reward_units, referral_bonus_units, AccountState, RewardParams,
    REFERRAL_DIVISOR,
};
pub use block::{body_leaves, hash_block, Block, BlockBody, BlockHeader};
pub use chain::{read_chain_file, Chain, ChainFileWriter, OMMER_WINDOW};
pub use merkle::merkle_root;
pub use types::{
    most_valuable, AccountId, CiphertextBatch, DataPointer, OmmerRecord, Task, TaskId, TestData,
    Transaction, RESERVOIR, UNITS_PER_TOKEN,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::codec::CodecError;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("merkle tree needs at least one leaf")]
    EmptyMerkle,
    #[error("account {account} has {available} units, needs {needed}")]
    InsufficientBalance {
        account: AccountId,
        needed: u64,
        available: u64,
    },
    #[error("block height {actual} does not extend state at next height {expected}")]
    HeightMismatch { expected: u64, actual: u64 },
    #[error("block {height}: previous hash does not match parent")]
    PrevHashMismatch { height: u64 },
    #[error("block {height}: merkle root does not match body")]
    MerkleMismatch { height: u64 },
    #[error("block {height}: task list is not parent - solved + new")]
    TaskConservation { height: u64 },
    #[error("task {0} is not pending")]
    UnknownTask(TaskId),
    #[error("data pointer {0:?} does not resolve")]
    DanglingPointer(DataPointer),
    #[error("invalid ommer reference: {0}")]
    InvalidOmmer(&'static str),
    #[error("invalid block: {0}")]
    InvalidBlock(&'static str),
    #[error("reservoir holds {balance} units, pending rewards total {escrowed}")]
    ReservoirInsolvent { balance: u64, escrowed: u64 },
    #[error("balance overflow")]
    Overflow,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("chain file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
