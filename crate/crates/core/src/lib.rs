//! Proof-of-Learning (PoLe) consensus as a library and a deterministic
//! desk-scale simulator.
//!
//! Miners earn blocks by training a small neural network on data that data
//! nodes publish in encrypted form. The encryption is an inner-product
//! functional encryption scheme over a DDH group ([`fe`]); the only way a
//! miner can read the data is through a fixed linear "secure mapping layer"
//! ([`sml`]) whose integer weights are derived from the hash of the previous
//! block. A model trained against one chain position is therefore useless at
//! any other, which is what binds the useful work to the chain.
//!
//! Module map:
//!
//! - [`fe`]: safe-prime group, master keys, encryption, functional keys and
//!   bounded discrete-log decryption of inner products.
//! - [`sml`]: query-vector derivation from a block hash and the encrypted
//!   feature transform built on it.
//! - [`nn`]: MLP with ReLU + softmax cross-entropy trained by plain SGD.
//! - [`data`]: IRIS CSV and MNIST IDX loaders, stratified splits.
//! - [`ledger`]: tasks, blocks, Merkle roots, accounts, rewards and the chain.
//! - [`consensus`]: the mining state machine, block verification, winner
//!   selection and a proof-of-work baseline.
//! - [`simnet`]: discrete-event network with data-node and miner actors.
//! - [`experiments`]: block-time, secure-accuracy and SML-replacement runs.

pub mod codec;
pub mod consensus;
pub mod data;
pub mod experiments;
pub mod fe;
pub mod hash;
pub mod ledger;
pub mod nn;
pub mod rng;
pub mod simnet;
pub mod sml;
pub mod tasks;
pub mod time;

pub use codec::{Canonical, CodecError};
pub use hash::Hash256;
pub use time::SimTime;
