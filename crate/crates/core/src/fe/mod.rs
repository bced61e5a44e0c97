//! Inner-product functional encryption over a DDH group.
//!
//! The group is the order-`p` subgroup of quadratic residues in `Z_q^*`
//! where `q = 2p + 1` is a safe prime. All arithmetic fits in `u64` with
//! `u128` intermediate products, which caps `p` at 62 bits. That is plenty
//! for a simulator and nowhere near cryptographic strength.
//!
//! A data owner holding master keys `(s, h = g^s)` encrypts a discretized
//! feature vector `x` as `(g^r, h_i^r * g^{x_i})`. Anyone holding the
//! functional key `eta = <s, z>` for a query vector `z` can recover
//! `<x, z>` (and nothing else) as the discrete log of
//! `prod ct_i^{z_i} / ct_0^eta`, found here by baby-step giant-step over a
//! caller-supplied bound.

mod dlog;
mod group;
mod ipfe;

pub use dlog::DlogTable;
pub use group::{group_gen, is_prime, mul_mod, pow_mod, GroupParams, MAX_LAMBDA, MIN_LAMBDA};
pub use ipfe::{
    decrypt_inner_product, decrypt_with_table, derive_functional_key, discretize, encrypt,
    encrypt_with_randomness, inner_product_bound, keygen, Ciphertext, Discretization,
    FunctionalKey, MasterKeys,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeError {
    #[error("lambda {0} outside supported range {MIN_LAMBDA}..={MAX_LAMBDA}")]
    UnsupportedLambda(u32),
    #[error("invalid group parameters: {0}")]
    InvalidGroup(&'static str),
    #[error("dimension must be at least 1")]
    EmptyDimension,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("component {index} = {value} is not in Z_p")]
    OutOfRange { index: usize, value: u64 },
    #[error("component {0} is not finite")]
    NonFinite(usize),
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(&'static str),
    #[error("no discrete log in [0, {bound}]")]
    LogNotFound { bound: u64 },
}
