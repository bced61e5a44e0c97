//! Secure mapping layers.
//!
//! A secure mapping layer (SML) is a fixed `I x D` integer matrix whose rows
//! are query vectors derived from the previous block hash (PHS). A miner
//! never sees plaintext features: it decrypts the `I` inner products of each
//! encrypted sample with those rows, and the resulting vector is the input
//! of its network. The weights depend on nothing but the hash, so every node
//! regenerates them bit-for-bit during verification.
//!
//! Row `i` (1-based) is built from the 256-bit binary form `b` of the hash:
//! `primary = b XOR rotl(b, i)`, repeated end to end until at least `k * D`
//! bits are available, then cut into consecutive disjoint `k`-bit slices
//! read MSB-first.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::fe::{
    decrypt_with_table, inner_product_bound, Ciphertext, Discretization, DlogTable, FeError,
    FunctionalKey, GroupParams,
};
use crate::hash::Hash256;

/// Bit width of a block hash.
pub const HASH_BITS: usize = 256;
/// Weight width used by the MLP tasks.
pub const DEFAULT_BITS: u32 = 3;
/// Number of query vectors for MLP tasks.
pub const DEFAULT_QUERIES: usize = 32;
/// Widest weight supported; keeps `D * (2^k - 1) * xmax` well inside `u64`.
pub const MAX_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmlError {
    #[error("invalid SML shape: {0}")]
    InvalidShape(&'static str),
    #[error("expected {expected} functional keys, got {actual}")]
    KeyCount { expected: usize, actual: usize },
    #[error("functional key {index} was not derived for query vector {index}")]
    KeyMismatch { index: usize },
    #[error("ciphertext {sample} has dimension {actual}, SML expects {expected}")]
    DimensionMismatch {
        sample: usize,
        expected: usize,
        actual: usize,
    },
    #[error("decryption failed for sample {sample}, query {query}: {source}")]
    SmlDecryptFailed {
        sample: usize,
        query: usize,
        source: FeError,
    },
}

/// Shape of a secure mapping layer, as carried by a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmlShape {
    /// `D`: dimension of the encrypted data.
    pub dim: usize,
    /// `I`: number of query vectors (network input width).
    pub queries: usize,
    /// `k`: bits per weight.
    pub bits: u32,
}

impl SmlShape {
    pub fn validate(&self) -> Result<(), SmlError> {
        if self.dim == 0 {
            return Err(SmlError::InvalidShape("D must be at least 1"));
        }
        if self.queries == 0 {
            return Err(SmlError::InvalidShape("I must be at least 1"));
        }
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(SmlError::InvalidShape("k must be in 1..=16"));
        }
        Ok(())
    }

    /// Largest inner product between a query row and a discretized sample.
    pub fn decryption_bound(&self, xmax: u64) -> u64 {
        inner_product_bound(self.dim, self.bits, xmax)
    }
}

impl Canonical for SmlShape {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.dim as u32);
        w.put_u32(self.queries as u32);
        w.put_u32(self.bits);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let shape = SmlShape {
            dim: r.get_u32()? as usize,
            queries: r.get_u32()? as usize,
            bits: r.get_u32()?,
        };
        shape
            .validate()
            .map_err(|_| CodecError::Invalid("SML shape"))?;
        Ok(shape)
    }
}

/// The `I` query vectors derived from one block hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmlWeights {
    shape: SmlShape,
    source_hash: Hash256,
    /// Row-major `I x D`.
    weights: Vec<u64>,
}

impl SmlWeights {
    pub fn shape(&self) -> SmlShape {
        self.shape
    }

    pub fn bits(&self) -> u32 {
        self.shape.bits
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn queries(&self) -> usize {
        self.shape.queries
    }

    pub fn source_hash(&self) -> &Hash256 {
        &self.source_hash
    }

    /// Query vector `i` (0-based row; Algorithm row `i + 1`).
    pub fn query(&self, i: usize) -> &[u64] {
        let d = self.shape.dim;
        &self.weights[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.weights.chunks(self.shape.dim)
    }

    /// `sum_j z_j` for every row; used to remove the discretization offset.
    pub fn row_sums(&self) -> Vec<u64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    /// Integer matrix-vector product `Z x`.
    pub fn project(&self, x: &[u64]) -> Vec<u64> {
        self.rows()
            .map(|row| row.iter().zip(x).map(|(&w, &v)| w * v).sum())
            .collect()
    }

    /// Converts raw inner products back to (approximately) original feature
    /// units: `(raw - offset * sum_j z_j) / scale`.
    pub fn rescale(&self, raw: &[u64], disc: &Discretization, row_sums: &[u64]) -> Vec<f64> {
        raw.iter()
            .zip(row_sums)
            .map(|(&v, &s)| (v as f64 - (disc.offset * s) as f64) / disc.scale)
            .collect()
    }

    /// Plaintext twin of [`apply_sml`]: identical output when given the
    /// same discretized samples.
    pub fn plaintext_features(&self, x: &[u64], disc: &Discretization) -> Vec<f64> {
        self.rescale(&self.project(x), disc, &self.row_sums())
    }

    /// Weights packed MSB-first, `k` bits each, row-major, zero-padded to a
    /// byte boundary.
    pub fn packed_weights(&self) -> Vec<u8> {
        let k = self.shape.bits;
        let total_bits = self.weights.len() * k as usize;
        let mut out = vec![0u8; total_bits.div_ceil(8)];
        let mut pos = 0usize;
        for &w in &self.weights {
            for b in (0..k).rev() {
                if (w >> b) & 1 == 1 {
                    out[pos / 8] |= 0x80 >> (pos % 8);
                }
                pos += 1;
            }
        }
        out
    }
}

impl Canonical for SmlWeights {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.shape.bits);
        w.put_u32(self.shape.queries as u32);
        w.put_u32(self.shape.dim as u32);
        w.put_hash(&self.source_hash);
        w.put_bytes(&self.packed_weights());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let bits = r.get_u32()?;
        let queries = r.get_u32()? as usize;
        let dim = r.get_u32()? as usize;
        let shape = SmlShape { dim, queries, bits };
        shape
            .validate()
            .map_err(|_| CodecError::Invalid("SML shape"))?;
        let source_hash = r.get_hash()?;
        let packed = r.get_bytes()?;
        let total_bits = queries
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(bits as usize))
            .ok_or(CodecError::Invalid("SML size"))?;
        if packed.len() != total_bits.div_ceil(8) {
            return Err(CodecError::Invalid("SML packed length"));
        }
        let bit = |n: usize| (packed[n / 8] >> (7 - n % 8)) & 1;
        if (total_bits..packed.len() * 8).any(|n| bit(n) != 0) {
            return Err(CodecError::Invalid("SML padding bits"));
        }
        let weights = (0..queries * dim)
            .map(|idx| {
                (0..bits as usize).fold(0u64, |acc, b| {
                    (acc << 1) | bit(idx * bits as usize + b) as u64
                })
            })
            .collect();
        Ok(Self {
            shape,
            source_hash,
            weights,
        })
    }
}

/// Bit `n` of `b XOR rotl(b, i)` on the 256-bit word.
fn primary_bit(phs: &Hash256, i: usize, n: usize) -> u64 {
    let n = n % HASH_BITS;
    (phs.bit(n) ^ phs.bit((n + i) % HASH_BITS)) as u64
}

/// Derives the `I` query vectors of a secure mapping layer from `phs`.
pub fn generate_sml(
    phs: &Hash256,
    dim: usize,
    queries: usize,
    bits: u32,
) -> Result<SmlWeights, SmlError> {
    let shape = SmlShape { dim, queries, bits };
    shape.validate()?;
    let k = bits as usize;
    let mut weights = Vec::with_capacity(queries * dim);
    for i in 1..=queries {
        // master_weight is primary_weight repeated, so its bit n is
        // primary bit (n mod 256).
        for j in 0..dim {
            let z = (j * k..(j + 1) * k).fold(0u64, |acc, n| (acc << 1) | primary_bit(phs, i, n));
            weights.push(z);
        }
    }
    Ok(SmlWeights {
        shape,
        source_hash: *phs,
        weights,
    })
}

pub fn generate_for_shape(phs: &Hash256, shape: SmlShape) -> Result<SmlWeights, SmlError> {
    generate_sml(phs, shape.dim, shape.queries, shape.bits)
}

/// One sample's SML output: `I` features in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmlOutput {
    pub features: Vec<f64>,
}

/// Runs encrypted samples through the layer. Each feature is the decrypted
/// inner product with one query row, offset-corrected and divided by the
/// discretization scale.
pub fn apply_sml(
    weights: &SmlWeights,
    params: &GroupParams,
    ciphertexts: &[Ciphertext],
    fkeys: &[FunctionalKey],
    disc: &Discretization,
) -> Result<Vec<SmlOutput>, SmlError> {
    let table = DlogTable::new(params, weights.shape.decryption_bound(disc.xmax));
    apply_sml_with_table(weights, &table, ciphertexts, fkeys, disc)
}

/// [`apply_sml`] with a caller-owned discrete-log table (reused across
/// calls that share the group and bound).
pub fn apply_sml_with_table(
    weights: &SmlWeights,
    table: &DlogTable,
    ciphertexts: &[Ciphertext],
    fkeys: &[FunctionalKey],
    disc: &Discretization,
) -> Result<Vec<SmlOutput>, SmlError> {
    if fkeys.len() != weights.queries() {
        return Err(SmlError::KeyCount {
            expected: weights.queries(),
            actual: fkeys.len(),
        });
    }
    if let Some(index) = fkeys
        .iter()
        .enumerate()
        .position(|(i, k)| k.z.as_slice() != weights.query(i))
    {
        return Err(SmlError::KeyMismatch { index });
    }
    let row_sums = weights.row_sums();
    ciphertexts
        .par_iter()
        .enumerate()
        .map(|(sample, ct)| {
            if ct.dim() != weights.dim() {
                return Err(SmlError::DimensionMismatch {
                    sample,
                    expected: weights.dim(),
                    actual: ct.dim(),
                });
            }
            let raw = fkeys
                .iter()
                .enumerate()
                .map(|(query, fk)| {
                    decrypt_with_table(table, ct, weights.query(query), fk).map_err(|source| {
                        SmlError::SmlDecryptFailed {
                            sample,
                            query,
                            source,
                        }
                    })
                })
                .collect::<Result<Vec<u64>, _>>()?;
            Ok(SmlOutput {
                features: weights.rescale(&raw, disc, &row_sums),
            })
        })
        .collect()
}
