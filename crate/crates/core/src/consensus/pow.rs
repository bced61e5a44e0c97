//! Proof-of-work baseline.
//!
//! Hash trials are not executed; the number of trials until a hash falls
//! below the target is drawn from the geometric distribution with success
//! probability `target / 2^256`, and converted to time at a fixed hash rate.
//! [`search_nonce`] performs real SHA-256 trials for easy targets so the
//! analytic model can be checked against the real thing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hash::{sha256_concat, Hash256};
use crate::rng::{self, SimRng};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowParams {
    /// A hash wins when, read as a 256-bit big-endian integer, it is below
    /// this value.
    pub target: Hash256,
    /// Network-wide hash trials per simulated second.
    pub hash_rate: f64,
}

/// `floor(p * 2^256)` as a big-endian 256-bit integer, saturating at
/// `2^256 - 1`.
pub fn target_from_probability(p: f64) -> Hash256 {
    if p.is_nan() || p <= 0.0 {
        return Hash256::ZERO;
    }
    if p >= 1.0 {
        return Hash256::new([0xff; 32]);
    }
    let mut bytes = [0u8; 32];
    let mut x = p;
    for b in &mut bytes {
        x *= 256.0;
        let digit = x.floor();
        *b = digit as u8;
        x -= digit;
    }
    Hash256::new(bytes)
}

/// `target / 2^256`.
pub fn success_probability(target: &Hash256) -> f64 {
    target
        .as_bytes()
        .iter()
        .rev()
        .fold(0.0, |acc, &b| (acc + b as f64) / 256.0)
}

impl PowParams {
    /// Target giving an expected `expected_secs` between blocks at
    /// `hash_rate` trials per second.
    pub fn for_expected_time(expected_secs: f64, hash_rate: f64) -> Self {
        let p = 1.0 / (expected_secs * hash_rate);
        Self {
            target: target_from_probability(p),
            hash_rate,
        }
    }

    pub fn success_probability(&self) -> f64 {
        success_probability(&self.target)
    }

    pub fn expected_block_time(&self) -> f64 {
        1.0 / (self.success_probability() * self.hash_rate)
    }
}

/// Trials up to and including the first success.
pub fn sample_trials(p: f64, rng: &mut SimRng) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return u64::MAX;
    }
    // Inverse CDF of the geometric distribution on {1, 2, ...}.
    let u: f64 = 1.0 - rng.gen::<f64>();
    let k = (u.ln() / (-p).ln_1p()).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowOutcome {
    pub trials: u64,
    pub elapsed_secs: f64,
}

/// Simulated mining of one block on top of `phs`.
pub fn pow_mine(params: &PowParams, rng: &mut SimRng) -> PowOutcome {
    let trials = sample_trials(params.success_probability(), rng);
    PowOutcome {
        trials,
        elapsed_secs: trials as f64 / params.hash_rate,
    }
}

pub fn pow_hash(phs: &Hash256, nonce: u64) -> Hash256 {
    sha256_concat(&[&nonce.to_be_bytes(), phs.as_bytes()])
}

/// Real SHA-256 search from nonce 0; returns the winning nonce and the
/// number of trials.
pub fn search_nonce(target: &Hash256, phs: &Hash256, max_trials: u64) -> Option<(u64, u64)> {
    (0..max_trials)
        .find(|&n| pow_hash(phs, n) < *target)
        .map(|n| (n, n + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowBlock {
    pub height: u64,
    pub miner: u32,
    pub prev_hash: Hash256,
    pub trials: u64,
    pub timestamp: SimTime,
    pub hash: Hash256,
}

/// A PoW chain where `miners` equal miners share `params.hash_rate`; each
/// height goes to whichever miner's sampled search finishes first.
pub fn run_pow_chain(params: &PowParams, miners: u32, blocks: u64, seed: u64) -> Vec<PowBlock> {
    let miners = miners.max(1);
    let per_miner = PowParams {
        hash_rate: params.hash_rate / miners as f64,
        ..*params
    };
    let mut chain = Vec::with_capacity(blocks as usize);
    let mut prev = Hash256::ZERO;
    let mut now = SimTime::ZERO;
    for height in 1..=blocks {
        let (miner, outcome) = (0..miners)
            .map(|m| {
                let mut r = rng::derived(seed, "pow", height * miners as u64 + m as u64);
                (m, pow_mine(&per_miner, &mut r))
            })
            .min_by(|a, b| a.1.elapsed_secs.total_cmp(&b.1.elapsed_secs))
            .unwrap();
        now = now + SimTime::from_secs_f64(outcome.elapsed_secs);
        let hash = sha256_concat(&[
            prev.as_bytes(),
            &height.to_be_bytes(),
            &miner.to_be_bytes(),
            &outcome.trials.to_be_bytes(),
            &now.micros().to_be_bytes(),
        ]);
        chain.push(PowBlock {
            height,
            miner,
            prev_hash: prev,
            trials: outcome.trials,
            timestamp: now,
            hash,
        });
        prev = hash;
    }
    chain
}

/// Seconds between consecutive blocks, the first measured from time zero.
pub fn intervals(blocks: &[PowBlock]) -> Vec<f64> {
    let mut last = SimTime::ZERO;
    blocks
        .iter()
        .map(|b| {
            let d = (b.timestamp - last).as_secs_f64();
            last = b.timestamp;
            d
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::sha256;

    #[test]
    fn certain_success() {
        let params = PowParams {
            target: Hash256::new([0xff; 32]),
            hash_rate: 10.0,
        };
        let mut r = rng::seeded(1);
        for _ in 0..100 {
            assert_eq!(pow_mine(&params, &mut r).trials, 1);
        }
        assert!(search_nonce(&params.target, &sha256(b"x"), 1).is_some());
    }

    #[test]
    fn target_probability_roundtrip() {
        for p in [0.5, 0.25, 1.0 / 300.0, 1e-9, 1e-15] {
            let t = target_from_probability(p);
            assert!((success_probability(&t) - p).abs() / p < 1e-12, "{p}");
        }
        let params = PowParams::for_expected_time(300.0, 1000.0);
        assert!((params.expected_block_time() - 300.0).abs() < 1e-6);
    }

    #[test]
    fn analytic_sampler_matches_real_hashing() {
        // Easy target: p = 1/16.
        let target = target_from_probability(1.0 / 16.0);
        let n = 3000u64;
        let real: u64 = (0..n)
            .map(|i| {
                search_nonce(&target, &sha256(&i.to_be_bytes()), 10_000)
                    .unwrap()
                    .1
            })
            .sum();
        let mut r = rng::seeded(3);
        let sampled: u64 = (0..n).map(|_| sample_trials(1.0 / 16.0, &mut r)).sum();
        let (real_mean, sampled_mean) = (real as f64 / n as f64, sampled as f64 / n as f64);
        assert!((real_mean - 16.0).abs() < 1.6, "{real_mean}");
        assert!((sampled_mean - 16.0).abs() < 1.6, "{sampled_mean}");
    }

    #[test]
    fn chain_mean_and_dispersion() {
        let params = PowParams::for_expected_time(300.0, 1e6);
        let blocks = run_pow_chain(&params, 3, 400, 9);
        let iv = intervals(&blocks);
        let mean = iv.iter().sum::<f64>() / iv.len() as f64;
        let var = iv.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (iv.len() - 1) as f64;
        assert!((mean - 300.0).abs() < 45.0, "{mean}");
        let ratio = var / (mean * mean);
        assert!((0.7..1.3).contains(&ratio), "{ratio}");
        assert_eq!(blocks[1].prev_hash, blocks[0].hash);
        assert_eq!(run_pow_chain(&params, 3, 10, 9), blocks[..10].to_vec());
    }
}
