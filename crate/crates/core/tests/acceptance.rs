//! Acceptance criteria, one test each. Every test prints a single
//! `[PASS]`/`[FAIL]` line to stderr (uncaptured) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use pole_core::codec::Canonical;
use pole_core::consensus::{
    pole_mine, test_view, training_view, verify_block, LocalAuthority, MinerState, MiningConfig,
    MiningOutcome, Rejection,
};
use pole_core::data::{iris, stratified_split, DatasetKind};
use pole_core::experiments::{
    exp1_block_time, exp2_secure_accuracy, exp3_sml_replacement, AccuracyConfig, Exp1Config,
};
use pole_core::fe::{
    decrypt_inner_product, derive_functional_key, encrypt, group_gen, inner_product_bound, keygen,
};
use pole_core::hash::Hash256;
use pole_core::ledger::{
    ommer_reward, AccountId, AccountState, Block, Chain, LedgerError, RewardParams, TaskId,
    UNITS_PER_TOKEN,
};
use pole_core::nn::{batch_loss, init_with_range, loss_and_gradients};
use pole_core::rng;
use pole_core::simnet::{run_simulation, SimConfig};
use pole_core::sml::generate_sml;
use pole_core::tasks::{genesis_with_tasks, prepare_task, PreparedTask, TaskTemplate};
use pole_core::time::SimTime;
use rand::Rng;

fn report(id: &str, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "\n[{tag}] {id} {name}: {detail} ({:.2}s)\n",
        elapsed.as_secs_f64()
    );
    // Bypasses libtest's capture so the line shows for passing tests too.
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Runs `check`, prints its line and fails the test if it did not pass.
fn criterion(id: &str, name: &str, budget: Duration, check: impl FnOnce() -> (bool, String)) {
    let start = Instant::now();
    let (ok, detail) = check();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; over the {}s budget", budget.as_secs())
    };
    report(id, name, ok && in_time, &detail, elapsed);
    assert!(ok && in_time, "criterion {id} failed: {detail}");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn c1_ipfe_correctness() {
    criterion(
        "1",
        "IPFE decryption equals the plaintext inner product",
        secs(30),
        || {
            let group = group_gen(32, 1).unwrap();
            let mut r = rng::seeded(101);
            let trials = 1000;
            let mut exact = 0;
            for t in 0..trials {
                let dim = r.gen_range(1..=16);
                let xmax = r.gen_range(1..=255u64);
                let x: Vec<u64> = (0..dim).map(|_| r.gen_range(0..=xmax)).collect();
                let z: Vec<u64> = (0..dim).map(|_| r.gen_range(0..8)).collect();
                let keys = keygen(&group, dim, t).unwrap();
                let ct = encrypt(&group, &keys, &x, 10_000 + t).unwrap();
                let fk = derive_functional_key(&group, &keys, &z).unwrap();
                let bound = inner_product_bound(dim, 3, xmax);
                let got = decrypt_inner_product(&group, &ct, &z, &fk, bound).unwrap();
                let want: u64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
                exact += usize::from(got == want);
            }
            (exact == trials as usize, format!("{exact}/{trials} exact"))
        },
    );
}

#[test]
fn c2_sml_determinism_and_sensitivity() {
    criterion(
        "2",
        "SML regeneration is deterministic and hash-sensitive",
        secs(5),
        || {
            let mut r = rng::seeded(202);
            let shapes = [(4, 32, 3), (196, 128, 3)];
            let (mut same, mut differ) = (0, 0);
            for i in 0..100 {
                let (dim, q, k) = shapes[i % 2];
                let h = Hash256::random(&mut r);
                let a = generate_sml(&h, dim, q, k).unwrap();
                let b = generate_sml(&h, dim, q, k).unwrap();
                same += usize::from(a.packed_weights() == b.packed_weights());
                let h2 = Hash256::random(&mut r);
                let c = generate_sml(&h2, dim, q, k).unwrap();
                differ += usize::from(h == h2 || a.packed_weights() != c.packed_weights());
            }
            let zero = generate_sml(&Hash256::ZERO, 196, 128, 3).unwrap();
            let all_zero = zero.rows().all(|row| row.iter().all(|&w| w == 0));
            (
            same == 100 && differ == 100 && all_zero,
            format!("{same}/100 identical, {differ}/100 pairs differ, zero hash all-zero {all_zero}"),
        )
        },
    );
}

#[test]
fn c3_gradient_check() {
    criterion(
        "3",
        "analytic gradients match central differences",
        secs(60),
        || {
            let mut r = rng::seeded(303);
            let mut worst: f64 = 0.0;
            for trial in 0..20u64 {
                let layers = r.gen_range(1..=3);
                let sizes: Vec<usize> = (0..=layers).map(|_| r.gen_range(2..=64)).collect();
                let p = init_with_range(&sizes, trial, Some(0.5));
                let batch = 4;
                let x: Vec<f64> = (0..batch * sizes[0])
                    .map(|_| r.gen_range(-1.0..1.0))
                    .collect();
                let classes = *sizes.last().unwrap();
                let y: Vec<usize> = (0..batch).map(|_| r.gen_range(0..classes)).collect();
                let (_, grads) = loss_and_gradients(&p, &x, &y).unwrap();
                let eps = 1e-5;
                for (k, &a) in grads.flat().iter().enumerate() {
                    let shifted = |delta: f64| {
                        let mut q = p.clone();
                        *q.flat_mut().nth(k).unwrap() += delta;
                        batch_loss(&q, &x, &y).unwrap()
                    };
                    let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
            (
                worst < 1e-3,
                format!("max relative error {worst:.2e} over 20 MLPs"),
            )
        },
    );
}

#[test]
fn c4_secure_iris_accuracy() {
    criterion(
        "4",
        "IRIS through the encrypted SML path",
        secs(300),
        || {
            let out =
                exp2_secure_accuracy(&AccuracyConfig::for_dataset(DatasetKind::Iris)).unwrap();
            let reached = out.secure_epochs_to(0.95);
            let gap = (out.secure_test - out.original_test).abs();
            (
                reached.is_some() && gap <= 0.05,
                format!(
                    "secure {:.4} (>= 0.95 at epoch {reached:?}), original {:.4}, gap {gap:.4}",
                    out.secure_test, out.original_test
                ),
            )
        },
    );
}

#[test]
fn c5_sml_replacement_on_mnist() {
    criterion("5", "MNIST subset under replaced SMLs", secs(900), || {
        let cfg = AccuracyConfig::for_dataset(DatasetKind::MnistSubset);
        let out = exp3_sml_replacement(&cfg).unwrap();
        let chance_margin = 1.0 / out.classes as f64 + 0.15;
        let worst = out
            .replaced
            .iter()
            .map(|r| r.test_accuracy)
            .fold(0.0, f64::max);
        let all_rejected = out.replaced.iter().all(|r| r.verdict.is_err());
        let ok = out.original.test_accuracy >= 0.85
            && out.original.verdict.is_ok()
            && out.identity.verdict.is_ok()
            && out.identity.test_accuracy == out.original.test_accuracy
            && out.replaced.len() == 5
            && worst <= 0.25
            && worst <= chance_margin
            && all_rejected;
        (
            ok,
            format!(
                "original {:.4} verified {}, worst replaced {worst:.4} of 5, all replaced rejected {all_rejected}",
                out.original.test_accuracy,
                out.original.verdict.is_ok()
            ),
        )
    });
}

#[test]
fn c6_block_time_stability() {
    criterion(
        "6",
        "PoLe block times are steadier than PoW",
        secs(600),
        || {
            let cfg = Exp1Config::default();
            let out = exp1_block_time(&cfg).unwrap();
            let (pole, pow) = (out.pole_summary(), out.pow_summary());
            let pow_err = (pow.mean - cfg.target_block_time).abs() / cfg.target_block_time;
            let matched = (pole.mean - cfg.target_block_time).abs() / cfg.target_block_time <= 0.25;
            let ok = pole.count == 30
                && pow.count == 200
                && pole.cov() < 0.3
                && pow.cov() > 0.7
                && pow_err <= 0.15
                && matched
                && out.report.is_consistent();
            (
                ok,
                format!(
                    "PoLe mean {:.3}s cov {:.3}; PoW mean {:.3}s cov {:.3} ({:.1}% off target)",
                    pole.mean,
                    pole.cov(),
                    pow.mean,
                    pow.cov(),
                    100.0 * pow_err
                ),
            )
        },
    );
}

#[test]
fn c6_degenerate_config_block_time_is_training_time() {
    criterion(
        "6b",
        "zero latency, one miner: generation time is training time",
        secs(60),
        || {
            let cfg = SimConfig {
                blocks: 5,
                miners: 1,
                data_nodes: 2,
                wait_count: 1,
                latency: 0.0,
                ..SimConfig::default()
            };
            let out = run_simulation(&cfg).unwrap();
            let mismatches = out
                .stats
                .iter()
                .filter(|s| s.observer_training_time != Some(s.generation_time))
                .count();
            (
                mismatches == 0 && out.stats.len() == 5,
                format!("{mismatches} of {} heights differ", out.stats.len()),
            )
        },
    );
}

const POSTER: AccountId = AccountId(100);

struct Fixture {
    chain: Chain,
    prepared: PreparedTask,
    authority: LocalAuthority,
}

fn fixture() -> Fixture {
    let group = group_gen(32, 11).unwrap();
    let (train, test) = stratified_split(&iris(), 0.1, 3);
    let params = TaskTemplate::iris().params(TaskId(1), POSTER, 3).unwrap();
    let prepared = prepare_task(&params, &group, &train, &test, 17).unwrap();
    let chain = Chain::new(
        genesis_with_tasks(&[&prepared], SimTime::ZERO),
        AccountState::new([(POSTER, 1000 * UNITS_PER_TOKEN)]),
        RewardParams {
            block_reward: 2 * UNITS_PER_TOKEN,
        },
    )
    .unwrap();
    let mut authority = LocalAuthority::new();
    authority.insert(TaskId(1), prepared.keys.clone());
    Fixture {
        chain,
        prepared,
        authority,
    }
}

fn mine(f: &Fixture, miner: u32) -> MiningOutcome {
    let mut state = MinerState::new(AccountId(miner));
    let cfg = MiningConfig {
        seed: 9,
        ..MiningConfig::default()
    };
    pole_mine(
        &mut state,
        &f.chain,
        &f.chain.head_hash(),
        &f.authority,
        &cfg,
        &[],
    )
    .unwrap()
}

/// Flips each byte of `blk` in turn; true if every mutation either fails
/// to decode, changes the hash its child links to, or breaks the Merkle
/// commitment.
fn every_mutation_detected(blk: &Block, child: &Block) -> (bool, usize) {
    let bytes = blk.to_canonical_bytes();
    let mut undetected = 0;
    for i in 0..bytes.len() {
        let mut m = bytes.clone();
        m[i] ^= 0x01;
        let Ok(decoded) = Block::from_canonical_bytes(&m) else {
            continue;
        };
        if decoded.hash() == child.header.prev_hash && decoded.check_merkle().is_ok() {
            undetected += 1;
        }
    }
    (undetected == 0, bytes.len())
}

#[test]
fn c7_protocol_safety() {
    criterion("7", "protocol safety", secs(300), || {
        let mut notes = Vec::new();
        let mut ok = true;

        // (a) all-pairs verification of honest candidates, each verifier
        // building its own view.
        let f = fixture();
        let outs: Vec<_> = (1..=3).map(|m| mine(&f, m)).collect();
        let release =
            outs.iter().map(|o| o.emitted_at).max().unwrap() + SimTime::from_secs_f64(0.1);
        let test = f.prepared.release(release, POSTER);
        let phs = f.chain.head_hash();
        let task = f.chain.pending_tasks()[0].clone();
        let mut pairs = 0;
        for _verifier in 0..3 {
            let train = training_view(&f.chain, &task, &phs, &f.authority).unwrap();
            for o in &outs {
                pairs +=
                    usize::from(verify_block(&o.candidate, &phs, &task, &train, &test).is_ok());
            }
        }
        ok &= pairs == 9;
        notes.push(format!("(a) {pairs}/9 pairs verified"));

        // (b) candidates at or after the release are late.
        let train = training_view(&f.chain, &task, &phs, &f.authority).unwrap();
        let late = [SimTime::ZERO, SimTime(1), SimTime::from_secs_f64(5.0)]
            .iter()
            .all(|&d| {
                let mut b = outs[0].candidate.clone();
                b.header.timestamp = release + d;
                b.seal();
                verify_block(&b, &phs, &task, &train, &test) == Err(Rejection::LateTimestamp)
            });
        ok &= late;
        let _ = test_view(&task, &test, &phs, &f.authority).unwrap();

        // (c) 20 heights, 3 miners: identical heads everywhere.
        let sim = run_simulation(&SimConfig::default()).unwrap();
        let heads_agree = sim.heads.iter().all(|h| *h == sim.chain.head_hash());
        let late_rejected = sim.verifications.iter().all(|v| {
            let released = sim
                .stats
                .iter()
                .find(|s| s.height == v.height)
                .map(|s| s.released_at);
            v.rejection.is_none() || released.is_some_and(|r| v.timestamp.as_secs_f64() >= r)
        });
        ok &= heads_agree && late_rejected && sim.chain.height() == 20;
        notes.push(format!(
            "(b) late rejected {}; (c) {} nodes agree at height {}: {heads_agree}",
            late && late_rejected,
            sim.heads.len(),
            sim.chain.height()
        ));

        // (d) byte mutations of a historical block.
        let blocks = sim.chain.blocks();
        let (all_detected, n) = every_mutation_detected(&blocks[10], &blocks[11]);
        let mut tampered = blocks.to_vec();
        tampered[10].header.timestamp = tampered[10].header.timestamp + SimTime(1);
        let replay = Chain::from_blocks(
            tampered,
            AccountState::new((0..5).map(|i| (AccountId(i), 1000 * UNITS_PER_TOKEN))),
            *sim.chain.params(),
        );
        let broke = matches!(replay, Err(LedgerError::PrevHashMismatch { height: 11 }));
        ok &= all_detected && broke;
        notes.push(format!("(d) all {n} single-byte mutations detected {all_detected}, replay breaks at child {broke}"));
        (ok, notes.join("; "))
    });
}

#[test]
fn c8_reward_accounting() {
    criterion(
        "8",
        "ommer rewards and reservoir solvency",
        secs(300),
        || {
            let mut grid = 0;
            let mut mismatches = 0;
            for reward in [1.0, 2.0, 5.0, 12.5, 100.0] {
                for winner_height in [6u64, 10, 50] {
                    for gap in 1..=5u64 {
                        for count in 1..=4u32 {
                            grid += 1;
                            let want = reward
                                / ((winner_height - (winner_height - gap)) as f64 * count as f64);
                            let got =
                                ommer_reward(reward, winner_height, winner_height - gap, count)
                                    .unwrap();
                            if (got - want).abs() > 1e-12 * want {
                                mismatches += 1;
                            }
                        }
                    }
                }
            }
            let cfg = SimConfig::default();
            let sim = run_simulation(&cfg).unwrap();
            // Only data nodes are funded at genesis.
            let accounts = cfg.data_nodes as u32;
            let mut chain = Chain::new(
                sim.chain.blocks()[0].clone(),
                AccountState::new(
                    (0..accounts).map(|i| (AccountId(i), cfg.initial_balance * UNITS_PER_TOKEN)),
                ),
                *sim.chain.params(),
            )
            .unwrap();
            let mut solvent = usize::from(chain.state().check_solvency().is_ok());
            for b in &sim.chain.blocks()[1..] {
                chain.append(b.clone()).unwrap();
                solvent += usize::from(chain.state().check_solvency().is_ok());
            }
            let heights = sim.chain.blocks().len();
            (
                mismatches == 0 && solvent == heights,
                format!(
                    "{mismatches}/{grid} grid mismatches; solvent at {solvent}/{heights} heights"
                ),
            )
        },
    );
}

#[test]
fn c9_exp1_is_deterministic() {
    criterion(
        "9",
        "two exp1 runs at seed 42 are byte-identical",
        secs(300),
        || {
            let cfg = Exp1Config::default();
            assert_eq!(cfg.sim.seed, 42);
            let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
            for d in &dirs {
                exp1_block_time(&cfg).unwrap().write(d.path()).unwrap();
            }
            let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
            let chain_same = read(&dirs[0], "chain.bin") == read(&dirs[1], "chain.bin");
            let log_same = read(&dirs[0], "events.ndjson") == read(&dirs[1], "events.ndjson");
            let size = read(&dirs[0], "chain.bin").len();
            (
                chain_same && log_same,
                format!(
                    "chain ({size} bytes) identical {chain_same}, event log identical {log_same}"
                ),
            )
        },
    );
}
