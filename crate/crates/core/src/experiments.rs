//! Block-time, secure-accuracy and SML-replacement experiments at desk
//! scale, with CSV output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::pow::{intervals, run_pow_chain, PowBlock, PowParams};
use crate::consensus::{
    build_candidate, test_view, training_view, verify_block, ConsensusError, LocalAuthority,
    Rejection, SmlView,
};
use crate::data::{default_data_dir, load_split, DataError, Dataset, DatasetKind};
use crate::fe::{group_gen, FeError};
use crate::hash::Hash256;
use crate::ledger::{AccountId, AccountState, Chain, LedgerError, RewardParams, Task, TaskId};
use crate::nn::{evaluate, ModelSolution, ModelSpec, NnError, Normalizer, Params, TrainingSession};
use crate::rng::{self, derive_seed};
use crate::simnet::{run_simulation, HeightStats, SimConfig, SimError, SimOutcome};
use crate::sml::{generate_for_shape, SmlError};
use crate::tasks::{genesis_with_tasks, prepare_task, TaskTemplate};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Sml(#[from] SmlError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// Mean, extremes and sample variance of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Unbiased (n - 1) estimator; zero for fewer than two values.
    pub variance: f64,
}

impl Summary {
    pub fn from_series(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                max: f64::NAN,
                min: f64::NAN,
                variance: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            variance,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Coefficient of variation.
    pub fn cov(&self) -> f64 {
        self.std_dev() / self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub mode: String,
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub label: String,
    pub source_hash: String,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    /// `None` when the block verified.
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BlockTimeRow<'a> {
    protocol: &'a str,
    index: usize,
    seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryRow<'a> {
    protocol: &'a str,
    count: usize,
    mean: f64,
    max: f64,
    min: f64,
    variance: f64,
    cov: f64,
}

/// Raw series plus the statistics derived from them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    /// Seconds per block, keyed by protocol.
    pub block_times: BTreeMap<String, Vec<f64>>,
    pub summaries: BTreeMap<String, Summary>,
    pub curves: Vec<EpochRow>,
    pub attack: Vec<AttackRow>,
}

impl ExperimentReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    pub fn add_block_times(&mut self, protocol: &str, times: Vec<f64>) {
        self.summaries
            .insert(protocol.to_string(), Summary::from_series(&times));
        self.block_times.insert(protocol.to_string(), times);
    }

    /// True when every summary matches a recomputation from its series.
    pub fn is_consistent(&self) -> bool {
        self.block_times.len() == self.summaries.len()
            && self.block_times.iter().all(|(k, v)| {
                let s = Summary::from_series(v);
                self.summaries.get(k).is_some_and(|t| {
                    t.count == s.count
                        && t.mean.to_bits() == s.mean.to_bits()
                        && t.variance.to_bits() == s.variance.to_bits()
                        && t.max == s.max
                        && t.min == s.min
                })
            })
    }

    /// Writes whichever of `block_times.csv`, `summary.csv`, `curves.csv`
    /// and `attack.csv` have content.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        create_dir(dir)?;
        let mut written = Vec::new();
        if !self.block_times.is_empty() {
            let path = dir.join("block_times.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for (protocol, times) in &self.block_times {
                for (i, &seconds) in times.iter().enumerate() {
                    w.serialize(BlockTimeRow {
                        protocol,
                        index: i + 1,
                        seconds,
                    })?;
                }
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            written.push(path);
            let path = dir.join("summary.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for (protocol, s) in &self.summaries {
                w.serialize(SummaryRow {
                    protocol,
                    count: s.count,
                    mean: s.mean,
                    max: s.max,
                    min: s.min,
                    variance: s.variance,
                    cov: s.cov(),
                })?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
        if !self.curves.is_empty() {
            written.push(write_rows(&dir.join("curves.csv"), &self.curves)?);
        }
        if !self.attack.is_empty() {
            written.push(write_rows(&dir.join("attack.csv"), &self.attack)?);
        }
        Ok(written)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

// ---------------------------------------------------------------------------
// Block time.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    pub sim: SimConfig,
    /// Expected PoW block time; the PoLe side is tuned to match.
    pub target_block_time: f64,
    pub pow_blocks: u64,
    /// Network-wide PoW hash trials per second.
    pub pow_hash_rate: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        // Tuned so the mean inter-block time sits near the PoW target.
        let mut task = TaskTemplate::iris();
        task.required_accuracy = 0.9;
        task.time_limit = 10.0;
        Self {
            sim: SimConfig {
                blocks: 30,
                latency: 0.05,
                release_delay: 0.05,
                seconds_per_step: 0.019,
                tasks: vec![task],
                ..SimConfig::default()
            },
            target_block_time: 2.0,
            pow_blocks: 200,
            pow_hash_rate: 1e6,
        }
    }
}

impl Exp1Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.sim.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct Exp1Output {
    pub report: ExperimentReport,
    pub pole: SimOutcome,
    pub pow: Vec<PowBlock>,
}

impl Exp1Output {
    pub fn pole_summary(&self) -> Summary {
        self.report.summaries["pole"]
    }

    pub fn pow_summary(&self) -> Summary {
        self.report.summaries["pow"]
    }

    /// CSVs, the PoLe chain file, the event log and per-height statistics.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = self.report.write_csv(dir)?;
        let chain = dir.join("chain.bin");
        self.pole.chain.write_file(&chain)?;
        written.push(chain);
        let events = dir.join("events.ndjson");
        self.pole.write_log(&events)?;
        written.push(events);
        written.push(write_rows::<HeightStats>(
            &dir.join("heights.csv"),
            &self.pole.stats,
        )?);
        Ok(written)
    }
}

/// PoLe inter-block times from a full network simulation next to a PoW
/// chain with the matched expected block time. Generation times (start of
/// a height to the winner's emission) are reported as `pole-generation`.
pub fn exp1_block_time(cfg: &Exp1Config) -> Result<Exp1Output> {
    let pole = run_simulation(&cfg.sim)?;
    let params = PowParams::for_expected_time(cfg.target_block_time, cfg.pow_hash_rate);
    let pow = run_pow_chain(
        &params,
        cfg.sim.miners as u32,
        cfg.pow_blocks,
        derive_seed(cfg.sim.seed, "pow", 0),
    );
    let mut report = ExperimentReport::new("exp1");
    report.add_block_times("pole", pole.block_intervals());
    report.add_block_times("pole-generation", pole.generation_times());
    report.add_block_times("pow", intervals(&pow));
    info!(
        "exp1: PoLe mean {:.3}s cov {:.3}; PoW mean {:.3}s cov {:.3}",
        report.summaries["pole"].mean,
        report.summaries["pole"].cov(),
        report.summaries["pow"].mean,
        report.summaries["pow"].cov()
    );
    Ok(Exp1Output { report, pole, pow })
}

// ---------------------------------------------------------------------------
// Shared setup for the accuracy experiments: one task posted in genesis, so
// the SML derives from a real chain head.

struct SecureSetup {
    chain: Chain,
    task: Task,
    release: crate::ledger::TestData,
    authority: LocalAuthority,
    train_plain: Dataset,
    test_plain: Dataset,
}

fn secure_setup(
    dataset: DatasetKind,
    template: &TaskTemplate,
    seed: u64,
    lambda: u32,
    data_dir: &Path,
) -> Result<SecureSetup> {
    let (train, test) = load_split(dataset, data_dir, seed)?;
    let group = group_gen(lambda, derive_seed(seed, "group", 0))?;
    let params = template.params(TaskId(1), AccountId(0), train.classes())?;
    let prepared = prepare_task(&params, &group, &train, &test, seed)?;
    let genesis = genesis_with_tasks(&[&prepared], SimTime::ZERO);
    let chain = Chain::new(
        genesis,
        AccountState::new([(AccountId(0), params.reward)]),
        RewardParams { block_reward: 0 },
    )?;
    let mut authority = LocalAuthority::new();
    authority.insert(TaskId(1), prepared.keys.clone());
    let task = chain.pending_tasks()[0].clone();
    Ok(SecureSetup {
        chain,
        task,
        release: prepared.release(SimTime::from_secs_f64(1e6), AccountId(0)),
        authority,
        train_plain: train,
        test_plain: test,
    })
}

struct Trained {
    /// Checkpoint with the highest training accuracy, as a miner would
    /// publish it.
    best: Params,
    best_train: f64,
    norm: Normalizer,
    final_train: f64,
    final_test: f64,
}

fn train_with_curves(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    seed: u64,
    mode: &str,
    curves: &mut Vec<EpochRow>,
) -> Result<Trained> {
    let norm = Normalizer::fit(train);
    let (train_n, test_n) = (norm.apply(train), norm.apply(test));
    let mut session = TrainingSession::new(spec, train_n, seed)?;
    let (mut train_acc, mut test_acc) = (0.0, 0.0);
    let (mut best, mut best_train) = (session.params.clone(), f64::NEG_INFINITY);
    for epoch in 1..=epochs {
        session.run_epoch()?;
        train_acc = session.train_accuracy();
        test_acc = evaluate(&session.params, &test_n);
        if train_acc > best_train {
            best = session.params.clone();
            best_train = train_acc;
        }
        curves.push(EpochRow {
            mode: mode.to_string(),
            epoch,
            train_accuracy: train_acc,
            test_accuracy: test_acc,
        });
    }
    Ok(Trained {
        best,
        best_train,
        norm,
        final_train: train_acc,
        final_test: test_acc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracyConfig {
    pub dataset: DatasetKind,
    /// Defaults to the dataset's preset.
    pub template: Option<TaskTemplate>,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: u32,
    pub data_dir: Option<PathBuf>,
    /// Replacement hashes tried by the SML-replacement experiment.
    pub replacements: usize,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self::for_dataset(DatasetKind::Iris)
    }
}

impl AccuracyConfig {
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            template: None,
            epochs: match dataset {
                DatasetKind::Iris => 400,
                DatasetKind::MnistSubset => 80,
            },
            seed: 42,
            lambda: 32,
            data_dir: None,
            replacements: 5,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    fn template(&self) -> TaskTemplate {
        self.template
            .clone()
            .unwrap_or_else(|| TaskTemplate::for_dataset(self.dataset))
    }

    fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(default_data_dir)
    }
}

#[derive(Debug, Clone)]
pub struct Exp2Output {
    pub report: ExperimentReport,
    pub secure_train: f64,
    pub original_train: f64,
    pub secure_test: f64,
    pub original_test: f64,
    /// Highest per-epoch test accuracy of the secure model.
    pub secure_best_test: f64,
    pub original_best_test: f64,
}

impl Exp2Output {
    /// First epoch at which the secure model's test accuracy reached
    /// `threshold`.
    pub fn secure_epochs_to(&self, threshold: f64) -> Option<usize> {
        self.report
            .curves
            .iter()
            .find(|r| r.mode == "secure" && r.test_accuracy >= threshold)
            .map(|r| r.epoch)
    }
}

fn best_test(curves: &[EpochRow], mode: &str) -> f64 {
    curves
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| r.test_accuracy)
        .fold(0.0, f64::max)
}

/// Secure (encrypted data through the SML) against original (plaintext)
/// training with the same seed and hidden layers.
pub fn exp2_secure_accuracy(cfg: &AccuracyConfig) -> Result<Exp2Output> {
    let template = cfg.template();
    let setup = secure_setup(
        cfg.dataset,
        &template,
        cfg.seed,
        cfg.lambda,
        &cfg.data_dir(),
    )?;
    let phs = setup.chain.head_hash();
    let train = training_view(&setup.chain, &setup.task, &phs, &setup.authority)?;
    let test = test_view(&setup.task, &setup.release, &phs, &setup.authority)?;

    let mut report = ExperimentReport::new("exp2");
    let seed = derive_seed(cfg.seed, "exp2", 0);
    let secure_spec = setup.task.model_spec.clone();
    let secure = train_with_curves(
        &secure_spec,
        &train.features,
        &test.features,
        cfg.epochs,
        seed,
        "secure",
        &mut report.curves,
    )?;
    let mut original_spec = secure_spec.clone();
    original_spec.layer_sizes[0] = setup.train_plain.dim();
    let original = train_with_curves(
        &original_spec,
        &setup.train_plain,
        &setup.test_plain,
        cfg.epochs,
        seed,
        "original",
        &mut report.curves,
    )?;
    info!(
        "exp2 {}: secure {:.4} original {:.4}",
        cfg.dataset, secure.final_test, original.final_test
    );
    Ok(Exp2Output {
        secure_best_test: best_test(&report.curves, "secure"),
        original_best_test: best_test(&report.curves, "original"),
        secure_train: secure.final_train,
        original_train: original.final_train,
        secure_test: secure.final_test,
        original_test: original.final_test,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct Replacement {
    pub source_hash: Hash256,
    /// Test accuracy of the trained network fed through this SML.
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    /// Outcome of verifying a block that carries the model under this SML.
    pub verdict: std::result::Result<(), Rejection>,
}

#[derive(Debug, Clone)]
pub struct Exp3Output {
    pub report: ExperimentReport,
    pub original: Replacement,
    /// The original hash used as its own replacement.
    pub identity: Replacement,
    pub replaced: Vec<Replacement>,
    pub classes: usize,
}

/// Trains a secure model under the SML of the chain head, then evaluates
/// the same network under SMLs derived from other hashes. Each evaluation
/// is paired with a block claiming that other hash as its parent and
/// carrying the model under the matching SML, which `verify_block` must
/// reject.
pub fn exp3_sml_replacement(cfg: &AccuracyConfig) -> Result<Exp3Output> {
    let template = cfg.template();
    let setup = secure_setup(
        cfg.dataset,
        &template,
        cfg.seed,
        cfg.lambda,
        &cfg.data_dir(),
    )?;
    let phs = setup.chain.head_hash();
    let train = training_view(&setup.chain, &setup.task, &phs, &setup.authority)?;
    let test = test_view(&setup.task, &setup.release, &phs, &setup.authority)?;
    let mut report = ExperimentReport::new("exp3");
    let trained = train_with_curves(
        &setup.task.model_spec,
        &train.features,
        &test.features,
        cfg.epochs,
        derive_seed(cfg.seed, "exp3", 0),
        "secure",
        &mut report.curves,
    )?;
    let model = ModelSolution {
        spec_id: setup.task.id.0,
        sml: train.sml.clone(),
        norm: trained.norm,
        params: trained.best,
        train_accuracy: trained.best_train,
    };

    let evaluate_under = |source: Hash256| -> Result<Replacement> {
        let (train_v, test_v): (SmlView, SmlView) = if source == phs {
            (train.clone(), test.clone())
        } else {
            (
                training_view(&setup.chain, &setup.task, &source, &setup.authority)?,
                test_view(&setup.task, &setup.release, &source, &setup.authority)?,
            )
        };
        let mut moved = model.clone();
        moved.sml = generate_for_shape(&source, setup.task.sml)?;
        let mut blk = build_candidate(
            &setup.chain,
            AccountId(1),
            setup.task.id,
            moved.clone(),
            SimTime::from_secs_f64(1.0),
            &[],
        );
        blk.header.prev_hash = source;
        blk.seal();
        Ok(Replacement {
            source_hash: source,
            test_accuracy: moved.accuracy(&test_v.features),
            train_accuracy: moved.accuracy(&train_v.features),
            verdict: verify_block(&blk, &source, &setup.task, &train_v, &setup.release),
        })
    };

    let original = evaluate_under(phs)?;
    let identity = evaluate_under(*original_hash(&model))?;
    let mut rng = rng::derived(cfg.seed, "replacement", 0);
    let mut replaced = Vec::with_capacity(cfg.replacements);
    for _ in 0..cfg.replacements {
        replaced.push(evaluate_under(Hash256::random(&mut rng))?);
    }
    let row = |label: String, r: &Replacement| AttackRow {
        label,
        source_hash: r.source_hash.to_hex(),
        test_accuracy: r.test_accuracy,
        train_accuracy: r.train_accuracy,
        rejection: r.verdict.as_ref().err().map(|e| e.to_string()),
    };
    report.attack.push(row("original".into(), &original));
    report.attack.push(row("identity".into(), &identity));
    for (i, r) in replaced.iter().enumerate() {
        report.attack.push(row(format!("replaced-{}", i + 1), r));
    }
    info!(
        "exp3 {}: original {:.4}, replaced {:?}",
        cfg.dataset,
        original.test_accuracy,
        replaced.iter().map(|r| r.test_accuracy).collect::<Vec<_>>()
    );
    Ok(Exp3Output {
        report,
        classes: setup.train_plain.classes(),
        original,
        identity,
        replaced,
    })
}

fn original_hash(model: &ModelSolution) -> &Hash256 {
    model.sml.source_hash()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::from_series(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.max, 4.0);
        assert_eq!(s.min, 1.0);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(Summary::from_series(&[7.0]).variance, 0.0);
        assert_eq!(Summary::from_series(&[]).count, 0);
    }

    #[test]
    fn report_consistency_and_csv() {
        let mut r = ExperimentReport::new("t");
        r.add_block_times("a", vec![1.0, 2.0]);
        assert!(r.is_consistent());
        r.summaries.get_mut("a").unwrap().mean = 9.0;
        assert!(!r.is_consistent());
        r.add_block_times("a", vec![1.0, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let files = r.write_csv(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().next().unwrap(), "protocol,index,seconds");
        assert_eq!(text.lines().count(), 3);
    }
}
