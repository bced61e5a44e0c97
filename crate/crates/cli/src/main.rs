use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use pole_core::data::DatasetKind;
use pole_core::experiments::{
    exp1_block_time, exp2_secure_accuracy, exp3_sml_replacement, AccuracyConfig, Exp1Config,
    ExperimentReport, Summary,
};
use pole_core::ledger::{read_chain_file, Block};
use pole_core::simnet::{run_simulation, SimConfig};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "pole",
    version,
    about = "Proof-of-Learning simulator and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block-time stability, PoLe against PoW.
    Exp1(NetArgs),
    /// Accuracy of secure training against plaintext training.
    Exp2(AccuracyArgs),
    /// Accuracy and verification under replaced mapping layers.
    Exp3(AccuracyArgs),
    /// Run the network simulation and write its chain and event log.
    Run(NetArgs),
    /// Print the header of a block from a chain file.
    InspectBlock {
        chain: PathBuf,
        /// Defaults to the head.
        #[arg(long)]
        height: Option<u64>,
    },
}

#[derive(Args)]
struct NetArgs {
    /// TOML file; for `exp1` the simulation settings sit under `[sim]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    blocks: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AccuracyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// `println!` that exits quietly when stdout is closed, e.g. piped into
/// `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if writeln!(std::io::stdout().lock(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn apply_net_overrides(sim: &mut SimConfig, args: &NetArgs) {
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(blocks) = args.blocks {
        sim.blocks = blocks;
    }
}

fn accuracy_config(args: &AccuracyArgs, default: DatasetKind) -> Result<AccuracyConfig> {
    let mut cfg = match &args.config {
        Some(path) => AccuracyConfig::from_toml_str(&read_to_string(path)?)?,
        None => AccuracyConfig::for_dataset(args.dataset.unwrap_or(default)),
    };
    if let Some(d) = args.dataset {
        cfg.dataset = d;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    Ok(cfg)
}

fn print_summary(name: &str, s: &Summary) {
    say!(
        "{name:>15}  n={:<4} mean={:.4}s max={:.4}s min={:.4}s var={:.6} cov={:.4}",
        s.count,
        s.mean,
        s.max,
        s.min,
        s.variance,
        s.cov()
    );
}

fn print_written(files: &[PathBuf]) {
    for f in files {
        say!("wrote {}", f.display());
    }
}

fn exp1(args: &NetArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => Exp1Config::from_toml_str(&read_to_string(path)?)?,
        None => Exp1Config::default(),
    };
    apply_net_overrides(&mut cfg.sim, args);
    let out = exp1_block_time(&cfg)?;
    for (name, s) in &out.report.summaries {
        print_summary(name, s);
    }
    print_written(&out.write(&args.out)?);
    Ok(())
}

fn run(args: &NetArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    apply_net_overrides(&mut cfg, args);
    let outcome = run_simulation(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let chain = args.out.join("chain.bin");
    outcome.chain.write_file(&chain)?;
    let events = args.out.join("events.ndjson");
    outcome.write_log(&events)?;
    let mut report = ExperimentReport::new("run");
    report.add_block_times("pole", outcome.block_intervals());
    report.add_block_times("pole-generation", outcome.generation_times());
    for (name, s) in &report.summaries {
        print_summary(name, s);
    }
    let mut files = report.write_csv(&args.out)?;
    files.push(chain);
    files.push(events);
    print_written(&files);
    Ok(())
}

fn exp2(args: &AccuracyArgs) -> Result<()> {
    let cfg = accuracy_config(args, DatasetKind::Iris)?;
    let out = exp2_secure_accuracy(&cfg)?;
    say!(
        "{} after {} epochs: secure test {:.4} (best {:.4}), original test {:.4} (best {:.4})",
        cfg.dataset,
        cfg.epochs,
        out.secure_test,
        out.secure_best_test,
        out.original_test,
        out.original_best_test
    );
    print_written(&out.report.write_csv(&args.out)?);
    Ok(())
}

fn exp3(args: &AccuracyArgs) -> Result<()> {
    let cfg = accuracy_config(args, DatasetKind::MnistSubset)?;
    let out = exp3_sml_replacement(&cfg)?;
    for row in &out.report.attack {
        say!(
            "{:>12}  {}  test {:.4}  train {:.4}  {}",
            row.label,
            &row.source_hash[..16],
            row.test_accuracy,
            row.train_accuracy,
            row.rejection.as_deref().unwrap_or("verified")
        );
    }
    print_written(&out.report.write_csv(&args.out)?);
    Ok(())
}

fn block_json(b: &Block) -> serde_json::Value {
    let h = &b.header;
    json!({
        "height": h.height,
        "hash": b.hash().to_hex(),
        "prev_hash": h.prev_hash.to_hex(),
        "winner": h.winner.0,
        "task": h.task_id.map(|t| t.0),
        "timestamp_us": h.timestamp.micros(),
        "train_accuracy": h.train_accuracy,
        "test_accuracy": h.test_accuracy,
        "sml_source": h.model.as_ref().map(|m| m.sml.source_hash().to_hex()),
        "ommers": h.ommer_hashes.iter().map(|o| o.to_hex()).collect::<Vec<_>>(),
        "merkle_root": h.merkle_root.to_hex(),
        "transactions": b.body.transactions.len(),
        "pending_tasks": b.body.pending_tasks.iter().map(|t| t.id.0).collect::<Vec<_>>(),
        "ciphertext_batches": b.body.new_ciphertext_data.len(),
    })
}

fn inspect_block(chain: &Path, height: Option<u64>) -> Result<()> {
    let blocks = read_chain_file(chain)?;
    let Some(last) = blocks.last() else {
        bail!("{} holds no blocks", chain.display());
    };
    let b = match height {
        None => last,
        Some(h) => blocks
            .iter()
            .find(|b| b.height() == h)
            .with_context(|| format!("no block at height {h}"))?,
    };
    say!("{}", serde_json::to_string_pretty(&block_json(b))?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Exp1(a) => exp1(a),
        Command::Exp2(a) => exp2(a),
        Command::Exp3(a) => exp3(a),
        Command::Run(a) => run(a),
        Command::InspectBlock { chain, height } => inspect_block(chain, *height),
    }?;
    info!("done");
    Ok(())
}
