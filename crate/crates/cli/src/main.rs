//! `afm`: train, sweep and inspect attentive feature mixup models.
//!
//! Exit codes: 0 success, 1 failed verification or failed sweep runs,
//! 2 bad config or incompatible inputs, 3 numeric failure during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afm_core::analysis::{self, Axis};
use afm_core::autodiff::set_fault_flip_matmul_grad;
use afm_core::data::NoisyDataset;
use afm_core::verify;
use afm_core::{Error, ExperimentSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afm", version, about = "Attentive feature mixup experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every replicate seed; writes metrics.csv, model.ckpt and dataset.bin.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated; overrides `seeds` from the config.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Train over a grid of values of one config key; writes summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// lambda, group-size, interaction, intra-inter-ratio or data-fraction.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Closed-form against sampled frequency of all-noisy groups.
    NoiseRatio {
        #[arg(long)]
        noisy: u64,
        #[arg(long)]
        total: u64,
        #[arg(long, default_value_t = 1)]
        k_min: u64,
        #[arg(long, default_value_t = 6)]
        k_max: u64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Backbone features of a dataset plus attention-mixed interpolations.
    DumpFeatures {
        /// Config the checkpoint was trained with.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replicate seed the checkpoint belongs to; defaults to the first seed.
        #[arg(long)]
        replicate: Option<u64>,
        #[arg(long, default_value_t = 0)]
        interpolations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the property suite.
    Verify {
        /// Test hook: negate the matmul gradient so the gradient checks fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Shape(_) => 1,
        Error::Config(_) | Error::Format(_) | Error::Io(_) | Error::Csv(_) => 2,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("afm: {e}");
    ExitCode::from(exit_code(&e))
}

fn load_spec(config: &Path, out: Option<PathBuf>, seeds: Option<String>) -> afm_core::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_file(config)?;
    if let Some(out) = out {
        spec.out = out;
    }
    if let Some(seeds) = seeds {
        spec.set("seeds", &seeds)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_train(config: PathBuf, out: Option<PathBuf>, seeds: Option<String>) -> afm_core::Result<ExitCode> {
    let spec = load_spec(&config, out, seeds)?;
    for &seed in &spec.seeds {
        let dir = analysis::replicate_dir(&spec, seed);
        let (_, log) = analysis::run_replicate(&spec, seed, Some(&dir))?;
        match log.final_accuracy() {
            Some(acc) => println!("seed {seed}: final test accuracy {acc:.4} ({})", dir.display()),
            None => println!("seed {seed}: no epochs run ({})", dir.display()),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(config: PathBuf, axis: String, values: String, out: Option<PathBuf>, seeds: Option<String>) -> afm_core::Result<ExitCode> {
    let spec = load_spec(&config, out, seeds)?;
    let axis: Axis = axis.parse()?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    let threads = analysis::sweep_threads()?;
    let report = analysis::sweep(&spec, axis, &values, threads)?;
    for r in &report.rows {
        println!(
            "{axis}={}: mean {:.4} stdev {:.4} over {} runs, {} failed",
            r.value, r.mean_acc, r.stdev_acc, r.n_runs, r.n_failed
        );
    }
    for f in &report.failures {
        eprintln!("afm: run {axis}={} seed {} failed: {}", f.value, f.seed, f.message);
    }
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_noise_ratio(noisy: u64, total: u64, k_min: u64, k_max: u64, trials: u64, seed: u64, out: Option<PathBuf>) -> afm_core::Result<ExitCode> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::Config(format!("need 1 <= k-min <= k-max, got {k_min}..{k_max}")));
    }
    let ks: Vec<u64> = (k_min..=k_max).collect();
    let rows = analysis::noise_ratio_table(noisy, total, &ks, trials, seed)?;
    match out {
        Some(path) => analysis::write_noise_ratio_csv(std::fs::File::create(path)?, &rows)?,
        None => analysis::write_noise_ratio_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_dump_features(
    config: PathBuf,
    checkpoint: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
    replicate: Option<u64>,
    interpolations: usize,
    seed: u64,
) -> afm_core::Result<ExitCode> {
    let spec = ExperimentSpec::from_file(&config)?;
    let rep = replicate.unwrap_or(spec.seeds[0]);
    let (hash, ds) = NoisyDataset::load(&dataset)
        .map_err(|e| Error::Config(format!("cannot load dataset {}: {e}", dataset.display())))?;
    if hash != spec.replicate_hash(rep) {
        return Err(Error::Config(format!(
            "{} was not written by this config and seed {rep}",
            dataset.display()
        )));
    }
    let model = analysis::load_model(&spec, rep, &ds, &checkpoint)?;
    let rows = analysis::dump_features(&model, &ds, interpolations, seed, spec.train.eps, &out)?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(inject_fault: bool) -> ExitCode {
    set_fault_flip_matmul_grad(inject_fault);
    let results = verify::run_all();
    for r in &results {
        println!(
            "{} {:<34} {} ({:.1}s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
            r.seconds
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    println!("{} of {} properties passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("afm: failed properties: {}", failed.join(", "));
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out, seeds } => cmd_train(config, out, seeds),
        Command::Sweep { config, axis, values, out, seeds } => cmd_sweep(config, axis, values, out, seeds),
        Command::NoiseRatio { noisy, total, k_min, k_max, trials, seed, out } => {
            cmd_noise_ratio(noisy, total, k_min, k_max, trials, seed, out)
        }
        Command::DumpFeatures { config, checkpoint, dataset, out, replicate, interpolations, seed } => {
            cmd_dump_features(config, checkpoint, dataset, out, replicate, interpolations, seed)
        }
        Command::Verify { inject_fault } => return cmd_verify(inject_fault),
    };
    result.unwrap_or_else(fail)
}
