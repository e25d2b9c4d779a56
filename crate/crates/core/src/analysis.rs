//! Experiment drivers behind the CLI: single runs, ablation sweeps, the
//! pure-noisy-group table and feature dumps for external plotting.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::autodiff::Graph;
use crate::backbone::checkpoint;
use crate::data::NoisyDataset;
use crate::error::{config_err, Error, Result};
use crate::experiment::ExperimentSpec;
use crate::group_attend::{pure_noisy_group_ratio, sample_groups, RatioPolicy};
use crate::mixup::interpolate;
use crate::rng::{stream, Stream};
use crate::training::{train, MetricsLog, Model, TrainState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DATASET_FILE: &str = "dataset.bin";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Trains replicate `seed` of `spec`. With a directory, writes the metrics,
/// the final checkpoint and the dataset there.
pub fn run_replicate(spec: &ExperimentSpec, seed: u64, dir: Option<&Path>) -> Result<(TrainState, MetricsLog)> {
    let ds = spec.build_dataset(seed)?;
    let (state, log) = train(&ds, &spec.train_config(seed))?;
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        let hash = spec.replicate_hash(seed);
        log.save(&dir.join(METRICS_FILE))?;
        checkpoint::save(&dir.join(CHECKPOINT_FILE), hash, &state.model.params)?;
        ds.save(&dir.join(DATASET_FILE), hash)?;
    }
    Ok((state, log))
}

/// Output directory of replicate `seed`: `out` itself when the spec has a
/// single seed, `out/seed=<s>` otherwise.
pub fn replicate_dir(spec: &ExperimentSpec, seed: u64) -> PathBuf {
    if spec.seeds.len() == 1 {
        spec.out.clone()
    } else {
        spec.out.join(format!("seed={seed}"))
    }
}

/// Rebuilds the model of replicate `seed` from a checkpoint written for it.
pub fn load_model(spec: &ExperimentSpec, seed: u64, ds: &NoisyDataset, path: &Path) -> Result<Model> {
    let (hash, entries) = checkpoint::load(path)?;
    if hash != spec.replicate_hash(seed) {
        return config_err(format!(
            "{} was not written by this config and seed {seed}",
            path.display()
        ));
    }
    let config = spec.train_config(seed);
    let mut rng = stream(seed, Stream::Init);
    let mut model = Model::new(&config, ds.dim(), ds.classes(), &mut rng)?;
    model
        .params
        .load_entries(entries)
        .map_err(|e| Error::Config(format!("checkpoint does not fit the dataset: {e}")))?;
    Ok(model)
}

/// Config key swept by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Lambda,
    GroupSize,
    Interaction,
    IntraInterRatio,
    DataFraction,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "group-size" => Ok(Self::GroupSize),
            "interaction" => Ok(Self::Interaction),
            "intra-inter-ratio" => Ok(Self::IntraInterRatio),
            "data-fraction" => Ok(Self::DataFraction),
            _ => config_err(format!(
                "unknown axis {s:?} (expected lambda, group-size, interaction, intra-inter-ratio or data-fraction)"
            )),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lambda => "lambda",
            Self::GroupSize => "group-size",
            Self::Interaction => "interaction",
            Self::IntraInterRatio => "intra-inter-ratio",
            Self::DataFraction => "data-fraction",
        })
    }
}

impl Axis {
    pub fn key(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::GroupSize => "group_size",
            Self::Interaction => "interaction",
            Self::IntraInterRatio => "intra_ratio",
            Self::DataFraction => "data_fraction",
        }
    }

    /// `base` with this axis set to `value`, validated.
    pub fn apply(self, base: &ExperimentSpec, value: &str) -> Result<ExperimentSpec> {
        let mut spec = base.clone();
        spec.set(self.key(), value)?;
        spec.validate()
            .map_err(|e| Error::Config(format!("{self}={value}: {e}")))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub mean_acc: f64,
    /// Sample standard deviation; 0 for a single run.
    pub stdev_acc: f64,
    pub n_runs: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub value: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<RunFailure>,
}

/// Mean and sample standard deviation.
pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Worker count for sweeps: `AFM_THREADS` if set, else the core count.
pub fn sweep_threads() -> Result<usize> {
    match std::env::var("AFM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => config_err(format!("AFM_THREADS must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every (value, seed) pair and writes
/// `out/<axis>=<value>/seed=<s>/metrics.csv` per run plus `out/summary.csv`.
/// Failed runs are recorded and do not stop the sweep.
pub fn sweep(base: &ExperimentSpec, axis: Axis, values: &[String], threads: usize) -> Result<SweepReport> {
    if values.is_empty() {
        return config_err("sweep needs at least one value");
    }
    let specs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| base.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;
    let outcomes: Vec<std::result::Result<f64, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let dir = base.out.join(format!("{axis}={}", values[i])).join(format!("seed={seed}"));
                let run = || -> Result<f64> {
                    let ds = specs[i].build_dataset(seed)?;
                    let (_, log) = train(&ds, &specs[i].train_config(seed))?;
                    fs::create_dir_all(&dir)?;
                    log.save(&dir.join(METRICS_FILE))?;
                    Ok(log.final_accuracy().unwrap_or(f64::NAN))
                };
                run().map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut report = SweepReport::default();
    for (i, value) in values.iter().enumerate() {
        let mut accs = Vec::new();
        let mut failed = 0;
        for (&(j, seed), outcome) in jobs.iter().zip(&outcomes) {
            if j != i {
                continue;
            }
            match outcome {
                Ok(acc) => accs.push(*acc),
                Err(message) => {
                    failed += 1;
                    report.failures.push(RunFailure { value: value.clone(), seed, message: message.clone() });
                }
            }
        }
        let (mean_acc, stdev_acc) = mean_stdev(&accs);
        report.rows.push(SweepRow {
            value: value.clone(),
            mean_acc,
            stdev_acc,
            n_runs: accs.len(),
            n_failed: failed,
        });
    }
    write_summary(&base.out.join(SUMMARY_FILE), axis, &report.rows)?;
    Ok(report)
}

pub fn write_summary(path: &Path, axis: Axis, rows: &[SweepRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["axis", "value", "mean_acc", "stdev_acc", "n_runs", "n_failed"])?;
    for r in rows {
        w.write_record([
            axis.to_string(),
            r.value.clone(),
            r.mean_acc.to_string(),
            r.stdev_acc.to_string(),
            r.n_runs.to_string(),
            r.n_failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseRatioRow {
    pub k: u64,
    pub closed_form: f64,
    pub empirical: f64,
    pub diff: f64,
    /// Binomial standard error of the empirical frequency.
    pub sigma: f64,
    /// `|diff| <= 3 sigma`.
    pub pass: bool,
}

/// Closed-form against sampled frequency of groups made only of noisy
/// samples, for a pool of `n_total` with `n_noisy` mislabeled. Groups come
/// from the training sampler with `trials` groups per `k`.
pub fn noise_ratio_table(n_noisy: u64, n_total: u64, ks: &[u64], trials: u64, seed: u64) -> Result<Vec<NoiseRatioRow>> {
    if trials == 0 {
        return config_err("trials must be at least 1");
    }
    let mut rng = stream(seed, Stream::Analysis);
    ks.iter()
        .map(|&k| {
            let closed_form = pure_noisy_group_ratio(n_noisy, n_total, k)?;
            let labels = vec![0; n_total as usize];
            let groups = sample_groups(&labels, trials as usize, k as usize, RatioPolicy::Random, &mut rng)?;
            let hits = groups
                .iter()
                .filter(|grp| grp.members.iter().all(|&i| (i as u64) < n_noisy))
                .count();
            let empirical = hits as f64 / trials as f64;
            let sigma = (closed_form * (1.0 - closed_form) / trials as f64).sqrt();
            let diff = empirical - closed_form;
            Ok(NoiseRatioRow { k, closed_form, empirical, diff, sigma, pass: diff.abs() <= 3.0 * sigma })
        })
        .collect()
}

pub fn write_noise_ratio_csv<W: std::io::Write>(out: W, rows: &[NoiseRatioRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["k", "closed_form", "empirical", "diff", "sigma", "pass"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.closed_form.to_string(),
            r.empirical.to_string(),
            r.diff.to_string(),
            r.sigma.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes backbone features of every sample in `ds`, then `interpolations`
/// attention-mixed rows built from random groups of training samples.
/// Returns the number of rows written.
pub fn dump_features(model: &Model, ds: &NoisyDataset, interpolations: usize, seed: u64, eps: f64, path: &Path) -> Result<usize> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, false);
    let x = g.constant(ds.features().clone());
    let feats = model.network.backbone.extract_features(&mut g, &b, x)?;
    let fv = g.value(feats).clone();
    let (n, d) = fv.dims2()?;
    let c = ds.classes();

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let mut header: Vec<String> = ["index", "split", "given", "clean", "is_noisy", "is_interpolation", "members", "attention"]
        .map(String::from)
        .to_vec();
    header.extend((0..d).map(|j| format!("f{j}")));
    header.extend((0..c).map(|j| format!("y{j}")));
    w.write_record(&header)?;

    let mut split = vec!["none"; n];
    for &i in ds.train() {
        split[i] = "train";
    }
    for &i in ds.test() {
        split[i] = "test";
    }
    for (i, part) in split.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            part.to_string(),
            ds.given()[i].to_string(),
            ds.clean()[i].to_string(),
            ds.noisy()[i].to_string(),
            "false".into(),
            String::new(),
            String::new(),
        ];
        rec.extend(fv.row(i).iter().map(f64::to_string));
        rec.extend((0..c).map(|j| if j == ds.given()[i] { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }

    if interpolations > 0 {
        let ga = model
            .ga
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no attention module; only 0 interpolations possible".into()))?;
        let train = ds.train();
        let given: Vec<usize> = train.iter().map(|&i| ds.given()[i]).collect();
        let mut rng = stream(seed, Stream::Analysis);
        let groups = sample_groups(&given, interpolations, ga.group_size(), RatioPolicy::Random, &mut rng)?;
        let train_feats = g.gather_rows(feats, train.to_vec())?;
        let labels = g.constant(crate::autodiff::Tensor::one_hot(&given, c)?);
        let att = ga.attend(&mut g, &b, train_feats, &groups)?;
        let interp = interpolate(&mut g, train_feats, labels, &att, eps)?;
        for r in interp.records(&g) {
            let members: Vec<String> = r.group.members.iter().map(|&p| train[p].to_string()).collect();
            let mut rec = vec![
                String::new(),
                "train".into(),
                String::new(),
                String::new(),
                String::new(),
                "true".into(),
                members.join(";"),
                r.weights.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            ];
            rec.extend(r.feature.iter().map(f64::to_string));
            rec.extend(r.soft_label.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(n + interpolations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentSpec {
        ExperimentSpec::parse(
            "train_per_class = 20\ntest_per_class = 5\ndim = 4\nclasses = 2\nhidden = 6,3\nbatch_size = 16\nepochs = 2",
        )
        .unwrap()
    }

    #[test]
    fn stdev_is_sample_stdev() {
        assert_eq!(mean_stdev(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_stdev(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_stdev(&[]).0.is_nan());
    }

    #[test]
    fn axes_parse_and_validate_values() {
        let base = tiny();
        let axis: Axis = "group-size".parse().unwrap();
        assert_eq!(axis.apply(&base, "3").unwrap().train.group_size, 3);
        assert!(axis.apply(&base, "1").is_err());
        assert!("temperature".parse::<Axis>().is_err());
        let r: Axis = "intra-inter-ratio".parse().unwrap();
        assert!(r.apply(&base, "random").is_ok());
        assert!(r.apply(&base, "1.5").is_err());
    }

    #[test]
    fn k1_ratio_is_the_noise_fraction() {
        let rows = noise_ratio_table(200, 1000, &[1, 2], 2000, 0).unwrap();
        assert_eq!(rows[0].closed_form, 0.2);
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
        assert!(noise_ratio_table(10, 5, &[1], 10, 0).is_err());
        assert!(noise_ratio_table(1, 5, &[1], 0, 0).is_err());
    }

    #[test]
    fn dump_row_count_and_determinism() {
        let spec = tiny();
        let dir = tempfile::tempdir().unwrap();
        let (state, _) = run_replicate(&spec, 0, Some(dir.path())).unwrap();
        let (_, ds) = NoisyDataset::load(&dir.path().join(DATASET_FILE)).unwrap();
        let model = load_model(&spec, 0, &ds, &dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(model.params, state.model.params);
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        assert_eq!(dump_features(&model, &ds, 7, 1, 1e-12, &a).unwrap(), ds.len() + 7);
        dump_features(&model, &ds, 7, 1, 1e-12, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        assert_eq!(text.lines().count(), 1 + ds.len() + 7);
        dump_features(&model, &ds, 0, 1, 1e-12, &a).unwrap();
        assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 1 + ds.len());
        assert!(load_model(&spec, 1, &ds, &dir.path().join(CHECKPOINT_FILE)).is_err());
    }
}
