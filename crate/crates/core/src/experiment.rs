//! Experiment files: a training config, a dataset recipe, replicate seeds
//! and an output directory, stored as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional and falls back to its default; unknown keys, repeated keys and
//! malformed values are rejected with the offending line number.
//!
//! | key | default | values |
//! |---|---|---|
//! | `mode` | `afm` | `afm`, `baseline`, `standard-mixup`, `manifold-mixup` |
//! | `lambda` | `0.75` | `[0, 1]` |
//! | `group_size` | `2` | `>= 2` |
//! | `groups_per_batch` | `batch` | `batch` (one per sample) or a count |
//! | `interaction` | `sum` | `concat`, `sum`, `mul` |
//! | `projection` | `distinct` | `distinct`, `shared`, `none` |
//! | `shared_classifiers` | `true` | `true`, `false` |
//! | `intra_ratio` | `random` | `random` or a fraction of intra-class groups |
//! | `hidden` | `64,32` | comma-separated widths |
//! | `batch_size` | `128` | |
//! | `epochs` | `100` | |
//! | `lr` | `0.05` | |
//! | `lr_decay` | `0.1` | multiplier |
//! | `lr_decay_every` | `40` | epochs |
//! | `momentum` | `0.9` | |
//! | `weight_decay` | `0.0005` | |
//! | `beta` | `1` | Beta parameter of the mixup baselines |
//! | `eps` | `1e-12` | attention normalization guard |
//! | `dataset` | `blobs` | `blobs`, `two-moons`, `rings` |
//! | `classes` | `3` | |
//! | `train_per_class` | `1000` | |
//! | `test_per_class` | `250` | |
//! | `dim` | `32` | |
//! | `separation` | `4` | |
//! | `dataset_seed` | `0` | |
//! | `noise` | `symmetric` | `symmetric`, `pairflip` |
//! | `noise_rate` | `0.4` | |
//! | `data_fraction` | `1` | fraction of the training split kept |
//! | `seeds` | `0` | comma-separated, distinct |
//! | `out` | `runs` | output directory |
//!
//! Replicate seed `s` trains with `seed = s` on the dataset, noise draw and
//! subsample seeded with `dataset_seed + s`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::checkpoint::config_hash;
use crate::data::{generate, inject_noise, DatasetKind, DatasetSpec, NoiseModel, NoisyDataset};
use crate::error::{config_err, Error, Result};
use crate::group_attend::{Interaction, Projection, RatioPolicy};
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "mode",
    "lambda",
    "group_size",
    "groups_per_batch",
    "interaction",
    "projection",
    "shared_classifiers",
    "intra_ratio",
    "hidden",
    "batch_size",
    "epochs",
    "lr",
    "lr_decay",
    "lr_decay_every",
    "momentum",
    "weight_decay",
    "beta",
    "eps",
    "dataset",
    "classes",
    "train_per_class",
    "test_per_class",
    "dim",
    "separation",
    "dataset_seed",
    "noise",
    "noise_rate",
    "data_fraction",
    "seeds",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub noise: NoiseModel,
    pub data_fraction: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            noise: NoiseModel::Symmetric(0.4),
            data_fraction: 1.0,
            seeds: vec![0],
            out: PathBuf::from("runs"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn keyed<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) if !msg.starts_with(key) => Error::Config(format!("{key}: {msg}")),
        other => other,
    })
}

impl ExperimentSpec {
    /// Parses experiment text, starting from the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) && KEYS.contains(&key) {
                return Err(at(format!("{key}: set more than once")));
            }
            spec.set(key, value).map_err(|e| match e {
                Error::Config(msg) => at(msg),
                other => other,
            })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key. Does not validate the spec as a whole.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.dataset;
        match key {
            "mode" => t.mode = keyed(key, value.parse())?,
            "lambda" => t.lambda = parse_num(key, value)?,
            "group_size" => t.group_size = parse_num(key, value)?,
            "groups_per_batch" => {
                t.groups_per_batch = match value {
                    "batch" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "interaction" => t.interaction = keyed(key, value.parse::<Interaction>())?,
            "projection" => t.projection = keyed(key, value.parse::<Projection>())?,
            "shared_classifiers" => t.shared_classifiers = parse_num(key, value)?,
            "intra_ratio" => {
                t.ratio_policy = match value {
                    "random" => RatioPolicy::Random,
                    v => RatioPolicy::Fixed(parse_num(key, v)?),
                }
            }
            "hidden" => t.hidden = parse_list(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "lr_decay" => t.lr_decay = parse_num(key, value)?,
            "lr_decay_every" => t.lr_decay_every = parse_num(key, value)?,
            "momentum" => t.momentum = parse_num(key, value)?,
            "weight_decay" => t.weight_decay = parse_num(key, value)?,
            "beta" => t.beta = parse_num(key, value)?,
            "eps" => t.eps = parse_num(key, value)?,
            "dataset" => d.kind = keyed(key, value.parse::<DatasetKind>())?,
            "classes" => d.classes = parse_num(key, value)?,
            "train_per_class" => d.train_per_class = parse_num(key, value)?,
            "test_per_class" => d.test_per_class = parse_num(key, value)?,
            "dim" => d.dim = parse_num(key, value)?,
            "separation" => d.separation = parse_num(key, value)?,
            "dataset_seed" => d.seed = parse_num(key, value)?,
            "noise" => {
                let rate = self.noise.rate();
                self.noise = match value {
                    "symmetric" => NoiseModel::Symmetric(rate),
                    "pairflip" => NoiseModel::PairFlip(rate),
                    _ => return config_err(format!("noise: unknown model {value:?} (expected symmetric or pairflip)")),
                }
            }
            "noise_rate" => {
                let r = parse_num(key, value)?;
                self.noise = match self.noise {
                    NoiseModel::Symmetric(_) => NoiseModel::Symmetric(r),
                    NoiseModel::PairFlip(_) => NoiseModel::PairFlip(r),
                }
            }
            "data_fraction" => self.data_fraction = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return config_err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return config_err("seeds: at least one seed is required");
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return config_err("seeds: values must be distinct");
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return config_err(format!("data_fraction: {} outside (0, 1]", self.data_fraction));
        }
        if !(0.0..=1.0).contains(&self.noise.rate()) {
            return config_err(format!("noise_rate: {} outside [0, 1]", self.noise.rate()));
        }
        let d = &self.dataset;
        if d.classes < 2 || d.train_per_class == 0 || d.test_per_class == 0 || d.dim == 0 {
            return config_err("dataset: need classes >= 2 and positive counts and dim");
        }
        Ok(())
    }

    /// Every key with its current value, one per line in [`KEYS`] order.
    /// Parsing the result gives back an equal spec.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        let t = &self.train;
        let d = &self.dataset;
        match key {
            "mode" => t.mode.to_string(),
            "lambda" => t.lambda.to_string(),
            "group_size" => t.group_size.to_string(),
            "groups_per_batch" => t.groups_per_batch.map_or("batch".into(), |m| m.to_string()),
            "interaction" => t.interaction.to_string(),
            "projection" => t.projection.to_string(),
            "shared_classifiers" => t.shared_classifiers.to_string(),
            "intra_ratio" => match t.ratio_policy {
                RatioPolicy::Random => "random".into(),
                RatioPolicy::Fixed(r) => r.to_string(),
            },
            "hidden" => join(&t.hidden),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "lr_decay" => t.lr_decay.to_string(),
            "lr_decay_every" => t.lr_decay_every.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "beta" => t.beta.to_string(),
            "eps" => t.eps.to_string(),
            "dataset" => d.kind.to_string(),
            "classes" => d.classes.to_string(),
            "train_per_class" => d.train_per_class.to_string(),
            "test_per_class" => d.test_per_class.to_string(),
            "dim" => d.dim.to_string(),
            "separation" => d.separation.to_string(),
            "dataset_seed" => d.seed.to_string(),
            "noise" => match self.noise {
                NoiseModel::Symmetric(_) => "symmetric".into(),
                NoiseModel::PairFlip(_) => "pairflip".into(),
            },
            "noise_rate" => self.noise.rate().to_string(),
            "data_fraction" => self.data_fraction.to_string(),
            "seeds" => join(&self.seeds),
            "out" => self.out.display().to_string(),
            _ => unreachable!("not a key: {key}"),
        }
    }

    /// Training config of replicate `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    /// Seed used for the dataset, noise and subsample of replicate `seed`.
    pub fn data_seed(&self, seed: u64) -> u64 {
        self.dataset.seed.wrapping_add(seed)
    }

    /// Generates, corrupts and subsamples the dataset of replicate `seed`.
    pub fn build_dataset(&self, seed: u64) -> Result<NoisyDataset> {
        let s = self.data_seed(seed);
        let clean = generate(&DatasetSpec { seed: s, ..self.dataset.clone() })?;
        let noisy = inject_noise(&clean, self.noise, s)?;
        if self.data_fraction < 1.0 {
            noisy.subsample_train(self.data_fraction, s)
        } else {
            Ok(noisy)
        }
    }

    /// Hash of the replicate's canonical text with `out` left out, stored
    /// in checkpoints and dataset files written by that replicate.
    pub fn replicate_hash(&self, seed: u64) -> u64 {
        let one = Self {
            seeds: vec![seed],
            out: PathBuf::new(),
            ..self.clone()
        };
        config_hash(&one.to_text())
    }
}
