//! Synthetic classification data with recorded label noise.
//!
//! Every dataset keeps both the observed labels and the true ones. Only the
//! observed labels reach the loss; the true labels serve evaluation and the
//! clean/noisy attention statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::backbone::checkpoint::{read_tensors, write_tensors};
use crate::error::{config_err, Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    /// Isotropic unit Gaussians; centers pairwise `separation` apart.
    Blobs,
    /// Interleaved half-circle arcs in the first two dimensions.
    TwoMoons,
    /// Concentric circles of radius `c + 1` in the first two dimensions.
    Rings,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "two-moons" | "moons" => Ok(Self::TwoMoons),
            "rings" => Ok(Self::Rings),
            _ => config_err(format!("unknown dataset kind {s:?}")),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::TwoMoons => "two-moons",
            Self::Rings => "rings",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    /// Blobs: distance between centers in units of sigma. Moons and rings:
    /// the jitter standard deviation is `1 / separation`.
    pub separation: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Blobs,
            classes: 3,
            train_per_class: 1000,
            test_per_class: 250,
            dim: 32,
            separation: 4.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Flip with probability `rho` to a uniformly chosen other class.
    Symmetric(f64),
    /// Flip with probability `rho` to class `(c + 1) mod C`.
    PairFlip(f64),
}

impl NoiseModel {
    pub fn rate(&self) -> f64 {
        match *self {
            Self::Symmetric(r) | Self::PairFlip(r) => r,
        }
    }
}

/// Features with observed and true labels and a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    features: Tensor,
    given: Vec<usize>,
    clean: Vec<usize>,
    noisy: Vec<bool>,
    train: Vec<usize>,
    test: Vec<usize>,
    classes: usize,
}

impl NoisyDataset {
    /// Assembles a dataset, checking every invariant. Test samples must
    /// carry their clean label.
    pub fn from_parts(
        features: Tensor,
        given: Vec<usize>,
        clean: Vec<usize>,
        train: Vec<usize>,
        test: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if given.len() != n || clean.len() != n {
            return Err(Error::Format(format!(
                "{n} samples but {} given and {} clean labels",
                given.len(),
                clean.len()
            )));
        }
        if given.iter().chain(&clean).any(|&c| c >= classes) {
            return Err(Error::Format(format!("label outside 0..{classes}")));
        }
        if train.iter().chain(&test).any(|&i| i >= n) {
            return Err(Error::Format("split index out of range".into()));
        }
        if test.iter().any(|&i| given[i] != clean[i]) {
            return Err(Error::Format("test labels must be clean".into()));
        }
        let noisy = given.iter().zip(&clean).map(|(g, c)| g != c).collect();
        Ok(Self {
            features,
            given,
            clean,
            noisy,
            train,
            test,
            classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }
    pub fn given(&self) -> &[usize] {
        &self.given
    }
    pub fn clean(&self) -> &[usize] {
        &self.clean
    }
    pub fn noisy(&self) -> &[bool] {
        &self.noisy
    }
    pub fn train(&self) -> &[usize] {
        &self.train
    }
    pub fn test(&self) -> &[usize] {
        &self.test
    }
    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn len(&self) -> usize {
        self.given.len()
    }
    pub fn is_empty(&self) -> bool {
        self.given.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn train_noise_count(&self) -> usize {
        self.train.iter().filter(|&&i| self.noisy[i]).count()
    }

    /// Keeps a random `fraction` of the training split, preserving order.
    pub fn subsample_train(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return config_err(format!("data fraction {fraction} outside (0, 1]"));
        }
        let keep = ((self.train.len() as f64 * fraction).round() as usize).max(1);
        let mut rng = stream(seed, Stream::Subsample);
        let mut picked = rand::seq::index::sample(&mut rng, self.train.len(), keep).into_vec();
        picked.sort_unstable();
        let mut out = self.clone();
        out.train = picked.into_iter().map(|i| self.train[i]).collect();
        Ok(out)
    }

    /// Writes one row per sample: split, labels, noise flag and features.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string(), "split".into(), "given".into(), "clean".into(), "noisy".into()];
        header.extend((0..self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        let mut split = vec![""; self.len()];
        self.train.iter().for_each(|&i| split[i] = "train");
        self.test.iter().for_each(|&i| split[i] = "test");
        for (i, part) in split.iter().enumerate() {
            let mut rec = vec![
                i.to_string(),
                part.to_string(),
                self.given[i].to_string(),
                self.clean[i].to_string(),
                u8::from(self.noisy[i]).to_string(),
            ];
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary export in the checkpoint container.
    pub fn save(&self, path: &Path, hash: u64) -> Result<()> {
        let as_tensor = |v: &[usize]| Tensor::vector(v.iter().map(|&x| x as f64).collect());
        let given = as_tensor(&self.given)?;
        let clean = as_tensor(&self.clean)?;
        let train = as_tensor(&self.train)?;
        let test = as_tensor(&self.test)?;
        let classes = Tensor::scalar(self.classes as f64)?;
        let mut file = BufWriter::new(File::create(path)?);
        write_tensors(
            &mut file,
            hash,
            &[
                ("features", &self.features),
                ("given", &given),
                ("clean", &clean),
                ("train", &train),
                ("test", &test),
                ("classes", &classes),
            ],
        )?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(u64, Self)> {
        let (hash, entries) = read_tensors(BufReader::new(File::open(path)?))?;
        let get = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("dataset file lacks {name}")))
        };
        let ints = |name: &str| -> Result<Vec<usize>> {
            get(name)?
                .data()
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Format(format!("{name}: {v} is not an index")))
                    }
                })
                .collect()
        };
        let classes = ints("classes")?.first().copied().unwrap_or(0);
        let ds = Self::from_parts(
            get("features")?.clone(),
            ints("given")?,
            ints("clean")?,
            ints("train")?,
            ints("test")?,
            classes,
        )?;
        Ok((hash, ds))
    }
}

/// Draws a noise-free dataset from `spec`. Samples are laid out by split,
/// then by class: all training samples first.
pub fn generate(spec: &DatasetSpec) -> Result<NoisyDataset> {
    let DatasetSpec {
        kind,
        classes,
        train_per_class,
        test_per_class,
        dim,
        separation,
        seed,
    } = *spec;
    if classes < 2 {
        return config_err(format!("need at least 2 classes, got {classes}"));
    }
    if train_per_class == 0 || test_per_class == 0 || dim == 0 {
        return config_err("per-class counts and dimension must be at least 1");
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return config_err(format!("separation must be positive, got {separation}"));
    }
    match kind {
        DatasetKind::Blobs if classes > dim => {
            return config_err(format!("blobs need dim >= classes ({dim} < {classes})"))
        }
        DatasetKind::TwoMoons | DatasetKind::Rings if dim < 2 => {
            return config_err(format!("{kind} needs at least 2 dimensions"))
        }
        _ => {}
    }
    let mut rng = stream(seed, Stream::Dataset);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let jitter = 1.0 / separation;
    let center_scale = separation / std::f64::consts::SQRT_2;
    let n = classes * (train_per_class + test_per_class);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for per_class in [train_per_class, test_per_class] {
        for c in 0..classes {
            for _ in 0..per_class {
                let start = data.len();
                match kind {
                    DatasetKind::Blobs => {
                        data.extend((0..dim).map(|_| unit.sample(&mut rng)));
                        data[start + c] += center_scale;
                    }
                    DatasetKind::TwoMoons => {
                        let t = rng.random_range(0.0..std::f64::consts::PI);
                        let (x, y) = if c % 2 == 0 {
                            (c as f64 + t.cos(), t.sin())
                        } else {
                            (c as f64 - t.cos(), 0.5 - t.sin())
                        };
                        data.push(x + jitter * unit.sample(&mut rng));
                        data.push(y + jitter * unit.sample(&mut rng));
                        data.extend((2..dim).map(|_| jitter * unit.sample(&mut rng)));
                    }
                    DatasetKind::Rings => {
                        let t = rng.random_range(0.0..std::f64::consts::TAU);
                        let r = (c + 1) as f64 + jitter * unit.sample(&mut rng);
                        data.push(r * t.cos());
                        data.push(r * t.sin());
                        data.extend((2..dim).map(|_| jitter * unit.sample(&mut rng)));
                    }
                }
                labels.push(c);
            }
        }
    }
    let n_train = classes * train_per_class;
    NoisyDataset::from_parts(
        Tensor::matrix(n, dim, data)?,
        labels.clone(),
        labels,
        (0..n_train).collect(),
        (n_train..n).collect(),
        classes,
    )
}

/// Corrupts training labels relative to the clean labels. Features and the
/// test split are left alone.
pub fn inject_noise(ds: &NoisyDataset, model: NoiseModel, seed: u64) -> Result<NoisyDataset> {
    let rho = model.rate();
    if !(0.0..=1.0).contains(&rho) {
        return config_err(format!("noise rate {rho} outside [0, 1]"));
    }
    let c = ds.classes;
    let mut rng = stream(seed, Stream::Noise);
    let mut out = ds.clone();
    for &i in &ds.train {
        let truth = ds.clean[i];
        let flip = rng.random::<f64>() < rho;
        out.given[i] = if !flip {
            truth
        } else {
            match model {
                NoiseModel::Symmetric(_) => {
                    let r = rng.random_range(0..c - 1);
                    if r >= truth {
                        r + 1
                    } else {
                        r
                    }
                }
                NoiseModel::PairFlip(_) => (truth + 1) % c,
            }
        };
        out.noisy[i] = out.given[i] != truth;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            train_per_class: 50,
            test_per_class: 10,
            dim: 5,
            ..Default::default()
        }
    }

    #[test]
    fn counts_per_class() {
        let ds = generate(&spec()).unwrap();
        assert_eq!(ds.len(), 3 * 60);
        for c in 0..3 {
            let tr = ds.train().iter().filter(|&&i| ds.clean()[i] == c).count();
            let te = ds.test().iter().filter(|&&i| ds.clean()[i] == c).count();
            assert_eq!((tr, te), (50, 10));
        }
        assert!(ds.noisy().iter().all(|&b| !b));
    }

    #[test]
    fn deterministic_from_seed() {
        for kind in [DatasetKind::Blobs, DatasetKind::TwoMoons, DatasetKind::Rings] {
            let s = DatasetSpec { kind, ..spec() };
            assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        }
        let other = DatasetSpec { seed: 1, ..spec() };
        assert_ne!(generate(&spec()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn far_blobs_are_nearest_centroid_separable() {
        let s = DatasetSpec {
            separation: 1e6,
            ..spec()
        };
        let ds = generate(&s).unwrap();
        let scale = 1e6 / std::f64::consts::SQRT_2;
        for i in 0..ds.len() {
            let row = ds.features().row(i);
            let pred = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = row.iter().enumerate().map(|(j, v)| (v - if j == a { scale } else { 0.0 }).powi(2)).sum();
                    let db: f64 = row.iter().enumerate().map(|(j, v)| (v - if j == b { scale } else { 0.0 }).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(pred, ds.clean()[i]);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&DatasetSpec { classes: 1, ..spec() }).is_err());
        assert!(generate(&DatasetSpec { train_per_class: 0, ..spec() }).is_err());
        assert!(generate(&DatasetSpec { classes: 6, ..spec() }).is_err());
        assert!(generate(&DatasetSpec { kind: DatasetKind::Rings, dim: 1, ..spec() }).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = generate(&spec()).unwrap();
        assert_eq!(inject_noise(&ds, NoiseModel::Symmetric(0.0), 3).unwrap(), ds);
    }

    #[test]
    fn full_symmetric_noise_flips_every_train_label() {
        let ds = generate(&spec()).unwrap();
        let noisy = inject_noise(&ds, NoiseModel::Symmetric(1.0), 3).unwrap();
        assert!(noisy.train().iter().all(|&i| noisy.given()[i] != noisy.clean()[i]));
        assert!(noisy.test().iter().all(|&i| noisy.given()[i] == noisy.clean()[i]));
        assert_eq!(noisy.features(), ds.features());
    }

    #[test]
    fn pairflip_goes_to_successor() {
        let ds = generate(&spec()).unwrap();
        let noisy = inject_noise(&ds, NoiseModel::PairFlip(1.0), 3).unwrap();
        assert!(noisy.train().iter().all(|&i| noisy.given()[i] == (noisy.clean()[i] + 1) % 3));
    }

    #[test]
    fn noise_rate_within_three_sigma() {
        let s = DatasetSpec {
            train_per_class: 5000,
            test_per_class: 1,
            classes: 2,
            dim: 2,
            ..Default::default()
        };
        let ds = generate(&s).unwrap();
        let noisy = inject_noise(&ds, NoiseModel::Symmetric(0.3), 17).unwrap();
        let frac = noisy.train_noise_count() as f64 / 10_000.0;
        // 3 * sqrt(0.3 * 0.7 / 10000) = 0.01375
        assert!((frac - 0.3).abs() <= 0.014, "{frac}");
    }

    #[test]
    fn noise_rate_out_of_range() {
        let ds = generate(&spec()).unwrap();
        assert!(inject_noise(&ds, NoiseModel::Symmetric(1.5), 0).is_err());
        assert!(inject_noise(&ds, NoiseModel::PairFlip(-0.1), 0).is_err());
    }

    #[test]
    fn mask_marks_mismatches_and_binary_round_trips() {
        let ds = inject_noise(&generate(&spec()).unwrap(), NoiseModel::Symmetric(0.4), 5).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.noisy()[i], ds.given()[i] != ds.clean()[i]);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.afm");
        ds.save(&p, 42).unwrap();
        let (h, back) = NoisyDataset::load(&p).unwrap();
        assert_eq!(h, 42);
        assert_eq!(back, ds);
        ds.write_csv(&dir.path().join("d.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
        assert_eq!(text.lines().count(), ds.len() + 1);
    }

    #[test]
    fn subsample_keeps_fraction() {
        let ds = generate(&spec()).unwrap();
        let sub = ds.subsample_train(0.2, 1).unwrap();
        assert_eq!(sub.train().len(), 30);
        assert!(sub.train().windows(2).all(|w| w[0] < w[1]));
        assert!(ds.subsample_train(0.0, 1).is_err());
    }
}
