use crate::error::{config_err, Error, Result};
use crate::group_attend::{Interaction, Projection, RatioPolicy};
use crate::mixup::DEFAULT_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Group, attend, interpolate, train on both losses.
    Afm,
    /// Original samples only.
    Baseline,
    /// Pairs of raw inputs mixed with Beta weights.
    StandardMixup,
    /// Pairs of backbone features mixed with Beta weights.
    ManifoldMixup,
}

impl Mode {
    pub fn is_beta_mixup(self) -> bool {
        matches!(self, Mode::StandardMixup | Mode::ManifoldMixup)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "afm" => Ok(Self::Afm),
            "baseline" => Ok(Self::Baseline),
            "standard-mixup" => Ok(Self::StandardMixup),
            "manifold-mixup" => Ok(Self::ManifoldMixup),
            _ => config_err(format!(
                "unknown mode {s:?} (expected afm, baseline, standard-mixup or manifold-mixup)"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Afm => "afm",
            Self::Baseline => "baseline",
            Self::StandardMixup => "standard-mixup",
            Self::ManifoldMixup => "manifold-mixup",
        })
    }
}

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the interpolation loss; `1 - lambda` goes to the original loss.
    pub lambda: f64,
    pub group_size: usize,
    /// Groups per minibatch; `None` means one per sample in the batch.
    pub groups_per_batch: Option<usize>,
    pub interaction: Interaction,
    pub projection: Projection,
    pub shared_classifiers: bool,
    pub ratio_policy: RatioPolicy,
    /// Backbone widths after the input layer; the last is the feature dim.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Beta(beta, beta) parameter for the mixup baselines.
    pub beta: f64,
    /// Guard added to the attention-weight sum.
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.75,
            group_size: 2,
            groups_per_batch: None,
            interaction: Interaction::Sum,
            projection: Projection::Distinct,
            shared_classifiers: true,
            ratio_policy: RatioPolicy::Random,
            hidden: vec![64, 32],
            batch_size: 128,
            epochs: 100,
            lr: 0.05,
            lr_decay: 0.1,
            lr_decay_every: 40,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            mode: Mode::Afm,
            beta: 1.0,
            eps: DEFAULT_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return config_err(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if self.group_size < 2 {
            return config_err(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.mode.is_beta_mixup() && self.group_size != 2 {
            return config_err("the Beta mixup baselines mix pairs; set group_size = 2");
        }
        if self.batch_size < self.group_size {
            return config_err(format!(
                "batch_size {} is smaller than group_size {}",
                self.batch_size, self.group_size
            ));
        }
        if self.groups_per_batch == Some(0) {
            return config_err("groups_per_batch must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return config_err("hidden widths must be nonempty and positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) || self.lr_decay_every == 0 {
            return config_err("lr_decay must be positive and lr_decay_every at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config_err("weight_decay must be nonnegative");
        }
        if self.mode.is_beta_mixup() && !(self.beta > 0.0 && self.beta.is_finite()) {
            return config_err(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return config_err("eps must be nonnegative");
        }
        if let RatioPolicy::Fixed(r) = self.ratio_policy {
            if !(0.0..=1.0).contains(&r) {
                return config_err(format!("intra ratio {r} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}
