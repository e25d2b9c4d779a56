//! Attentive feature mixup (AFM) for learning from noisily labelled data.
//!
//! The crate contains everything needed to run the method end to end at
//! desk scale:
//!
//! - [`autodiff`]: dense `f64` tensors with a reverse-mode tape and a
//!   finite-difference gradient checker.
//! - [`backbone`]: the MLP feature extractor, the two classifier heads and
//!   checkpoint IO.
//! - [`group_attend`]: group sampling and the self-attention net that scores
//!   each group member.
//! - [`mixup`]: attention-weighted interpolation of features and labels.
//! - [`training`]: the joint loss, SGD with momentum and the training loop,
//!   including plain and mixup baselines.
//! - [`data`]: synthetic classification sets with recorded label noise.
//! - [`experiment`], [`analysis`] and [`verify`]: config files, sweeps,
//!   feature dumps and the built-in property suite used by the CLI.

pub mod analysis;
pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod error;
pub mod experiment;
pub mod group_attend;
pub mod mixup;
pub mod rng;
pub mod training;
pub mod verify;

pub use autodiff::{grad_check, GradCheckReport, Graph, Primitive, Tensor, Var};
pub use backbone::{Backbone, ClassifierPair, Head, Network, ParamId, ParamStore};
pub use data::{DatasetKind, DatasetSpec, NoiseModel, NoisyDataset};
pub use error::{Error, Result};
pub use experiment::ExperimentSpec;
pub use group_attend::{
    pure_noisy_group_ratio, sample_groups, AttentionOutput, GaModule, Group, GroupKind,
    Interaction, Projection, RatioPolicy,
};
pub use mixup::Interpolation;
pub use training::{train, Mode, MetricsLog, TrainConfig, TrainState};
