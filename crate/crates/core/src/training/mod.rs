//! The joint training loop.
//!
//! Per minibatch: backbone features, then (in AFM mode) groups, attention
//! weights and interpolations; the loss is
//! `lambda * CE(f_c1(x'), y') + (1 - lambda) * CE(f_c2(x), y)` with both
//! terms averaged over their rows. Randomness comes from three separate
//! streams (init, data order, grouping) so that the baseline and AFM at
//! `lambda = 0` see identical batches and identical backbone updates.

mod config;
mod metrics;
mod optimizer;

pub use config::{Mode, TrainConfig};
pub use metrics::{EpochMetrics, MetricsLog, METRICS_HEADER};
pub use optimizer::sgd_update;

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};

use crate::autodiff::{Graph, Tensor, Var};
use crate::backbone::{Bindings, ClassifierPair, Head, Network, ParamStore};
use crate::data::NoisyDataset;
use crate::error::{config_err, Error, Result};
use crate::group_attend::{sample_groups, GaModule, RatioPolicy};
use crate::mixup::{interpolate, mix_with_weights, Interpolation};
use crate::rng::{Rng, RngStreams};

/// Network plus the attention module, all parameters in one store.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ParamStore,
    pub network: Network,
    /// Present in AFM mode only.
    pub ga: Option<GaModule>,
}

impl Model {
    /// Initializes the network first and the attention module second, so
    /// the network weights do not depend on the mode.
    pub fn new(config: &TrainConfig, input_dim: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        let network = Network::new(&mut params, &widths, classes, config.shared_classifiers, rng)?;
        let ga = match config.mode {
            Mode::Afm => Some(GaModule::new(
                &mut params,
                network.backbone.feature_dim(),
                config.group_size,
                config.interaction,
                config.projection,
                rng,
            )?),
            _ => None,
        };
        Ok(Self { params, network, ga })
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub model: Model,
    /// Momentum buffers, one per parameter, same shapes.
    pub velocity: Vec<Tensor>,
    pub rngs: RngStreams,
}

impl TrainState {
    pub fn init(config: &TrainConfig, input_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let mut rngs = RngStreams::new(config.seed);
        let model = Model::new(config, input_dim, classes, &mut rngs.init)?;
        let velocity = model
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Ok(Self {
            epoch: 0,
            step: 0,
            model,
            velocity,
            rngs,
        })
    }

    /// Applies one momentum-SGD update from the gradients held by `graph`.
    pub fn sgd_step(&mut self, graph: &Graph, bindings: &Bindings, config: &TrainConfig, lr: f64) -> Result<()> {
        let grads: Vec<Option<Tensor>> = self
            .model
            .params
            .ids()
            .map(|id| graph.grad(bindings.var(id)))
            .collect();
        sgd_update(
            &mut self.model.params,
            &mut self.velocity,
            &grads,
            lr,
            config.momentum,
            config.weight_decay,
        )?;
        self.step += 1;
        Ok(())
    }
}

/// Handles to the pieces of the joint loss.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub afm: Option<Var>,
    pub org: Var,
}

/// Builds the joint loss: soft-target cross-entropy of the interpolation
/// head on `interpolation`, hard-target cross-entropy of the original head
/// on `features`, mixed by `lambda`.
pub fn compute_loss(
    g: &mut Graph,
    classifiers: &ClassifierPair,
    b: &Bindings,
    features: Var,
    labels: Var,
    interpolation: Option<&Interpolation>,
    lambda: f64,
) -> Result<LossTerms> {
    if g.value(features).dims2()?.0 == 0 {
        return config_err("empty batch");
    }
    let z = classifiers.logits(g, b, features, Head::Original)?;
    let org = g.softmax_cross_entropy(z, labels)?;
    let Some(interp) = interpolation else {
        if lambda > 0.0 {
            return config_err("lambda > 0 needs interpolations");
        }
        return Ok(LossTerms {
            total: org,
            afm: None,
            org,
        });
    };
    if g.value(interp.features).dims2()?.0 == 0 {
        return config_err("lambda > 0 needs interpolations");
    }
    let z1 = classifiers.logits(g, b, interp.features, Head::Interpolation)?;
    let afm = g.softmax_cross_entropy(z1, interp.soft_labels)?;
    let a = g.scale(afm, lambda)?;
    let o = g.scale(org, 1.0 - lambda)?;
    let total = g.add(a, o)?;
    Ok(LossTerms {
        total,
        afm: Some(afm),
        org,
    })
}

/// One minibatch's full training graph.
pub struct BatchGraph {
    pub graph: Graph,
    pub bindings: Bindings,
    pub loss: LossTerms,
    pub features: Var,
    /// Softmax of the original head on the batch.
    pub original_probs: Var,
    pub interpolation: Option<Interpolation>,
}

fn beta_pair_weights(m: usize, beta: f64, rng: &mut Rng) -> Result<Tensor> {
    let dist = Beta::new(beta, beta).map_err(|e| Error::Config(format!("beta {beta}: {e}")))?;
    let mut w = Vec::with_capacity(2 * m);
    for _ in 0..m {
        let a: f64 = dist.sample(rng);
        w.push(a);
        w.push(1.0 - a);
    }
    Tensor::matrix(m, 2, w)
}

/// Builds the forward graph for a batch `x` with given labels, drawing any
/// groups and mixing weights from `grouping`.
pub fn build_batch_graph(
    model: &Model,
    config: &TrainConfig,
    x: &Tensor,
    given: &[usize],
    grouping: &mut Rng,
) -> Result<BatchGraph> {
    let classes = model.network.classifiers.classes();
    let n = given.len();
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let y = g.constant(Tensor::one_hot(given, classes)?);
    let features = model.network.backbone.extract_features(&mut g, &b, xv)?;
    let m = config.groups_per_batch.unwrap_or(n);

    let (interpolation, lambda) = match config.mode {
        Mode::Baseline => (None, 0.0),
        Mode::Afm => {
            let ga = model
                .ga
                .as_ref()
                .ok_or_else(|| Error::Config("AFM mode without an attention module".into()))?;
            let groups = sample_groups(given, m, config.group_size, config.ratio_policy, grouping)?;
            let att = ga.attend(&mut g, &b, features, &groups)?;
            (Some(interpolate(&mut g, features, y, &att, config.eps)?), config.lambda)
        }
        Mode::ManifoldMixup | Mode::StandardMixup => {
            let groups = sample_groups(given, m, 2, RatioPolicy::Random, grouping)?;
            let w = g.constant(beta_pair_weights(m, config.beta, grouping)?);
            let interp = if config.mode == Mode::ManifoldMixup {
                mix_with_weights(&mut g, features, y, &groups, w)?
            } else {
                let mut mixed = mix_with_weights(&mut g, xv, y, &groups, w)?;
                mixed.features = model.network.backbone.extract_features(&mut g, &b, mixed.features)?;
                mixed
            };
            (Some(interp), config.lambda)
        }
    };
    let loss = compute_loss(
        &mut g,
        &model.network.classifiers,
        &b,
        features,
        y,
        interpolation.as_ref(),
        lambda,
    )?;
    let original_probs = model
        .network
        .classifiers
        .classify(&mut g, &b, features, Head::Original)?;
    Ok(BatchGraph {
        graph: g,
        bindings: b,
        loss,
        features,
        original_probs,
        interpolation,
    })
}

#[derive(Default)]
struct AttentionTally {
    clean_sum: f64,
    clean_n: usize,
    noisy_sum: f64,
    noisy_n: usize,
}

impl AttentionTally {
    fn add(&mut self, g: &Graph, interp: &Interpolation, noisy: &[bool]) {
        let w = g.value(interp.weights);
        for (row, grp) in interp.groups.iter().enumerate() {
            let flags: Vec<bool> = grp.members.iter().map(|&i| noisy[i]).collect();
            if flags.iter().all(|&f| f) || flags.iter().all(|&f| !f) {
                continue;
            }
            for (&wk, &is_noisy) in w.row(row).iter().zip(&flags) {
                if is_noisy {
                    self.noisy_sum += wk;
                    self.noisy_n += 1;
                } else {
                    self.clean_sum += wk;
                    self.clean_n += 1;
                }
            }
        }
    }

    fn means(&self) -> (f64, f64) {
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        (mean(self.clean_sum, self.clean_n), mean(self.noisy_sum, self.noisy_n))
    }
}

/// Fraction of `indices` whose clean label the original head predicts.
pub fn clean_accuracy(model: &Model, ds: &NoisyDataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let x = ds.features().select_rows(indices)?;
    let pred = model.network.inference_predict(&model.params, &x)?;
    let hits = pred
        .iter()
        .zip(indices)
        .filter(|(p, &i)| **p == ds.clean()[i])
        .count();
    Ok(hits as f64 / indices.len() as f64)
}

/// Trains on the training split of `ds` and evaluates on its test split
/// after every epoch. Batches smaller than the group size are skipped in
/// every mode.
pub fn train(ds: &NoisyDataset, config: &TrainConfig) -> Result<(TrainState, MetricsLog)> {
    let mut state = TrainState::init(config, ds.dim(), ds.classes())?;
    let mut log = MetricsLog::default();
    let min_batch = config.group_size.max(2);
    let mut order = ds.train().to_vec();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.copy_from_slice(ds.train());
        order.shuffle(&mut state.rngs.data_order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut tally = AttentionTally::default();
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let x = ds.features().select_rows(chunk)?;
            let given: Vec<usize> = chunk.iter().map(|&i| ds.given()[i]).collect();
            let noisy: Vec<bool> = chunk.iter().map(|&i| ds.noisy()[i]).collect();
            let mut bg = build_batch_graph(&state.model, config, &x, &given, &mut state.rngs.grouping)?;
            if let Some(interp) = &bg.interpolation {
                tally.add(&bg.graph, interp, &noisy);
            }
            loss_sum += bg.graph.value(bg.loss.total).item()?;
            batches += 1;
            bg.graph.backward(bg.loss.total)?;
            state.sgd_step(&bg.graph, &bg.bindings, config, lr)?;
        }
        state.epoch = epoch + 1;
        let (mean_attn_clean, mean_attn_noisy) = tally.means();
        log.rows.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: if batches == 0 { f64::NAN } else { loss_sum / batches as f64 },
            test_acc: clean_accuracy(&state.model, ds, ds.test())?,
            mean_attn_clean,
            mean_attn_noisy,
            lr,
        });
    }
    Ok((state, log))
}

/// Runs one of the Beta-weighted mixup baselines.
pub fn run_comparison_mode(ds: &NoisyDataset, config: &TrainConfig) -> Result<(TrainState, MetricsLog)> {
    if !config.mode.is_beta_mixup() {
        return config_err(format!("{:?} is not a mixup comparison mode", config.mode));
    }
    train(ds, config)
}

#[cfg(test)]
mod tests;
