//! The built-in property suite behind `afm verify`.
//!
//! Each check is a plain function with its sizes as arguments so the
//! acceptance tests can call it with their own parameters; [`run_all`]
//! runs the release-gate configuration and reports one line per property.

use std::time::Instant;

use rand::Rng as _;

use crate::analysis::noise_ratio_table;
use crate::autodiff::{grad_check, Graph, Tensor, Var};
use crate::backbone::checkpoint::{read_tensors, write_tensors};
use crate::backbone::{Bindings, ParamStore};
use crate::data::{generate, inject_noise, DatasetSpec, NoiseModel};
use crate::error::Result;
use crate::group_attend::{pure_noisy_group_ratio, sample_groups, GaModule, Group, Interaction, Projection, RatioPolicy};
use crate::mixup::interpolate;
use crate::rng::{stream, Rng, Stream};
use crate::training::{build_batch_graph, compute_loss, train, Mode, Model, TrainConfig, TrainState};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;

/// Outcome of one named property.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite by construction")
}

/// Values bounded away from zero so relu kinks are not hit.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite by construction")
}

fn row_stochastic(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.05..1.0)).collect();
    for r in data.chunks_mut(cols) {
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::matrix(rows, cols, data).expect("finite by construction")
}

/// `sum(out * r)` for a fixed random `r`, so every output coordinate
/// contributes with its own weight.
fn project(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    if g.value(out).is_scalar() {
        return Ok(out);
    }
    let c = g.constant(r.clone());
    let m = g.mul(out, c)?;
    g.sum(m)
}

type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "add_bias",
    "scale",
    "mul",
    "concat",
    "sum",
    "mean",
    "relu",
    "sigmoid",
    "softmax",
    "log",
    "gather_rows",
    "mix_rows",
    "normalize_rows",
    "softmax_cross_entropy",
];

fn primitive_case(name: &str, rng: &mut Rng) -> (Vec<Tensor>, Case) {
    let n = rng.random_range(1..4);
    let d = rng.random_range(1..4);
    let reduce = |rng: &mut Rng, shape: &[usize]| uniform(rng, shape, -1.0, 1.0);
    match name {
        "matmul" => {
            let k = rng.random_range(1..4);
            let r = reduce(rng, &[n, d]);
            let pt = vec![uniform(rng, &[n, k], -1.0, 1.0), uniform(rng, &[k, d], -1.0, 1.0)];
            (pt, Box::new(move |g, v| { let o = g.matmul(v[0], v[1])?; project(g, o, &r) }))
        }
        "add" | "mul" => {
            let r = reduce(rng, &[n, d]);
            let pt = vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[n, d], -1.0, 1.0)];
            if name == "add" {
                (pt, Box::new(move |g, v| { let o = g.add(v[0], v[1])?; project(g, o, &r) }))
            } else {
                (pt, Box::new(move |g, v| { let o = g.mul(v[0], v[1])?; project(g, o, &r) }))
            }
        }
        "add_bias" => {
            let r = reduce(rng, &[n, d]);
            let pt = vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[d], -1.0, 1.0)];
            (pt, Box::new(move |g, v| { let o = g.add_bias(v[0], v[1])?; project(g, o, &r) }))
        }
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            let r = reduce(rng, &[n, d]);
            (vec![uniform(rng, &[n, d], -1.0, 1.0)], Box::new(move |g, v| { let o = g.scale(v[0], c)?; project(g, o, &r) }))
        }
        "concat" => {
            let d2 = rng.random_range(1..4);
            let r = reduce(rng, &[n, d + d2]);
            let pt = vec![uniform(rng, &[n, d], -1.0, 1.0), uniform(rng, &[n, d2], -1.0, 1.0)];
            (pt, Box::new(move |g, v| { let o = g.concat(&[v[0], v[1]])?; project(g, o, &r) }))
        }
        "sum" => (vec![uniform(rng, &[n, d], -1.0, 1.0)], Box::new(|g, v| g.sum(v[0]))),
        "mean" => (vec![uniform(rng, &[n, d], -1.0, 1.0)], Box::new(|g, v| g.mean(v[0]))),
        "relu" => {
            let r = reduce(rng, &[n, d]);
            (vec![away_from_zero(rng, &[n, d])], Box::new(move |g, v| { let o = g.relu(v[0])?; project(g, o, &r) }))
        }
        "sigmoid" => {
            let r = reduce(rng, &[n, d]);
            (vec![uniform(rng, &[n, d], -3.0, 3.0)], Box::new(move |g, v| { let o = g.sigmoid(v[0])?; project(g, o, &r) }))
        }
        "softmax" => {
            let r = reduce(rng, &[n, d]);
            (vec![uniform(rng, &[n, d], -3.0, 3.0)], Box::new(move |g, v| { let o = g.softmax(v[0])?; project(g, o, &r) }))
        }
        "log" => {
            let r = reduce(rng, &[n, d]);
            (vec![uniform(rng, &[n, d], 0.5, 2.0)], Box::new(move |g, v| { let o = g.log(v[0])?; project(g, o, &r) }))
        }
        "gather_rows" => {
            let rows: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..n)).collect();
            let r = reduce(rng, &[rows.len(), d]);
            (vec![uniform(rng, &[n, d], -1.0, 1.0)], Box::new(move |g, v| { let o = g.gather_rows(v[0], rows.clone())?; project(g, o, &r) }))
        }
        "mix_rows" => {
            let k = rng.random_range(2..4);
            let m = rng.random_range(1..4);
            let rows = n + 2;
            let idx: Vec<usize> = (0..m * k).map(|_| rng.random_range(0..rows)).collect();
            let r = reduce(rng, &[m, d]);
            let pt = vec![uniform(rng, &[rows, d], -1.0, 1.0), uniform(rng, &[m, k], 0.0, 1.0)];
            (pt, Box::new(move |g, v| { let o = g.mix_rows(v[0], v[1], idx.clone(), k)?; project(g, o, &r) }))
        }
        "normalize_rows" => {
            let k = rng.random_range(2..4);
            let r = reduce(rng, &[n, k]);
            (vec![uniform(rng, &[n, k], 0.1, 1.0)], Box::new(move |g, v| { let o = g.normalize_rows(v[0], 1e-12)?; project(g, o, &r) }))
        }
        "softmax_cross_entropy" => {
            let c = rng.random_range(2..5);
            let pt = vec![uniform(rng, &[n, c], -3.0, 3.0), row_stochastic(rng, n, c)];
            (pt, Box::new(|g, v| g.softmax_cross_entropy(v[0], v[1])))
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Worst relative gradient error of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStats {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Gradient checks of every primitive at `points` random points each.
pub fn grad_check_primitives(points: usize, seed: u64) -> Result<Vec<GradStats>> {
    let mut rng = stream(seed, Stream::Analysis);
    PRIMITIVES
        .iter()
        .map(|&name| {
            let mut s = GradStats { name: name.to_string(), max_rel_error: 0.0, checked: 0, skipped: 0 };
            for _ in 0..points {
                let (pt, f) = primitive_case(name, &mut rng);
                let rep = grad_check(f, &pt, GRAD_EPS)?;
                s.max_rel_error = s.max_rel_error.max(rep.max_rel_error);
                s.checked += rep.checked;
                s.skipped += rep.skipped.len();
            }
            Ok(s)
        })
        .collect()
}

/// Gradient checks of the complete AFM loss with respect to every
/// parameter, at `points` random small models, batches and groupings.
/// Cycles through the interaction and projection variants.
pub fn grad_check_afm_loss(points: usize, seed: u64) -> Result<GradStats> {
    let mut rng = stream(seed, Stream::Analysis);
    let mut s = GradStats { name: "afm_loss".into(), max_rel_error: 0.0, checked: 0, skipped: 0 };
    let interactions = [Interaction::Concat, Interaction::Sum, Interaction::Mul];
    let projections = [Projection::Distinct, Projection::Shared, Projection::None];
    for t in 0..points {
        let k = 2 + t % 2;
        let n = 5;
        let classes = 3;
        let config = TrainConfig {
            lambda: rng.random_range(0.0..1.0),
            group_size: k,
            interaction: interactions[t % 3],
            projection: projections[(t / 3) % 3],
            shared_classifiers: t % 2 == 0,
            hidden: vec![4, 3],
            ..TrainConfig::default()
        };
        let model = Model::new(&config, 3, classes, &mut rng)?;
        let x = uniform(&mut rng, &[n, 3], -1.0, 1.0);
        let given: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let groups = sample_groups(&given, 4, k, RatioPolicy::Random, &mut rng)?;
        let y = Tensor::one_hot(&given, classes)?;
        let point: Vec<Tensor> = model.params.iter().map(|(_, v)| v.clone()).collect();
        let f = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
            let b = Bindings::from_vars(vars.to_vec());
            let xv = g.constant(x.clone());
            let yv = g.constant(y.clone());
            let feats = model.network.backbone.extract_features(g, &b, xv)?;
            let ga = model.ga.as_ref().expect("afm mode");
            let att = ga.attend(g, &b, feats, &groups)?;
            let interp = interpolate(g, feats, yv, &att, config.eps)?;
            let loss = compute_loss(g, &model.network.classifiers, &b, feats, yv, Some(&interp), config.lambda)?;
            Ok(loss.total)
        };
        let rep = grad_check(f, &point, GRAD_EPS)?;
        s.max_rel_error = s.max_rel_error.max(rep.max_rel_error);
        s.checked += rep.checked;
        s.skipped += rep.skipped.len();
    }
    Ok(s)
}

fn pair_weights(store: &ParamStore, ga: &GaModule, x: &Tensor, members: Vec<usize>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let b = store.bind(&mut g, false);
    let f = g.constant(x.clone());
    let grp = Group::new(members, &vec![0; x.dims2()?.0])?;
    let att = ga.attend(&mut g, &b, f, &[grp])?;
    Ok(g.value(att.weights).data().to_vec())
}

/// Counts, over `trials` random modules and member pairs, how often
/// swapping the two members leaves the weight vector bit-identical and how
/// often it changes some weight by more than `1e-9`.
pub fn swap_trials(projection: Projection, interaction: Interaction, trials: usize, seed: u64) -> Result<(usize, usize)> {
    let mut rng = stream(seed, Stream::Analysis);
    let (mut same, mut differ) = (0, 0);
    for _ in 0..trials {
        let d = 32;
        let mut store = ParamStore::new();
        let ga = GaModule::new(&mut store, d, 2, interaction, projection, &mut rng)?;
        let x = uniform(&mut rng, &[2, d], 0.0, 2.0);
        let a = pair_weights(&store, &ga, &x, vec![0, 1])?;
        let b = pair_weights(&store, &ga, &x, vec![1, 0])?;
        if a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()) {
            same += 1;
        }
        if a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-9) {
            differ += 1;
        }
    }
    Ok((same, differ))
}

/// Worst deviations over `count` interpolations from random modules.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexStats {
    pub count: usize,
    pub min_label: f64,
    pub max_sum_error: f64,
    /// Pairs only: distance of the reconstructed coefficient from `[0, 1]`.
    pub max_coeff_violation: f64,
    /// Pairs only: residual of `x'` against its reconstruction from the
    /// two members, relative to the member spread.
    pub max_hull_residual: f64,
    pub pairs: usize,
}

/// Generates `count` interpolations with group sizes 2 to 4 and records
/// simplex and convex-hull deviations.
pub fn simplex_trials(count: usize, seed: u64) -> Result<SimplexStats> {
    let mut rng = stream(seed, Stream::Analysis);
    let mut st = SimplexStats {
        count: 0,
        min_label: f64::INFINITY,
        max_sum_error: 0.0,
        max_coeff_violation: 0.0,
        max_hull_residual: 0.0,
        pairs: 0,
    };
    let per_batch = 250;
    let mut b = 0;
    while st.count < count {
        let k = 2 + b % 3;
        b += 1;
        let m = per_batch.min(count - st.count);
        let (n, d, c) = (16, 5, 4);
        let mut store = ParamStore::new();
        let ga = GaModule::new(&mut store, d, k, Interaction::Sum, Projection::Distinct, &mut rng)?;
        // Random output biases move the weights away from 1/2.
        let bias = ga.output_layer().bias;
        store.set(bias, uniform(&mut rng, &[k], -2.0, 2.0))?;
        let x = uniform(&mut rng, &[n, d], 0.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let soft = row_stochastic(&mut rng, n, c);
        let groups = sample_groups(&labels, m, k, RatioPolicy::Random, &mut rng)?;
        let mut g = Graph::new();
        let bnd = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let yv = g.constant(if b % 2 == 0 { Tensor::one_hot(&labels, c)? } else { soft });
        let att = ga.attend(&mut g, &bnd, xv, &groups)?;
        let interp = interpolate(&mut g, xv, yv, &att, crate::mixup::DEFAULT_EPS)?;
        for r in interp.records(&g) {
            st.count += 1;
            st.min_label = r.soft_label.iter().copied().fold(st.min_label, f64::min);
            let sum: f64 = r.soft_label.iter().sum();
            st.max_sum_error = st.max_sum_error.max((sum - 1.0).abs());
            if k == 2 {
                st.pairs += 1;
                let (xi, xj) = (x.row(r.group.members[0]), x.row(r.group.members[1]));
                let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
                let norm2: f64 = diff.iter().map(|v| v * v).sum();
                let rel: Vec<f64> = r.feature.iter().zip(xj).map(|(a, b)| a - b).collect();
                let coeff = rel.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() / norm2;
                st.max_coeff_violation = st.max_coeff_violation.max((-coeff).max(coeff - 1.0).max(0.0));
                let resid = rel
                    .iter()
                    .zip(&diff)
                    .map(|(a, b)| (a - coeff * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                st.max_hull_residual = st.max_hull_residual.max(resid / norm2.sqrt());
            }
        }
    }
    Ok(st)
}

/// `prod_t (n_noisy - t) / (n_total - t)` as an exact integer fraction, then
/// rounded once to the nearest `f64`.
pub fn exact_pure_ratio(n_noisy: u64, n_total: u64, k: u64) -> f64 {
    if n_noisy < k {
        return 0.0;
    }
    let (mut num, mut den) = (1u128, 1u128);
    for t in 0..k {
        num *= (n_noisy - t) as u128;
        den *= (n_total - t) as u128;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    num as f64 / den as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn small_dataset(seed: u64, per_class: usize, test_per_class: usize) -> Result<crate::data::NoisyDataset> {
    let spec = DatasetSpec {
        train_per_class: per_class,
        test_per_class,
        dim: 8,
        seed,
        ..DatasetSpec::default()
    };
    inject_noise(&generate(&spec)?, NoiseModel::Symmetric(0.4), seed)
}

/// Trains briefly, then compares `inference_predict` with the argmax of
/// the original head inside a training graph, on the first `samples`
/// samples. Returns (matching predictions, bit-identical probability rows).
pub fn inference_equivalence(samples: usize, epochs: usize, seed: u64) -> Result<(usize, usize)> {
    let per_class = samples.div_ceil(3);
    let ds = small_dataset(seed, per_class, 10)?;
    let config = TrainConfig { epochs, seed, hidden: vec![16, 8], ..TrainConfig::default() };
    let (state, _) = train(&ds, &config)?;
    let rows: Vec<usize> = (0..samples).collect();
    let x = ds.features().select_rows(&rows)?;
    let given: Vec<usize> = rows.iter().map(|&i| ds.given()[i]).collect();
    let fast = state.model.network.inference_predict(&state.model.params, &x)?;
    let fast_p = state.model.network.predict_proba(&state.model.params, &x, crate::backbone::Head::Original)?;
    let bg = build_batch_graph(&state.model, &config, &x, &given, &mut stream(seed, Stream::Grouping))?;
    let slow_p = bg.graph.value(bg.original_probs);
    let slow = slow_p.argmax_rows()?;
    let matches = fast.iter().zip(&slow).filter(|(a, b)| a == b).count();
    let identical = (0..samples)
        .filter(|&i| fast_p.row(i).iter().zip(slow_p.row(i)).all(|(a, b)| a.to_bits() == b.to_bits()))
        .count();
    Ok((matches, identical))
}

/// Two training runs with the same config; true if their metrics CSV
/// text is byte-identical.
pub fn determinism(config: &TrainConfig, seed: u64) -> Result<bool> {
    let ds = small_dataset(seed, 60, 20)?;
    let (_, a) = train(&ds, config)?;
    let (_, b) = train(&ds, config)?;
    Ok(a.to_csv_string() == b.to_csv_string())
}

/// Largest `|total - (lambda * afm + (1 - lambda) * org)|` over `trials`
/// random lambdas, with the three losses computed in separate graphs.
pub fn lambda_linearity(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Stream::Analysis);
    let ds = small_dataset(seed, 10, 2)?;
    let x = ds.features().select_rows(&ds.train()[..16])?;
    let given: Vec<usize> = ds.train()[..16].iter().map(|&i| ds.given()[i]).collect();
    let base = TrainConfig { hidden: vec![6, 4], ..TrainConfig::default() };
    let state = TrainState::init(&base, ds.dim(), ds.classes())?;
    let mut worst: f64 = 0.0;
    let mut baseline = state.model.clone();
    baseline.ga = None;
    let base_cfg = TrainConfig { mode: Mode::Baseline, lambda: 0.0, ..base.clone() };
    for _ in 0..trials {
        let grouping = stream(rng.random(), Stream::Grouping);
        let lambda = rng.random_range(0.0..1.0);
        let total_at = |model: &Model, cfg: &TrainConfig| -> Result<f64> {
            let bg = build_batch_graph(model, cfg, &x, &given, &mut grouping.clone())?;
            bg.graph.value(bg.loss.total).item()
        };
        let total = total_at(&state.model, &TrainConfig { lambda, ..base.clone() })?;
        let afm = total_at(&state.model, &TrainConfig { lambda: 1.0, ..base.clone() })?;
        let org = total_at(&baseline, &base_cfg)?;
        worst = worst.max((total - (lambda * afm + (1.0 - lambda) * org)).abs());
    }
    Ok(worst)
}

/// Fraction of `trials` random configs in which one SGD step at `lr`
/// lowers the loss on the same frozen batch and grouping.
pub fn sgd_descent(trials: usize, lr: f64, seed: u64) -> Result<usize> {
    let mut rng = stream(seed, Stream::Analysis);
    let ds = small_dataset(seed, 12, 2)?;
    let x = ds.features().select_rows(&ds.train()[..24])?;
    let given: Vec<usize> = ds.train()[..24].iter().map(|&i| ds.given()[i]).collect();
    let mut wins = 0;
    for t in 0..trials {
        let config = TrainConfig {
            lambda: rng.random_range(0.0..1.0),
            group_size: 2 + t % 3,
            interaction: [Interaction::Concat, Interaction::Sum, Interaction::Mul][t % 3],
            shared_classifiers: t % 2 == 0,
            hidden: vec![8, 4],
            seed: t as u64,
            weight_decay: 0.0,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let mut state = TrainState::init(&config, ds.dim(), ds.classes())?;
        let grouping = stream(rng.random(), Stream::Grouping);
        let mut bg = build_batch_graph(&state.model, &config, &x, &given, &mut grouping.clone())?;
        let before = bg.graph.value(bg.loss.total).item()?;
        bg.graph.backward(bg.loss.total)?;
        state.sgd_step(&bg.graph, &bg.bindings, &config, lr)?;
        let after_g = build_batch_graph(&state.model, &config, &x, &given, &mut grouping.clone())?;
        if after_g.graph.value(after_g.loss.total).item()? < before {
            wins += 1;
        }
    }
    Ok(wins)
}

/// Writes and reads back a trained parameter store; true if every value
/// survives bit for bit.
pub fn checkpoint_round_trip(seed: u64) -> Result<bool> {
    let config = TrainConfig { hidden: vec![5, 3], ..TrainConfig::default() };
    let state = TrainState::init(&config, 4, 3)?;
    let entries: Vec<(&str, &Tensor)> = state.model.params.iter().collect();
    let mut buf = Vec::new();
    write_tensors(&mut buf, seed, &entries)?;
    let (hash, back) = read_tensors(buf.as_slice())?;
    let same = back.len() == entries.len()
        && back.iter().zip(&entries).all(|((n, t), (m, u))| {
            n == m && t.shape() == u.shape() && t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        });
    Ok(hash == seed && same)
}

type Check = fn() -> Result<(bool, String)>;

fn prop_grad_primitives() -> Result<(bool, String)> {
    let stats = grad_check_primitives(100, 11)?;
    let worst = stats.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("nonempty");
    Ok((
        stats.iter().all(|s| s.max_rel_error < GRAD_TOL),
        format!("{} primitives x 100 points, worst {} at {:.2e}", stats.len(), worst.name, worst.max_rel_error),
    ))
}

fn prop_grad_afm() -> Result<(bool, String)> {
    let s = grad_check_afm_loss(100, 12)?;
    Ok((
        s.max_rel_error < GRAD_TOL,
        format!("100 points, {} coords, {} skipped at kinks, max rel err {:.2e}", s.checked, s.skipped, s.max_rel_error),
    ))
}

fn prop_order_blind() -> Result<(bool, String)> {
    let (same, _) = swap_trials(Projection::Shared, Interaction::Sum, 100, 13)?;
    Ok((same == 100, format!("{same}/100 swaps bit-identical")))
}

fn prop_order_sensitive() -> Result<(bool, String)> {
    let (_, differ) = swap_trials(Projection::Distinct, Interaction::Sum, 100, 14)?;
    Ok((differ >= 99, format!("{differ}/100 swaps changed the weights")))
}

fn prop_simplex() -> Result<(bool, String)> {
    let s = simplex_trials(10_000, 15)?;
    Ok((
        s.min_label >= 0.0 && s.max_sum_error <= 1e-9,
        format!("{} interpolations, min label {:.3e}, max |sum-1| {:.2e}", s.count, s.min_label, s.max_sum_error),
    ))
}

fn prop_hull() -> Result<(bool, String)> {
    let s = simplex_trials(10_000, 16)?;
    Ok((
        s.max_coeff_violation <= 1e-9 && s.max_hull_residual <= 1e-9,
        format!("{} pairs, coeff outside [0,1] by {:.2e}, residual {:.2e}", s.pairs, s.max_coeff_violation, s.max_hull_residual),
    ))
}

fn prop_eq4_exact() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (a, n, k) in [(200, 1000, 2), (200, 1000, 1), (200, 1000, 5), (7, 9, 7), (3, 10, 4), (500, 501, 20)] {
        worst = worst.max((pure_noisy_group_ratio(a, n, k)? - exact_pure_ratio(a, n, k)).abs());
    }
    Ok((worst <= 1e-12, format!("max |closed - exact| {worst:.2e}")))
}

fn prop_eq4_mc() -> Result<(bool, String)> {
    let rows = noise_ratio_table(200, 1000, &[1, 2, 3], 100_000, 17)?;
    let detail = rows
        .iter()
        .map(|r| format!("K={} {:+.1}sigma", r.k, if r.sigma > 0.0 { r.diff / r.sigma } else { 0.0 }))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((rows.iter().all(|r| r.pass), detail))
}

fn prop_eq4_monotone() -> Result<(bool, String)> {
    let r1 = pure_noisy_group_ratio(200, 1000, 1)?;
    let r2 = pure_noisy_group_ratio(200, 1000, 2)?;
    Ok((r2 < r1, format!("K=1 {r1}, K=2 {r2:.6}")))
}

fn prop_inference() -> Result<(bool, String)> {
    let (m, same) = inference_equivalence(1000, 3, 18)?;
    Ok((m == 1000, format!("{m}/1000 predictions match, {same}/1000 probability rows bit-identical")))
}

fn prop_determinism() -> Result<(bool, String)> {
    let config = TrainConfig { epochs: 3, hidden: vec![8, 4], ..TrainConfig::default() };
    let ok = determinism(&config, 19)?;
    Ok((ok, format!("metrics CSV of two runs {}", if ok { "identical" } else { "differ" })))
}

fn prop_linearity() -> Result<(bool, String)> {
    let worst = lambda_linearity(20, 20)?;
    Ok((worst <= 1e-12, format!("max |total - mix| {worst:.2e}")))
}

fn prop_descent() -> Result<(bool, String)> {
    let wins = sgd_descent(20, 1e-4, 21)?;
    Ok((wins == 20, format!("{wins}/20 steps lowered the loss")))
}

fn prop_checkpoint() -> Result<(bool, String)> {
    let ok = checkpoint_round_trip(22)?;
    Ok((ok, format!("round trip {}", if ok { "bit-exact" } else { "lossy" })))
}

pub const PROPERTIES: &[(&str, Check)] = &[
    ("grad-check-primitives", prop_grad_primitives),
    ("grad-check-afm-loss", prop_grad_afm),
    ("order-blind-shared-sum", prop_order_blind),
    ("order-sensitive-distinct", prop_order_sensitive),
    ("soft-labels-on-simplex", prop_simplex),
    ("interpolation-in-convex-hull", prop_hull),
    ("pure-noisy-ratio-exact", prop_eq4_exact),
    ("pure-noisy-ratio-monte-carlo", prop_eq4_mc),
    ("pure-noisy-ratio-shrinks-with-k", prop_eq4_monotone),
    ("inference-equivalence", prop_inference),
    ("training-determinism", prop_determinism),
    ("loss-linear-in-lambda", prop_linearity),
    ("sgd-step-descends", prop_descent),
    ("checkpoint-round-trip", prop_checkpoint),
];

/// Runs one property; an error counts as a failure.
pub fn run_property(name: &'static str, check: Check) -> PropertyResult {
    let t = Instant::now();
    let (passed, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    PropertyResult { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
}

/// Runs every property on the calling thread, so the thread-local fault
/// hook of the autodiff engine applies.
pub fn run_all() -> Vec<PropertyResult> {
    PROPERTIES.iter().map(|&(name, check)| run_property(name, check)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::set_fault_flip_matmul_grad;

    #[test]
    fn exact_ratio_matches_known_value() {
        assert_eq!(exact_pure_ratio(200, 1000, 1), 0.2);
        assert_eq!(exact_pure_ratio(200, 1000, 2), 39800.0 / 999000.0);
        assert_eq!(exact_pure_ratio(1, 10, 2), 0.0);
    }

    #[test]
    fn primitive_cases_pass_and_fault_is_caught() {
        let ok = grad_check_primitives(5, 1).unwrap();
        assert!(ok.iter().all(|s| s.max_rel_error < GRAD_TOL), "{ok:?}");
        set_fault_flip_matmul_grad(true);
        let bad = grad_check_primitives(5, 1);
        set_fault_flip_matmul_grad(false);
        let bad = bad.unwrap();
        assert!(bad.iter().find(|s| s.name == "matmul").unwrap().max_rel_error > GRAD_TOL);
    }

    #[test]
    fn afm_loss_grad_small() {
        let s = grad_check_afm_loss(9, 2).unwrap();
        assert!(s.max_rel_error < GRAD_TOL, "{s:?}");
        assert!(s.checked > 0);
    }

    #[test]
    fn swaps_and_simplex() {
        assert_eq!(swap_trials(Projection::Shared, Interaction::Sum, 10, 3).unwrap().0, 10);
        assert!(swap_trials(Projection::Distinct, Interaction::Sum, 10, 3).unwrap().1 >= 9);
        let s = simplex_trials(600, 4).unwrap();
        assert_eq!(s.count, 600);
        assert!(s.max_sum_error <= 1e-9 && s.max_hull_residual <= 1e-9 && s.pairs > 0);
    }

    #[test]
    fn suite_has_at_least_ten_properties() {
        assert!(PROPERTIES.len() >= 10);
        let names: std::collections::HashSet<_> = PROPERTIES.iter().map(|p| p.0).collect();
        assert_eq!(names.len(), PROPERTIES.len());
    }

    #[test]
    fn failing_check_is_reported_not_raised() {
        let r = run_property("boom", || Err(crate::error::Error::Numeric("x".into())));
        assert!(!r.passed && r.detail.contains("error"));
    }
}
