use super::*;
use crate::data::{generate, inject_noise, DatasetSpec, NoiseModel};
use crate::group_attend::{Group, Interaction, Projection};
use crate::rng::{stream, Stream};

fn small_ds(seed: u64) -> NoisyDataset {
    let spec = DatasetSpec {
        train_per_class: 40,
        test_per_class: 10,
        dim: 6,
        seed,
        ..Default::default()
    };
    inject_noise(&generate(&spec).unwrap(), NoiseModel::Symmetric(0.3), seed).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden: vec![8, 6],
        batch_size: 16,
        epochs: 3,
        ..Default::default()
    }
}

fn loss_parts(lambda: f64, zero_heads: bool) -> (f64, f64, f64) {
    let ds = small_ds(1);
    let cfg = TrainConfig { lambda, shared_classifiers: false, eps: 0.0, ..small_cfg() };
    let mut state = TrainState::init(&cfg, ds.dim(), ds.classes()).unwrap();
    if zero_heads {
        for head in [Head::Original, Head::Interpolation] {
            let w = state.model.network.classifiers.head(head).weight;
            let shape = state.model.params.get(w).shape().to_vec();
            state.model.params.set(w, Tensor::zeros(shape)).unwrap();
        }
    }
    let idx: Vec<usize> = ds.train()[..16].to_vec();
    let x = ds.features().select_rows(&idx).unwrap();
    let given: Vec<usize> = idx.iter().map(|&i| ds.given()[i]).collect();
    let bg = build_batch_graph(&state.model, &cfg, &x, &given, &mut stream(0, Stream::Grouping)).unwrap();
    let v = |var: Var| bg.graph.value(var).item().unwrap();
    (v(bg.loss.total), v(bg.loss.afm.unwrap()), v(bg.loss.org))
}

#[test]
fn lambda_endpoints_are_exact() {
    let (t, _, org) = loss_parts(0.0, false);
    assert_eq!(t, org);
    let (t, afm, _) = loss_parts(1.0, false);
    assert_eq!(t, afm);
}

#[test]
fn total_is_linear_in_lambda() {
    for lambda in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let (t, afm, org) = loss_parts(lambda, false);
        assert!((t - (lambda * afm + (1.0 - lambda) * org)).abs() < 1e-15);
    }
}

#[test]
fn uniform_classifier_gives_ln_c() {
    for lambda in [0.0, 0.3, 1.0] {
        let (t, afm, org) = loss_parts(lambda, true);
        let ln3 = 3f64.ln();
        assert!((t - ln3).abs() < 1e-12 && (afm - ln3).abs() < 1e-12 && (org - ln3).abs() < 1e-12);
    }
}

#[test]
fn empty_batch_is_config_error() {
    let ds = small_ds(1);
    let cfg = small_cfg();
    let state = TrainState::init(&cfg, ds.dim(), ds.classes()).unwrap();
    let mut g = Graph::new();
    let b = state.model.params.bind(&mut g, true);
    let f = g.constant(Tensor::zeros(vec![0, 6]));
    let y = g.constant(Tensor::zeros(vec![0, 3]));
    let res = compute_loss(&mut g, &state.model.network.classifiers, &b, f, y, None, 0.0);
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn zero_epochs_returns_initial_state() {
    let ds = small_ds(2);
    let cfg = TrainConfig { epochs: 0, ..small_cfg() };
    let (state, log) = train(&ds, &cfg).unwrap();
    let fresh = TrainState::init(&cfg, ds.dim(), ds.classes()).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(state.model.params, fresh.model.params);
    assert_eq!(state.step, 0);
}

#[test]
fn same_seed_same_metrics() {
    let ds = small_ds(3);
    let (_, a) = train(&ds, &small_cfg()).unwrap();
    let (_, b) = train(&ds, &small_cfg()).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    assert_eq!(a.rows.len(), 3);
}

#[test]
fn baseline_matches_afm_at_lambda_zero() {
    let ds = small_ds(4);
    let afm = TrainConfig { lambda: 0.0, ..small_cfg() };
    let base = TrainConfig { mode: Mode::Baseline, ..small_cfg() };
    let (sa, la) = train(&ds, &afm).unwrap();
    let (sb, lb) = train(&ds, &base).unwrap();
    for (name, t) in sb.model.params.iter() {
        let other = sa.model.params.get(sa.model.params.find(name).unwrap());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t), bits(other), "{name}");
    }
    for (ra, rb) in la.rows.iter().zip(&lb.rows) {
        assert_eq!(ra.test_acc, rb.test_acc);
        assert_eq!(ra.train_loss, rb.train_loss);
    }
}

#[test]
fn shared_heads_stay_identical() {
    let ds = small_ds(5);
    let (state, _) = train(&ds, &small_cfg()).unwrap();
    let c = &state.model.network.classifiers;
    assert!(c.is_shared());
    assert_eq!(c.head(Head::Original).weight, c.head(Head::Interpolation).weight);
    let x = ds.features().select_rows(ds.test()).unwrap();
    let p1 = state.model.network.predict_proba(&state.model.params, &x, Head::Original).unwrap();
    let p2 = state.model.network.predict_proba(&state.model.params, &x, Head::Interpolation).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn small_step_decreases_frozen_batch_loss() {
    let ds = small_ds(6);
    let interactions = [Interaction::Concat, Interaction::Sum, Interaction::Mul];
    let projections = [Projection::Distinct, Projection::Shared, Projection::None];
    for trial in 0..20u64 {
        let cfg = TrainConfig {
            lambda: [0.0, 0.5, 0.75, 1.0][trial as usize % 4],
            interaction: interactions[trial as usize % 3],
            projection: projections[(trial as usize / 3) % 3],
            group_size: 2 + (trial as usize % 2),
            shared_classifiers: trial % 2 == 0,
            lr: 1e-4,
            seed: trial,
            ..small_cfg()
        };
        let mut state = TrainState::init(&cfg, ds.dim(), ds.classes()).unwrap();
        let idx: Vec<usize> = ds.train()[(trial as usize)..(trial as usize + 16)].to_vec();
        let x = ds.features().select_rows(&idx).unwrap();
        let given: Vec<usize> = idx.iter().map(|&i| ds.given()[i]).collect();
        let grouping = stream(trial, Stream::Grouping);
        let mut bg = build_batch_graph(&state.model, &cfg, &x, &given, &mut grouping.clone()).unwrap();
        let before = bg.graph.value(bg.loss.total).item().unwrap();
        bg.graph.backward(bg.loss.total).unwrap();
        state.sgd_step(&bg.graph, &bg.bindings, &TrainConfig { weight_decay: 0.0, ..cfg.clone() }, cfg.lr).unwrap();
        let bg2 = build_batch_graph(&state.model, &cfg, &x, &given, &mut grouping.clone()).unwrap();
        let after = bg2.graph.value(bg2.loss.total).item().unwrap();
        assert!(after < before, "trial {trial}: {before} -> {after}");
    }
}

#[test]
fn beta_weights_sum_to_one_and_concentrate() {
    let mut rng = stream(1, Stream::Grouping);
    let w = beta_pair_weights(50, 1.0, &mut rng).unwrap();
    for r in 0..50 {
        assert!((w.row(r)[0] + w.row(r)[1] - 1.0).abs() < 1e-15);
    }
    let w = beta_pair_weights(50, 1e6, &mut rng).unwrap();
    assert!(w.data().iter().all(|v| (v - 0.5).abs() < 0.01));
}

#[test]
fn unit_weight_mix_returns_first_member() {
    let mut g = Graph::new();
    let f = g.constant(Tensor::matrix(2, 2, vec![0.3, -1.1, 2.0, 5.0]).unwrap());
    let y = g.constant(Tensor::one_hot(&[0, 1], 2).unwrap());
    let w = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let grp = Group::new(vec![0, 1], &[0, 1]).unwrap();
    let out = mix_with_weights(&mut g, f, y, &[grp], w).unwrap();
    assert_eq!(g.value(out.features).data(), &[0.3, -1.1]);
    assert_eq!(g.value(out.soft_labels).data(), &[1.0, 0.0]);
}

#[test]
fn comparison_modes_train() {
    let ds = small_ds(7);
    for mode in [Mode::StandardMixup, Mode::ManifoldMixup] {
        let cfg = TrainConfig { mode, ..small_cfg() };
        let (_, log) = run_comparison_mode(&ds, &cfg).unwrap();
        assert_eq!(log.rows.len(), 3);
        assert!(log.rows.iter().all(|r| r.train_loss.is_finite()));
    }
    assert!(run_comparison_mode(&ds, &small_cfg()).is_err());
    let bad = TrainConfig { mode: Mode::StandardMixup, beta: 0.0, ..small_cfg() };
    assert!(run_comparison_mode(&ds, &bad).is_err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { group_size: 1, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 2, group_size: 3, ..Default::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn lr_schedule_steps() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 0.05);
    assert_eq!(cfg.lr_at(39), 0.05);
    assert!((cfg.lr_at(40) - 0.005).abs() < 1e-15);
    assert!((cfg.lr_at(80) - 0.0005).abs() < 1e-15);
}

#[test]
fn inference_matches_training_graph_head() {
    let ds = small_ds(8);
    let cfg = small_cfg();
    let (state, _) = train(&ds, &cfg).unwrap();
    let idx = ds.train()[..32].to_vec();
    let x = ds.features().select_rows(&idx).unwrap();
    let given: Vec<usize> = idx.iter().map(|&i| ds.given()[i]).collect();
    let bg = build_batch_graph(&state.model, &cfg, &x, &given, &mut stream(1, Stream::Grouping)).unwrap();
    let from_graph = bg.graph.value(bg.original_probs).argmax_rows().unwrap();
    assert_eq!(from_graph, state.model.network.inference_predict(&state.model.params, &x).unwrap());
}
