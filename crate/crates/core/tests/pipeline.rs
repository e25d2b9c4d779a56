use afm_core::analysis::{self, Axis, CHECKPOINT_FILE, SUMMARY_FILE};
use afm_core::backbone::checkpoint;
use afm_core::data::{generate, inject_noise};
use afm_core::rng::{stream, Stream};
use afm_core::*;

fn small() -> ExperimentSpec {
    ExperimentSpec::parse(
        "train_per_class = 60\ntest_per_class = 20\ndim = 8\nhidden = 16,8\nbatch_size = 32\nepochs = 4\nseeds = 0,1",
    )
    .unwrap()
}

#[test]
fn checkpoint_restores_predictions() {
    let spec = small();
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = analysis::run_replicate(&spec, 1, Some(dir.path())).unwrap();
    let ds = spec.build_dataset(1).unwrap();
    let model = analysis::load_model(&spec, 1, &ds, &dir.path().join(CHECKPOINT_FILE)).unwrap();
    let x = ds.features();
    assert_eq!(
        model.network.inference_predict(&model.params, x).unwrap(),
        state.model.network.inference_predict(&state.model.params, x).unwrap()
    );
    let (hash, _) = checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(hash, spec.replicate_hash(1));
}

#[test]
fn ratio_predicts_all_noisy_groups_on_a_noisy_split() {
    let spec = DatasetSpec { train_per_class: 400, test_per_class: 1, dim: 4, ..DatasetSpec::default() };
    let ds = inject_noise(&generate(&spec).unwrap(), NoiseModel::Symmetric(0.3), 5).unwrap();
    let n_noisy = ds.train_noise_count() as u64;
    let n = ds.train().len() as u64;
    let given: Vec<usize> = ds.train().iter().map(|&i| ds.given()[i]).collect();
    let trials = 50_000;
    let groups = sample_groups(&given, trials, 2, RatioPolicy::Random, &mut stream(9, Stream::Grouping)).unwrap();
    let hits = groups
        .iter()
        .filter(|g| g.members.iter().all(|&p| ds.noisy()[ds.train()[p]]))
        .count();
    let p = pure_noisy_group_ratio(n_noisy, n, 2).unwrap();
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    let freq = hits as f64 / trials as f64;
    assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq} closed {p} sigma {sigma}");
}

#[test]
fn sweep_does_not_depend_on_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let values = vec!["concat".to_string(), "mul".to_string()];
    let spec_a = ExperimentSpec { out: a.path().into(), ..small() };
    let spec_b = ExperimentSpec { out: b.path().into(), ..small() };
    let ra = analysis::sweep(&spec_a, Axis::Interaction, &values, 1).unwrap();
    let rb = analysis::sweep(&spec_b, Axis::Interaction, &values, 2).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(
        std::fs::read(a.path().join(SUMMARY_FILE)).unwrap(),
        std::fs::read(b.path().join(SUMMARY_FILE)).unwrap()
    );
}

#[test]
fn every_mode_trains_end_to_end() {
    for mode in ["afm", "baseline", "standard-mixup", "manifold-mixup"] {
        let mut spec = small();
        spec.set("mode", mode).unwrap();
        if mode == "baseline" {
            spec.set("lambda", "0").unwrap();
        }
        let (_, log) = analysis::run_replicate(&spec, 0, None).unwrap();
        assert_eq!(log.rows.len(), 4, "{mode}");
        let acc = log.final_accuracy().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(log.last().unwrap().mean_attn_clean.is_nan(), mode == "baseline", "{mode}");
    }
}

#[test]
fn dataset_file_round_trips() {
    let spec = small();
    let ds = spec.build_dataset(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.bin");
    ds.save(&p, 42).unwrap();
    assert_eq!(NoisyDataset::load(&p).unwrap(), (42, ds));
}
