use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "train_per_class = 40\ntest_per_class = 10\ndim = 6\nhidden = 8,4\nbatch_size = 32\nepochs = 3\n";

fn afm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afm"))
        .args(args)
        .env("AFM_THREADS", "1")
        .output()
        .expect("run afm")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = afm(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,test_acc,mean_attn_clean,mean_attn_noisy,lr"));
    assert_eq!(lines.count(), 3);
    assert!(!metrics.contains('\r'));
    assert_eq!(&fs::read(out.join("model.ckpt")).unwrap()[..4], b"AFM1");
}

#[test]
fn zero_epochs_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.cfg");
    fs::write(&cfg, SMALL.replace("epochs = 3", "epochs = 0")).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    let o = afm(&["train", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = afm(&["train", "--config", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let cfg = write_config(dir.path(), "learning_rate = 0.1\n");
    let o = afm(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    assert_eq!(code(&afm(&["train"])), 2);
}

#[test]
fn numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lr = 1e300\nlr_decay_every = 1000\n");
    let o = afm(&["train", "--config", &cfg, "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_summary_matches_per_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sw");
    let o = afm(&[
        "sweep", "--config", &cfg, "--axis", "lambda", "--values", "0,0.75", "--seeds", "0,1", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let value = &row[1];
        let accs: Vec<f64> = ["0", "1"]
            .iter()
            .map(|s| {
                let text = fs::read_to_string(out.join(format!("lambda={value}/seed={s}/metrics.csv"))).unwrap();
                let last = text.lines().last().unwrap();
                last.split(',').nth(2).unwrap().parse().unwrap()
            })
            .collect();
        let mean: f64 = accs.iter().sum::<f64>() / 2.0;
        assert_eq!(row[2].parse::<f64>().unwrap(), mean);
        assert_eq!(&row[4], "2");
        assert_eq!(&row[5], "0");
    }
}

#[test]
fn single_value_single_seed_sweep_is_that_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let sw = dir.path().join("sw");
    let tr = dir.path().join("tr");
    assert_eq!(code(&afm(&["sweep", "--config", &cfg, "--axis", "group-size", "--values", "2", "--out", sw.to_str().unwrap()])), 0);
    assert_eq!(code(&afm(&["train", "--config", &cfg, "--out", tr.to_str().unwrap()])), 0);
    let acc = fs::read_to_string(tr.join("metrics.csv")).unwrap().lines().last().unwrap().split(',').nth(2).unwrap().to_string();
    let summary = fs::read_to_string(sw.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], acc);
    assert_eq!(row[3], "0");
}

#[test]
fn sweep_with_bad_axis_or_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(code(&afm(&["sweep", "--config", &cfg, "--axis", "depth", "--values", "1"])), 2);
    assert_eq!(code(&afm(&["sweep", "--config", &cfg, "--axis", "lambda", "--values", "0,7"])), 2);
}

#[test]
fn noise_ratio_table_and_bounds() {
    let o = afm(&["noise-ratio", "--noisy", "200", "--total", "1000", "--k-max", "2", "--trials", "20000"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,closed_form,empirical,diff,sigma,pass");
    assert!(lines[1].starts_with("1,0.2,"));
    assert!(lines[2].starts_with("2,0.0398398"));
    assert_eq!(code(&afm(&["noise-ratio", "--noisy", "5", "--total", "3"])), 2);
    assert_eq!(code(&afm(&["noise-ratio", "--noisy", "5", "--total", "30", "--k-min", "0"])), 2);
}

#[test]
fn dump_features_rows_and_compatibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run = dir.path().join("run");
    assert_eq!(code(&afm(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])), 0);
    let ck = run.join("model.ckpt");
    let ds = run.join("dataset.bin");
    let dump = |n: &str, out: &str| {
        afm(&[
            "dump-features", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--dataset", ds.to_str().unwrap(),
            "--out", dir.path().join(out).to_str().unwrap(), "--interpolations", n, "--seed", "3",
        ])
    };
    assert_eq!(code(&dump("0", "a.csv")), 0);
    assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap().lines().count(), 1 + 150);
    assert_eq!(code(&dump("9", "b.csv")), 0);
    assert_eq!(code(&dump("9", "c.csv")), 0);
    let b = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(b.lines().count(), 1 + 150 + 9);
    assert_eq!(b, fs::read_to_string(dir.path().join("c.csv")).unwrap());

    let other = dir.path().join("other.cfg");
    fs::write(&other, SMALL.replace("dim = 6", "dim = 7")).unwrap();
    let o = afm(&[
        "dump-features", "--config", other.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--dataset",
        ds.to_str().unwrap(), "--out", dir.path().join("d.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_passes_and_fault_names_grad_check() {
    let o = afm(&["verify"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);

    let o = afm(&["verify", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grad-check-primitives"), "{err}");
}
