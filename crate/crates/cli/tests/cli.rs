use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use spikefd::data::load_dataset;

fn spikefd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikefd"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPIKEFD_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &[
    "--preset",
    "synthetic",
    "--epochs",
    "2",
    "--seed",
    "5",
    "--set",
    "input_length=256",
    "--set",
    "data.synth_per_class=12",
    "--set",
    "train.batch_size=8",
];

fn train_into(dir: &Path, name: &str) -> PathBuf {
    let mut args = vec!["train", "--out", name];
    args.extend_from_slice(SMALL);
    ok(&spikefd(&args, dir));
    dir.join(name)
}

/// One small trained run shared by the read-only tests.
fn shared_run() -> &'static Path {
    static RUN: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = train_into(dir.path(), "run");
        (dir, run)
    });
    path
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn train_writes_every_artifact() {
    let run = shared_run();
    for f in ["best.mras", "final.mras", "history.csv", "config.txt", "eval.vibr"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = read(run.join("history.csv"));
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().nth(1).unwrap().starts_with("0,0.01,"));
    let cfg = read(run.join("config.txt"));
    assert!(cfg.contains("input_length = 256") && cfg.contains("train.epochs = 2"));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_into(dir.path(), "a");
    let b = train_into(dir.path(), "b");
    for f in ["best.mras", "final.mras", "history.csv", "config.txt", "eval.vibr"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn timesteps_flag_trains_a_single_step_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", "t1", "--timesteps", "1"];
    args.extend_from_slice(SMALL);
    ok(&spikefd(&args, dir.path()));
    assert!(read(dir.path().join("t1/config.txt")).contains("\ntimesteps = 1\n"));
}

#[test]
fn eval_reports_accuracy_confusion_and_timestep_logits() {
    let run = shared_run();
    let dir = tempfile::tempdir().unwrap();
    let model = run.join("best.mras");
    let stdout = ok(&spikefd(
        &[
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--emit-confusion",
            "confusion.csv",
            "--emit-timestep-logits",
            "logits.csv",
        ],
        dir.path(),
    ));
    let acc: f64 = stdout.lines().next().unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let eval = load_dataset(run.join("eval.vibr")).unwrap();
    let confusion = read(dir.path().join("confusion.csv"));
    let rows: Vec<u64> = confusion
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).sum())
        .collect();
    let counts: Vec<u64> = eval.class_counts().into_iter().map(|c| c as u64).collect();
    assert_eq!(rows, counts);

    let logits = read(dir.path().join("logits.csv"));
    assert_eq!(logits.lines().next().unwrap(), "sample,label,t,z0,z1,z2");
    assert_eq!(logits.lines().count() - 1, eval.len() * 4);
    assert!(dir.path().join("confusion.config.txt").exists());
}

#[test]
fn multiple_models_aggregate_mean_and_std() {
    let run = shared_run();
    let (a, b) = (run.join("best.mras"), run.join("final.mras"));
    let stdout = ok(&spikefd(
        &["eval", "--model", a.to_str().unwrap(), "--model", b.to_str().unwrap()],
        run,
    ));
    assert!(stdout.contains("±") && stdout.contains("(2 models)"), "{stdout}");
}

#[test]
fn noise_sweep_rows_and_near_identity_noise() {
    let run = shared_run();
    let dir = tempfile::tempdir().unwrap();
    let model = run.join("best.mras");
    let m = model.to_str().unwrap();
    ok(&spikefd(&["noise-sweep", "--model", m, "--seeds", "1", "--out", "grid.csv"], dir.path()));
    let grid = read(dir.path().join("grid.csv"));
    assert_eq!(grid.lines().next().unwrap(), "snr_db,accuracy,std");
    assert_eq!(grid.lines().count() - 1, 7);

    ok(&spikefd(&["noise-sweep", "--model", m, "--snrs", "999", "--seeds", "2", "--out", "hi.csv"], dir.path()));
    let noisy: f64 = read(dir.path().join("hi.csv")).lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let clean_out = ok(&spikefd(&["eval", "--model", m], dir.path()));
    let clean: f64 = clean_out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((noisy - clean).abs() <= 0.005, "{noisy} vs {clean}");
    assert!(dir.path().join("grid.config.txt").exists());
}

#[test]
fn timestep_sweep_emits_one_row_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["timestep-sweep", "--timesteps", "1,2", "--out", "ts.csv"];
    args.extend_from_slice(SMALL);
    ok(&spikefd(&args, dir.path()));
    let csv = read(dir.path().join("ts.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "timesteps,accuracy,mac,ac,energy_pj");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
}

#[test]
fn energy_report_has_table_and_csv() {
    let run = shared_run();
    let dir = tempfile::tempdir().unwrap();
    let model = run.join("best.mras");
    let stdout = ok(&spikefd(&["energy", "--model", model.to_str().unwrap(), "--out", "e.csv"], dir.path()));
    assert!(stdout.contains("total"));
    let csv = read(dir.path().join("e.csv"));
    assert_eq!(csv.lines().next().unwrap(), "layer,type,static_flops,phi,mac,ac,pj");
    assert!(csv.lines().last().unwrap().starts_with("total,"));
}

#[test]
fn synth_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&spikefd(
        &["synth", "--classes", "4", "--per-class", "3", "--length", "128", "--out", "s.vibr"],
        dir.path(),
    ));
    let set = load_dataset(dir.path().join("s.vibr")).unwrap();
    assert_eq!((set.len(), set.num_classes(), set.length()), (12, 4, 128));
    assert_eq!(set.class_names[0], "normal");
}

#[test]
fn feature_export_and_layer_validation() {
    let run = shared_run();
    let dir = tempfile::tempdir().unwrap();
    let model = run.join("best.mras");
    let m = model.to_str().unwrap();
    ok(&spikefd(&["export-features", "--model", m, "--out", "f.csv"], dir.path()));
    let csv = read(dir.path().join("f.csv"));
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 64, "label plus one column per final channel");
    let out = spikefd(&["export-features", "--model", m, "--layer", "nope", "--out", "g.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("block2") && err.contains("features"), "{err}");
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = spikefd(&["train", "--out", "x", "--data", "missing.vibr", "--epochs", "1"], d);
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(d.join("bad.cfg"), "train.epoch = 3\n").unwrap();
    let unknown = spikefd(&["train", "--out", "x", "--config", "bad.cfg"], d);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("train.epoch"));

    let preset = spikefd(&["train", "--out", "x", "--preset", "resnet"], d);
    assert_eq!(preset.status.code(), Some(2));

    // non-finite samples are refused at load time
    let mut rows = String::new();
    for i in 0..12 {
        let window: Vec<String> = (0..64)
            .map(|j| if i == 0 { "NaN".into() } else { ((j * (i + 1)) % 7).to_string() })
            .collect();
        rows.push_str(&format!("{},{}\n", window.join(","), i % 2));
    }
    std::fs::write(d.join("nan.csv"), rows).unwrap();
    let nan = spikefd(&["train", "--out", "n", "--data", "nan.csv", "--set", "input_length=64"], d);
    assert_eq!(nan.status.code(), Some(3));

    // an absurd learning rate overflows the weights after the first update
    let mut args = vec!["train", "--out", "diverge", "--set", "train.lr=1e30"];
    args.extend_from_slice(SMALL);
    let diverge = spikefd(&args, d);
    assert_eq!(diverge.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverge.stderr));
}

#[test]
fn data_dir_variable_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    ok(&spikefd(&["synth", "--per-class", "4", "--length", "256", "--out", "data/s.vibr"], dir.path()));
    let work = dir.path().join("work");
    std::fs::create_dir(&work).unwrap();
    let mut args = vec!["train", "--out", "r", "--data", "s.vibr"];
    args.extend_from_slice(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_spikefd"))
        .args(&args)
        .current_dir(&work)
        .env("SPIKEFD_DATA_DIR", &data)
        .output()
        .unwrap();
    ok(&out);
}
