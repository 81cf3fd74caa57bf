//! Drives the `rankpose` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rankpose::checkpoint;
use rankpose::cli::{EXIT_CONFIG, EXIT_GRADCHECK, EXIT_IO, EXIT_MISMATCH, EXIT_OK, EXIT_TRAINING};
use rankpose::HeadKind;

const SMALL: &[&str] = &[
    "--set",
    "data.num_identities=8",
    "--set",
    "data.samples_per_identity=6",
    "--set",
    "data.input_dim=10",
    "--set",
    "model.hidden_dims=16,8",
];

fn rankpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankpose"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> u8 {
    out.status.code().expect("exit code") as u8
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = path(dir, name);
    let mut args = with_small(&["gen", "--out", &out]);
    args.extend_from_slice(extra);
    let o = rankpose(&args);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn train_and_eval_write_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "train.csv", &[]);
    let val = gen(dir.path(), "val.csv", &["--set", "data.pose_seed=99"]);
    let ckpt = path(dir.path(), "m.ckpt");
    let o = rankpose(&with_small(&["train", "--data", &data, "--val", &val, "--checkpoint", &ckpt, "--epochs", "3"]));
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(format!("{ckpt}.history.csv")).unwrap();
    assert!(history.starts_with("# rankpose-history v1\n"));
    assert_eq!(history.lines().count(), 2 + 3);

    let report = path(dir.path(), "report.txt");
    let o = rankpose(&["eval", "--checkpoint", &ckpt, "--data", &data, "--report", &report]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("Avg. MAE"));
    let mae = fs::read_to_string(dir.path().join("report.mae.csv")).unwrap();
    let row: Vec<f64> = mae.lines().nth(2).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(row.iter().all(|v| v.is_finite()));
    // avg is the mean of the three angles
    assert!((row[3] - (row[0] + row[1] + row[2]) / 3.0).abs() < 1e-9);
    let ced = fs::read_to_string(dir.path().join("report.ced.csv")).unwrap();
    assert!(ced.lines().count() > 30);
}

#[test]
fn identical_runs_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "train.csv", &[]);
    let again = gen(dir.path(), "again.csv", &[]);
    assert_eq!(fs::read(&data).unwrap(), fs::read(&again).unwrap());

    let run = |name: &str, extra: &[&str]| -> (Vec<u8>, Vec<u8>) {
        let ckpt = path(dir.path(), name);
        let mut args = with_small(&["train", "--data", &data, "--checkpoint", &ckpt, "--epochs", "2"]);
        args.extend_from_slice(extra);
        assert_eq!(code(&rankpose(&args)), EXIT_OK);
        (fs::read(&ckpt).unwrap(), fs::read(format!("{ckpt}.history.csv")).unwrap())
    };
    let a = run("a.ckpt", &[]);
    let b = run("b.ckpt", &[]);
    let c = run("c.ckpt", &["--sequential", "--threads", "1"]);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "train.csv", &[]);
    let cfg = dir.path().join("run.conf");
    fs::write(
        &cfg,
        "# experiment\nmodel.head = dot\nloss.beta = 0.9\ntrain.epochs = 1\nmodel.hidden_dims = 16, 8\n",
    )
    .unwrap();
    let cfg = cfg.to_string_lossy().into_owned();

    let ckpt = path(dir.path(), "file.ckpt");
    assert_eq!(code(&rankpose(&["train", "--config", &cfg, "--data", &data, "--checkpoint", &ckpt])), EXIT_OK);
    let state = checkpoint::load_checkpoint(Path::new(&ckpt)).unwrap();
    assert_eq!(state.model.head.kind(), HeadKind::Dot);

    let ckpt = path(dir.path(), "flag.ckpt");
    let args = ["train", "--config", &cfg, "--data", &data, "--checkpoint", &ckpt, "--head", "arccos", "--beta", "0.5"];
    assert_eq!(code(&rankpose(&args)), EXIT_OK);
    let state = checkpoint::load_checkpoint(Path::new(&ckpt)).unwrap();
    assert_eq!(state.model.head.kind(), HeadKind::Arccos);
    // one epoch from the file survives the flag overrides
    assert_eq!(state.epochs_completed, 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "x.csv");
    for bad in [
        vec!["gen", "--out", &out, "--set", "no.such.key=1"],
        vec!["gen", "--out", &out, "--set", "missing-equals"],
        vec!["gen", "--out", &out, "--beta", "1.5"],
        vec!["gen", "--out", &out, "--head", "quaternion"],
        vec!["frobnicate"],
    ] {
        let o = rankpose(&bad);
        assert_eq!(code(&o), EXIT_CONFIG, "{bad:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let msg = String::from_utf8_lossy(&rankpose(&["gen", "--out", &out, "--set", "no.such.key=1"]).stderr).into_owned();
    assert!(msg.contains("unknown config key 'no.such.key'"), "{msg}");
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing: PathBuf = dir.path().join("missing.csv");
    let ckpt = path(dir.path(), "m.ckpt");
    let o = rankpose(&["train", "--data", &missing.to_string_lossy(), "--checkpoint", &ckpt]);
    assert_eq!(code(&o), EXIT_IO);

    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "# rankpose-dataset v1 dim=2\n0,0,0.1,0.2\n").unwrap();
    let o = rankpose(&["train", "--data", &garbage.to_string_lossy(), "--checkpoint", &ckpt]);
    assert_eq!(code(&o), EXIT_IO);
    assert!(String::from_utf8_lossy(&o.stderr).contains("garbage.csv"));
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "train.csv", &[]);
    let ckpt = path(dir.path(), "m.ckpt");
    let o = rankpose(&with_small(&["train", "--data", &data, "--checkpoint", &ckpt, "--head", "dot", "--lr", "1e300"]));
    assert_eq!(code(&o), EXIT_TRAINING, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!Path::new(&ckpt).exists());
}

#[test]
fn dimension_mismatch_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "train.csv", &[]);
    let other = gen(dir.path(), "other.csv", &["--set", "data.input_dim=12"]);
    let ckpt = path(dir.path(), "m.ckpt");
    assert_eq!(code(&rankpose(&with_small(&["train", "--data", &data, "--checkpoint", &ckpt, "--epochs", "1"]))), EXIT_OK);
    let report = path(dir.path(), "r.txt");
    let o = rankpose(&["eval", "--checkpoint", &ckpt, "--data", &other, "--report", &report]);
    assert_eq!(code(&o), EXIT_MISMATCH);
    let o = rankpose(&with_small(&["train", "--data", &data, "--val", &other, "--checkpoint", &ckpt]));
    assert_eq!(code(&o), EXIT_MISMATCH);
}

#[test]
fn gradcheck_exit_codes() {
    let o = rankpose(&["gradcheck", "--seeds", "10"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    // An impossible tolerance must fail and name the worst case.
    let o = rankpose(&["gradcheck", "--seeds", "1", "--tolerance", "1e-300"]);
    assert_eq!(code(&o), EXIT_GRADCHECK);
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("worst: seed=0 head="), "{msg}");
}

#[test]
fn ablate_emits_the_six_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let report = path(dir.path(), "ablation.txt");
    let args = with_small(&["ablate", "--report", &report, "--epochs", "2", "--set", "ablate.seeds=1"]);
    let o = rankpose(&args);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(dir.path().join("ablation.grid.csv")).unwrap();
    let median_labels: Vec<&str> = grid
        .lines()
        .filter(|l| l.starts_with("median,") && l.contains(",nuisance-shifted,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(
        median_labels,
        [
            "MSE",
            "MSE+Cosine",
            "MSE+Arccos",
            "Ranking loss+MSE",
            "Ranking loss+MSE + Cosine",
            "Ranking loss+MSE + Arccos"
        ]
    );
    let variance = fs::read_to_string(dir.path().join("ablation.variance.csv")).unwrap();
    assert_eq!(variance.lines().count(), 3);
}
