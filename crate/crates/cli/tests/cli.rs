use std::path::Path;
use std::process::{Command, Output};

use ntk_core::dataio::{read_matrix, read_snapshot_series, write_labels, write_matrix, MatFormat};
use ntk_core::Mat;

fn ntk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntk")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ntk(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn explicit_and_oracle_outputs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (e, o) = (dir.path().join("e"), dir.path().join("o"));
    let common = ["--data", "synth:d=6,n=10,sep=2", "--arch", "6,12,9,7", "--bias", "--bias-init", "normal", "--seed", "3", "--layerwise"];
    ok(&[&["compute", "--out", p(&e), "--method", "explicit"], &common[..]].concat());
    ok(&[&["compute", "--out", p(&o), "--method", "oracle"], &common[..]].concat());
    let ke = read_matrix(e.join("ntk.ntkmat")).unwrap();
    let ko = read_matrix(o.join("ntk.ntkmat")).unwrap();
    assert_eq!(ke.shape(), (20, 20));
    assert!(ke.rel_diff(&ko).unwrap() <= 1e-10);
    for name in ["layer1.weight", "layer2.bias", "layer3.weight", "readout.weight", "readout.bias"] {
        let file = format!("components/{name}.ntkmat");
        let a = read_matrix(e.join(&file)).unwrap();
        let b = read_matrix(o.join(&file)).unwrap();
        assert!(a.rel_diff(&b).unwrap() <= 1e-10, "{name}");
    }
}

#[test]
fn readout_only_network_on_identity_data() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compute", "--data", "identity:2", "--arch", "2", "--bias", "--out", p(dir.path())]);
    let k = read_matrix(dir.path().join("ntk.ntkmat")).unwrap();
    assert_eq!(k, Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap());
}

#[test]
fn missing_data_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ntk(&["compute", "--data", p(&dir.path().join("absent.ntkmat")), "--arch", "2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["compute", "--data", "identity:2", "--arch", "3", "--out", p(dir.path())],
        vec!["compute", "--data", "identity:2", "--arch", "2", "--activation", "gelu", "--out", p(dir.path())],
        vec!["compute", "--data", "identity:2", "--arch", "2", "--method", "autograd", "--out", p(dir.path())],
    ] {
        assert_eq!(ntk(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unknown_flags_fail_fast_and_help_lists_flags() {
    assert_eq!(ntk(&["compute", "--frobnicate"]).status.code(), Some(2));
    let help = ok(&["compute", "--help"]);
    for flag in ["--data", "--arch", "--activation", "--bias", "--seed", "--out", "--layerwise", "--method"] {
        assert!(help.contains(flag), "{flag}");
    }
    let help = ok(&["train-track", "--help"]);
    for flag in ["--steps", "--lr", "--loss", "--snapshot-every", "--out"] {
        assert!(help.contains(flag), "{flag}");
    }
    for sub in ["classify", "eigen", "bench"] {
        ok(&[sub, "--help"]);
    }
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["compute", "--data", "synth:d=3,n=6", "--arch", "3,5,5", "--seed", "11", "--layerwise", "--out", p(&out)]);
        ok(&["train-track", "--data", "synth:d=3,n=6", "--arch", "3,5", "--seed", "11", "--steps", "20", "--snapshot-every", "5", "--out", p(&out.join("train"))]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["ntk.ntkmat", "metadata.txt", "components/layer2.weight.ntkmat", "train/snapshots.csv", "train/step_00000020/layer1.weight.ntkmat"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train-track", "--data", "synth:d=4,n=8", "--arch", "4,6", "--steps", "10", "--lr", "0", "--snapshot-every", "2", "--out", p(dir.path())]);
    let (_, series) = read_snapshot_series(dir.path()).unwrap();
    let steps: Vec<usize> = series.records().iter().map(|r| r.step).collect();
    assert_eq!(steps, [0, 2, 4, 6, 8, 10]);
    assert!(series.records().iter().all(|r| r.loss == series.records()[0].loss));
    let k0 = series.first().unwrap().full_kernel().unwrap();
    assert_eq!(series.last().unwrap().full_kernel().unwrap(), k0);
}

#[test]
fn training_on_separable_data_raises_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "train-track", "--data", "synth:d=5,n=40,sep=4", "--arch", "5,16", "--steps", "300", "--lr", "0.5", "--snapshot-every", "0",
        "--eval-data", "holdout", "--out", p(dir.path()),
    ]);
    let acc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("train accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 0.9, "{stdout}");
    assert!(stdout.contains("kernel machine accuracy (final)"));
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = ntk(&[
        "train-track", "--data", "synth:d=4,n=5", "--arch", "4,8,8", "--activation", "identity", "--steps", "20", "--lr", "1e300", "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn classify_and_eigen_read_computed_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let k = Mat::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    write_matrix(dir.path().join("k.ntkmat"), &k, MatFormat::Binary).unwrap();
    write_labels(dir.path().join("y.txt"), &[0, 0, 1]).unwrap();
    let out = ok(&["classify", "--train-ntk", p(&dir.path().join("k.ntkmat")), "--labels", p(&dir.path().join("y.txt"))]);
    assert_eq!(out.trim(), "accuracy: 1.000000");

    let cross = Mat::from_rows(&[[1.0, 0.0, 3.0]]).unwrap();
    write_matrix(dir.path().join("c.csv"), &cross, MatFormat::Csv).unwrap();
    write_labels(dir.path().join("ye.txt"), &[1]).unwrap();
    let out = ok(&[
        "classify", "--cross-ntk", p(&dir.path().join("c.csv")), "--labels", p(&dir.path().join("y.txt")), "--eval-labels",
        p(&dir.path().join("ye.txt")),
    ]);
    assert_eq!(out.trim(), "accuracy: 1.000000");

    let out = ok(&["eigen", "--ntk", p(&dir.path().join("k.ntkmat")), "--params", "10", "--format", "csv"]);
    let eigs: Vec<f64> = out.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    for (a, b) in eigs.iter().zip([3.0, 1.0, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    let out = ok(&["eigen", "--ntk", p(&dir.path().join("k.ntkmat")), "--params", "10"]);
    assert!(out.contains("zero eigenvalues (fim): 7"));
}

#[test]
fn cross_kernel_output_matches_training_block() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compute", "--data", "identity:3", "--eval-data", "identity:3", "--arch", "3,4", "--seed", "1", "--out", p(dir.path())]);
    let k = read_matrix(dir.path().join("ntk.ntkmat")).unwrap();
    let c = read_matrix(dir.path().join("cross.ntkmat")).unwrap();
    assert!(k.rel_diff(&c).unwrap() <= 1e-14);
}

#[test]
fn bench_prints_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let table = ok(&["bench", "--arch", "mlp_h", "--width", "8", "--sizes", "1,4", "--csv", p(&csv)]);
    assert!(table.contains("oracle_layerwise"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);
    let json = ok(&["bench", "--arch", "mlp", "--sizes", "1", "--methods", "explicit", "--json"]);
    assert!(json.contains("\"method\": \"explicit\""));
    assert_eq!(ntk(&["bench", "--runs", "2", "--sizes", "1"]).status.code(), Some(2));
}

#[test]
fn thread_cap_must_be_positive() {
    let out = Command::new(env!("CARGO_BIN_EXE_ntk"))
        .args(["eigen", "--ntk", "x"])
        .env("NTK_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
