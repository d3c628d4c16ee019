mod common;

use common::{cli_run_twice, TINY_RUN};

/// Runs the `protogan` binary with `args` and returns (exit code, stdout, stderr).
fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_protogan"))
        .args(args)
        .env_remove("PROTOGAN_OUT")
        .output()
        .expect("spawn protogan");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn help_lists_configuration_keys() {
    let (code, out, _) = run_cli(&["--help"]);
    assert_eq!(code, 0);
    for key in ["gan.epochs", "synth.keep_fraction", "run.shots", "proto.pooling"] {
        assert!(out.contains(key), "missing {key}");
    }
}

#[test]
fn repeated_runs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = cli_run_twice(dir.path(), |args| {
        let (code, _, err) = run_cli(args);
        (code, err)
    });
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn usage_errors_exit_two_and_failures_exit_one() {
    assert_eq!(run_cli(&["run"]).0, 2);
    assert_eq!(run_cli(&["frobnicate"]).0, 2);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let (code, _, err) = run_cli(&[
        "--out", dir.path().to_str().unwrap(), "run", "--features", missing.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("nope.csv"), "{err}");
    let (code, _, err) = run_cli(&["--set", "gan.epochs=zero", "inspect", "x"]);
    assert_eq!(code, 1);
    assert!(err.contains("gan.epochs"), "{err}");
}

#[test]
fn pipeline_commands_chain_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let ok = |args: &[&str]| {
        let (code, stdout, err) = run_cli(args);
        assert_eq!(code, 0, "{args:?}: {err}");
        stdout
    };
    ok(&["--out", out, "gen-benchmark", "--classes", "4", "--dim", "8", "--per-class", "8", "--name", "b.csv"]);
    let feats = p("b.csv");
    let mut train = vec!["--out", out, "--set", "cptn.epochs=2", "--set", "gan.epochs=2"];
    train.extend(["train-cptn", "--features", &feats]);
    ok(&train);
    let mut cgan = vec!["--out", out, "--set", "cptn.epochs=2", "--set", "gan.epochs=2"];
    cgan.extend(["train-cgan", "--features", &feats, "--strategy", "heuristic"]);
    ok(&cgan);
    let (gan, cptn) = (p("cgan.pgg"), p("cptn.pgm"));
    ok(&["--out", out, "synth", "--gan", &gan, "--features", &feats, "--strategy", "heuristic", "--count", "5"]);
    ok(&["--out", out, "synth", "--gan", &gan, "--cptn", &cptn, "--features", &feats, "--name", "s2.csv"]);

    let synth = std::fs::read_to_string(p("synthetic.csv")).unwrap();
    // at most 4 classes x 5 rows after pruning
    let rows = synth.lines().count() - 1;
    assert!(rows > 0 && rows <= 20, "{rows}");

    assert!(ok(&["inspect", &feats]).contains("4"));
    assert!(ok(&["inspect", &cptn]).contains("layer 0"));
    assert!(ok(&["inspect", &gan]).contains("heuristic"));
}

#[test]
fn ablate_writes_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = run_cli(&[
        "--out", out, "gen-benchmark", "--classes", "5", "--dim", "8", "--per-class", "12",
    ]);
    assert_eq!(code, 0, "{err}");
    let feats = dir.path().join("benchmark.pgf");
    let mut args = vec!["--out", out, "ablate", "--features", feats.to_str().unwrap(), "--runs", "1", "--k", "1"];
    args.extend(TINY_RUN);
    let (code, stdout, err) = run_cli(&args);
    assert_eq!(code, 0, "{err}");
    let table = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    for arm in ["pooling=none", "pooling=max", "pooling=avg", "pruning=off"] {
        assert!(table.contains(arm), "{arm} missing:\n{table}");
    }
    assert!(dir.path().join("ablation.csv").exists());
    assert!(stdout.contains("ablation.csv"));
}
