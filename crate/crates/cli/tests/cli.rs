//! The `rf` binary: exit codes, launcher behavior and output files.

use std::process::{Command, Output};

use parforest::engine::read_records;
use parforest::Mode;

const RF: &str = env!("CARGO_BIN_EXE_rf");

fn rf(args: &[&str]) -> Output {
    Command::new(RF).args(args).output().expect("rf runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(rf(&["run", "--mode", "fork", "--synth", "50,2,2"]).status.code(), Some(1));
    assert_eq!(rf(&["run"]).status.code(), Some(1));
    assert_eq!(rf(&["run", "--synth", "50,2,2", "--workers", "0"]).status.code(), Some(1));
    assert_eq!(rf(&["launch", "--ranks", "0", "--", "rf", "spmd-demo"]).status.code(), Some(1));
    assert_eq!(rf(&["--help"]).status.code(), Some(0));
    assert_eq!(rf(&["--version"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let out = rf(&["run", "--data", "/nonexistent/letters.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/letters.csv"));
}

#[test]
fn unreachable_group_is_a_protocol_error() {
    let out = Command::new(RF)
        .args(["spmd-demo"])
        .env("RF_GROUP_SIZE", "2")
        .env("RF_RANK", "1")
        .env("RF_RENDEZVOUS", "127.0.0.1:1")
        .env("RF_TIMEOUT_SECS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let bad = Command::new(RF)
        .args(["spmd-demo"])
        .env("RF_GROUP_SIZE", "2")
        .env("RF_RANK", "1")
        .env("RF_RENDEZVOUS", "127.0.0.1:1")
        .env("RF_TIMEOUT_SECS", "soon")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn serial_run_prints_accuracy_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = rf(&["run", "--synth", "500,8,4", "--trees", "40", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "accuracy 0.740000\n");
    let recs = read_records(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!((recs[0].mode, recs[0].trees, recs[0].seed, recs[0].accuracy), (Mode::Serial, 40, 1, 0.74));
}

#[test]
fn launched_spmd_prints_once_and_root_writes_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("spmd.csv");
    let o = rf(&[
        "launch",
        "--ranks",
        "4",
        "--",
        "rf",
        "run",
        "--mode",
        "spmd",
        "--synth",
        "500,8,4",
        "--trees",
        "40",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "accuracy 0.740000\n");
    let recs = read_records(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!((recs.len(), recs[0].ranks, recs[0].accuracy), (1, 4, 0.74));
}

#[test]
fn launch_of_one_rank_succeeds() {
    let o = rf(&["launch", "--ranks", "1", "--", "rf", "spmd-demo"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "spmd-demo: 1 ranks checked in\n");
}

#[test]
fn launcher_reports_a_failing_rank() {
    let o = rf(&["launch", "--ranks", "2", "--", "rf", "run", "--mode", "spmd", "--data", "/nonexistent.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rank"), "{err}");
}

#[test]
fn launcher_reports_a_child_that_exits_before_joining() {
    let o = rf(&["launch", "--ranks", "3", "--", "sh", "-c", "exit 4"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exited"));
}

#[test]
fn bench_sweep_has_one_row_per_cell_and_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = rf(&[
        "bench",
        "--modes",
        "mc,spmd",
        "--counts",
        "1,2,4,8,16",
        "--reps",
        "3",
        "--trees",
        "16",
        "--synth",
        "120,4,3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "mode,workers,ranks,trees,seed,train_time_s,predict_time_s,total_time_s,accuracy"
    );
    let recs = read_records(text.as_bytes()).unwrap();
    assert_eq!(recs.len(), 30);
    let acc = recs[0].accuracy;
    assert!(recs.iter().all(|r| r.accuracy == acc));
    for count in [1, 2, 4, 8, 16] {
        assert_eq!(recs.iter().filter(|r| r.mode == Mode::Mc && r.workers == count).count(), 3);
        assert_eq!(recs.iter().filter(|r| r.mode == Mode::Spmd && r.ranks == count).count(), 3);
    }
    let table = stdout(&o);
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 10);
}
