use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--epochs", "2", "--n-train", "30", "--n-test", "20", "--m", "3", "--repeats", "1",
];

fn aleatoric(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aleatoric"))
        .env_remove("ALEATORIC_OUT")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = aleatoric(dir.path(), &["run", "--set", "no_such_key=1"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.conf");
    let o = aleatoric(dir.path(), &["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_flag_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = aleatoric(dir.path(), &["run", "--epochs", "many"]);
    assert_eq!(code(&o), 2);
    let o = aleatoric(dir.path(), &["run", "--bogus-flag"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["simulate", "--deltas", "0,1"]);
    let o = aleatoric(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for d in ["delta_0", "delta_1"] {
        let run = dir.path().join("simulate").join(d);
        assert!(run.join("report.json").is_file());
        assert!(run.join("pir_curves.csv").is_file());
        assert!(run.join("cache").join("residuals_seed0.txt").is_file());
    }
    let summary = std::fs::read_to_string(dir.path().join("simulate/summary.txt")).unwrap();
    // header plus three methods for each of two step heights
    assert_eq!(summary.lines().count(), 7);
    assert_eq!(summary, stdout(&o));

    let o = aleatoric(dir.path(), &["report"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), summary);
}

#[test]
fn config_file_and_priority() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        "# tiny run\nmethods = l1_only\nepochs = 50\nn_train = 30\nn_test = 20\nrepeats = 1\n",
    )
    .unwrap();
    let o = aleatoric(
        dir.path(),
        &["run", "--config", conf.to_str().unwrap(), "--epochs", "3", "--set", "epochs=2"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json = std::fs::read_to_string(dir.path().join("run/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["config"]["train"]["epochs"], 2);
    assert_eq!(v["seeds"][0]["methods"][0]["epochs_run"], 2);
}

#[test]
fn stale_cache_is_refused_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let first = with_tiny(&["folds"]);
    assert_eq!(code(&aleatoric(dir.path(), &first)), 0);

    let mut changed = first.clone();
    changed.extend(["--learning-rate", "0.01"]);
    let o = aleatoric(dir.path(), &changed);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));

    changed.extend(["--allow-stale-cache", "true"]);
    let o = aleatoric(dir.path(), &changed);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("loaded"));
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let pairs = dir.path().join("pairs.csv");
    let mut args = with_tiny(&["train", "--method", "joint_laplace", "--checkpoint"]);
    args.insert(4, ckpt.to_str().unwrap());
    assert_eq!(code(&aleatoric(dir.path(), &args)), 0);
    assert!(ckpt.is_file());

    let mut args = with_tiny(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--pairs"]);
    args.insert(4, pairs.to_str().unwrap());
    args.extend(["--method", "joint_laplace"]);
    let o = aleatoric(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["ermse"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(&pairs).unwrap();
    assert_eq!(csv.lines().count(), 21);

    // a one-head convention cannot read a two-head checkpoint
    let o = aleatoric(
        dir.path(),
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--method", "l1_only"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("from_env");
    let mut args = vec!["folds"];
    args.extend(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_aleatoric"))
        .env("ALEATORIC_OUT", &root)
        .args(&args)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(root.join("folds/cache/residuals_seed0.txt").is_file());
}

#[test]
fn report_without_runs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = aleatoric(dir.path(), &["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
