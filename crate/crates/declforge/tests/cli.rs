//! End-to-end checks of the `declforge` binary: artifact layout, output
//! streams, and the documented exit codes (0 success, 1 usage, 2 runtime).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_declforge"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_TRAIN: &str = r#"
[run]
seed = 3
total_env_steps = 1500

[model]
d = 8

[train]
batch = 8
epsilon_anneal_steps = 1000
eval_interval = 500
eval_episodes = 4
replay_capacity = 500

[tasks]
names = ["teamreach-N2-W4-H4-C0"]
"#;

#[test]
fn train_writes_metrics_and_a_full_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", TINY_TRAIN);
    let out_dir = dir.path().join("artifacts");

    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,mode,arch,mixer,task,env_steps,train_steps,eval_win_rate,eval_return,loss,omega,epsilon"
    );
    let first = lines.next().expect("at least one metrics row");
    assert!(first.starts_with("scratch-apn-vdn-s3,scratch,apn,vdn,teamreach-N2-W4-H4-C0,"), "{first}");
    assert!(out_dir.join("net_full.apnc").exists());
    assert!(!out_dir.join("decl.apnc").exists(), "scratch runs do not export a decision layer");

    let log = stderr(&out);
    assert!(log.contains("metrics:"), "{log}");
    assert!(log.contains("full checkpoint:"), "{log}");
}

#[test]
fn pretrain_transfer_eval_report_chain_on_tiny_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let pre_dir = dir.path().join("pre");
    let pre = write_config(
        dir.path(),
        "pre.toml",
        r#"
[run]
seed = 3
total_env_steps = 800

[model]
d = 8

[train]
batch = 8
epsilon_anneal_steps = 600
eval_interval = 400
eval_episodes = 4
replay_capacity = 500

[tasks]
names = ["teamreach-N2-W4-H4-C0", "teamreach-N2-W5-H5-C0"]
"#,
    );
    let out = bin()
        .args(["pretrain", "--config"])
        .arg(&pre)
        .arg("--out")
        .arg(&pre_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let decl = pre_dir.join("decl.apnc");
    assert!(decl.exists());
    assert!(!pre_dir.join("net_full.apnc").exists(), "pretraining exports only the shared layer");

    let transfer_dir = dir.path().join("transfer");
    let transfer = write_config(
        dir.path(),
        "transfer.toml",
        &format!(
            r#"
[run]
seed = 3
total_env_steps = 800

[model]
d = 8

[train]
batch = 8
epsilon_anneal_steps = 600
eval_interval = 400
eval_episodes = 4
replay_capacity = 500

[tasks]
names = ["preychase-N2-W5"]

[transfer]
checkpoint = "{}"
mode = "fix"
"#,
            decl.display()
        ),
    );
    let out = bin()
        .args(["transfer", "--config"])
        .arg(&transfer)
        .arg("--out")
        .arg(&transfer_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(transfer_dir.join("net_full.apnc").exists());
    let metrics = std::fs::read_to_string(transfer_dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("transfer-fix-apn-vdn-s3"), "{metrics}");

    let eval = write_config(
        dir.path(),
        "eval.toml",
        &format!(
            r#"
[run]
seed = 3
total_env_steps = 800

[train]
eval_episodes = 4

[tasks]
names = ["preychase-N2-W5"]

[transfer]
checkpoint = "{}"
mode = "fix"
"#,
            transfer_dir.join("net_full.apnc").display()
        ),
    );
    let out = bin().args(["eval", "--config"]).arg(&eval).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("preychase-N2-W5: win_rate="), "{text}");
    assert!(text.contains("mean_return="), "{text}");

    let report_dir = dir.path().join("report");
    let out = bin()
        .arg("report")
        .arg(transfer_dir.join("metrics.csv"))
        .arg("--out")
        .arg(&report_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let summary = std::fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("group,task,runs,"), "{summary}");
    assert!(summary.contains("transfer-fix-apn-vdn,preychase-N2-W5,1,"), "{summary}");
    let svg = std::fs::read_to_string(report_dir.join("winrate.svg")).unwrap();
    assert!(svg.contains("<svg"), "not an svg: {}", &svg[..svg.len().min(80)]);
    assert!(stdout(&out).contains("group"), "{}", stdout(&out));
}

#[test]
fn out_dir_falls_back_to_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", TINY_TRAIN);
    let env_dir = dir.path().join("from-env");

    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .env("DECLFORGE_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(env_dir.join("metrics.csv").exists());
}

#[test]
fn seed_flag_overrides_the_file_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", TINY_TRAIN);
    let out_dir = dir.path().join("s9");

    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--seed", "9", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("scratch-apn-vdn-s9,"), "{metrics}");
}

#[test]
fn usage_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();

    let missing = bin()
        .args(["train", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1), "stderr: {}", stderr(&missing));
    assert!(stderr(&missing).contains("cannot read"), "{}", stderr(&missing));

    let junk = write_config(dir.path(), "junk.toml", "not toml [[");
    let parse = bin().args(["train", "--config"]).arg(&junk).output().unwrap();
    assert_eq!(parse.status.code(), Some(1), "stderr: {}", stderr(&parse));

    let qmix_pre = write_config(
        dir.path(),
        "qmix.toml",
        &TINY_TRAIN.replace("d = 8", "d = 8\nmixer = \"qmix\""),
    );
    let invalid = bin().args(["pretrain", "--config"]).arg(&qmix_pre).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1), "stderr: {}", stderr(&invalid));
    assert!(stderr(&invalid).contains("additive mixer"), "{}", stderr(&invalid));

    let unknown = bin().arg("frobnicate").output().unwrap();
    assert_eq!(unknown.status.code(), Some(1));

    let no_args = bin().arg("report").output().unwrap();
    assert_eq!(no_args.status.code(), Some(1));

    let missing_csv = bin()
        .args(["report", "/nonexistent/metrics.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(missing_csv.status.code(), Some(1), "stderr: {}", stderr(&missing_csv));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", TINY_TRAIN);
    let blocked = dir.path().join("blocked");
    std::fs::write(&blocked, b"a file, not a directory").unwrap();

    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&blocked)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn help_and_version_exit_0() {
    for flag in ["--help", "--version"] {
        let out = bin().arg(flag).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{flag}");
    }
    let out = bin().arg("--help").output().unwrap();
    let text = stdout(&out);
    for sub in ["pretrain", "transfer", "train", "eval", "report"] {
        assert!(text.contains(sub), "help misses {sub}: {text}");
    }
}
