use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cnn_scene_char::cli::{EFFECTIVE_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, SEED_ENV};
use cnn_scene_char::experiment::RunOutcome;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cnn-scene-char"));
    cmd.env_remove(SEED_ENV);
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert_eq!(code(&out), EXIT_OK, "{args:?}\n{}", stderr(&out));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn conf_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join(EFFECTIVE_CONFIG)).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
}

/// A three-class synthetic tree prepared into a 45/15 split.
fn prepared(dir: &Path) -> PathBuf {
    let raw = dir.join("raw");
    let prep = dir.join("prep");
    ok(&["synth", "--out", p(&raw), "--classes", "3", "--per-class", "4", "--seed", "1"]);
    ok(&["prepare", "--root", p(&raw), "--out", p(&prep), "--train", "45", "--test", "15"]);
    prep.join("manifest.jsonl")
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), EXIT_USAGE);
    assert_eq!(code(&run(&["fly"])), EXIT_USAGE);
    let out = run(&["train", "--manifest", "m", "--out", "o", "--momentum", "0.9"]);
    assert_eq!(code(&out), EXIT_USAGE);
    let out = run(&["train", "--out", "o"]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(stderr(&out).contains("--manifest"), "{}", stderr(&out));
    assert_eq!(code(&run(&["gradcheck", "--arch", "C"])), EXIT_USAGE);
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["train", "--help"]);
    let help = stdout(&out);
    for needle in ["--filter", "[default: 3]", "--lr", "[default: 0.005]", "--arch", "[default: B]", "--epochs", "[default: 50]"] {
        assert!(help.contains(needle), "missing {needle}:\n{help}");
    }
    assert!(stdout(&ok(&["sweep", "--help"])).contains("[default: default]"));
}

#[test]
fn missing_paths_are_runtime_errors_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.jsonl");
    let out = run(&["train", "--manifest", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(code(&out), EXIT_RUNTIME);
    assert!(stderr(&out).contains(p(&missing)), "{}", stderr(&out));

    let out = run(&["report", "--runs-dir", p(&tmp.path().join("runs"))]);
    assert_eq!(code(&out), EXIT_RUNTIME);
    assert!(stderr(&out).contains("runs"));

    let out = run(&["train", "--manifest", "m", "--out", "o", "--config", p(&tmp.path().join("x.conf"))]);
    assert_eq!(code(&out), EXIT_RUNTIME);
    assert!(stderr(&out).contains("x.conf"));
}

#[test]
fn synth_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--out", p(&a), "--classes", "5", "--per-class", "3", "--seed", "7"]);
    ok(&["synth", "--out", p(&b), "--classes", "5", "--per-class", "3", "--seed", "7"]);
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    assert_eq!(ta.len(), 15 + 2);
    assert!(ta == tb);
}

#[test]
fn seed_precedence_flag_file_env_default() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &Path| vec!["synth".to_string(), "--out".into(), p(out).into(), "--classes".into(), "2".into(), "--per-class".into(), "2".into()];

    let d = tmp.path().join("default");
    ok(&args(&d).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(conf_value(&d, "seed"), "0");

    let e = tmp.path().join("env");
    let out = bin().args(args(&e)).env(SEED_ENV, "9").output().unwrap();
    assert_eq!(code(&out), EXIT_OK);
    assert_eq!(conf_value(&e, "seed"), "9");

    let conf = tmp.path().join("s.conf");
    std::fs::write(&conf, "seed = 3\n").unwrap();
    let f = tmp.path().join("file");
    let mut with_file = args(&f);
    with_file.extend(["--config".into(), p(&conf).into()]);
    let out = bin().args(&with_file).env(SEED_ENV, "9").output().unwrap();
    assert_eq!(code(&out), EXIT_OK);
    assert_eq!(conf_value(&f, "seed"), "3");

    let g = tmp.path().join("flag");
    let mut with_flag = args(&g);
    with_flag.extend(["--config".into(), p(&conf).into(), "--seed".into(), "4".into()]);
    let out = bin().args(&with_flag).env(SEED_ENV, "9").output().unwrap();
    assert_eq!(code(&out), EXIT_OK);
    assert_eq!(conf_value(&g, "seed"), "4");
}

fn single_report(dir: &Path) -> (PathBuf, cnn_scene_char::experiment::MetricsReport) {
    let json = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "json"))
        .expect("report json");
    let outcome: RunOutcome = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let RunOutcome::Completed(report) = outcome else { panic!("run failed") };
    (json.with_extension("ckpt"), report)
}

#[test]
fn train_evaluate_and_rerun_from_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = prepared(tmp.path());

    let frozen = tmp.path().join("frozen");
    ok(&["train", "--manifest", p(&manifest), "--out", p(&frozen), "--lr", "0", "--epochs", "2", "--k1", "4", "--k2", "4", "--fc-hidden", "16"]);
    let (_, report) = single_report(&frozen);
    assert_eq!(report.error_pct, report.baseline_test_error_pct);
    assert!(report.epochs.iter().all(|e| e.test_error_pct == report.baseline_test_error_pct));

    let first = tmp.path().join("first");
    let out = ok(&["train", "--manifest", p(&manifest), "--out", p(&first), "--filter", "5", "--stride", "2", "--epochs", "3", "--seed", "2"]);
    assert!(stdout(&out).contains("test error"));
    let (ckpt, report) = single_report(&first);

    let eval_dir = tmp.path().join("eval");
    let out = ok(&["evaluate", "--ckpt", p(&ckpt), "--manifest", p(&manifest), "--out", p(&eval_dir)]);
    assert!(stdout(&out).contains(&format!("{:.2}%", report.error_pct)), "{}", stdout(&out));
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["error_pct"].as_f64().unwrap(), report.error_pct);
    assert_eq!(eval["samples"].as_u64().unwrap(), 15);

    let second = tmp.path().join("second");
    ok(&["train", "--config", p(&first.join(EFFECTIVE_CONFIG)), "--out", p(&second)]);
    let (ckpt2, report2) = single_report(&second);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&ckpt2).unwrap());
    assert_eq!(report.without_timing(), report2.without_timing());
}

#[test]
fn sweep_then_report_reproduces_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = prepared(tmp.path());
    let out_dir = tmp.path().join("sweep");
    let out = ok(&[
        "sweep", "--manifest", p(&manifest), "--out", p(&out_dir), "--grid", "5:2:0.005;5:2:0.5;3:2:0.005",
        "--seeds", "0,1", "--epochs", "1", "--k1", "2", "--k2", "2", "--fc-hidden", "8", "--jobs", "2",
    ]);
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(stdout(&out), summary);
    assert_eq!(summary.lines().count(), 1 + 6);
    assert!(summary.starts_with("filter,stride,lr,arch,error_pct,diverged,seed\n3,2,0.005,B,"));

    let runs = out_dir.join("runs");
    assert_eq!(stdout(&ok(&["report", "--runs-dir", p(&runs)])), summary);
    let csv = tmp.path().join("again.csv");
    ok(&["report", "--runs-dir", p(&runs), "--format", "csv", "--out", p(&csv)]);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), summary);
    let json: serde_json::Value = serde_json::from_str(&stdout(&ok(&["report", "--runs-dir", p(&runs), "--format", "json"]))).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 6);
}

#[test]
fn gradcheck_passes_for_both_architectures() {
    for arch in ["A", "B"] {
        let out = ok(&["gradcheck", "--arch", arch]);
        assert!(stdout(&out).contains("PASS"), "{}", stdout(&out));
    }
}
