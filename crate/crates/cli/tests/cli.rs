use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wardrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wardrisk"))
        .args(args)
        .env_remove("WARDRISK_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wardrisk(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    wardrisk(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn subdir(root: &TempDir, name: &str) -> PathBuf {
    let p = root.path().join(name);
    fs::create_dir(&p).unwrap();
    p
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn simulate(root: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let dir = subdir(root, name);
    let mut args = vec!["simulate", "--out-dir", s(&dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

fn rewrite_lines(src: &Path, dst: &Path, edit: impl Fn(usize, Value) -> Option<Value>) {
    let text = fs::read_to_string(src).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .filter_map(|(i, l)| edit(i, serde_json::from_str(l).unwrap()))
        .map(|v| v.to_string())
        .collect();
    fs::write(dst, lines.join("\n") + "\n").unwrap();
}

/// Train a small two-phenotype model on a fresh recovery cohort.
fn trained(root: &TempDir) -> (PathBuf, PathBuf) {
    let sim = simulate(
        root,
        "sim",
        &["--n", "60", "--seed", "5", "--truth", "recovery"],
    );
    let fit = subdir(root, "fit");
    let cohort = sim.join("cohort.jsonl");
    ok(&[
        "train",
        "--cohort",
        s(&cohort),
        "--out-dir",
        s(&fit),
        "-g",
        "2",
        "-k",
        "2",
        "--rank",
        "1",
        "--max-iter",
        "2",
    ]);
    (cohort, fit.join("model.json"))
}

#[test]
fn simulate_is_reproducible() {
    let root = TempDir::new().unwrap();
    let a = simulate(&root, "a", &["--n", "100", "--seed", "7"]);
    let b = simulate(&root, "b", &["--n", "100", "--seed", "7"]);
    for f in ["cohort.jsonl", "truth.csv", "truth_model.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_output_directory_writes_nothing() {
    let root = TempDir::new().unwrap();
    let missing = root.path().join("nope");
    assert_eq!(
        exit_code(&["simulate", "--out-dir", s(&missing), "--n", "5"]),
        2
    );
    assert!(!missing.exists());
    assert!(listing(root.path()).is_empty());
}

#[test]
fn paper_scale_truth_has_the_published_shape() {
    let root = TempDir::new().unwrap();
    let dir = simulate(&root, "p", &["--n", "3", "--paper-scale"]);
    let model: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("truth_model.json")).unwrap()).unwrap();
    assert_eq!(model["phenotypes"], 4);
    assert_eq!(model["epochs"], 12);
}

#[test]
fn flags_override_the_config_file() {
    let root = TempDir::new().unwrap();
    let config = root.path().join("run.toml");
    fs::write(
        &config,
        "[simulate]\npatients = 12\nseed = 3\ntruth = \"recovery\"\n",
    )
    .unwrap();
    let dir = subdir(&root, "out");
    ok(&[
        "simulate",
        "--config",
        s(&config),
        "--out-dir",
        s(&dir),
        "--seed",
        "4",
    ]);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let used = &manifest["config"]["simulate"];
    assert_eq!(used["patients"], 12);
    assert_eq!(used["seed"], 4);
    assert_eq!(used["truth"], "recovery");

    let direct = simulate(
        &root,
        "direct",
        &["--n", "12", "--seed", "4", "--truth", "recovery"],
    );
    assert_eq!(
        fs::read(dir.join("cohort.jsonl")).unwrap(),
        fs::read(direct.join("cohort.jsonl")).unwrap()
    );
}

#[test]
fn manifest_replays_the_run() {
    let root = TempDir::new().unwrap();
    let dir = simulate(&root, "a", &["--n", "20", "--seed", "11"]);
    let first = fs::read(dir.join("cohort.jsonl")).unwrap();
    let manifest = root.path().join("replay.json");
    fs::copy(dir.join("manifest.json"), &manifest).unwrap();
    fs::remove_file(dir.join("cohort.jsonl")).unwrap();
    ok(&["simulate", "--config", s(&manifest)]);
    assert_eq!(fs::read(dir.join("cohort.jsonl")).unwrap(), first);
    assert_eq!(
        fs::read(dir.join("manifest.json")).unwrap(),
        fs::read(&manifest).unwrap()
    );
}

#[test]
fn unknown_config_keys_are_config_errors() {
    let root = TempDir::new().unwrap();
    let config = root.path().join("bad.toml");
    fs::write(&config, "[simulate]\npatiens = 12\n").unwrap();
    assert_eq!(
        exit_code(&[
            "simulate",
            "--config",
            s(&config),
            "--out-dir",
            s(root.path())
        ]),
        2
    );
    assert_eq!(exit_code(&["train", "--out-dir", s(root.path())]), 2);
    assert_eq!(
        exit_code(&["simulate", "--threads", "0", "--out-dir", s(root.path())]),
        2
    );
}

#[test]
fn thread_count_does_not_change_outputs() {
    let root = TempDir::new().unwrap();
    let sim = simulate(
        &root,
        "sim",
        &["--n", "50", "--seed", "8", "--truth", "recovery"],
    );
    let cohort = sim.join("cohort.jsonl");
    let mut files = Vec::new();
    for threads in ["1", "8"] {
        let fit = subdir(&root, &format!("fit{threads}"));
        let scores = subdir(&root, &format!("score{threads}"));
        ok(&[
            "train",
            "--threads",
            threads,
            "--cohort",
            s(&cohort),
            "--out-dir",
            s(&fit),
            "-g",
            "2",
            "-k",
            "2",
            "--rank",
            "1",
            "--max-iter",
            "3",
        ]);
        let model = fit.join("model.json");
        ok(&[
            "score",
            "--threads",
            threads,
            "--model",
            s(&model),
            "--cohort",
            s(&cohort),
            "--out-dir",
            s(&scores),
            "--hourly-ticks",
        ]);
        files.push((
            fs::read(&model).unwrap(),
            fs::read(scores.join("scores.csv")).unwrap(),
        ));
    }
    assert!(files[0].0 == files[1].0, "model files differ");
    assert!(files[0].1 == files[1].1, "score files differ");
}

#[test]
fn one_class_cohort_is_rejected() {
    let root = TempDir::new().unwrap();
    let sim = simulate(&root, "sim", &["--n", "40", "--seed", "9"]);
    let stable = root.path().join("stable.jsonl");
    rewrite_lines(&sim.join("cohort.jsonl"), &stable, |i, v| {
        (i == 0 || v["outcome"] == 0).then_some(v)
    });
    let out = subdir(&root, "fit");
    let run = wardrisk(&[
        "train",
        "--cohort",
        s(&stable),
        "--out-dir",
        s(&out),
        "--rank",
        "1",
    ]);
    assert_eq!(run.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&run.stderr);
    assert_eq!(msg.trim().lines().count(), 1, "{msg}");
    assert!(msg.starts_with("error[data]"), "{msg}");
    assert!(listing(&out).is_empty());
}

#[test]
fn patient_without_events_scores_the_prior() {
    let root = TempDir::new().unwrap();
    let sim = simulate(&root, "sim", &["--n", "5", "--seed", "12"]);
    let cohort = root.path().join("empty.jsonl");
    rewrite_lines(&sim.join("cohort.jsonl"), &cohort, |i, mut v| {
        if i == 1 {
            v["events"] = Value::Array(Vec::new());
        }
        Some(v)
    });
    let out = subdir(&root, "scores");
    let model = sim.join("truth_model.json");
    ok(&[
        "score",
        "--model",
        s(&model),
        "--cohort",
        s(&cohort),
        "--out-dir",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("sim-0,")).collect();
    assert_eq!(rows, vec!["sim-0,0,0.09"]);
}

#[test]
fn vocabulary_mismatch_is_a_data_error() {
    let root = TempDir::new().unwrap();
    let (cohort, model) = trained(&root);
    let other = root.path().join("other.jsonl");
    rewrite_lines(&cohort, &other, |i, mut v| {
        if i == 0 {
            v["vocabulary"]["gender"]
                .as_array_mut()
                .unwrap()
                .push("X".into());
        }
        Some(v)
    });
    let out = subdir(&root, "scores");
    let args = [
        "score",
        "--model",
        s(&model),
        "--cohort",
        s(&other),
        "--out-dir",
        s(&out),
    ];
    assert_eq!(exit_code(&args), 3);
    assert!(listing(&out).is_empty());
}

#[test]
fn numerical_failure_exits_with_four() {
    let root = TempDir::new().unwrap();
    let (cohort, model) = trained(&root);
    let mut params: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    for side in ["stable", "deteriorating"] {
        for traj in params[side].as_array_mut().unwrap() {
            traj["durations"]["t_max"] = 2.into();
        }
    }
    let short = root.path().join("short.json");
    fs::write(&short, params.to_string()).unwrap();
    let out = subdir(&root, "scores");
    let run = wardrisk(&[
        "score",
        "--model",
        s(&short),
        "--cohort",
        s(&cohort),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(run.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&run.stderr).starts_with("error[numerical]"));
    assert!(listing(&out).is_empty());
}

#[test]
fn evaluate_reports_every_row_and_column() {
    let root = TempDir::new().unwrap();
    let (cohort, model) = trained(&root);
    let stationary_dir = subdir(&root, "stationary");
    ok(&[
        "train",
        "--cohort",
        s(&cohort),
        "--out-dir",
        s(&stationary_dir),
        "-g",
        "1",
        "-k",
        "1",
        "--rank",
        "1",
        "--max-iter",
        "2",
    ]);
    let stationary = stationary_dir.join("model.json");
    let metrics = |report: &Value| -> Vec<String> {
        report["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["metric"].as_str().unwrap().to_string())
            .collect()
    };
    let mut reports = Vec::new();
    for (name, with_ablation) in [("a", true), ("b", true), ("c", false)] {
        let out = subdir(&root, name);
        let mut args = vec![
            "evaluate",
            "--model",
            s(&model),
            "--cohort",
            s(&cohort),
            "--out-dir",
            s(&out),
        ];
        if with_ablation {
            args.extend(["--stationary-model", s(&stationary)]);
        }
        ok(&args);
        let report: Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(
            report["columns"],
            serde_json::json!(["full", "stationary", "snapshot"])
        );
        for row in report["rows"].as_array().unwrap() {
            for c in ["full", "stationary", "snapshot"] {
                assert!(
                    row["values"].get(c).is_some(),
                    "{} lacks {c}",
                    row["metric"]
                );
            }
        }
        let m = metrics(&report);
        for want in [
            "AUC (ICU admission)",
            "AUC (Discharge at 0.01)",
            "AUC (Discharge at 0.05)",
            "AUC (Discharge at 0.2)",
            "PPV at TPR 50%",
            "Median lead time at TPR 50% (hours)",
        ] {
            assert!(m.iter().any(|x| x == want), "missing {want}");
        }
        let files = listing(&out);
        assert!(files.contains(&"full_roc.csv".to_string()));
        assert!(files.contains(&"full_timeliness.svg".to_string()));
        reports.push((fs::read(out.join("report.json")).unwrap(), report));
    }
    assert_eq!(reports[0].0, reports[1].0, "evaluate is not deterministic");
    let without = &reports[2].1["rows"][0]["values"];
    assert!(without["stationary"].is_null() && without["snapshot"].is_null());
}

#[test]
fn inputs_are_left_untouched() {
    let root = TempDir::new().unwrap();
    let (cohort, model) = trained(&root);
    let before = (fs::read(&cohort).unwrap(), fs::read(&model).unwrap());
    let out = subdir(&root, "scores");
    ok(&[
        "score",
        "--model",
        s(&model),
        "--cohort",
        s(&cohort),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(
        before,
        (fs::read(&cohort).unwrap(), fs::read(&model).unwrap())
    );
}
