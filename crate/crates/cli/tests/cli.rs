use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_CONFIG: &str = r#"{
  "epochs": 2,
  "batch_size": 2,
  "steps_per_epoch": 1,
  "schedule": [{"start_epoch": 0, "clip_len": 32}, {"start_epoch": 1, "clip_len": 48}]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycledance"))
        .args(args)
        .env("CYCLEDANCE_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind="), "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(root: &Path) {
    ok(&["synth-data", "--out", s(root), "--seed", "3", "--clips", "2", "--seconds", "10", "--eval-clips", "4"]);
}

#[test]
fn synth_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    dataset(&a);
    dataset(&b);
    for f in ["domain_X/clip_1.motion.csv", "domain_Y/clip_0.audio.csv", "eval/domain_Y/clip_1.motion.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn identity_evaluation_scores_the_source_clips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let out = dir.path().join("report.csv");
    let stdout = ok(&["evaluate", "--identity", "--data", s(&data), "--out", s(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(stdout, csv);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# config_hash=identity"));
    assert_eq!(lines.next(), Some("direction,metric,value,n_clips"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert!(["BJ2LC", "LC2BJ"].contains(&cols[0]), "{r}");
        assert!(cols[2].parse::<f64>().unwrap() >= 0.0);
        assert_eq!(cols[3], "4");
    }
}

#[test]
fn train_transfer_and_evaluate_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let ckpt = dir.path().join("ckpt");
    let stdout = ok(&["train", "--data", s(&data), "--config", s(&cfg), "--ablation", "cycledance", "--out", s(&ckpt)]);
    assert!(stdout.contains("2 steps"), "{stdout}");
    assert!(ckpt.join("losses.csv").exists());

    let clip = data.join("domain_X/clip_0.motion.csv");
    let music = data.join("domain_X/clip_0.audio.csv");
    let out = dir.path().join("out/clip.csv");
    let err = fails(
        &["transfer", "--ckpt", s(&ckpt), "--in", s(&clip), "--direction", "x2y", "--out", s(&out)],
        2,
    );
    assert!(err.contains("music"), "{err}");
    ok(&["transfer", "--ckpt", s(&ckpt), "--in", s(&clip), "--music", s(&music), "--direction", "x2y", "--out", s(&out)]);
    let final_dir = ckpt.join("final");
    let again = dir.path().join("again.csv");
    ok(&["transfer", "--ckpt", s(&final_dir), "--in", s(&clip), "--music", s(&music), "--direction", "x2y", "--out", s(&again)]);
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(&again).unwrap());
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/clip.csv.json")).unwrap()).unwrap();
    let hash = sidecar["config_hash"].as_str().unwrap().to_string();
    assert_eq!(sidecar["frames"], 300);
    assert_eq!(sidecar["direction"], "x2y");
    let first = fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().count(), 2 + 300);

    let report = dir.path().join("report.csv");
    ok(&["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&report)]);
    assert!(fs::read_to_string(&report).unwrap().starts_with(&format!("# config_hash={hash}\n")));

    ok(&["train", "--data", s(&data), "--ablation", "cycledance", "--out", s(&ckpt), "--resume", s(&ckpt)]);
    let err = fails(
        &["train", "--data", s(&data), "--ablation", "baseline", "--out", s(&ckpt), "--resume", s(&ckpt)],
        2,
    );
    assert!(err.contains("baseline"), "{err}");
}

#[test]
fn untrained_checkpoints_are_not_evaluated() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_CONFIG.replace("\"epochs\": 2", "\"epochs\": 0")).unwrap();
    let ckpt = dir.path().join("ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    let err = fails(
        &["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&dir.path().join("r.csv"))],
        2,
    );
    assert!(err.contains("not been trained"), "{err}");
}

#[test]
fn identity_transfer_copies_the_clip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let clip = data.join("domain_Y/clip_1.motion.csv");
    let out = dir.path().join("copy.csv");
    ok(&["transfer", "--identity", "--in", s(&clip), "--direction", "y2x", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&clip).unwrap(), fs::read_to_string(&out).unwrap());
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let err = fails(&["evaluate", "--identity", "--data", s(&missing), "--out", s(&dir.path().join("r.csv"))], 2);
    assert!(err.contains("kind=validation"), "{err}");
    fails(&["synth-data", "--out", s(&dir.path().join("d")), "--clips", "0"], 2);

    let data = dir.path().join("data");
    dataset(&data);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"epochs": 1, "learning_rate": 3}"#).unwrap();
    let err = fails(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("c"))], 2);
    assert!(err.contains("bad.json"), "{err}");

    let out = run(&["transfer", "--identity", "--in", "x.csv", "--direction", "sideways", "--out", "y.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_statistics_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let clip = data.join("eval/domain_X/clip_0.motion.csv");
    let text = fs::read_to_string(&clip).unwrap();
    let huge: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i < 2 {
                return l.to_string();
            }
            let v = if i % 2 == 0 { "1e300" } else { "-1e300" };
            l.split(',').map(|_| v).collect::<Vec<_>>().join(",")
        })
        .collect();
    fs::write(&clip, huge.join("\n") + "\n").unwrap();
    let err = fails(&["evaluate", "--identity", "--data", s(&data), "--out", s(&dir.path().join("r.csv"))], 3);
    assert!(err.contains("kind=numeric"), "{err}");
}

#[test]
fn bad_thread_counts_are_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_cycledance"))
        .args(["transfer", "--identity", "--in", "a.csv", "--direction", "x2y", "--out", "b.csv"])
        .env("CYCLEDANCE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CYCLEDANCE_THREADS"));
}
