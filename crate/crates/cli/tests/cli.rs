use std::path::Path;
use std::process::{Command, Output};

fn btunet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btunet"))
        .args(["--log", "warn"])
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run btunet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = btunet(dir, args);
    assert!(
        out.status.success(),
        "btunet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{
  "dataset": {"root": "data", "input_size": 16},
  "model": {"base_channels": 4},
  "variants": ["A_UNET"],
  "bt": [true],
  "fractions": [0.5],
  "folds_k": 2,
  "seeds": [3],
  "pretrain": {"epochs": 1, "batch_size": 4},
  "finetune": {"max_epochs": 2, "batch_size": 4}
}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let msg = ok(dir.path(), &["synth", "--count", "20", "--size", "16", "--out", "data", "--seed", "2"]);
    assert!(msg.contains("20"), "{msg}");
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

#[test]
fn synth_writes_pairs_and_manifest() {
    let dir = setup();
    let d = dir.path().join("data");
    assert_eq!(std::fs::read_dir(d.join("images")).unwrap().count(), 20);
    assert_eq!(std::fs::read_dir(d.join("masks")).unwrap().count(), 20);
    assert!(d.join("manifest.json").is_file());

    // Same seed, same bytes.
    ok(dir.path(), &["synth", "--count", "20", "--size", "16", "--out", "again", "--seed", "2"]);
    let a = std::fs::read(d.join("images/synth_00007.png")).unwrap();
    let b = std::fs::read(dir.path().join("again/images/synth_00007.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pretrain_finetune_eval_chain() {
    let dir = setup();
    let p = dir.path();
    let msg = ok(p, &["pretrain", "--config", "cfg.json", "--out", "enc.ckpt"]);
    assert!(msg.contains("A_UNET"), "{msg}");
    let metrics = ok(
        p,
        &["finetune", "--config", "cfg.json", "--encoder-ckpt", "enc.ckpt", "--out", "seg.ckpt", "--fold", "1"],
    );
    let m: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    for key in ["precision", "dc", "miou"] {
        let v = m[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let eval = ok(p, &["eval", "--ckpt", "seg.ckpt", "--data", "data"]);
    let e: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(e["images"].as_u64(), Some(20));
    let pooled = ok(p, &["eval", "--ckpt", "seg.ckpt", "--data", "data", "--pooled"]);
    assert!(pooled.contains("\"dc\""));

    let out = btunet(p, &["finetune", "--config", "cfg.json", "--encoder-ckpt", "enc.ckpt", "--fold", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fold 5"));
}

#[test]
fn experiment_and_report() {
    let dir = setup();
    let p = dir.path();
    let summary = ok(p, &["experiment", "--config", "cfg.json", "--out", "exp"]);
    assert!(summary.contains("A_UNET") && summary.contains("runs=2"), "{summary}");
    let csv = ok(p, &["report", "--in", "exp"]);
    assert_eq!(csv, std::fs::read_to_string(p.join("exp/report.csv")).unwrap());
    assert_eq!(csv.lines().count(), 3);
    let json = ok(p, &["report", "--in", "exp", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["aggregates"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_inputs_fail_with_messages() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), CONFIG.replace("\"folds_k\"", "\"folds\"")).unwrap();
    let out = btunet(p, &["experiment", "--config", "bad.json", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("folds"));

    std::fs::write(p.join("junk.ckpt"), b"BTUNETCK\x01").unwrap();
    let out = btunet(p, &["eval", "--ckpt", "junk.ckpt", "--data", "data"]);
    assert!(!out.status.success());

    let out = btunet(p, &["report", "--in", "nowhere"]);
    assert!(!out.status.success());
}
