use std::path::Path;
use std::process::{Command, Output};

use advsig::classifier::Model;
use advsig::experiment::{Report, RunLayout, VICTIM};
use advsig::io::{load_attack_set, load_checkpoint, ExperimentConfig};

fn advsig(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsig"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("running advsig")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = advsig(out, args);
    assert!(
        o.status.success(),
        "advsig {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn tiny_data(out: &Path) {
    ok(
        out,
        &[
            "gen-data",
            "--classes",
            "3",
            "--image-size",
            "8",
            "--train-per-class",
            "30",
            "--validation-per-class",
            "10",
            "--test-per-class",
            "15",
        ],
    );
}

#[test]
fn staged_pipeline_reports_every_attack() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    tiny_data(out);
    ok(out, &["train", "--model", "victim", "--epochs", "6"]);
    ok(out, &["stats"]);
    ok(out, &["attack", "--target", "victim", "--only", "deepfool", "cw0", "--limit", "6"]);
    ok(out, &["eval"]);

    let layout = RunLayout::new(out);
    let report = Report::from_json(&std::fs::read_to_string(layout.report()).unwrap()).unwrap();
    let attacks: Vec<&str> = report.white_box.iter().map(|r| r.attack.as_str()).collect();
    assert_eq!(attacks, ["deepfool", "cw0"]);
    for row in &report.white_box {
        assert!((0.0..=1.0).contains(&row.auc) && (0.0..=1.0).contains(&row.fs_auc), "{row:?}");
    }
    let first = std::fs::read(layout.report()).unwrap();
    ok(out, &["eval"]);
    assert_eq!(std::fs::read(layout.report()).unwrap(), first);

    let tables = ok(out, &["report"]);
    assert!(tables.contains("White-box detection"));

    let set_path = layout.attack_set(VICTIM, "cw0");
    ok(out, &["detect", "--input", set_path.to_str().unwrap()]);
    let set = load_attack_set(&set_path).unwrap();
    let csv = std::fs::read_to_string(out.join("detections.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,class,score,decision"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), set.len());
    assert!(rows.iter().all(|r| r.ends_with(",legitimate") || r.ends_with(",adversarial")));
}

#[test]
fn zero_epoch_training_keeps_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    tiny_data(out);
    ok(out, &["train", "--model", "victim", "--epochs", "0"]);
    let layout = RunLayout::new(out);
    let config = ExperimentConfig::load(&layout.config()).unwrap();
    let trained = load_checkpoint(&layout.checkpoint(VICTIM)).unwrap();
    let init = Model::init(config.victim_config()).unwrap();
    assert_eq!(trained.model.fingerprint(), init.fingerprint());
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = advsig(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let o = advsig(dir.path(), &["stats"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
