use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &["data.train=48", "data.test=12", "epochs=2", "arch=conv:2:5:4-relu-flatten-dense:4", "warmup_epochs=1"];

fn advsal(command: &str, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsal"))
        .arg(command)
        .arg(format!("out_dir={}", out.display()))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(command: &str, out: &Path, args: &[&str]) {
    let o = advsal(command, out, args);
    assert!(o.status.success(), "{command} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn tiny<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    TINY.iter().copied().chain(extra.iter().copied()).collect()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    read(path).lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn verify_duality_writes_certificate_table() {
    let dir = tempfile::tempdir().unwrap();
    ok("verify-duality", dir.path(), &["duality.samples=5", "duality.steps=101", "duality.dim=2"]);
    let rows = csv(&dir.path().join("duality.csv"));
    assert_eq!(rows[0].join(","), "rule,samples,closedForm,bruteForce,absGap,certificateGap,maximizerGap");
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        assert_eq!(r[1], "5");
        assert!(r[5].parse::<f64>().unwrap() <= 1e-10);
    }
    assert!(dir.path().join("config.resolved").exists());
    assert!(dir.path().join("timing.log").exists());
}

#[test]
fn zero_eps_fast_training_matches_standard() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok("train", a.path(), &tiny(&[]));
    ok("train", b.path(), &tiny(&["protocol=fast", "rule=linf", "eps=0"]));
    assert_eq!(read(&a.path().join("summary.csv")), read(&b.path().join("summary.csv")));
    assert_eq!(fs::read(a.path().join("model.net")).unwrap(), fs::read(b.path().join("model.net")).unwrap());
}

#[test]
fn rerun_from_resolved_config_reproduces_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok("train", a.path(), &tiny(&["protocol=fast", "rule=elastic", "seed=4"]));
    let resolved = a.path().join("config.resolved");
    let o = Command::new(env!("CARGO_BIN_EXE_advsal"))
        .args(["train", "--config"])
        .arg(&resolved)
        .arg(format!("--out-dir={}", b.path().display()))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&a.path().join("summary.csv")), read(&b.path().join("summary.csv")));
    assert_eq!(read(&a.path().join("train.csv")), read(&b.path().join("train.csv")));
}

#[test]
fn unknown_key_fails_with_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = advsal("train", dir.path(), &["no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("advsal: error: config:") && err.contains("no_such_key"), "{err}");
}

#[test]
fn unknown_command_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_advsal")).arg("bogus").output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn missing_model_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = advsal("saliency", dir.path(), &tiny(&["model=/nonexistent/model.net"]));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn degenerate_stability_control_is_perfectly_stable() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        "stability",
        dir.path(),
        &tiny(&["stability.swap=0", "stability.seeds=0,0", "stability.protocols=standard,fast", "rule=linf"]),
    );
    let rows = csv(&dir.path().join("stability.csv"));
    assert_eq!(rows[0].join(","), "protocol,image,ssim,dice");
    assert_eq!(rows.len(), 1 + 2 * (12 + 1));
    for r in &rows[1..] {
        assert_eq!(r[2], "1", "{r:?}");
        assert_eq!(r[3], "1", "{r:?}");
    }
    assert_eq!(rows.iter().filter(|r| r[1] == "mean").count(), 2);
}

#[test]
fn stability_with_swap_reports_every_kept_image() {
    let dir = tempfile::tempdir().unwrap();
    ok("stability", dir.path(), &tiny(&["stability.swap=0.125", "stability.protocols=standard"]));
    let rows = csv(&dir.path().join("stability.csv"));
    assert_eq!(rows.len(), 1 + (12 - 6) + 1);
}

#[test]
fn label_sanity_reports_flags() {
    let dir = tempfile::tempdir().unwrap();
    ok("sanity", dir.path(), &tiny(&["sanity.mode=labels", "sanity.count=8"]));
    let rows = csv(&dir.path().join("sanity_labels.csv"));
    assert_eq!(rows[0][2], "at_chance");
    assert_eq!(rows.len(), 2);
    assert!(["true", "false"].contains(&rows[1][2].as_str()));
    assert!(["true", "false"].contains(&rows[1][6].as_str()));
}

#[test]
fn gen_data_then_saliency_and_metrics_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok("gen-data", &data, &tiny(&[]));
    assert!(data.join("labels.csv").exists());
    let data_arg = format!("data_dir={}", data.display());
    let model_dir = dir.path().join("model");
    ok("train", &model_dir, &tiny(&[&data_arg]));
    let model_arg = format!("model={}", model_dir.join("model.net").display());
    let maps = dir.path().join("maps");
    ok("saliency", &maps, &tiny(&[&data_arg, &model_arg, "eval.count=3"]));
    assert!(maps.join("maps").join("0000.pgm").exists());
    ok("metrics", &maps, &tiny(&[&data_arg, &model_arg, "eval.count=3"]));
    let rows = csv(&maps.join("metrics.csv"));
    assert_eq!(rows.len(), 1 + 3 + 1);
}
