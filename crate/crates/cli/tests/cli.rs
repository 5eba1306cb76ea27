use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qtraj(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtraj")).args(args).arg("--out").arg(out).env_remove("QTRAJ_THREADS").output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_toy_prints_the_sheet_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtraj(&["validate", "--model", "toy"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("\"epsilon\": 1.0"));
    assert!(stdout.contains("verdict: pass"));
    let doc = read_json(&dir.path().join("validate.json"));
    assert_eq!(doc["passed"], Value::Bool(true));
    assert_eq!(doc["sheet"]["esp"]["n0"], 1);
}

#[test]
fn clt_keep_switch_classes() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtraj(
        &["clt", "--model", "cyclic-keep-switch", "--pattern", "KS", "--steps", "400", "--trajectories", "1500", "--seed", "7"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let doc = read_json(&dir.path().join("clt.json"));
    let r = &doc["result"]["patterns"][0]["report"];
    assert!(r["normality"]["ks_pvalue"].as_f64().unwrap() > 0.0);
    // At a = ½ the keep/switch letters are fair independent coins: μ = 1/4 and
    // the overlapping count of a non-self-overlapping length-2 word has
    // σ² = μ − 3μ² = 1/16.
    let mu = r["mu_hat"].as_f64().unwrap();
    let s2 = r["sigma2_series"].as_f64().unwrap();
    assert!((mu - 0.25).abs() < 4.0 * r["mu_stderr"].as_f64().unwrap(), "μ̂ = {mu}");
    assert!((s2 - 0.0625).abs() < 0.1 * 0.0625, "Σ̂² = {s2}");
    assert!(dir.path().join("clt_0.csv").exists());
}

#[test]
fn couple_noisy_label_writes_coalescence_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtraj(&["couple", "--model", "noisy-label", "--alpha", "0.3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(dir.path().join("coalescence.csv")).unwrap();
    let t: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(t.len(), 10_000);
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean <= 1.0 / 0.3 + 1.0 + 3.0 * sd / n.sqrt(), "mean T_out = {mean}");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["couple", "--model", "amplitude-damping", "--seed", "3"];
    assert_eq!(qtraj(&args, a.path()).status.code(), Some(0));
    assert_eq!(qtraj(&args, b.path()).status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("coalescence.csv")).unwrap();
    assert!(read(a.path()) == read(b.path()));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "task = \"clt\"\n[model]\nname = \"noisy-label\"\nalpha = 0.4\n[seeds]\nenvironment = 1\nrun = 2\n[run]\nesp_n_max = 6\n",
    )
    .unwrap();
    let o = qtraj(&["esp", "--config", cfg.to_str().unwrap(), "--param", "d=3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&dir.path().join("esp.json"));
    assert_eq!(doc["task"], "esp");
    assert_eq!(doc["config"]["model"]["alpha"], 0.4);
    assert_eq!(doc["config"]["model"]["d"], 3);
    assert_eq!(doc["config"]["run"]["esp_n_max"], 6);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["validate", "--model", "nonesuch"],
        vec!["validate", "--model", "toy", "--alpha", "0.2"],
        vec!["validate", "--model", "noisy-label", "--alpha", "1.5"],
        vec!["validate", "--model", "biased-cyclic", "-d", "4"],
        vec!["validate"],
        vec!["clt", "--model", "toy", "--pattern", "zz", "--steps", "10", "--trajectories", "10"],
        vec!["validate", "--model", "toy", "--param", "d"],
    ] {
        let o = qtraj(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    }
}

#[test]
fn threads_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qtraj"))
        .args(["validate", "--model", "toy", "--out"])
        .arg(dir.path())
        .env("QTRAJ_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&dir.path().join("validate.json"))["config"]["run"]["threads"], 2);
}
