//! End-to-end runs of the `vm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vm"))
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/two_asset.json")
}

fn run(args: &[&str], out: &Path) -> Output {
    vm().args(args)
        .arg("--config")
        .arg(shipped_config())
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn riccati_writes_one_psi_column_per_asset() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["riccati", "--gamma", "0.2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("riccati_power_g0.2.csv")).unwrap();
    let lines = data_lines(&text);
    assert_eq!(lines[0], "t,psi_1,psi_2,variant");
    assert_eq!(lines.len(), 1 + 201);
    assert!(lines[1].ends_with("power_general"));
    let gate = fs::read_to_string(dir.path().join("riccati_exponential_g0.2.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&gate).unwrap();
    assert_eq!(v["report"]["psi_bound"].as_array().unwrap().len(), 2);
    assert_eq!(v["meta"]["seed"], 42);
}

#[test]
fn headers_carry_hash_seed_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["stabilizer", "--seed", "11"], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("stabilizer.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(4).collect();
    assert_eq!(head[0], format!("# vm {}", env!("CARGO_PKG_VERSION")));
    assert!(head[2].starts_with("# config_sha256 ") && head[2].len() == "# config_sha256 ".len() + 64);
    assert_eq!(head[3], "# seed 11");
    // 17 significant digits.
    let row = data_lines(&text)[2];
    assert_eq!(row.split(',').nth(1).unwrap().split('e').next().unwrap().len(), 18);
}

#[test]
fn verify_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["verify", "--seed", "7", "--paths", "400", "--steps", "60"];
    let oa = run(&args, a.path());
    let ob = vm()
        .args(args)
        .arg("--config")
        .arg(shipped_config())
        .arg("--out")
        .arg(b.path())
        .env("VM_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(oa.status.code(), ob.status.code());
    assert!(matches!(oa.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&oa.stderr));
    for f in ["verify.json", "stationarity.csv", "profile_power_g0.2.csv", "profile_exponential_g0.2.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn all_writes_four_figure_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["all", "--paths", "300", "--steps", "60"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fig1.csv", "fig2.csv", "fig3.csv", "fig4.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let fig1 = fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    let cols = data_lines(&fig1)[0].split(',').count();
    assert_eq!(cols, 1 + 2 + 30);
    assert_eq!(data_lines(&fig1).len(), 1 + 61);
    let fig4 = fs::read_to_string(dir.path().join("fig4.csv")).unwrap();
    let header = data_lines(&fig4)[0];
    for g in ["0.2", "0.5", "0.8"] {
        assert!(header.contains(&format!("pi_power_g{g}_1")));
        assert!(header.contains(&format!("pi_exponential_g{g}_2")));
    }
}

#[test]
fn value_prints_json_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["value", "--utility", "power", "--gamma", "0.5"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["meta"]["command"], "value");
    let values = v["report"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 1);
    assert!((values[0]["value"].as_f64().unwrap() - 2.0142061).abs() < 1e-6);
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let text = fs::read_to_string(shipped_config()).unwrap().replace("\"rho\": -0.55", "\"rho\": 2.0");
    fs::write(&cfg, text).unwrap();
    let o = vm().args(["stabilizer", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("assets[1].rho"), "{err}");
}

#[test]
fn power_gamma_one_is_rejected_on_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["strategy", "--utility", "power", "--gamma", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn strategy_starts_at_the_myopic_rule() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["strategy", "--utility", "exponential", "--gamma", "0.2", "--steps", "50"], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("strategy_exponential_g0.2.csv")).unwrap();
    let lines = data_lines(&text);
    assert_eq!(lines[0], "t,rule_1,rule_2");
    assert_eq!(lines.len(), 1 + 51);
    // ς(0) = 0, so the hedge vanishes at t = 0: θ/γ = 0.5.
    let first: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((first[1] - 0.5).abs() < 1e-15 && (first[2] - 0.5).abs() < 1e-15);
}
