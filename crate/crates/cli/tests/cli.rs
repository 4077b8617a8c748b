use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wkb-nls"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

// Keeps the bundled sweep but trims it to a quick one.
const QUICK: [&str; 4] = ["--set", "epsilons=[0.1,0.05,0.025,0.0125]", "--set", "grid.points=[512]"];

#[test]
fn converge_writes_report_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sc");
    let cfg = bundled("supercritical.json");
    let mut args = vec!["converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["config"]["grid"]["points"][0], 512);
    let slope = report["fits"][0]["fit"]["slope"].as_f64().unwrap();
    assert!((slope - 1.0).abs() < 0.2, "slope {slope}");
    let csv = std::fs::read_to_string(out.join("errors.csv")).unwrap();
    assert!(csv.starts_with("epsilon,s,metric,value\n"));
}

#[test]
fn failed_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled("supercritical.json");
    let out = dir.path().join("x");
    let mut args = vec!["converge", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap(), "--set", "verdict.expected_slope=3"];
    args.extend(QUICK);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(1));
    // artifacts are still written so the failure can be inspected
    assert!(out.join("report.json").exists());
}

#[test]
fn missing_config_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["converge", "--config", "/nonexistent/config.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read config"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_is_rejected_before_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let out = dir.path().join("never");
    for text in ["{not json", r#"{"epsilons": [0.1], "a0": {"kind": "gaussian"}, "typo": 1}"#, r#"{"epsilons": [], "a0": {"kind": "zero"}}"#] {
        std::fs::write(&cfg, text).unwrap();
        let o = run(&["nls", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(!out.exists());
    }
    let o = run(&["converge", "--config", bundled("instability.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = run(&["nls", "--config", bundled("nls_periodic.json").to_str().unwrap(), "--set", "noequals"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dry_run_prints_plan_without_solving() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["instability", "-c", bundled("instability.json").to_str().unwrap(), "-o", out.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let plan = v["plan"].as_array().unwrap();
    assert_eq!(plan.len(), 7);
    assert_eq!(plan[6]["grid"]["points"][0], 8192);
    assert!(!out.exists());
}

#[test]
fn single_runs_write_tables_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("rays", "rays_harmonic.json", vec!["rays.csv"]),
        ("wkb", "wkb_critical.json", vec!["u_approx_t1.f64", "u_approx_t1.json"]),
        ("grenier", "grenier_full.json", vec!["trajectory.csv", "amplitude.f64"]),
        ("nls", "nls_periodic.json", vec!["diagnostics.csv", "u_t0.f64"]),
    ];
    for (cmd, cfg, files) in cases {
        let out = dir.path().join(cmd);
        let cfg = bundled(cfg);
        let o = run(&[cmd, "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap(), "--set", "grid.points=[512]"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        for f in files.iter().chain(&["report.json", "errors.csv"]) {
            assert!(out.join(f).exists(), "{cmd}: missing {f}");
        }
    }
}

#[test]
fn help_lists_subcommands() {
    let o = run(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["rays", "wkb", "grenier", "nls", "converge", "instability", "normgrowth", "odewindow"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(run(&["converge"]).status.code(), Some(2));
}
