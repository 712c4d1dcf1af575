use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beurling-lab"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("beurling-lab-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str], out: &Path) -> Output {
    run_with(bin(), args, out)
}

fn run_with(mut cmd: Command, args: &[&str], out: &Path) -> Output {
    let o = cmd.args(args).arg("--out").arg(out).output().expect("binary runs");
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn construct_meets_lattice_conditions() {
    let out = scratch("construct");
    assert!(run(&["construct", "--mode", "toy", "--alpha", "0.5", "--c", "0.7"], &out).status.success());
    let t = json(&out.join("sequences.json"));
    assert_eq!(t["params"]["alpha"], 0.5);
    let rows = t["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        for key in ["lattice_residual_a", "lattice_residual_b", "phase_residual"] {
            assert!(r[key].as_f64().unwrap().abs() < 1e-40, "{key} = {}", r[key]);
        }
    }
    let m = json(&out.join("manifest.json"));
    let stage = &m["stages"]["construct"];
    assert_eq!(stage["config_hash"].as_str().unwrap().len(), 64);
    assert!(stage["outputs"]["sequences.json"].is_string());
    assert!(m["rng_algorithm"].as_str().unwrap().contains("ChaCha20"));
    assert!(std::fs::read_to_string(out.join("sequences.csv")).unwrap().starts_with("k,log_a,"));
}

#[test]
fn perron_reports_closed_loop_residual() {
    let out = scratch("perron");
    assert!(run(&["construct"], &out).status.success());
    let o = run(&["perron", "--track", "continuous", "--K", "0"], &out);
    assert!(o.status.success());
    let p = json(&out.join("perron.json"));
    assert!(p["closed_loop_residual"].as_f64().unwrap().abs() < 1e-3);
    assert_eq!(p["report"]["s0"]["sign"], 1);
    assert!(p["report"]["near_margin"].as_f64().unwrap() > 0.0);
    assert!(out.join("contour.csv").exists());
}

#[test]
fn identical_config_gives_identical_bytes() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    // the second run is single-threaded
    for (d, threads) in [(&a, None), (&b, Some("1"))] {
        for stage in ["construct", "discretize", "count"] {
            let mut cmd = bin();
            if let Some(n) = threads {
                cmd.env("BEURLING_LAB_THREADS", n);
            }
            assert!(run_with(cmd, &[stage, "--seed", "3"], d).status.success());
        }
    }
    for f in ["sequences.json", "discretize.json", "discrete_system.json", "discrete_system.bin", "count.json", "integers.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = scratch("det-c");
    assert!(run(&["discretize", "--seed", "4"], &c).status.success());
    assert_ne!(std::fs::read(a.join("discrete_system.bin")).unwrap(), std::fs::read(c.join("discrete_system.bin")).unwrap());
}

#[test]
fn missing_stage_is_an_error() {
    let out = scratch("missing");
    let o = run(&["count"], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage dependency missing"));
    let o = run(&["saddle"], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("construct"));
}

#[test]
fn schema_violations_are_rejected() {
    let out = scratch("schema");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = bin().args(["config"]).output().unwrap();
    let mut v: Value = serde_json::from_slice(&cfg.stdout).unwrap();
    v["unexpected"] = Value::from(1);
    let path = out.join("bad.json");
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    let o = run(&["construct", "--config", path.to_str().unwrap()], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema violation"));
    // invalid parameters are caught before any stage runs
    let o = run(&["construct", "--alpha", "1.5"], &out);
    assert!(!o.status.success());
    assert!(!out.join("sequences.json").exists());
}

#[test]
fn verify_default_config_is_green_and_failures_exit_nonzero() {
    let out = scratch("verify");
    let o = run(&["verify"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v = json(&out.join("verify.json"));
    assert_eq!(v["failed"], 0);
    assert!(v["passed"].as_u64().unwrap() > 20);

    // a quadrature far too coarse for the closed loop must fail the gate
    let cfg = bin().args(["config"]).output().unwrap();
    let mut c: Value = serde_json::from_slice(&cfg.stdout).unwrap();
    for s in ["construction", "zeta", "saddle", "discretize", "count"] {
        c["stages"][s] = Value::from(false);
    }
    c["perron"]["quadrature"]["order"] = Value::from(2);
    c["perron"]["quadrature"]["panels_per_period"] = Value::from(0.05);
    let path = out.join("coarse.json");
    std::fs::write(&path, serde_json::to_vec(&c).unwrap()).unwrap();
    let o = run(&["verify", "--config", path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));

    assert!(run(&["construct"], &out).status.success());
    assert!(run(&["report"], &out).status.success());
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("## Sequence table") && md.contains("## Verification"));
}
