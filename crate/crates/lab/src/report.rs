use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use serde_json::Value;

use crate::artifacts::{read_stage, Artifacts};
use crate::config::RunConfig;
use crate::stages::{COUNT, DISCRETIZE, PERRON, SADDLES, TABLE};

fn optional(dir: &Path, name: &str) -> Option<Value> {
    let bytes = std::fs::read(dir.join(name)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn f(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x == 0.0 || (x.abs() >= 1e-3 && x.abs() < 1e6) => format!("{x:.6}"),
        Some(x) => format!("{x:.3e}"),
        None if v.is_null() => "–".into(),
        None => v.to_string(),
    }
}

fn contribution(v: &Value) -> String {
    if let Some(b) = v.get("LogBound") {
        format!("log bound {}", f(b))
    } else if let Some(c) = v.get("Value") {
        format!("log|value| {}, arg {}", f(&c["log_abs"]), f(&c["arg"]))
    } else {
        v.to_string()
    }
}

/// Markdown summary of whatever stages have run in the output directory.
pub fn report(cfg: &RunConfig) -> Result<String> {
    let dir = &cfg.out;
    let table: Value = read_stage(dir, TABLE, "construct")?;
    let mut md = String::new();
    let p = &table["params"];
    writeln!(md, "# Run report\n")?;
    writeln!(md, "alpha = {}, c = {}, mode = {}, seed log B0 = {}, K_max = {}\n", p["alpha"], p["c"], p["mode"], p["seed_logB0"], p["K_max"])?;

    writeln!(md, "## Sequence table\n")?;
    writeln!(md, "| k | log B | log tau | log x | lattice A | lattice B | phase |")?;
    writeln!(md, "|---|---|---|---|---|---|---|")?;
    for r in table["rows"].as_array().into_iter().flatten() {
        writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r["k"],
            f(&r["log_b_f"]),
            f(&r["log_tau"]),
            f(&r["log_x_f"]),
            f(&r["lattice_residual_a"]),
            f(&r["lattice_residual_b"]),
            f(&r["phase_residual"])
        )?;
    }

    writeln!(md, "\n## Saddle residuals\n")?;
    match optional(dir, SADDLES) {
        Some(s) => {
            writeln!(md, "K = {}, log B = {}, M = {}\n", s["k"], f(&s["log_b"]), s["m_max"])?;
            writeln!(md, "| m | sigma | theta | residual | limit | winding | sigma offset | log x rel. | t rel. | tail gap |")?;
            writeln!(md, "|---|---|---|---|---|---|---|---|---|---|")?;
            for e in s["saddles"].as_array().into_iter().flatten() {
                let (pt, a) = (&e["point"], &e["asymptotics"]);
                let gap = match (e["tail"]["direct"].as_array(), e["tail"]["by_parts"].as_array()) {
                    (Some(d), Some(b)) if d.len() == 2 && b.len() == 2 => {
                        let g = |v: &Vec<Value>| (v[0].as_f64().unwrap_or(f64::NAN), v[1].as_f64().unwrap_or(f64::NAN));
                        let (d, b) = (g(d), g(b));
                        Value::from(((d.0 - b.0).hypot(d.1 - b.1)) / d.0.hypot(d.1))
                    }
                    _ => Value::Null,
                };
                writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    pt["m"],
                    f(&pt["sigma"]),
                    f(&pt["theta"]),
                    f(&pt["residual"]),
                    f(&pt["residual_limit"]),
                    pt["winding_int"],
                    f(&a["sigma_residual"]),
                    f(&a["log_x_residual"]),
                    f(&a["t_residual"]),
                    f(&gap)
                )?;
            }
            writeln!(md, "\na_theta law: max residual {}, end values {}", f(&s["theta_law"]["max_residual"]), s["theta_law"]["end_values"])?;
        }
        None => writeln!(md, "not run (`saddle`)")?,
    }

    writeln!(md, "\n## Contour decomposition\n")?;
    let perron = optional(dir, PERRON);
    match &perron {
        Some(pr) => {
            let r = &pr["report"];
            writeln!(md, "| segment | contribution | margin below s_0 bound |")?;
            writeln!(md, "|---|---|---|")?;
            for seg in r["segments"].as_array().into_iter().flatten() {
                writeln!(md, "| {} | {} | {} |", seg["label"].as_str().unwrap_or("?"), contribution(&seg["contribution"]), f(&seg["margin"]))?;
            }
            writeln!(md, "\nlog(rho x) = {}, log Perron error = {}", f(&r["log_residue_term"]), f(&r["log_perron_error"]))?;
            writeln!(md, "near margin {} nat, return margin {} nat", f(&r["near_margin"]), f(&r["return_margin"]))?;
            if let Some(res) = pr["closed_loop_residual"].as_f64() {
                writeln!(md, "closed-loop relative residual {}", f(&Value::from(res)))?;
            }
        }
        None => writeln!(md, "not run (`perron`)")?,
    }

    writeln!(md, "\n## Oscillation signs and envelope\n")?;
    match &perron {
        Some(pr) => {
            let s0 = &pr["report"]["s0"];
            writeln!(md, "| K | sign | expected | log value | log lower bound | envelope | envelope (b = {}) |", f(&s0["b"]))?;
            writeln!(md, "|---|---|---|---|---|---|---|")?;
            writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                s0["k"],
                s0["sign"],
                s0["expected_sign"],
                f(&s0["log_value"]),
                f(&s0["log_lower_bound"]),
                f(&s0["envelope_exponent"]),
                f(&s0["envelope_exponent_b"])
            )?;
        }
        None => writeln!(md, "not run (`perron`)")?,
    }

    writeln!(md, "\n## Discretization\n")?;
    match optional(dir, DISCRETIZE) {
        Some(d) => {
            writeln!(md, "seed {}, {} primes up to log x = {}", d["seed"], d["primes"], f(&d["log_x_max"]))?;
            writeln!(md, "sup |pi_D - pi_C| = {}, exp-sum p95 = {}", f(&d["sup_pi_deviation"]), f(&d["exp_sum"]["p95"]))?;
            writeln!(md, "D-hat without q = {}, with q = {}", f(&d["gap_without_q"]["d_hat"]), f(&d["gap"]["d_hat"]))?;
            writeln!(md, "q-trick: {}, q = {}, multiplicity {}", d["qtrick"]["status"], f(&d["qtrick"]["q"]), d["qtrick"]["multiplicity"])?;
            if let Some(o) = d["oscillation"].as_array() {
                writeln!(md, "N(x~) - rho_K x~ = {}, sign as expected: {}", f(&o[0]), o[1])?;
            }
        }
        None => writeln!(md, "not run (`discretize`)")?,
    }
    if let Some(c) = optional(dir, COUNT) {
        writeln!(md, "\n## Counting\n")?;
        writeln!(md, "{} integers up to log x = {}, exp* oracle gap {}", c["integers"], f(&c["exact_to"]), f(&c["exp_star_max_gap"]))?;
    }
    if let Some(v) = optional(dir, "verify.json") {
        writeln!(md, "\n## Verification\n")?;
        writeln!(md, "{} passed, {} failed", v["passed"], v["failed"])?;
        for c in v["checks"].as_array().into_iter().flatten().filter(|c| c["pass"] == false) {
            writeln!(md, "- FAIL {}/{}: {} (limit {}) {}", c["suite"].as_str().unwrap_or(""), c["name"].as_str().unwrap_or(""), f(&c["value"]), f(&c["limit"]), c["note"].as_str().unwrap_or(""))?;
        }
    }
    let mut out = Artifacts::open(cfg, "report")?;
    out.write_bytes("report.md", md.as_bytes())?;
    out.finish()?;
    Ok(md)
}
