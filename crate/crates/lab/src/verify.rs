use std::f64::consts::FRAC_PI_2;

use anyhow::Result;
use beurling_core::construction::{build_sequences, log_grid, SequenceTable};
use beurling_core::contour::{closed_loop, shifted_total, Track};
use beurling_core::counting::enumerate_integers;
use beurling_core::discretize::{discretize, DiscreteSystem};
use beurling_core::hp::Dd;
use beurling_core::measures::{exp_star, prime_power_measure, ConvolveConfig};
use beurling_core::rng::substream;
use beurling_core::saddle::SaddleContext;
use beurling_core::zeta::ZetaContext;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::Artifacts;
use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<Check>,
}

struct Suite {
    name: &'static str,
    checks: Vec<Check>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self { name, checks: Vec::new() }
    }

    /// Passes when value < limit.
    fn below(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.push(name, value, limit, value < limit);
    }

    fn above(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.push(name, value, limit, value > limit);
    }

    fn push(&mut self, name: impl Into<String>, value: f64, limit: f64, pass: bool) {
        self.checks.push(Check { suite: self.name.into(), name: name.into(), value, limit, pass, note: String::new() });
    }
}

fn run_suite(name: &'static str, f: impl FnOnce(&mut Suite) -> Result<()>) -> Vec<Check> {
    let mut s = Suite::new(name);
    if let Err(e) = f(&mut s) {
        s.checks.push(Check { suite: name.into(), name: "completed".into(), value: f64::NAN, limit: f64::NAN, pass: false, note: format!("{e:#}") });
    }
    s.checks
}

fn construction_suite(s: &mut Suite, t: &SequenceTable, seed: u64) -> Result<()> {
    for k in 0..=t.k_max() {
        let r = t.row(k);
        s.below(format!("k{k} lattice tau log A"), r.lattice_residual_a.abs(), 1e-40);
        s.below(format!("k{k} lattice tau log B"), r.lattice_residual_b.abs(), 1e-40);
        s.below(format!("k{k} phase condition"), r.phase_residual.abs(), 1e-40);
        s.below(format!("k{k} C equation"), r.c_residual, 1e-12);
        let rb = t.r_at_b(k);
        let jump = (t.deviation_at_offset(k, Dd::from_f64(0.0)).r - t.deviation_in_gap(k, 0.0).s).abs() / rb;
        s.below(format!("k{k} R + S continuity"), jump, 1e-12);
        s.below(format!("k{k} S(C) = 0"), t.deviation_in_gap(k, r.c_rel).s.abs() / rb, 1e-12);
    }
    let top = t.row(t.k_max()).log_c_f() + 2.0;
    let mut rng = substream(seed, 6);
    let mut worst = f64::INFINITY;
    for _ in 0..2000 {
        let v = rng.gen_range(0.0..top);
        worst = worst.min(t.psi_prime(v, t.k_max()) + 0.5 * (-v).exp_m1());
    }
    s.push("psi' - (1 - 1/x)/2 minimum", worst, 0.0, worst >= 0.0);
    let pnt = t.pnt_defect(&log_grid(1.0, top, 400), t.k_max())?;
    s.push("PNT defect finite", pnt.sup_pi, f64::INFINITY, pnt.sup_pi.is_finite());
    Ok(())
}

fn zeta_suite(s: &mut Suite, t: &SequenceTable) -> Result<()> {
    for k in 0..=t.k_max() {
        let r = ZetaContext::residue(t, k)?;
        s.above(format!("k{k} residue positive"), r.rho_k, 0.0);
        if r.rho_lo.is_finite() && r.rho_hi.is_finite() {
            s.push(format!("k{k} residue interval"), r.rho_k, r.rho_hi, r.rho_lo <= r.rho_k && r.rho_k <= r.rho_hi);
        }
    }
    Ok(())
}

fn saddle_suite(s: &mut Suite, t: &SequenceTable, cfg: &RunConfig) -> Result<()> {
    let sc = SaddleContext::new(ZetaContext::designed(t, cfg.k)?)?;
    let all = sc.find_all(cfg.m_cap)?;
    let s0 = all.iter().find(|p| p.m == 0).expect("m = 0 searched").clone();
    s.below("t_0 - tau relative", s0.z.im.abs() / t.row(cfg.k).tau_f(), 1e-12);
    for sp in &all {
        let m = sp.m;
        s.push(format!("m{m} winding"), sp.winding, 1.0, sp.winding_int == 1);
        s.below(format!("m{m} f' residual"), sp.residual, sp.residual_limit);
        if m != 0 {
            s.below(format!("m{m} sigma_m below sigma_0"), sp.sigma, s0.sigma);
        }
        s.below(format!("m{m} tail routes"), sc.zeta.int_eta_tail(sp.z)?.relative_gap(), 1e-10);
    }
    let law = sc.theta_law(&sc.trace_gamma0(&s0)?);
    s.below("a_theta endpoint", (law.end_values.1 - FRAC_PI_2).abs(), 0.2);
    let c = sc.contribution_s0(&s0, cfg.envelope_b)?;
    s.push("s_0 sign", c.sign as f64, c.expected_sign as f64, c.sign == c.expected_sign);
    s.above("s_0 margin", c.margin, 0.0);
    Ok(())
}

fn perron_suite(s: &mut Suite, t: &SequenceTable, cfg: &RunConfig) -> Result<()> {
    let sc = SaddleContext::new(ZetaContext::designed(t, cfg.k)?)?;
    let (rep, contour) = shifted_total(&sc, Track::Continuous, cfg.envelope_b)?;
    s.below("contour continuity", contour.continuity_gap(), 1e-12);
    s.above("near margin", rep.near_margin, 0.0);
    if cfg.perron.closed_loop {
        let p = &cfg.perron;
        let r = closed_loop(t, cfg.k, p.x.ln(), p.kappa, p.t_max, p.sigma_left, &p.quadrature)?;
        s.below("closed-loop relative residual", r.relative_residual.abs(), 1e-3);
    }
    Ok(())
}

fn discretize_suite(s: &mut Suite, cfg: &RunConfig) -> Result<()> {
    let d = &cfg.discrete;
    let table = build_sequences(&d.params)?;
    let (_, rep) = discretize(&table, d.block, cfg.seed, &d.settings)?;
    s.push("sup |pi_D - pi_C|", rep.sup_pi_deviation, 1.0, rep.sup_pi_deviation <= 1.0);
    s.push("exp-sum p95 finite", rep.exp_sum.p95, f64::INFINITY, rep.exp_sum.p95.is_finite());
    s.push("D-hat finite", rep.gap.d_hat, f64::INFINITY, rep.gap.d_hat.is_finite());
    Ok(())
}

fn count_suite(s: &mut Suite, cfg: &RunConfig) -> Result<()> {
    let mut rng = substream(cfg.seed, 7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=8);
        let primes: Vec<(f64, u32)> = (0..n).map(|_| (rng.gen_range(2.0..60.0), rng.gen_range(1..=2))).collect();
        let lx = rng.gen_range(1.0..(1e4f64).ln());
        let ds = DiscreteSystem::from_primes(primes, lx);
        let stream = enumerate_integers(&ds, lx, cfg.count.budget)?;
        let m = exp_star(&prime_power_measure(&ds.primes, lx), lx, &ConvolveConfig::new(cfg.tol))?;
        for e in &stream.entries {
            worst = worst.max((m.cumulative(e.log_value)? - stream.count(e.log_value)? as f64).abs());
        }
    }
    s.below("exp* against enumeration", worst, 1e-6);
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let st = &cfg.stages;
    let mut checks = Vec::new();
    let table = build_sequences(&cfg.continuous);
    match &table {
        Ok(t) => {
            if st.construction {
                checks.extend(run_suite("construction", |s| construction_suite(s, t, cfg.seed)));
            }
            if st.zeta {
                checks.extend(run_suite("zeta", |s| zeta_suite(s, t)));
            }
            if st.saddle {
                checks.extend(run_suite("saddle", |s| saddle_suite(s, t, cfg)));
            }
            if st.perron {
                checks.extend(run_suite("perron", |s| perron_suite(s, t, cfg)));
            }
        }
        Err(e) => checks.extend(run_suite("construction", |_| Err(anyhow::anyhow!("{e}")))),
    }
    if st.discretize {
        checks.extend(run_suite("discretize", |s| discretize_suite(s, cfg)));
    }
    if st.count {
        checks.extend(run_suite("count", |s| count_suite(s, cfg)));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let report = VerifyReport { passed: checks.len() - failed, failed, checks };
    let mut out = Artifacts::open(cfg, "verify")?;
    out.write_json("verify.json", &report)?;
    out.finish()?;
    Ok(report)
}
