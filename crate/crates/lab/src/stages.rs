use anyhow::{bail, Context, Result};
use beurling_core::construction::{build_sequences, log_grid, SequenceTable};
use beurling_core::contour::{closed_loop, shifted_total, ClosedLoopReport, PerronReport, Track};
use beurling_core::counting::{counting_functions, enumerate_integers, CountingValues};
use beurling_core::discretize::{discretize, DiscreteSystem, DiscretizationReport};
use beurling_core::measures::{exp_star, prime_power_measure, ConvolveConfig};
use beurling_core::saddle::{AsymptoticReport, S0Contribution, SaddleContext, SaddlePoint, TaylorReport, ThetaLaw};
use beurling_core::zeta::{ResidueReport, TailRoutes, ZetaContext};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::artifacts::{num, read_stage, Artifacts};
use crate::config::{RunConfig, TrackChoice};

pub const TABLE: &str = "sequences.json";
pub const SADDLES: &str = "saddles.json";
pub const PERRON: &str = "perron.json";
pub const DISCRETIZE: &str = "discretize.json";
pub const SYSTEM: &str = "discrete_system.json";
pub const COUNT: &str = "count.json";
pub const ZETA: &str = "zeta.json";

/// The table written by `construct`, checked against the current parameters.
pub fn load_table(cfg: &RunConfig) -> Result<SequenceTable> {
    let t: SequenceTable = read_stage(&cfg.out, TABLE, "construct")?;
    if t.params != cfg.continuous {
        bail!("{TABLE} was built from other parameters; rerun `construct`");
    }
    Ok(t)
}

pub fn construct(cfg: &RunConfig) -> Result<SequenceTable> {
    let table = build_sequences(&cfg.continuous).context("building the sequence table")?;
    let mut out = Artifacts::open(cfg, "construct")?;
    out.write_json(TABLE, &table)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                num(r.log_a_f()),
                num(r.log_b_f),
                num(r.log_c_f()),
                num(r.log_tau),
                num(r.log_x_f),
                num(r.eps_f),
                num(r.lattice_residual_a),
                num(r.lattice_residual_b),
                num(r.phase_residual),
                num(r.c_residual),
            ]
        })
        .collect();
    out.write_csv(
        "sequences.csv",
        &["k", "log_a", "log_b", "log_c", "log_tau", "log_x", "eps", "lattice_a", "lattice_b", "phase", "c_residual"],
        &rows,
    )?;
    let top = table.row(table.k_max()).log_c_f() + 2.0;
    let grid = log_grid(1.0, top, 400);
    let mut defect = Vec::with_capacity(grid.len());
    for &v in &grid {
        defect.push(vec![num(v), num(table.psi_deviation(v, table.k_max())), num(table.riemann_defect(v, table.k_max())?)]);
    }
    out.write_csv("defect.csv", &["log_x", "psi_deviation", "riemann_defect"], &defect)?;
    out.finish()?;
    Ok(table)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZetaArtifact {
    pub k: usize,
    pub residues: Vec<ResidueReport>,
    /// Both tail-integral routes at 1 + iτ_K − 1/log B.
    pub tail_probe: TailRoutes,
}

pub fn zeta(cfg: &RunConfig) -> Result<()> {
    let table = load_table(cfg)?;
    let ctx = ZetaContext::designed(&table, cfg.k)?;
    let mut residues = Vec::new();
    for k in 0..=table.k_max() {
        residues.push(ZetaContext::residue(&table, k)?);
    }
    let log_b = table.row(cfg.k).log_b_f;
    let tail_probe = ctx.int_eta_tail(C64::new(1.0 - 1.0 / log_b, 0.0))?;
    let mut out = Artifacts::open(cfg, "zeta")?;
    out.write_json(ZETA, &ZetaArtifact { k: cfg.k, residues, tail_probe })?;
    let mut rows = Vec::new();
    for sigma in [0.9, 0.95, 1.0, 1.05, 1.1] {
        for i in 0..=40 {
            let t_local = (i as f64 - 20.0) * std::f64::consts::PI / (5.0 * log_b);
            let z = C64::new(sigma, t_local);
            let lz = ctx.log_zeta(z)?;
            rows.push(vec![num(sigma), num(t_local), num(lz.re), num(lz.im)]);
        }
    }
    out.write_csv("log_zeta.csv", &["sigma", "t_minus_tau", "re_log_zeta", "im_log_zeta"], &rows)?;
    out.finish()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleEntry {
    pub point: SaddlePoint,
    pub asymptotics: AsymptoticReport,
    pub tail: TailRoutes,
    /// (σ_m − σ^±)·log B at the path ends, m ≠ 0.
    pub end_offsets: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleArtifact {
    pub k: usize,
    pub log_b: f64,
    pub m_max: i64,
    pub saddles: Vec<SaddleEntry>,
    pub theta_law: ThetaLaw,
    pub taylor: TaylorReport,
    pub s0: S0Contribution,
}

pub fn saddle(cfg: &RunConfig) -> Result<SaddleArtifact> {
    let table = load_table(cfg)?;
    let sc = SaddleContext::new(ZetaContext::designed(&table, cfg.k)?)?;
    let all = sc.find_all(cfg.m_cap)?;
    let s0 = all.iter().find(|s| s.m == 0).expect("m = 0 is always searched").clone();
    let mut out = Artifacts::open(cfg, "saddle")?;
    let gamma0 = sc.trace_gamma0(&s0)?;
    let mut path_rows = Vec::new();
    let mut push_path = |m: i64, p: &beurling_core::saddle::PathPolyline| {
        for (i, z) in p.points.iter().enumerate() {
            path_rows.push(vec![m.to_string(), num(z.re), num(z.im), num(p.theta[i]), num(p.re_f[i])]);
        }
    };
    push_path(0, &gamma0);
    let mut saddles = Vec::new();
    for sp in &all {
        let end_offsets = if sp.m != 0 {
            let p = sc.trace_gamma_m(sp)?;
            push_path(sp.m, &p);
            Some(p.end_offsets(sc.log_b))
        } else {
            None
        };
        saddles.push(SaddleEntry {
            point: sp.clone(),
            asymptotics: sc.asymptotics(sp, &s0),
            tail: sc.zeta.int_eta_tail(sp.z)?,
            end_offsets,
        });
    }
    let art = SaddleArtifact {
        k: cfg.k,
        log_b: sc.log_b,
        m_max: sc.m_max,
        saddles,
        theta_law: sc.theta_law(&gamma0),
        taylor: sc.taylor_radius(&s0)?,
        s0: sc.contribution_s0(&s0, cfg.envelope_b)?,
    };
    out.write_json(SADDLES, &art)?;
    out.write_csv("paths.csv", &["m", "sigma", "t_minus_tau", "theta", "re_f"], &path_rows)?;
    out.finish()?;
    Ok(art)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerronArtifact {
    pub report: PerronReport,
    pub closed_loop: Option<ClosedLoopReport>,
    /// Relative residual of the closed-loop Cauchy test.
    pub closed_loop_residual: Option<f64>,
}

pub fn perron(cfg: &RunConfig) -> Result<PerronArtifact> {
    let table = load_table(cfg)?;
    let track = match cfg.track {
        TrackChoice::Continuous => Track::Continuous,
        TrackChoice::Discrete => {
            let d: serde_json::Value = read_stage(&cfg.out, DISCRETIZE, "discretize")?;
            let d_hat = d["gap"]["d_hat"].as_f64().context("discretize.json lacks gap.d_hat")?;
            Track::Discrete { d_hat }
        }
    };
    let sc = SaddleContext::new(ZetaContext::designed(&table, cfg.k)?)?;
    let (report, contour) = shifted_total(&sc, track, cfg.envelope_b)?;
    let p = &cfg.perron;
    let cl = if p.closed_loop && cfg.track == TrackChoice::Continuous {
        Some(closed_loop(&table, cfg.k, p.x.ln(), p.kappa, p.t_max, p.sigma_left, &p.quadrature)?)
    } else {
        None
    };
    let art = PerronArtifact { report, closed_loop_residual: cl.map(|c| c.relative_residual), closed_loop: cl };
    let mut out = Artifacts::open(cfg, "perron")?;
    out.write_json(PERRON, &art)?;
    let mut rows = Vec::new();
    for seg in &contour.segments {
        let label = seg.kind.label();
        for n in &seg.nodes {
            rows.push(vec![label.clone(), num(n.sigma), num(n.t_local), num(n.log_t)]);
        }
    }
    out.write_csv("contour.csv", &["segment", "sigma", "t_minus_tau", "log_t"], &rows)?;
    out.finish()?;
    Ok(art)
}

pub fn discretize_stage(cfg: &RunConfig) -> Result<DiscretizationReport> {
    let d = &cfg.discrete;
    let table = build_sequences(&d.params).context("building the sampling table")?;
    let (ds, report) = discretize(&table, d.block, cfg.seed, &d.settings)?;
    let mut out = Artifacts::open(cfg, "discretize")?;
    out.write_bytes(SYSTEM, format!("{}\n", ds.to_json()?).as_bytes())?;
    out.write_bytes("discrete_system.bin", &ds.to_bytes())?;
    out.write_json(DISCRETIZE, &report)?;
    let rows: Vec<Vec<String>> = ds.primes.iter().map(|&(p, m)| vec![num(p), m.to_string()]).collect();
    out.write_csv("primes.csv", &["p", "multiplicity"], &rows)?;
    out.finish()?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountArtifact {
    pub log_x_max: f64,
    pub integers: usize,
    pub truncated: bool,
    pub exact_to: f64,
    pub collisions: u64,
    pub max_collision_spread: f64,
    pub values: Vec<CountingValues>,
    /// max |exp*(dΠ)[1, x] − N(x)| on [1, oracle_x_max].
    pub exp_star_max_gap: f64,
    pub exp_star_probes: usize,
}

pub fn count(cfg: &RunConfig) -> Result<CountArtifact> {
    let p = cfg.out.join(SYSTEM);
    if !p.exists() {
        bail!("stage dependency missing: {} not found; run `discretize` first", p.display());
    }
    let ds: DiscreteSystem = serde_json::from_slice(&std::fs::read(&p)?).context("parsing the discrete system")?;
    ds.validate()?;
    let log_x = cfg.count.x_max.ln().min(ds.log_x_max);
    let stream = enumerate_integers(&ds, log_x, cfg.count.budget)?;
    let top = stream.exact_to();
    let mut values = Vec::new();
    for v in log_grid(1.0, top.max(1.0), 40) {
        values.push(counting_functions(&ds, &stream, v.min(top))?);
    }
    let ox = cfg.count.oracle_x_max.ln().min(top);
    let measure = exp_star(&prime_power_measure(&ds.all_primes(), ox), ox, &ConvolveConfig::new(cfg.tol))?;
    let mut gap = 0.0f64;
    let mut probes = 0;
    for e in stream.entries.iter().take_while(|e| e.log_value <= ox) {
        gap = gap.max((measure.cumulative(e.log_value)? - stream.count(e.log_value)? as f64).abs());
        probes += 1;
    }
    let art = CountArtifact {
        log_x_max: log_x,
        integers: stream.entries.len(),
        truncated: stream.truncated,
        exact_to: top,
        collisions: stream.collisions,
        max_collision_spread: stream.max_collision_spread,
        values,
        exp_star_max_gap: gap,
        exp_star_probes: probes,
    };
    let mut out = Artifacts::open(cfg, "count")?;
    let mut csv = Vec::new();
    stream.write_csv(&mut csv)?;
    out.write_bytes("integers.csv", &csv)?;
    out.write_json(COUNT, &art)?;
    out.finish()?;
    Ok(art)
}
