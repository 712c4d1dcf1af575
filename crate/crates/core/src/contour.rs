//! The shifted Perron contour: vertical-line inversion, the closed Cauchy
//! loop at moderate x, contour assembly around the saddles, and numeric
//! bounds for every connector and return segment.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logcomplex::LogComplex;
use crate::quad::{gauss_legendre, integrate, QuadConfig};
use crate::saddle::{PathPolyline, S0Contribution, SaddleContext, SmBound};
use crate::special::log_sum_exp;
use crate::zeta::{Family, ZetaContext};

type C64 = Complex64;

/// Continuation height of the return path and κ.
pub const KAPPA: f64 = 1.5;

/// |t − τ| up to which Δ_1 is bounded by sampling the exact integrand.
const NEAR_SAMPLED: f64 = 20.0;

/// Endpoint continuity tolerance in (σ, t/τ) coordinates.
pub const CONTINUITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Side {
    Minus,
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    Gamma(i64),
    Upsilon(i64),
    /// Horizontal join from the outermost saddle path to σ_0 at T_1^±.
    Join(Side),
    Delta1(Side),
    Delta2(Side),
    Delta3(Side),
    Delta4Plus,
    /// Discrete-track replacements Δ̃_3 … Δ̃_6.
    DeltaTilde(u8),
    VerticalLine,
}

impl SegmentKind {
    /// Saddle paths and their connectors, as opposed to return segments.
    pub fn is_near(&self) -> bool {
        matches!(self, SegmentKind::Gamma(_) | SegmentKind::Upsilon(_))
    }

    pub fn label(&self) -> String {
        match self {
            SegmentKind::Gamma(m) => format!("gamma_{m}"),
            SegmentKind::Upsilon(m) => format!("upsilon_{m}"),
            SegmentKind::Join(s) => format!("join_{}", side(*s)),
            SegmentKind::Delta1(s) => format!("delta_1{}", side(*s)),
            SegmentKind::Delta2(s) => format!("delta_2{}", side(*s)),
            SegmentKind::Delta3(s) => format!("delta_3{}", side(*s)),
            SegmentKind::Delta4Plus => "delta_4+".into(),
            SegmentKind::DeltaTilde(i) => format!("delta~_{i}+"),
            SegmentKind::VerticalLine => "vertical-line".into(),
        }
    }
}

fn side(s: Side) -> &'static str {
    match s {
        Side::Minus => "-",
        Side::Plus => "+",
    }
}

/// A contour node. Near the anchor `t_local = t − τ_K` is exact; far up the
/// line only `log_t` is meaningful and `t_local` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub sigma: f64,
    pub t_local: f64,
    pub log_t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Track {
    Continuous,
    /// Discrete system: every bound carries exp(D̂·√log(t+2)).
    Discrete { d_hat: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Contribution {
    Value(LogComplex),
    /// log of an upper bound on |(1/π)·Im ∫|.
    LogBound(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSegment {
    pub kind: SegmentKind,
    pub nodes: Vec<Node>,
    pub contribution: Option<Contribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub track: Track,
    pub k: usize,
    pub log_x: f64,
    pub tau: f64,
    pub log_tau: f64,
    pub sigma0: f64,
    pub sigma_prime: f64,
    /// T_1^± − τ.
    pub t1: (f64, f64),
    /// T_2^± − τ = ±exp((log B)^{α/2}).
    pub t2: (f64, f64),
    /// log T of the top of the contour (2 log x or 4 log x).
    pub log_t_top: f64,
    pub kappa: f64,
    pub m_max: i64,
    /// Discrete track only: σ(2τ), σ'' and whether Case 1 (α > 1/3) applies.
    pub sigma_2tau: Option<f64>,
    pub sigma_second: Option<f64>,
    pub case_one: Option<bool>,
    pub segments: Vec<ContourSegment>,
}

impl Contour {
    pub fn count(&self, pred: impl Fn(&SegmentKind) -> bool) -> usize {
        self.segments.iter().filter(|s| pred(&s.kind)).count()
    }

    /// Largest endpoint mismatch between consecutive segments.
    pub fn continuity_gap(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.segments.windows(2) {
            let a = w[0].nodes[w[0].nodes.len() - 1];
            let b = w[1].nodes[0];
            worst = worst.max(node_gap(&a, &b, self.tau));
        }
        worst
    }

    pub fn check_continuity(&self) -> Result<()> {
        let g = self.continuity_gap();
        if g > CONTINUITY_TOL {
            return Err(Error::Assembly(format!("endpoint mismatch {g:e}")));
        }
        Ok(())
    }
}

fn node_gap(a: &Node, b: &Node, tau: f64) -> f64 {
    let ds = (a.sigma - b.sigma).abs();
    let dt = if a.t_local.is_finite() && b.t_local.is_finite() {
        (a.t_local - b.t_local).abs() / tau
    } else {
        (a.log_t - b.log_t).abs()
    };
    ds.max(dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub kind: SegmentKind,
    pub label: String,
    pub contribution: Contribution,
    /// s_0 lower bound minus this segment's log bound.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronReport {
    pub track: Track,
    pub k: usize,
    pub log_x: f64,
    /// log(ρ_{C,K}·x).
    pub log_residue_term: f64,
    pub s0: S0Contribution,
    pub sm_bounds: Vec<SmBound>,
    pub segments: Vec<SegmentReport>,
    /// log of the effective Perron error bound.
    pub log_perron_error: f64,
    /// log of the aggregate bound over Υ_m and Γ_m (m ≠ 0).
    pub log_near_bound: f64,
    /// s_0 lower bound minus log_near_bound.
    pub near_margin: f64,
    pub log_return_bound: f64,
    pub return_margin: f64,
    /// ρx + (1/π)·Im∫_{Γ_0}, as a signed log-magnitude.
    pub total: LogComplex,
    /// log of the sum of all bounds (segments, m ≠ 0 paths, Perron error).
    pub log_slack: f64,
    pub envelope_exponent: f64,
    pub envelope_exponent_b: f64,
    pub oracle: Option<f64>,
}

// ---------------------------------------------------------------------------
// Vertical-line Perron integral.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronConfig {
    /// Highest oscillation frequency of log ζ in t to resolve, besides log x.
    pub bandwidth: f64,
    /// Gauss–Legendre order per panel.
    pub order: usize,
    /// Panels per oscillation period.
    pub panels_per_period: f64,
}

impl Default for PerronConfig {
    fn default() -> Self {
        Self { bandwidth: 2.0, order: 12, panels_per_period: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronVertical {
    pub x_log: f64,
    pub kappa: f64,
    pub t_max: f64,
    /// (1/2πi)∫_{κ−iT}^{κ+iT} x^s ζ(s) ds/s.
    pub value: f64,
    /// log of the effective Perron error bound under dN ≤ δ_1 + 2du + log u du.
    pub log_error_bound: f64,
    pub panels: usize,
}

/// ∫_{t0}^{t1} F(σ + it) dt with F = exp(s·log x + log ζ(s) − log s), on
/// panels of one oscillation period.
fn line_integral<F>(x_log: f64, sigma: f64, t0: f64, t1: f64, log_zeta: &F, cfg: &PerronConfig) -> Result<(C64, usize)>
where
    F: Fn(C64) -> Result<C64> + Sync,
{
    let width = 2.0 * PI / (x_log.abs() + cfg.bandwidth) / cfg.panels_per_period;
    let n = (((t1 - t0) / width).ceil() as usize).max(1);
    let h = (t1 - t0) / n as f64;
    let (gx, gw) = gauss_legendre(cfg.order);
    let parts: Vec<Result<C64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let a = t0 + h * p as f64;
            let mut acc = C64::new(0.0, 0.0);
            for (x, w) in gx.iter().zip(gw.iter()) {
                let s = C64::new(sigma, a + 0.5 * h * (x + 1.0));
                let e = s * x_log + log_zeta(s)? - s.ln();
                acc += e.exp() * (0.5 * h * w);
            }
            Ok(acc)
        })
        .collect();
    let mut total = C64::new(0.0, 0.0);
    for p in parts {
        total += p?;
    }
    Ok((total, n))
}

/// (1/2πi)∫_{κ−iT}^{κ+iT} x^s ζ(s) ds/s by the conjugate fold
/// (1/π)∫_0^T Re(x^s ζ(s)/s) dt; `log_zeta` must satisfy ζ(s̄) = conj ζ(s).
pub fn perron_vertical<F>(x_log: f64, kappa: f64, t_max: f64, log_zeta: F, cfg: &PerronConfig) -> Result<PerronVertical>
where
    F: Fn(C64) -> Result<C64> + Sync,
{
    if kappa <= 1.0 {
        return Err(Error::InvalidParams(format!("κ = {kappa} must exceed 1")));
    }
    let (v, panels) = line_integral(x_log, kappa, 0.0, t_max, &log_zeta, cfg)?;
    Ok(PerronVertical {
        x_log,
        kappa,
        t_max,
        value: v.re / PI,
        log_error_bound: perron_error_log(x_log, kappa, t_max.ln())?,
        panels,
    })
}

/// The unfolded (1/2π)∫_{−T}^{T} x^s ζ(s)/s dt, complex.
pub fn perron_vertical_full<F>(x_log: f64, kappa: f64, t_max: f64, log_zeta: F, cfg: &PerronConfig) -> Result<C64>
where
    F: Fn(C64) -> Result<C64> + Sync,
{
    let (v, _) = line_integral(x_log, kappa, -t_max, t_max, &log_zeta, cfg)?;
    Ok(v / (2.0 * PI))
}

/// log of x^κ[1/(1+T log x) + ∫_0^∞ (2+v)e^{(1−κ)v}/(1+T|log x − v|) dv],
/// the effective Perron remainder with dN ≤ δ_1 + 2du + log u du.
pub fn perron_error_log(x_log: f64, kappa: f64, log_t: f64) -> Result<f64> {
    let cfg = QuadConfig::new(1e-300, 1e-10).with_max_intervals(20000);
    let eps = (-log_t).exp();
    let lx = x_log;
    let mut terms = vec![-(eps + lx).ln()];
    // Left of the peak, away from it: plain integral in v.
    if lx > 1.0 {
        let left = integrate(|v: f64| (2.0 + v) * ((1.0 - kappa) * v).exp() / (eps + (lx - v)), 0.0, lx - 1.0, &cfg)?.value;
        terms.push(left.ln());
    }
    // Near the peak, w = |log x − v| = e^y, with e^{(1−κ)log x} factored out.
    let w_lo = (eps.ln() - 40.0).max(-745.0);
    let near_left = lx.min(1.0);
    let peak = |sgn: f64, w: f64| {
        let v = lx + sgn * w;
        (2.0 + v) * ((1.0 - kappa) * sgn * w).exp() * w / (eps + w)
    };
    let nl = integrate(|y: f64| peak(-1.0, y.exp()), w_lo, near_left.ln(), &cfg)?.value;
    let nr = integrate(|y: f64| peak(1.0, y.exp()), w_lo, 0.0, &cfg)?.value;
    terms.push((1.0 - kappa) * lx + (nl + nr).ln());
    // Right tail, v > log x + 1.
    let tail = integrate(|w: f64| (2.0 + lx + w) * ((1.0 - kappa) * w).exp() / (eps + w), 1.0, 1.0 + 80.0 / (kappa - 1.0), &cfg)?.value;
    terms.push((1.0 - kappa) * lx + tail.ln());
    Ok(kappa * lx - log_t + log_sum_exp(&terms))
}

// ---------------------------------------------------------------------------
// Closed loop at moderate x.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub x_log: f64,
    pub kappa: f64,
    pub t_max: f64,
    pub sigma_left: f64,
    pub vertical: f64,
    pub residue_term: f64,
    /// (1/2πi)∫ along the left line, upward.
    pub left_line: f64,
    /// (1/2πi)(∫_{σ_L+iT}^{κ+iT} − ∫_{σ_L−iT}^{κ−iT}).
    pub horizontals: f64,
    pub shifted_total: f64,
    pub relative_residual: f64,
    pub log_perron_error: f64,
}

/// Cauchy's theorem on the rectangle [σ_L, κ] × [−T, T] for the unanchored
/// truncated zeta: vertical value against ρ_{C,K}x + left line + horizontals.
pub fn closed_loop(table: &crate::construction::SequenceTable, k: usize, x_log: f64, kappa: f64, t_max: f64, sigma_left: f64, cfg: &PerronConfig) -> Result<ClosedLoopReport> {
    let ctx = ZetaContext::new(table, k, None, x_log)?;
    let lz = |s: C64| ctx.log_zeta(s);
    let vertical = perron_vertical(x_log, kappa, t_max, lz, cfg)?;
    let residue = ZetaContext::residue(table, k)?;
    let residue_term = (residue.log_rho_k + x_log).exp();
    let (left, _) = line_integral(x_log, sigma_left, 0.0, t_max, &lz, cfg)?;
    let left_line = left.re / PI;
    let qc = QuadConfig::new(1e-14, 1e-12).with_max_intervals(4000);
    let h = integrate(
        |sg: f64| {
            let s = C64::new(sg, t_max);
            match ctx.log_zeta(s) {
                Ok(l) => (s * x_log + l - s.ln()).exp(),
                Err(_) => C64::new(f64::NAN, f64::NAN),
            }
        },
        sigma_left,
        kappa,
        &qc,
    )?
    .value;
    if !h.re.is_finite() {
        return Err(Error::Domain("horizontal integrand failed".into()));
    }
    let horizontals = h.im / PI;
    let shifted_total = left_line + horizontals;
    let relative_residual = (vertical.value - residue_term - shifted_total) / vertical.value;
    Ok(ClosedLoopReport {
        x_log,
        kappa,
        t_max,
        sigma_left,
        vertical: vertical.value,
        residue_term,
        left_line,
        horizontals,
        shifted_total,
        relative_residual,
        log_perron_error: vertical.log_error_bound,
    })
}

// ---------------------------------------------------------------------------
// Contour assembly.

fn near_node(sigma: f64, t_local: f64, tau: f64) -> Node {
    Node { sigma, t_local, log_t: (tau + t_local).ln() }
}

fn far_node(sigma: f64, log_t: f64, tau: f64) -> Node {
    let t_local = if log_t < 700.0 { log_t.exp() - tau } else { f64::INFINITY };
    Node { sigma, t_local, log_t }
}

fn polyline_nodes(p: &PathPolyline, tau: f64) -> Vec<Node> {
    p.points.iter().map(|z| near_node(z.re, z.im, tau)).collect()
}

/// Saddle paths, connectors and return segments for anchor K, upper half,
/// ordered from the real axis up to κ + iT.
pub fn assemble(sc: &SaddleContext, track: Track) -> Result<(Contour, Vec<PathPolyline>)> {
    let k = sc.k;
    let l = sc.log_b;
    let lx = sc.log_x();
    let row = sc.zeta.table.row(k);
    let tau = row.tau_f();
    let log_tau = row.log_tau;
    let mm = sc.m_max;
    let saddles = sc.find_all(mm)?;
    let s0 = saddles.iter().find(|s| s.m == 0).expect("m = 0 present").clone();
    let mut paths = Vec::new();
    for sp in &saddles {
        paths.push(if sp.m == 0 { sc.trace_gamma0(sp)? } else { sc.trace_gamma_m(sp)? });
    }
    let sigma0 = s0.sigma;
    let sigma_prime = sigma0 - 2.0 * sc.c * l.powf(sc.alpha) / lx;
    let first = &paths[0];
    let last = &paths[paths.len() - 1];
    let lo_end = first.points[0];
    let hi_end = last.points[last.points.len() - 1];
    let t1 = (lo_end.im, hi_end.im);
    let e2 = l.powf(sc.alpha / 2.0).exp();
    let t2 = (-e2, e2);
    let kappa = KAPPA;
    let log_t_top = match track {
        Track::Continuous => 2.0 * lx,
        Track::Discrete { .. } => 4.0 * lx,
    };
    let n = |s: f64, t: f64| near_node(s, t, tau);
    let mut segs = Vec::new();
    let seg = |kind, nodes| ContourSegment { kind, nodes, contribution: None };
    // From the real axis up to T_2^−.
    segs.push(seg(
        SegmentKind::Delta3(Side::Minus),
        vec![Node { sigma: sigma_prime, t_local: -tau, log_t: f64::NEG_INFINITY }, n(sigma_prime, t2.0)],
    ));
    segs.push(seg(SegmentKind::Delta2(Side::Minus), vec![n(sigma_prime, t2.0), n(sigma0, t2.0)]));
    segs.push(seg(SegmentKind::Delta1(Side::Minus), vec![n(sigma0, t2.0), n(sigma0, t1.0)]));
    segs.push(seg(SegmentKind::Join(Side::Minus), vec![n(sigma0, t1.0), n(lo_end.re, lo_end.im)]));
    for (i, p) in paths.iter().enumerate() {
        segs.push(seg(SegmentKind::Gamma(p.m), polyline_nodes(p, tau)));
        if i + 1 < paths.len() {
            let a = p.points[p.points.len() - 1];
            let b = paths[i + 1].points[0];
            let label = if p.m < 0 { p.m } else { p.m + 1 };
            segs.push(seg(SegmentKind::Upsilon(label), vec![n(a.re, a.im), n(b.re, b.im)]));
        }
    }
    segs.push(seg(SegmentKind::Join(Side::Plus), vec![n(hi_end.re, hi_end.im), n(sigma0, t1.1)]));
    segs.push(seg(SegmentKind::Delta1(Side::Plus), vec![n(sigma0, t1.1), n(sigma0, t2.1)]));
    segs.push(seg(SegmentKind::Delta2(Side::Plus), vec![n(sigma0, t2.1), n(sigma_prime, t2.1)]));
    let (mut sigma_2tau, mut sigma_second, mut case_one) = (None, None, None);
    match track {
        Track::Continuous => {
            let top = far_node(sigma_prime, log_t_top, tau);
            segs.push(seg(SegmentKind::Delta3(Side::Plus), vec![n(sigma_prime, t2.1), top]));
            segs.push(seg(SegmentKind::Delta4Plus, vec![top, far_node(kappa, log_t_top, tau)]));
        }
        Track::Discrete { d_hat } => {
            let s2 = 1.0 - (2f64.ln() + log_tau) / l;
            let s_pp = sigma_prime - 2.0 * d_hat / lx.sqrt();
            let c1 = sc.alpha > 1.0 / 3.0;
            sigma_2tau = Some(s2);
            sigma_second = Some(s_pp);
            case_one = Some(c1);
            let at2 = n(sigma_prime, tau);
            segs.push(seg(SegmentKind::DeltaTilde(3), vec![n(sigma_prime, t2.1), at2]));
            segs.push(seg(SegmentKind::DeltaTilde(4), vec![at2, n(s2, tau)]));
            let foot = if c1 {
                let top = far_node(s2, log_t_top, tau);
                segs.push(seg(SegmentKind::DeltaTilde(5), vec![n(s2, tau), top]));
                top
            } else {
                // σ(t) = 1 − log t/log B from 2τ up to σ(t) = σ'', then vertical.
                let log_t3 = (1.0 - s_pp) * l;
                let lt0 = 2f64.ln() + log_tau;
                let mut nodes = Vec::new();
                let steps = 200;
                if log_t3 > lt0 {
                    for i in 0..=steps {
                        let lt = lt0 + (log_t3 - lt0) * i as f64 / steps as f64;
                        let node = if i == 0 { n(s2, tau) } else { far_node(1.0 - lt / l, lt, tau) };
                        nodes.push(node);
                    }
                } else {
                    nodes.push(n(s2, tau));
                }
                let last = *nodes.last().expect("nonempty");
                let top = far_node(last.sigma, log_t_top, tau);
                nodes.push(top);
                segs.push(seg(SegmentKind::DeltaTilde(5), nodes));
                top
            };
            segs.push(seg(SegmentKind::DeltaTilde(6), vec![foot, far_node(kappa, log_t_top, tau)]));
        }
    }
    let contour = Contour {
        track,
        k,
        log_x: lx,
        tau,
        log_tau,
        sigma0,
        sigma_prime,
        t1,
        t2,
        log_t_top,
        kappa,
        m_max: mm,
        sigma_2tau,
        sigma_second,
        case_one,
        segments: segs,
    };
    contour.check_continuity()?;
    Ok((contour, paths))
}

// ---------------------------------------------------------------------------
// Bounds.

/// Phase-free bound on |p·∫_a^b e^{ωv}/v dv| given ρ = Re ω and |ω| ≥ w_min.
fn tail_envelope(p: f64, a: f64, b: f64, rho: f64, log_wmin: f64) -> f64 {
    let ea = (rho * a).exp();
    let eb = (rho * b).exp();
    let direct = (b - a) * (ea / a).max(eb / b);
    let parts = ((eb / b + ea / a + ea.max(eb) * (1.0 / a - 1.0 / b)).ln() - log_wmin).exp();
    p * direct.min(parts)
}

/// A height known both relative to the anchor and as log t; each form is
/// accurate where it was generated.
#[derive(Clone, Copy, Debug)]
struct Height {
    local: f64,
    log_t: f64,
}

impl Height {
    fn from_node(n: &Node) -> Self {
        Self { local: n.t_local, log_t: n.log_t }
    }
    fn from_log(log_t: f64, t_anchor: f64) -> Self {
        let local = if log_t < 700.0 { log_t.exp() - t_anchor } else { f64::INFINITY };
        Self { local, log_t }
    }
}

/// log of the distance from the centre c (global, with c_local = c − T_a)
/// to the height range [lo, hi].
fn log_dist(lo: &Height, hi: &Height, c: f64, c_local: f64) -> f64 {
    if c_local.abs() < c.abs() && lo.local.is_finite() && hi.local.is_finite() {
        let d = if c_local < lo.local {
            lo.local - c_local
        } else if c_local > hi.local {
            c_local - hi.local
        } else {
            0.0
        };
        return d.ln();
    }
    if hi.log_t < 700.0 {
        let t_lo = lo.log_t.exp();
        let t_hi = hi.log_t.exp();
        let d = if c < t_lo {
            t_lo - c
        } else if c > t_hi {
            c - t_hi
        } else {
            0.0
        };
        return d.ln();
    }
    if c <= 0.0 {
        return lo.log_t.max((-c).ln());
    }
    if lo.log_t > c.ln() + 1.0 {
        lo.log_t + (-(c.ln() - lo.log_t).exp()).ln_1p()
    } else {
        f64::NEG_INFINITY
    }
}

fn log_hypot(a: f64, log_b: f64) -> f64 {
    let la = a.abs().ln();
    let m = la.max(log_b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + 0.5 * ((2.0 * (la - m)).exp() + (2.0 * (log_b - m)).exp()).ln()
}

fn family_center(ctx: &ZetaContext, k: usize, fam: Family) -> (f64, f64) {
    let tau = ctx.table.row(k).tau_f();
    let c = match fam {
        Family::Eta => tau,
        Family::EtaTilde => -tau,
        Family::Xi => 0.0,
    };
    // Same as Im ω at z = 0.
    (c, ctx.omega(k, fam, C64::new(1.0, 0.0)).im)
}

/// Upper bound for log|x^s ζ_{C,K}(s)/s| over a rectangle, without phases.
/// Returns (log max modulus × |s − 1|, log min |s − 1|).
fn rect_log_modulus(ctx: &ZetaContext, sigma_lo: f64, sigma_hi: f64, lo: &Height, hi: &Height) -> (f64, f64) {
    let mut sum = 0.0;
    for k in 0..=ctx.k_trunc {
        let r = ctx.table.row(k);
        for fam in [Family::Eta, Family::EtaTilde, Family::Xi] {
            let (p, a, b) = match fam {
                Family::Xi => (0.5, r.log_b_f, r.log_c_f()),
                _ => (0.25, r.log_a_f(), r.log_b_f),
            };
            let (c, c_local) = family_center(ctx, k, fam);
            let ld = log_dist(lo, hi, c, c_local);
            for shift in [0.0, 1.0] {
                let rho = 1.0 - sigma_lo - shift;
                let re_lo = 1.0 - sigma_hi - shift;
                let re_min = if rho >= 0.0 && re_lo <= 0.0 { 0.0 } else { rho.abs().min(re_lo.abs()) };
                sum += tail_envelope(p, a, b, rho, log_hypot(re_min, ld));
            }
        }
    }
    let re_one = if sigma_lo <= 1.0 && sigma_hi >= 1.0 { 0.0 } else { (sigma_lo - 1.0).abs().min((sigma_hi - 1.0).abs()) };
    let log_s1 = log_hypot(re_one, log_dist(lo, hi, 0.0, -ctx.t_anchor));
    (sigma_hi * ctx.log_x + sum, log_s1)
}

fn discrete_penalty(track: Track, log_t_hi: f64) -> f64 {
    match track {
        Track::Continuous => 0.0,
        Track::Discrete { d_hat } => {
            let lt = if log_t_hi < 700.0 { (log_t_hi.exp() + 2.0).ln() } else { log_t_hi };
            d_hat * lt.max(0.0).sqrt()
        }
    }
}

/// Node-sampled max-modulus × length for a straight segment near τ_K, in
/// local coordinates.
fn sampled_log_bound(ctx: &ZetaContext, a: C64, b: C64, spacing: f64, track: Track) -> Result<f64> {
    let len = (b - a).norm();
    let n = ((len / spacing).ceil() as usize).max(2);
    let vals: Vec<Result<f64>> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let z = a + (b - a) * (i as f64 / n as f64);
            Ok(ctx.f_value(z)?.re + ctx.g_eval(z)?.log_abs)
        })
        .collect();
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let h = (len / n as f64).ln();
    let terms: Vec<f64> = vals.windows(2).map(|w| w[0].max(w[1]) + h).collect();
    let log_t_hi = (ctx.t_anchor + a.im.max(b.im)).ln();
    Ok(log_sum_exp(&terms) + discrete_penalty(track, log_t_hi) - PI.ln())
}

/// Block bound for a straight segment between two nodes using rectangles.
fn blocked_log_bound(ctx: &ZetaContext, a: &Node, b: &Node, track: Track) -> f64 {
    let ta = ctx.t_anchor;
    let vertical = (a.sigma - b.sigma).abs() < 1e-15;
    let mut terms = Vec::new();
    if vertical {
        let (lo, hi) = if a.log_t <= b.log_t { (Height::from_node(a), Height::from_node(b)) } else { (Height::from_node(b), Height::from_node(a)) };
        let sg = a.sigma;
        let inside = |h: &Height| h.log_t > lo.log_t && h.log_t < hi.log_t;
        let mut breaks = vec![lo, hi];
        // Uniform in log t up to well past τ_K, then one far block.
        let mut y = if lo.log_t == f64::NEG_INFINITY { -5.0 } else { lo.log_t };
        let y_end = hi.log_t.min(ctx.table.row(ctx.k_trunc).log_tau + 60.0);
        while y < y_end {
            let h = Height::from_log(y, ta);
            if inside(&h) || lo.log_t == f64::NEG_INFINITY && y == -5.0 {
                breaks.push(h);
            }
            y += 0.02;
        }
        // Geometric refinement around every τ_k, in local coordinates.
        for k in 0..=ctx.k_trunc {
            let (tau, c_local) = family_center(ctx, k, Family::Eta);
            let l = ctx.table.row(k).log_b_f;
            let mut d = 0.05 / l;
            while d < tau / 2.0 {
                for sgn in [-1.0, 1.0] {
                    let h = Height { local: c_local + sgn * d, log_t: (tau + sgn * d).ln() };
                    if inside(&h) && (c_local + sgn * d > lo.local || !lo.local.is_finite()) && (c_local + sgn * d < hi.local || !hi.local.is_finite()) {
                        breaks.push(h);
                    }
                }
                d *= 1.25;
            }
        }
        breaks.sort_by(|x, y| x.log_t.partial_cmp(&y.log_t).unwrap().then(x.local.partial_cmp(&y.local).unwrap_or(std::cmp::Ordering::Equal)));
        breaks.dedup_by(|x, y| x.log_t == y.log_t && x.local == y.local);
        for w in breaks.windows(2) {
            let (b0, b1) = (&w[0], &w[1]);
            let (m, log_s1) = rect_log_modulus(ctx, sg, sg, b0, b1);
            // ∫dt/|s−1| over the block: ≤ log(t_1/t_0) for t_0 ≥ 1, else length/min|s−1|.
            let len_factor = if b0.log_t >= 0.0 {
                let dl = b1.log_t - b0.log_t;
                let dl = if dl > 1e-9 || !b0.local.is_finite() || !b1.local.is_finite() {
                    dl
                } else {
                    (b1.local - b0.local) / (ta + b0.local)
                };
                if dl <= 0.0 {
                    continue;
                }
                dl.ln()
            } else {
                let t0 = if b0.log_t == f64::NEG_INFINITY { 0.0 } else { b0.log_t.exp() };
                (b1.log_t.exp() - t0).ln() - log_s1
            };
            terms.push(m + len_factor + discrete_penalty(track, b1.log_t));
        }
    } else {
        let (h0, h1) = (Height::from_node(a), Height::from_node(b));
        let (lo, hi) = if h0.log_t <= h1.log_t { (h0, h1) } else { (h1, h0) };
        let (s_lo, s_hi) = if a.sigma < b.sigma { (a.sigma, b.sigma) } else { (b.sigma, a.sigma) };
        let steps = (((s_hi - s_lo) / 0.005).ceil() as usize).max(1);
        let h = (s_hi - s_lo) / steps as f64;
        for i in 0..steps {
            let s0 = s_lo + h * i as f64;
            let (m, log_s1) = rect_log_modulus(ctx, s0, s0 + h, &lo, &hi);
            terms.push(m - log_s1 + h.ln() + discrete_penalty(track, hi.log_t));
        }
    }
    log_sum_exp(&terms) - PI.ln()
}

/// Bounds on every segment except Γ_0 (which carries its value).
pub fn connector_bounds(sc: &SaddleContext, contour: &mut Contour, paths: &[PathPolyline], s0: &S0Contribution) -> Result<Vec<SmBound>> {
    let l = sc.log_b;
    let track = contour.track;
    let saddles: Vec<_> = paths.iter().map(|p| p.m).collect();
    let sp0 = sc.find_saddle(0)?;
    let mut sm = Vec::new();
    for (i, m) in saddles.iter().enumerate() {
        if *m == 0 {
            continue;
        }
        let sp = sc.find_saddle(*m)?;
        let mut b = sc.contribution_sm_bound(&sp, &paths[i], &sp0)?;
        b.log_bound += discrete_penalty(track, (contour.tau + sp.z.im).ln());
        sm.push(b);
    }
    let spacing = 0.02 / l;
    let ctx = &sc.zeta;
    for seg in contour.segments.iter_mut() {
        let c = match seg.kind {
            SegmentKind::Gamma(0) => Contribution::Value(LogComplex::new(s0.log_value, if s0.sign > 0 { 0.0 } else { PI })),
            SegmentKind::Gamma(m) => {
                let b = sm.iter().find(|b| b.m == m).expect("bound for each m");
                Contribution::LogBound(b.log_bound)
            }
            SegmentKind::Delta1(_) => {
                // Sampled within |t − τ| ≤ NEAR_SAMPLED, envelope blocks beyond.
                let a = seg.nodes[0];
                let b = seg.nodes[seg.nodes.len() - 1];
                let (near, far) = if a.t_local.abs() < b.t_local.abs() { (a, b) } else { (b, a) };
                let cut = far.t_local.signum() * NEAR_SAMPLED.min(far.t_local.abs());
                let mid = near_node(near.sigma, cut, contour.tau);
                let mut terms = vec![sampled_log_bound(
                    ctx,
                    C64::new(near.sigma, near.t_local),
                    C64::new(mid.sigma, mid.t_local),
                    0.05 / l,
                    track,
                )?];
                if far.t_local.abs() > NEAR_SAMPLED {
                    terms.push(blocked_log_bound(ctx, &mid, &far, track));
                }
                Contribution::LogBound(log_sum_exp(&terms))
            }
            SegmentKind::Upsilon(_) | SegmentKind::Join(_) | SegmentKind::Delta2(_) => {
                let a = seg.nodes[0];
                let b = seg.nodes[seg.nodes.len() - 1];
                let za = C64::new(a.sigma, a.t_local);
                let zb = C64::new(b.sigma, b.t_local);
                Contribution::LogBound(sampled_log_bound(ctx, za, zb, spacing, track)?)
            }
            _ => {
                let terms: Vec<f64> = seg.nodes.windows(2).map(|w| blocked_log_bound(ctx, &w[0], &w[1], track)).collect();
                Contribution::LogBound(log_sum_exp(&terms))
            }
        };
        seg.contribution = Some(c);
    }
    Ok(sm)
}

/// max over nodes of cos((t − τ)·log B) on each Υ_m; must be ≤ 0.
pub fn upsilon_cosines(contour: &Contour, log_b: f64, samples: usize) -> Vec<(i64, f64)> {
    contour
        .segments
        .iter()
        .filter_map(|s| match s.kind {
            SegmentKind::Upsilon(m) => {
                let a = s.nodes[0].t_local;
                let b = s.nodes[s.nodes.len() - 1].t_local;
                let worst = (0..=samples)
                    .map(|i| ((a + (b - a) * i as f64 / samples as f64) * log_b).cos())
                    .fold(f64::NEG_INFINITY, f64::max);
                Some((m, worst))
            }
            _ => None,
        })
        .collect()
}

/// Residue, s_0 contribution, all bounds and the effective Perron error.
pub fn shifted_total(sc: &SaddleContext, track: Track, b: f64) -> Result<(PerronReport, Contour)> {
    let (mut contour, paths) = assemble(sc, track)?;
    let sp0 = sc.find_saddle(0)?;
    let mut s0 = sc.contribution_s0(&sp0, b)?;
    if let Track::Discrete { d_hat } = track {
        // The discrete factor may shrink |ζ| on Γ_0 by up to exp(D̂√log t).
        s0.log_lower_bound -= d_hat * (contour.tau.ln()).sqrt();
        s0.margin = s0.log_value - s0.log_lower_bound;
    }
    let sm = connector_bounds(sc, &mut contour, &paths, &s0)?;
    let lower = s0.log_lower_bound;
    let mut segments = Vec::new();
    let mut near = Vec::new();
    let mut ret = Vec::new();
    for seg in &contour.segments {
        let c = seg.contribution.expect("filled");
        let margin = match c {
            Contribution::LogBound(v) => {
                if seg.kind.is_near() {
                    near.push(v);
                } else {
                    ret.push(v);
                }
                lower - v
            }
            Contribution::Value(_) => f64::INFINITY,
        };
        segments.push(SegmentReport { kind: seg.kind, label: seg.kind.label(), contribution: c, margin });
    }
    let log_t_top = contour.log_t_top;
    let log_perron_error = perron_error_log(sc.log_x(), KAPPA, log_t_top)?;
    let residue = ZetaContext::residue(sc.zeta.table, sc.k)?;
    let log_residue_term = residue.log_rho_k + sc.log_x();
    let s0_term = LogComplex::new(s0.log_value, if s0.sign > 0 { 0.0 } else { PI });
    let total = LogComplex::new(log_residue_term, 0.0).add(s0_term);
    let log_near_bound = log_sum_exp(&near);
    let log_return_bound = log_sum_exp(&ret);
    let mut all = near.clone();
    all.extend(&ret);
    all.push(log_perron_error);
    let report = PerronReport {
        track,
        k: sc.k,
        log_x: sc.log_x(),
        log_residue_term,
        envelope_exponent: s0.envelope_exponent,
        envelope_exponent_b: s0.envelope_exponent_b,
        near_margin: lower - log_near_bound,
        return_margin: lower - log_return_bound,
        log_near_bound,
        log_return_bound,
        s0,
        sm_bounds: sm,
        segments,
        log_perron_error,
        total,
        log_slack: log_sum_exp(&all),
        oracle: None,
    };
    Ok((report, contour))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{build_sequences, ParamSet};

    #[test]
    fn trivial_system_perron() {
        let cfg = PerronConfig::default();
        let r = perron_vertical(10f64.ln(), 1.5, 1e4, |s: C64| Ok(-(1.0 - 1.0 / s).ln()), &cfg).unwrap();
        assert!((r.value - 10.0).abs() < 1e-2, "{}", r.value);
    }

    #[test]
    fn two_three_system_perron() {
        let lz = |s: C64| Ok(-(1.0 - (-s * 2f64.ln()).exp()).ln() - (1.0 - (-s * 3f64.ln()).exp()).ln());
        let cfg = PerronConfig { bandwidth: 3.0, ..Default::default() };
        let r = perron_vertical(10.5f64.ln(), 1.5, 1e5, lz, &cfg).unwrap();
        assert!((r.value - 7.0).abs() < 0.05, "{}", r.value);
    }

    #[test]
    fn conjugate_fold() {
        let lz = |s: C64| Ok(-(1.0 - (-s * 2f64.ln()).exp()).ln() - (1.0 - (-s * 3f64.ln()).exp()).ln());
        let cfg = PerronConfig { bandwidth: 3.0, ..Default::default() };
        let folded = perron_vertical(10.5f64.ln(), 1.5, 200.0, lz, &cfg).unwrap().value;
        let full = perron_vertical_full(10.5f64.ln(), 1.5, 200.0, lz, &cfg).unwrap();
        assert!((folded - full.re).abs() < 1e-12 * folded.abs() && full.im.abs() < 1e-12 * folded.abs());
    }

    #[test]
    fn perron_error_is_order_log_x() {
        for lx in [5.0f64, 20.0, 160.0] {
            let e = perron_error_log(lx, 1.5, 2.0 * lx).unwrap();
            assert!(e.exp() < 10.0 * lx, "{lx} {}", e.exp());
        }
    }

    #[test]
    fn envelope_bound_dominates_exact_tail() {
        let t = build_sequences(&ParamSet::toy(1.0, 1.0, 20.0, 1)).unwrap();
        let ctx = ZetaContext::new(&t, 1, None, 10.0).unwrap();
        for (sg, tt) in [(0.6, 3.0), (0.9, 1e3), (0.5, 4.0e8), (1.2, 7.0e9)] {
            let z = C64::new(sg, tt);
            let exact = (ctx.log_zeta(z).unwrap() + z * 10.0 - z.ln()).re;
            let h = Height { local: tt, log_t: tt.ln() };
            let (m, s1) = rect_log_modulus(&ctx, sg, sg, &h, &h);
            let bound = m - s1;
            assert!(exact <= bound + 1e-9, "{sg} {tt}: {exact} > {bound}");
        }
    }

    #[test]
    fn assembly_and_bounds() {
        let t = build_sequences(&ParamSet::toy(1.0, 1.0, 20.0, 1)).unwrap();
        let sc = SaddleContext::new(ZetaContext::designed(&t, 0).unwrap()).unwrap();
        let (c, _) = assemble(&sc, Track::Continuous).unwrap();
        let m = sc.m_max as usize;
        assert_eq!(c.count(|k| matches!(k, SegmentKind::Gamma(_))), 2 * m + 1);
        assert_eq!(c.count(|k| matches!(k, SegmentKind::Upsilon(_))), 2 * m);
        assert_eq!(c.segments.len(), 4 * m + 1 + 9);
        assert!((c.t2.1 - sc.log_b.powf(0.5).exp()).abs() < 1e-12 * c.t2.1);
        let lhs = c.sigma_prime * c.log_x;
        let rhs = c.sigma0 * c.log_x - 2.0 * c.log_tau;
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        for (_, cmax) in upsilon_cosines(&c, sc.log_b, 200) {
            assert!(cmax <= 1e-12);
        }
        let (rep, c) = shifted_total(&sc, Track::Continuous, 0.6).unwrap();
        assert_eq!(rep.s0.sign, 1);
        assert!(rep.near_margin > 1.0, "{}", rep.near_margin);
        let d4 = rep.segments.iter().find(|s| s.kind == SegmentKind::Delta4Plus).unwrap();
        if let Contribution::LogBound(v) = d4.contribution {
            assert!(v <= -0.5 * c.log_x + 1e-9, "{v}");
        }
    }
}
