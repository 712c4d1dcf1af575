//! Measures on [1, ∞) in log coordinates: atoms plus piecewise densities,
//! multiplicative convolution, the convolution exponential, and the
//! ψ ↔ Π ↔ π transforms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{fixed_gauss, gauss_legendre, integrate_with_breaks, QuadConfig};
use crate::special::{exp_difference_from_zero, exp_over_u, li_increment, mobius, EndPhases};

type C64 = Complex64;

/// Atoms closer than this in log position are merged.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// Closed-form density families. All densities are with respect to du and
/// are evaluated at u = e^v; `over_log` divides by log u.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "params")]
pub enum Density {
    /// 1 − 1/u (with `over_log`: the Li density).
    MainPsi,
    /// Constant `c`.
    Uniform { c: f64 },
    /// ½(1 − 1/u) cos(τ log u).
    RDeviation { tau: f64 },
    /// −½(1 − 1/u).
    SDeviation,
    /// Cumulative mass in v relative to the piece start, cubic Hermite between
    /// nodes with one-sided slopes (density w.r.t. dv) at each node.
    CumulativeGrid { log_u: Vec<f64>, cumulative: Vec<f64>, slope_left: Vec<f64>, slope_right: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    #[serde(flatten)]
    pub density: Density,
    #[serde(default)]
    pub over_log: bool,
}

/// Sampled cumulative counting function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub log_grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HalfLineMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub pieces: Vec<Piece>,
}

/// Analytic continuation of a measure's Mellin transform beyond its pieces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailModel {
    /// dLi on [e^from, ∞).
    Li { from: f64 },
}

fn expm1_over(v: f64) -> f64 {
    if v.abs() < 1e-8 {
        1.0 + 0.5 * v
    } else {
        v.exp_m1() / v
    }
}

impl Piece {
    pub fn new(a: f64, b: f64, density: Density, over_log: bool) -> Self {
        Self { a, b, density, over_log }
    }

    /// Density with respect to dv at v.
    pub fn density_dv(&self, v: f64) -> f64 {
        if v < self.a || v > self.b {
            return 0.0;
        }
        let em1 = v.exp_m1();
        let raw = match &self.density {
            Density::MainPsi => {
                if self.over_log {
                    return expm1_over(v);
                }
                em1
            }
            Density::Uniform { c } => c * v.exp(),
            Density::RDeviation { tau } => {
                if self.over_log {
                    return 0.5 * expm1_over(v) * (tau * v).cos();
                }
                0.5 * em1 * (tau * v).cos()
            }
            Density::SDeviation => {
                if self.over_log {
                    return -0.5 * expm1_over(v);
                }
                -0.5 * em1
            }
            Density::CumulativeGrid { log_u, cumulative, slope_left, slope_right } => {
                return grid_slope(log_u, cumulative, slope_left, slope_right, v)
            }
        };
        if self.over_log {
            raw / v
        } else {
            raw
        }
    }

    /// Mass of the piece on [a, min(b, v)].
    pub fn cumulative(&self, v: f64) -> Result<f64> {
        if v <= self.a {
            return Ok(0.0);
        }
        let x = v.min(self.b);
        let a = self.a;
        Ok(match (&self.density, self.over_log) {
            (Density::MainPsi, false) => (x.exp() - a.exp()) - (x - a),
            (Density::MainPsi, true) => li_increment(a, x - a),
            (Density::Uniform { c }, false) => c * (x.exp() - a.exp()),
            (Density::Uniform { c }, true) => {
                if a <= 0.0 {
                    return Err(Error::Domain("uniform density over log u diverges at u = 1".into()));
                }
                c * exp_over_u(C64::new(1.0, 0.0), a, x, EndPhases::default(), 0.0)?.re
            }
            (Density::RDeviation { tau }, false) => {
                let z1 = C64::new(1.0, *tau);
                let z0 = C64::new(0.0, *tau);
                let f = |v: f64| (z1 * v).exp() / z1 - if *tau == 0.0 { C64::new(v, 0.0) } else { (z0 * v).exp() / z0 };
                0.5 * (f(x) - f(a)).re
            }
            (Density::RDeviation { tau }, true) => {
                if a <= 0.0 {
                    let z1 = C64::new(1.0, *tau);
                    let z0 = C64::new(0.0, *tau);
                    0.5 * exp_difference_from_zero(z1, z0, x, None, None)?.re
                } else {
                    let g1 = exp_over_u(C64::new(1.0, *tau), a, x, EndPhases::default(), 0.0)?;
                    let g0 = exp_over_u(C64::new(0.0, *tau), a, x, EndPhases::default(), 0.0)?;
                    0.5 * (g1 - g0).re
                }
            }
            (Density::SDeviation, false) => -0.5 * ((x.exp() - a.exp()) - (x - a)),
            (Density::SDeviation, true) => -0.5 * li_increment(a, x - a),
            (Density::CumulativeGrid { log_u, cumulative, slope_left, slope_right }, false) => {
                grid_value(log_u, cumulative, slope_left, slope_right, x)
            }
            (Density::CumulativeGrid { .. }, true) => {
                return Err(Error::Domain("grid pieces cannot be divided by log u".into()))
            }
        })
    }

    /// ∫_a^b u^{-s} dμ over the piece.
    pub fn mellin(&self, s: C64) -> Result<C64> {
        let (a, b) = (self.a, self.b);
        // ∫ e^{zv} dv and ∫ e^{zv}/v dv on [a, b]
        let lin = |z: C64| -> C64 {
            if z.norm() < 1e-12 {
                C64::new(b - a, 0.0)
            } else {
                ((z * b).exp() - (z * a).exp()) / z
            }
        };
        let over = |z1: C64, z0: C64, w1: f64, w0: f64| -> Result<C64> {
            // w1 ∫ e^{z1 v}/v + w0 ∫ e^{z0 v}/v, finite when w1 + w0 = 0 at v = 0
            if a <= 0.0 {
                if (w1 + w0).abs() > 0.0 {
                    return Err(Error::Domain("density over log u diverges at u = 1".into()));
                }
                Ok(exp_difference_from_zero(z1, z0, b, None, None)? * w1)
            } else {
                Ok(exp_over_u(z1, a, b, EndPhases::default(), 0.0)? * w1
                    + exp_over_u(z0, a, b, EndPhases::default(), 0.0)? * w0)
            }
        };
        let one = C64::new(1.0, 0.0);
        Ok(match (&self.density, self.over_log) {
            (Density::MainPsi, false) => lin(one - s) - lin(-s),
            (Density::MainPsi, true) => over(one - s, -s, 1.0, -1.0)?,
            (Density::Uniform { c }, false) => lin(one - s) * *c,
            (Density::Uniform { c }, true) => {
                if a <= 0.0 {
                    return Err(Error::Domain("uniform density over log u diverges at u = 1".into()));
                }
                exp_over_u(one - s, a, b, EndPhases::default(), 0.0)? * *c
            }
            (Density::RDeviation { tau }, lg) => {
                let mut acc = C64::new(0.0, 0.0);
                for sign in [1.0, -1.0] {
                    let it = C64::new(0.0, sign * tau);
                    acc += if lg { over(one - s + it, -s + it, 1.0, -1.0)? } else { lin(one - s + it) - lin(-s + it) };
                }
                acc * 0.25
            }
            (Density::SDeviation, false) => (lin(one - s) - lin(-s)) * -0.5,
            (Density::SDeviation, true) => over(one - s, -s, 1.0, -1.0)? * -0.5,
            (Density::CumulativeGrid { log_u, cumulative, slope_left, slope_right }, false) => {
                let rule = gauss_legendre(10);
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..log_u.len().saturating_sub(1) {
                    let (v0, v1) = (log_u[i], log_u[i + 1]);
                    if v1 <= v0 {
                        continue;
                    }
                    let nsub = ((s.im.abs() * (v1 - v0)) / 2.0).ceil().max(1.0) as usize;
                    let h = (v1 - v0) / nsub as f64;
                    for j in 0..nsub {
                        let (p0, p1) = (v0 + h * j as f64, v0 + h * (j + 1) as f64);
                        acc += fixed_gauss(
                            |v: f64| (-s * v).exp() * grid_slope(log_u, cumulative, slope_left, slope_right, v),
                            p0,
                            p1,
                            &rule,
                        );
                    }
                }
                acc
            }
            (Density::CumulativeGrid { .. }, true) => {
                return Err(Error::Domain("grid pieces cannot be divided by log u".into()))
            }
        })
    }
}

fn grid_index(log_u: &[f64], v: f64) -> usize {
    match log_u.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
        Ok(i) => i.min(log_u.len() - 2),
        Err(i) => i.saturating_sub(1).min(log_u.len() - 2),
    }
}

fn hermite(v0: f64, v1: f64, f0: f64, f1: f64, d0: f64, d1: f64, v: f64) -> (f64, f64) {
    let h = v1 - v0;
    let t = (v - v0) / h;
    let (t2, t3) = (t * t, t * t * t);
    let val = (2.0 * t3 - 3.0 * t2 + 1.0) * f0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * f1 + (t3 - t2) * h * d1;
    let der = (6.0 * t2 - 6.0 * t) * (f0 - f1) / h + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (3.0 * t2 - 2.0 * t) * d1;
    (val, der)
}

fn grid_value(log_u: &[f64], cumulative: &[f64], dl: &[f64], dr: &[f64], v: f64) -> f64 {
    if log_u.len() < 2 || v <= log_u[0] {
        return 0.0;
    }
    if v >= *log_u.last().unwrap() {
        return *cumulative.last().unwrap();
    }
    let i = grid_index(log_u, v);
    hermite(log_u[i], log_u[i + 1], cumulative[i], cumulative[i + 1], dr[i], dl[i + 1], v).0
}

fn grid_slope(log_u: &[f64], cumulative: &[f64], dl: &[f64], dr: &[f64], v: f64) -> f64 {
    if log_u.len() < 2 || v < log_u[0] || v > *log_u.last().unwrap() {
        return 0.0;
    }
    let i = grid_index(log_u, v);
    hermite(log_u[i], log_u[i + 1], cumulative[i], cumulative[i + 1], dr[i], dl[i + 1], v).1
}

/// Offset used to read one-sided densities at a node.
fn side_eps(v: f64) -> f64 {
    1e-13 * v.abs().max(1.0)
}

/// Sort atoms by position and merge those within `ATOM_MERGE_TOL`.
pub fn merge_atoms(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, w) in atoms {
        match out.last_mut() {
            Some(last) if v - last.0 <= ATOM_MERGE_TOL => last.1 += w,
            _ => out.push((v, w)),
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct ConvolveConfig {
    pub tol: f64,
    pub max_nodes: usize,
}

impl ConvolveConfig {
    pub fn new(tol: f64) -> Self {
        Self { tol, max_nodes: 20_000 }
    }
}

impl HalfLineMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, mut pieces: Vec<Piece>) -> Result<Self> {
        pieces.sort_by(|a, b| a.a.partial_cmp(&b.a).unwrap());
        let m = Self { atoms: merge_atoms(atoms), pieces };
        m.validate()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Unit atom at u = 1, the convolution identity.
    pub fn unit() -> Self {
        Self { atoms: vec![(0.0, 1.0)], pieces: vec![] }
    }

    pub fn atom(log_u: f64, w: f64) -> Self {
        Self { atoms: vec![(log_u, w)], pieces: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.atoms.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain("atoms must be strictly increasing".into()));
            }
        }
        if self.atoms.iter().any(|a| !(a.0 >= 0.0) || !a.1.is_finite()) {
            return Err(Error::Domain("atoms must sit in [1, ∞) with finite weight".into()));
        }
        for p in &self.pieces {
            if !(p.a >= 0.0 && p.b >= p.a) {
                return Err(Error::Domain(format!("bad piece interval [{}, {}]", p.a, p.b)));
            }
        }
        for w in self.pieces.windows(2) {
            if w[1].a < w[0].b {
                return Err(Error::Domain("pieces must not overlap".into()));
            }
        }
        Ok(())
    }

    pub fn is_atomic(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Continuous-part mass on [0, v].
    pub fn continuous_cumulative(&self, v: f64) -> Result<f64> {
        let mut s = 0.0;
        for p in &self.pieces {
            if p.a >= v {
                break;
            }
            s += p.cumulative(v)?;
        }
        Ok(s)
    }

    pub fn continuous_density(&self, v: f64) -> f64 {
        self.pieces.iter().filter(|p| v >= p.a && v <= p.b).map(|p| p.density_dv(v)).next().unwrap_or(0.0)
    }

    /// Atomic mass on [0, v].
    pub fn atomic_cumulative(&self, v: f64) -> f64 {
        let end = self.atoms.partition_point(|a| a.0 <= v);
        self.atoms[..end].iter().map(|a| a.1).sum()
    }

    /// Total mass on [1, e^v].
    pub fn cumulative(&self, v: f64) -> Result<f64> {
        Ok(self.atomic_cumulative(v) + self.continuous_cumulative(v)?)
    }

    pub fn cumulative_grid(&self, grid: &[f64]) -> Result<GridFunction> {
        let values = grid.iter().map(|&v| self.cumulative(v)).collect::<Result<Vec<_>>>()?;
        Ok(GridFunction { log_grid: grid.to_vec(), values })
    }

    /// Smallest log-position carrying mass.
    pub fn support_start(&self) -> Option<f64> {
        let a = self.atoms.iter().find(|a| a.1 != 0.0).map(|a| a.0);
        let p = self.pieces.first().map(|p| p.a);
        match (a, p) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    fn piece_ends(&self) -> Vec<f64> {
        self.pieces.iter().flat_map(|p| [p.a, p.b]).collect()
    }

    fn continuous_breaks(&self) -> Vec<f64> {
        let mut b = Vec::new();
        for p in &self.pieces {
            b.push(p.a);
            b.push(p.b);
            if let Density::CumulativeGrid { log_u, .. } = &p.density {
                b.extend_from_slice(log_u);
            }
        }
        b
    }

    /// self + scale·other. Overlapping continuous parts are resampled onto
    /// one grid accurate to `cfg.tol`.
    pub fn add(&self, other: &Self, scale: f64, cfg: &ConvolveConfig) -> Result<Self> {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().map(|&(v, w)| (v, w * scale)));
        let mut pieces = self.pieces.clone();
        for p in &other.pieces {
            let mut q = p.clone();
            q.density = scale_density(&q.density, scale)?;
            pieces.push(q);
        }
        let mut m = Self { atoms: merge_atoms(atoms), pieces };
        m.pieces.sort_by(|a, b| a.a.partial_cmp(&b.a).unwrap());
        if m.validate().is_err() {
            // Overlapping continuous parts: resample the sum onto one grid.
            let lo = m.pieces.iter().map(|p| p.a).fold(f64::INFINITY, f64::min);
            let hi = m.pieces.iter().map(|p| p.b).fold(f64::NEG_INFINITY, f64::max);
            let mut nodes: Vec<f64> = m.continuous_breaks();
            nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            nodes.dedup();
            let sum_cum = |v: f64| -> Result<f64> {
                Ok(self.continuous_cumulative(v)? + scale * other.continuous_cumulative(v)?)
            };
            let sum_dens = |v: f64| -> Result<f64> { Ok(self.continuous_density(v) + scale * other.continuous_density(v)) };
            let all_grid = m.pieces.iter().all(|p| matches!(p.density, Density::CumulativeGrid { .. }));
            let pts = if all_grid {
                let (mut f, mut d) = (sum_cum, sum_dens);
                nodes.iter().map(|&v| node(&mut f, &mut d, v)).collect::<Result<Vec<_>>>()?
            } else {
                let n0 = 32;
                nodes.extend((0..=n0).map(|i| lo + (hi - lo) * i as f64 / n0 as f64));
                nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
                nodes.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
                adaptive_grid(sum_cum, sum_dens, &nodes, cfg)?
            };
            m.pieces = vec![grid_piece(lo, hi, &pts)];
        }
        Ok(m)
    }

    /// Restriction to [1, e^v_max].
    pub fn restrict(&self, v_max: f64) -> Self {
        let atoms = self.atoms.iter().copied().filter(|a| a.0 <= v_max).collect();
        let pieces = self
            .pieces
            .iter()
            .filter(|p| p.a < v_max)
            .map(|p| {
                let mut q = p.clone();
                q.b = q.b.min(v_max);
                q
            })
            .collect();
        Self { atoms, pieces }
    }

    /// ∫ u^{-s} dM(u), with an optional analytic tail.
    pub fn mellin_transform(&self, s: C64, tail: Option<TailModel>) -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for &(v, w) in &self.atoms {
            acc += (-s * v).exp() * w;
        }
        for p in &self.pieces {
            acc += p.mellin(s)?;
        }
        if let Some(TailModel::Li { from }) = tail {
            if s.re <= 1.0 {
                return Err(Error::Domain("Li tail needs Re s > 1".into()));
            }
            let one = C64::new(1.0, 0.0);
            let full = -(one - one / s).ln();
            let head = exp_difference_from_zero(one - s, -s, from, None, None)?;
            acc += full - head;
        }
        Ok(acc)
    }
}

fn scale_density(d: &Density, k: f64) -> Result<Density> {
    Ok(match d {
        Density::Uniform { c } => Density::Uniform { c: c * k },
        Density::CumulativeGrid { log_u, cumulative, slope_left, slope_right } => Density::CumulativeGrid {
            log_u: log_u.clone(),
            cumulative: cumulative.iter().map(|x| x * k).collect(),
            slope_left: slope_left.iter().map(|x| x * k).collect(),
            slope_right: slope_right.iter().map(|x| x * k).collect(),
        },
        other if k == 1.0 => other.clone(),
        _ => return Err(Error::Domain("only unit scaling is supported for closed-form pieces".into())),
    })
}

/// Grid node: position, cumulative value, left and right slopes.
type Node = (f64, f64, f64, f64);

fn node<F, D>(f: &mut F, d: &mut D, v: f64) -> Result<Node>
where
    F: FnMut(f64) -> Result<f64>,
    D: FnMut(f64) -> Result<f64>,
{
    let e = side_eps(v);
    Ok((v, f(v)?, d(v - e)?, d(v + e)?))
}

/// Nodes refined by bisection until cubic Hermite interpolation reproduces
/// every midpoint value within tol/2.
fn adaptive_grid<F, D>(mut f: F, mut d: D, seeds: &[f64], cfg: &ConvolveConfig) -> Result<Vec<Node>>
where
    F: FnMut(f64) -> Result<f64>,
    D: FnMut(f64) -> Result<f64>,
{
    let mut nodes: Vec<Node> = Vec::with_capacity(seeds.len());
    for &x in seeds {
        nodes.push(node(&mut f, &mut d, x)?);
    }
    let mut out: Vec<Node> = vec![nodes[0]];
    let mut stack: Vec<(Node, Node, usize)> = nodes.windows(2).rev().map(|w| (w[0], w[1], 0)).collect();
    while let Some((p, q, depth)) = stack.pop() {
        let mid = 0.5 * (p.0 + q.0);
        let m = node(&mut f, &mut d, mid)?;
        let interp = hermite(p.0, q.0, p.1, q.1, p.3, q.2, mid).0;
        let ok = (m.1 - interp).abs() <= 0.5 * cfg.tol;
        if ok || q.0 - p.0 < 1e-9 || depth > 40 {
            if !ok {
                return Err(Error::Budget(format!("grid cannot resolve near log u = {mid}")));
            }
            out.push(m);
            out.push(q);
        } else {
            stack.push((m, q, depth + 1));
            stack.push((p, m, depth + 1));
        }
        if out.len() + stack.len() > cfg.max_nodes {
            return Err(Error::Budget(format!("grid exceeded {} nodes", cfg.max_nodes)));
        }
    }
    Ok(out)
}

fn grid_piece(lo: f64, hi: f64, pts: &[Node]) -> Piece {
    let base = pts[0].1;
    Piece::new(
        lo,
        hi,
        Density::CumulativeGrid {
            log_u: pts.iter().map(|p| p.0).collect(),
            cumulative: pts.iter().map(|p| p.1 - base).collect(),
            slope_left: pts.iter().map(|p| p.2).collect(),
            slope_right: pts.iter().map(|p| p.3).collect(),
        },
        false,
    )
}

/// Multiplicative convolution restricted to [1, x_max], with x_max = e^{v_max}.
pub fn mellin_convolve(a: &HalfLineMeasure, b: &HalfLineMeasure, v_max: f64, cfg: &ConvolveConfig) -> Result<HalfLineMeasure> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidParams("convolution tolerance must be positive".into()));
    }
    if !(v_max > 0.0) {
        return Err(Error::InvalidParams("x_max must exceed 1".into()));
    }
    let mut atoms = Vec::with_capacity(a.atoms.len() * b.atoms.len());
    for &(va, wa) in &a.atoms {
        for &(vb, wb) in &b.atoms {
            let v = va + vb;
            if v <= v_max + ATOM_MERGE_TOL {
                atoms.push((v, wa * wb));
            }
        }
    }
    let atoms = merge_atoms(atoms);
    if a.pieces.is_empty() && b.pieces.is_empty() {
        return Ok(HalfLineMeasure { atoms, pieces: vec![] });
    }

    let quad = QuadConfig::new(cfg.tol * 1e-3, 1e-10).with_max_intervals(4000);
    let a_breaks = a.piece_ends();
    let b_breaks = b.piece_ends();
    let cont = |v: f64| -> Result<f64> {
        let mut s = 0.0;
        for &(va, wa) in &a.atoms {
            if va < v {
                s += wa * b.continuous_cumulative(v - va)?;
            }
        }
        for &(vb, wb) in &b.atoms {
            if vb < v {
                s += wb * a.continuous_cumulative(v - vb)?;
            }
        }
        if !a.pieces.is_empty() && !b.pieces.is_empty() {
            let lo = a.pieces[0].a;
            let hi = v - b.pieces[0].a;
            if hi > lo {
                let mut br: Vec<f64> = vec![lo, hi];
                br.extend(a_breaks.iter().copied().filter(|&x| x > lo && x < hi));
                br.extend(b_breaks.iter().map(|&x| v - x).filter(|&x| x > lo && x < hi));
                br.sort_by(|x, y| x.partial_cmp(y).unwrap());
                br.dedup();
                let mut err: Option<Error> = None;
                let r = integrate_with_breaks(
                    &mut |t: f64| {
                        let fb = match b.continuous_cumulative(v - t) {
                            Ok(x) => x,
                            Err(e) => {
                                err = Some(e);
                                0.0
                            }
                        };
                        a.continuous_density(t) * fb
                    },
                    &br,
                    &quad,
                )?;
                if let Some(e) = err {
                    return Err(e);
                }
                s += r.value;
            }
        }
        Ok(s)
    };

    let dens = |v: f64| -> Result<f64> {
        let mut s = 0.0;
        for &(va, wa) in &a.atoms {
            s += wa * b.continuous_density(v - va);
        }
        for &(vb, wb) in &b.atoms {
            s += wb * a.continuous_density(v - vb);
        }
        if !a.pieces.is_empty() && !b.pieces.is_empty() {
            let lo = a.pieces[0].a;
            let hi = v - b.pieces[0].a;
            if hi > lo {
                let mut br: Vec<f64> = vec![lo, hi];
                br.extend(a_breaks.iter().copied().filter(|&x| x > lo && x < hi));
                br.extend(b_breaks.iter().map(|&x| v - x).filter(|&x| x > lo && x < hi));
                br.sort_by(|x, y| x.partial_cmp(y).unwrap());
                br.dedup();
                let r = integrate_with_breaks(
                    &mut |t: f64| a.continuous_density(t) * b.continuous_density(v - t),
                    &br,
                    &quad,
                )?;
                s += r.value;
            }
        }
        Ok(s)
    };

    // Lower end of the continuous output.
    let a_lo = a.support_start().unwrap_or(0.0);
    let b_lo = b.support_start().unwrap_or(0.0);
    let mut lo = f64::INFINITY;
    if let Some(p) = a.pieces.first() {
        lo = lo.min(p.a + b_lo);
    }
    if let Some(p) = b.pieces.first() {
        lo = lo.min(p.a + a_lo);
    }
    if lo >= v_max {
        return Ok(HalfLineMeasure { atoms, pieces: vec![] });
    }

    // Seed nodes at all structural breakpoints, then bisect.
    let mut seeds: Vec<f64> = vec![lo, v_max];
    let n0 = 32;
    for i in 1..n0 {
        seeds.push(lo + (v_max - lo) * i as f64 / n0 as f64);
    }
    for &(va, _) in &a.atoms {
        for &x in &b_breaks {
            seeds.push(va + x);
        }
    }
    for &(vb, _) in &b.atoms {
        for &x in &a_breaks {
            seeds.push(vb + x);
        }
    }
    for &x in &a_breaks {
        for &y in &b_breaks {
            seeds.push(x + y);
        }
    }
    seeds.retain(|&x| x >= lo && x <= v_max);
    seeds.sort_by(|x, y| x.partial_cmp(y).unwrap());
    seeds.dedup_by(|x, y| (*x - *y).abs() < 1e-13);

    let out = adaptive_grid(cont, dens, &seeds, cfg)?;
    let piece = grid_piece(lo, v_max, &out);
    Ok(HalfLineMeasure { atoms, pieces: vec![piece] })
}

/// δ_1 + Σ_{n ≥ 1} P^{*n}/n! restricted to [1, e^{v_max}].
pub fn exp_star(p: &HalfLineMeasure, v_max: f64, cfg: &ConvolveConfig) -> Result<HalfLineMeasure> {
    if !(v_max > 0.0) {
        return Err(Error::InvalidParams("x_max must exceed 1".into()));
    }
    let Some(p_min) = p.support_start() else {
        return Ok(HalfLineMeasure::unit());
    };
    if p_min <= 0.0 {
        return Err(Error::Domain("exp* needs the measure to vanish near u = 1".into()));
    }
    let p = p.restrict(v_max);
    let n_max = (v_max / p_min).floor() as usize;
    let mut result = HalfLineMeasure::unit();
    let mut power = p.clone();
    let mut inv_fact = 1.0;
    for n in 1..=n_max {
        inv_fact /= n as f64;
        result = result.add(&power, inv_fact, cfg)?;
        if n < n_max {
            power = mellin_convolve(&power, &p, v_max, cfg)?;
        }
    }
    Ok(result)
}

/// dΠ = dψ / log u.
pub fn chebyshev_to_riemann(psi: &HalfLineMeasure) -> Result<HalfLineMeasure> {
    let mut atoms = Vec::with_capacity(psi.atoms.len());
    for &(v, w) in &psi.atoms {
        if v <= 0.0 {
            return Err(Error::Domain("ψ measure has an atom at u = 1".into()));
        }
        atoms.push((v, w / v));
    }
    let mut pieces = Vec::with_capacity(psi.pieces.len());
    for p in &psi.pieces {
        if p.over_log {
            return Err(Error::Domain("piece already divided by log u".into()));
        }
        if matches!(p.density, Density::CumulativeGrid { .. }) {
            return Err(Error::Domain("grid pieces cannot be divided by log u".into()));
        }
        if matches!(p.density, Density::Uniform { .. }) && p.a <= 0.0 {
            return Err(Error::Domain("uniform ψ density gives a non-integrable Π density at u = 1".into()));
        }
        let mut q = p.clone();
        q.over_log = true;
        pieces.push(q);
    }
    Ok(HalfLineMeasure { atoms, pieces })
}

/// π(x) = Σ_ν μ(ν)/ν·Π(x^{1/ν}) over ν ≤ log x / log p_floor.
pub fn riemann_to_prime<F: FnMut(f64) -> f64>(mut riemann: F, log_x: f64, log_p_floor: f64) -> Result<f64> {
    if log_x < 0.0 || log_p_floor <= 0.0 {
        return Err(Error::Domain("riemann_to_prime needs x >= 1 and p_floor > 1".into()));
    }
    let mut s = 0.0;
    let mut nu = 1u64;
    while log_x / nu as f64 >= log_p_floor {
        let mu = mobius(nu);
        if mu != 0 {
            s += mu as f64 / nu as f64 * riemann(log_x / nu as f64);
        }
        nu += 1;
    }
    Ok(s)
}

/// Π(x) = Σ_ν π(x^{1/ν})/ν over ν ≤ log x / log p_floor.
pub fn prime_to_riemann<F: FnMut(f64) -> f64>(mut prime: F, log_x: f64, log_p_floor: f64) -> Result<f64> {
    if log_x < 0.0 || log_p_floor <= 0.0 {
        return Err(Error::Domain("prime_to_riemann needs x >= 1 and p_floor > 1".into()));
    }
    let mut s = 0.0;
    let mut nu = 1u64;
    while log_x / nu as f64 >= log_p_floor {
        s += prime(log_x / nu as f64) / nu as f64;
        nu += 1;
    }
    Ok(s)
}

/// Atomic Π measure of a list of primes (value, multiplicity), prime powers
/// weighted 1/ν, up to e^{v_max}.
pub fn prime_power_measure(primes: &[(f64, u32)], v_max: f64) -> HalfLineMeasure {
    let mut atoms = Vec::new();
    for &(p, m) in primes {
        let lp = p.ln();
        let mut nu = 1u32;
        while lp * nu as f64 <= v_max + ATOM_MERGE_TOL {
            atoms.push((lp * nu as f64, m as f64 / nu as f64));
            nu += 1;
        }
    }
    HalfLineMeasure { atoms: merge_atoms(atoms), pieces: vec![] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, QuadConfig};
    use crate::special::li_normalized;

    #[test]
    fn atom_convolution_adds_logs() {
        let a = HalfLineMeasure::atom(2f64.ln(), 1.0);
        let b = HalfLineMeasure::atom(3f64.ln(), 1.0);
        let c = mellin_convolve(&a, &b, 10f64.ln(), &ConvolveConfig::new(1e-9)).unwrap();
        assert_eq!(c.atoms.len(), 1);
        assert!((c.atoms[0].0 - 6f64.ln()).abs() < 1e-15);
        assert_eq!(c.atoms[0].1, 1.0);
    }

    #[test]
    fn unit_is_identity() {
        let li = HalfLineMeasure::new(vec![(1.0, 0.5)], vec![Piece::new(0.0, 3.0, Density::MainPsi, true)]).unwrap();
        let c = mellin_convolve(&HalfLineMeasure::unit(), &li, 3.0, &ConvolveConfig::new(1e-10)).unwrap();
        for &v in &[0.3, 1.0, 2.2, 3.0] {
            assert!((c.cumulative(v).unwrap() - li.cumulative(v).unwrap()).abs() < 1e-9);
        }
        assert_eq!(c.atoms, li.atoms);
    }

    #[test]
    fn li_square_against_two_dimensional_quadrature() {
        let v4 = 4f64.ln();
        let li = HalfLineMeasure::new(vec![], vec![Piece::new(0.0, v4, Density::MainPsi, true)]).unwrap();
        let c = mellin_convolve(&li, &li, v4, &ConvolveConfig::new(1e-10)).unwrap();
        let dens = |v: f64| expm1_over(v);
        let cfg = QuadConfig::new(1e-14, 1e-12);
        let oracle = integrate(
            |v1: f64| dens(v1) * integrate(|v2: f64| dens(v2), 0.0, v4 - v1, &cfg).unwrap().value,
            0.0,
            v4,
            &cfg,
        )
        .unwrap()
        .value;
        assert!((c.cumulative(v4).unwrap() - oracle).abs() < 1e-9, "{} vs {oracle}", c.cumulative(v4).unwrap());
    }

    #[test]
    fn exp_star_single_prime() {
        let p = prime_power_measure(&[(2.0, 1)], 10f64.ln());
        let n = exp_star(&p, 10f64.ln(), &ConvolveConfig::new(1e-12)).unwrap();
        assert!((n.cumulative(10f64.ln()).unwrap() - 4.0).abs() < 1e-12);
        let z = exp_star(&HalfLineMeasure::zero(), 10f64.ln(), &ConvolveConfig::new(1e-12)).unwrap();
        assert_eq!(z.cumulative(2.0).unwrap(), 1.0);
    }

    #[test]
    fn exp_star_two_atoms_without_powers() {
        // exp*(δ_2 + δ_3) at x = 10: Σ over (i, j) with 2^i 3^j ≤ 10 of 1/(i! j!).
        let p = HalfLineMeasure::new(vec![(2f64.ln(), 1.0), (3f64.ln(), 1.0)], vec![]).unwrap();
        let n = exp_star(&p, 10f64.ln(), &ConvolveConfig::new(1e-12)).unwrap();
        let mut brute = 0.0;
        let fact = |k: u32| (1..=k).product::<u32>() as f64;
        for i in 0..5u32 {
            for j in 0..4u32 {
                if 2f64.powi(i as i32) * 3f64.powi(j as i32) <= 10.0 {
                    brute += 1.0 / (fact(i) * fact(j));
                }
            }
        }
        assert!((brute - 31.0 / 6.0).abs() < 1e-12);
        assert!((n.cumulative(10f64.ln()).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_to_riemann_gives_li() {
        let psi = HalfLineMeasure::new(vec![(2f64.ln(), 2f64.ln())], vec![Piece::new(0.0, 5.0, Density::MainPsi, false)]).unwrap();
        let pi = chebyshev_to_riemann(&psi).unwrap();
        assert!((pi.atoms[0].1 - 1.0).abs() < 1e-15);
        assert!((pi.continuous_cumulative(4.0).unwrap() - li_normalized(4.0)).abs() < 1e-12);
        let bad = HalfLineMeasure::atom(0.0, 1.0);
        assert!(chebyshev_to_riemann(&bad).is_err());
    }

    #[test]
    fn classical_riemann_counting_at_ten() {
        let primes: [f64; 4] = [2.0, 3.0, 5.0, 7.0];
        let pi = |lx: f64| primes.iter().filter(|p| p.ln() <= lx + 1e-12).count() as f64;
        let big = prime_to_riemann(pi, 10f64.ln(), 2f64.ln()).unwrap();
        assert!((big - (4.0 + 1.0 + 1.0 / 3.0)).abs() < 1e-12);
        let back = riemann_to_prime(|lx| prime_to_riemann(pi, lx, 2f64.ln()).unwrap(), 10f64.ln(), 2f64.ln()).unwrap();
        assert!((back - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mellin_values() {
        let a = HalfLineMeasure::atom(2f64.ln(), 1.0);
        let v = a.mellin_transform(C64::new(2.0, 0.0), None).unwrap();
        assert!((v.re - 0.25).abs() < 1e-15 && v.im == 0.0);
        let li = HalfLineMeasure::new(vec![], vec![Piece::new(0.0, 3.0, Density::MainPsi, true)]).unwrap();
        let s = C64::new(2.0, 0.0);
        let m = li.mellin_transform(s, Some(TailModel::Li { from: 3.0 })).unwrap();
        assert!((m - C64::new(2f64.ln(), 0.0)).norm() < 1e-12);
        let s = C64::new(1.7, 3.0);
        let m1 = li.mellin_transform(s, Some(TailModel::Li { from: 3.0 })).unwrap();
        let m2 = li.mellin_transform(s.conj(), Some(TailModel::Li { from: 3.0 })).unwrap();
        assert_eq!(m1.conj(), m2);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = HalfLineMeasure::new(
            vec![(0.1 + 0.2, 1.0 / 3.0)],
            vec![
                Piece::new(1.0, 2.0, Density::RDeviation { tau: 12.345678901234567 }, true),
                Piece::new(
                    2.0,
                    2.5,
                    Density::CumulativeGrid {
                        log_u: vec![2.0, 2.5],
                        cumulative: vec![0.0, 0.7],
                        slope_left: vec![0.0, 1.1],
                        slope_right: vec![1.3, 0.0],
                    },
                    false,
                ),
            ],
        )
        .unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"tag\":\"RDeviation\""));
        let back: HalfLineMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
