//! Random prime systems that track a continuous prime-counting function:
//! the one-prime-per-unit-cell sampler, the hybrid measure (discrete below
//! A_{K+1}, Li above), the phase-bucket selection of an extra prime q, and
//! the gap statistics between the discrete and continuous log-zeta.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{log_grid, SequenceTable};
use crate::counting::{enumerate_integers, prime_power_sums, LOG_EQ_TOL};
use crate::error::{Error, Result};
use crate::measures::{prime_power_measure, Density, HalfLineMeasure, Piece, ATOM_MERGE_TOL};
use crate::quad::{integrate, QuadConfig};
use crate::rng::{substream, RNG_ALGORITHM};
use crate::special::{cln1p, exp_difference_from_zero};
use crate::zeta::ZetaContext;

/// Number of phase buckets S_l.
pub const BUCKETS: usize = 160;
/// Substream id for exponential-sum probes (cells use ids 1, 2, ...).
const PROBE_STREAM: u64 = u64::MAX - 1;
const BINARY_MAGIC: &[u8; 8] = b"BLPRIME1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleTarget {
    /// F = π_C.
    Prime,
    /// F = Π_C, for the weak-error variant.
    Riemann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialPrime {
    pub q: f64,
    pub l: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSystem {
    /// (value, multiplicity), sorted by value.
    pub primes: Vec<(f64, u32)>,
    pub special: Option<SpecialPrime>,
    pub rng_seed: u64,
    /// The list is complete up to e^{log_x_max}.
    pub log_x_max: f64,
    pub rng_algorithm: String,
}

impl DiscreteSystem {
    pub fn from_primes(mut primes: Vec<(f64, u32)>, log_x_max: f64) -> Self {
        primes.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { primes, special: None, rng_seed: 0, log_x_max, rng_algorithm: RNG_ALGORITHM.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&(p, _)) = self.primes.first() {
            if !(p > 1.0) {
                return Err(Error::Domain(format!("prime {p} is not > 1")));
            }
        }
        if self.primes.windows(2).any(|w| w[1].0 < w[0].0) || self.primes.iter().any(|p| p.1 == 0) {
            return Err(Error::Domain("primes must be sorted with positive multiplicities".into()));
        }
        if let Some(sp) = self.special {
            if !(sp.q > 1.0) {
                return Err(Error::Domain("special prime must exceed 1".into()));
            }
        }
        Ok(())
    }

    pub fn with_special(&self, special: Option<SpecialPrime>) -> Self {
        Self { special: special.filter(|s| s.l > 0), ..self.clone() }
    }

    /// Sampled primes plus the special prime, sorted.
    pub fn all_primes(&self) -> Vec<(f64, u32)> {
        let mut v = self.primes.clone();
        if let Some(sp) = self.special {
            v.push((sp.q, sp.l));
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        v
    }

    /// log p for every generator instance (multiplicity m gives m copies).
    pub fn generator_logs(&self) -> Vec<f64> {
        self.all_primes().iter().flat_map(|&(p, m)| std::iter::repeat(p.ln()).take(m as usize)).collect()
    }

    /// π_D(e^v) over the sampled primes only.
    pub fn sampled_count(&self, log_x: f64) -> u64 {
        let x = log_x.exp();
        let idx = self.primes.partition_point(|p| p.0 <= x);
        self.primes[..idx].iter().map(|p| p.1 as u64).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Little-endian layout: magic, algorithm id (u32 length + UTF-8), seed u64,
    /// log_x_max f64, special flag u8 (+ q f64, l u32), count u64, then (f64, u32) pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(40 + 12 * self.primes.len());
        b.extend_from_slice(BINARY_MAGIC);
        b.extend_from_slice(&(self.rng_algorithm.len() as u32).to_le_bytes());
        b.extend_from_slice(self.rng_algorithm.as_bytes());
        b.extend_from_slice(&self.rng_seed.to_le_bytes());
        b.extend_from_slice(&self.log_x_max.to_le_bytes());
        match self.special {
            Some(sp) => {
                b.push(1);
                b.extend_from_slice(&sp.q.to_le_bytes());
                b.extend_from_slice(&sp.l.to_le_bytes());
            }
            None => b.push(0),
        }
        b.extend_from_slice(&(self.primes.len() as u64).to_le_bytes());
        for &(p, m) in &self.primes {
            b.extend_from_slice(&p.to_le_bytes());
            b.extend_from_slice(&m.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != BINARY_MAGIC {
            return Err(Error::Domain("not a prime-list file".into()));
        }
        let n = r.u32()? as usize;
        let rng_algorithm = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Domain(e.to_string()))?;
        let rng_seed = r.u64()?;
        let log_x_max = r.f64()?;
        let special = match r.take(1)?[0] {
            0 => None,
            _ => Some(SpecialPrime { q: r.f64()?, l: r.u32()? }),
        };
        let count = r.u64()? as usize;
        let mut primes = Vec::with_capacity(count);
        for _ in 0..count {
            primes.push((r.f64()?, r.u32()?));
        }
        let ds = Self { primes, special, rng_seed, log_x_max, rng_algorithm };
        ds.validate()?;
        Ok(ds)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Domain("truncated prime-list file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// F tabulated on a uniform grid in v = log u.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FTable {
    pub log_u: Vec<f64>,
    pub value: Vec<f64>,
}

impl FTable {
    pub fn build<F: Fn(f64) -> Result<f64> + Sync>(f: &F, v_max: f64, step: f64) -> Result<Self> {
        let n = (v_max / step).ceil().max(1.0) as usize;
        let log_u: Vec<f64> = (0..=n).map(|i| v_max * i as f64 / n as f64).collect();
        let value = log_u.par_iter().map(|&v| f(v)).collect::<Result<Vec<f64>>>()?;
        for (i, w) in value.windows(2).enumerate() {
            if w[1] < w[0] - 1e-9 * w[0].abs().max(1.0) {
                return Err(Error::Domain(format!("F decreases near log u = {}", log_u[i])));
            }
        }
        if value[0].abs() > 1e-12 {
            return Err(Error::Domain("F(1) must vanish".into()));
        }
        Ok(Self { log_u, value })
    }

    fn step(&self) -> f64 {
        self.log_u[1] - self.log_u[0]
    }

    pub fn interp(&self, v: f64) -> f64 {
        let h = self.step();
        let i = ((v / h).floor().max(0.0) as usize).min(self.log_u.len() - 2);
        let w = (v - self.log_u[i]) / h;
        self.value[i] + w * (self.value[i + 1] - self.value[i])
    }

    /// Smallest v with interp(v) = y.
    pub fn invert(&self, y: f64) -> f64 {
        let i = self.value.partition_point(|&f| f < y).clamp(1, self.value.len() - 1);
        let (f0, f1) = (self.value[i - 1], self.value[i]);
        let w = if f1 > f0 { ((y - f0) / (f1 - f0)).clamp(0.0, 1.0) } else { 0.0 };
        self.log_u[i - 1] + w * self.step()
    }

    /// ∫_1^{e^{v_end}} u^{−it} dF(u) for F linear in v on each grid cell.
    pub fn oscillatory_integral(&self, t: f64, v_end: f64) -> C64 {
        let h = self.step();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.log_u.len() - 1 {
            let a = self.log_u[i];
            if a >= v_end {
                break;
            }
            let b = self.log_u[i + 1].min(v_end);
            let slope = (self.value[i + 1] - self.value[i]) / h;
            let len = b - a;
            // ∫_a^b e^{−itv} dv
            let kernel = if (t * len).abs() < 1e-6 {
                C64::from_polar(len, -t * 0.5 * (a + b))
            } else {
                (C64::from_polar(1.0, -t * b) - C64::from_polar(1.0, -t * a)) / C64::new(0.0, -t)
            };
            acc += kernel * slope;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub target: SampleTarget,
    /// Grid step in log u of the tabulated F.
    pub grid_step: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { target: SampleTarget::Prime, grid_step: 2e-3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sampled {
    pub system: DiscreteSystem,
    /// F at each sampled prime; the j-th (from 1) lies in [j − 1, j].
    pub f_at_prime: Vec<f64>,
    pub f_end: f64,
    /// Cells where the table guess missed the cell and bisection was used.
    pub refined: usize,
    pub table: FTable,
}

impl Sampled {
    /// Exact sup over [1, x_max] of |π_D − F|, from the values at the jumps.
    pub fn sup_deviation(&self) -> f64 {
        let n = self.f_at_prime.len();
        let mut sup = 0.0f64;
        for (i, &f) in self.f_at_prime.iter().enumerate() {
            let j = (i + 1) as f64;
            sup = sup.max((j - f).abs()).max((f - (j - 1.0)).abs());
        }
        sup.max((self.f_end - n as f64).abs())
    }
}

/// The counting function F used by the sampler.
pub fn target_function(table: &SequenceTable, target: SampleTarget) -> impl Fn(f64) -> Result<f64> + Sync + '_ {
    let k = table.k_max();
    move |v: f64| match target {
        SampleTarget::Prime => table.prime_counting(v, k),
        SampleTarget::Riemann => table.riemann_counting(v, k),
    }
}

/// One prime per unit cell of F on [1, e^{log_x_max}], each drawn from dF
/// restricted to its cell. Cell j uses substream j of `seed`. An F that never
/// reaches 1 gives an empty system.
pub fn sample_primes<F: Fn(f64) -> Result<f64> + Sync>(f: &F, log_x_max: f64, seed: u64, cfg: &SamplerConfig) -> Result<Sampled> {
    let table = FTable::build(f, log_x_max, cfg.grid_step)?;
    let f_end = *table.value.last().unwrap();
    let n = f_end.floor() as u64;
    let cells: Vec<(f64, f64, bool)> = (1..=n)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, j);
            let u: f64 = rng.gen::<f64>().clamp(1e-9, 1.0 - 1e-9);
            let lo_target = (j - 1) as f64;
            let y = lo_target + u;
            let v = table.invert(y);
            let fv = f(v)?;
            if fv >= lo_target && fv <= lo_target + 1.0 {
                return Ok((v, fv, false));
            }
            let (v, fv) = solve_cell(f, &table, y)?;
            if !(fv >= lo_target && fv <= lo_target + 1.0) {
                return Err(Error::RootSolver(format!("cell {j}: F = {fv} outside [{lo_target}, {}]", lo_target + 1.0)));
            }
            Ok((v, fv, true))
        })
        .collect::<Result<Vec<_>>>()?;
    let refined = cells.iter().filter(|c| c.2).count();
    let mut pairs: Vec<(f64, f64)> = cells.iter().map(|c| (c.0.exp(), c.1)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let system = DiscreteSystem {
        primes: pairs.iter().map(|p| (p.0, 1)).collect(),
        special: None,
        rng_seed: seed,
        log_x_max,
        rng_algorithm: RNG_ALGORITHM.into(),
    };
    Ok(Sampled { system, f_at_prime: pairs.iter().map(|p| p.1).collect(), f_end, refined, table })
}

/// Bisection on the exact F for F(v) = y.
fn solve_cell<F: Fn(f64) -> Result<f64>>(f: &F, table: &FTable, y: f64) -> Result<(f64, f64)> {
    let h = table.step();
    let v0 = table.invert(y);
    let v_max = *table.log_u.last().unwrap();
    let (mut lo, mut hi) = ((v0 - h).max(0.0), (v0 + h).min(v_max));
    let mut widen = 0;
    while f(lo)? > y && lo > 0.0 {
        lo = (lo - h * 2f64.powi(widen)).max(0.0);
        widen += 1;
    }
    widen = 0;
    while f(hi)? < y && hi < v_max {
        hi = (hi + h * 2f64.powi(widen)).min(v_max);
        widen += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((hi, f(hi)?))
}

/// sup over `grid` of |π_D − F|, evaluated directly.
pub fn deviation_on_grid<F: Fn(f64) -> Result<f64>>(ds: &DiscreteSystem, f: &F, grid: &[f64]) -> Result<f64> {
    let mut sup = 0.0f64;
    for &v in grid {
        sup = sup.max((ds.sampled_count(v) as f64 - f(v)?).abs());
    }
    Ok(sup)
}

/// dΠ_{D,K}: prime-power atoms below A_{K+1} and dLi from A_{K+1} on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridMeasure {
    pub atoms: HalfLineMeasure,
    pub log_a_next: f64,
}

pub fn hybrid_measure(ds: &DiscreteSystem, log_a_next: f64) -> Result<HybridMeasure> {
    if ds.log_x_max < log_a_next - LOG_EQ_TOL {
        return Err(Error::OutOfRange(format!(
            "primes sampled to log x = {} but the hybrid measure needs log A = {log_a_next}",
            ds.log_x_max
        )));
    }
    let mut atoms = prime_power_measure(&ds.all_primes(), log_a_next);
    atoms.atoms.retain(|a| a.0 < log_a_next - ATOM_MERGE_TOL);
    Ok(HybridMeasure { atoms, log_a_next })
}

impl HybridMeasure {
    /// ∫_1^{A} u^{−s} dLi(u), entire in s.
    pub fn li_head(&self, s: C64) -> Result<C64> {
        let one = C64::new(1.0, 0.0);
        exp_difference_from_zero(one - s, -s, self.log_a_next, None, None)
    }

    /// Mellin–Stieltjes transform, continued to all s ≠ 0, 1.
    pub fn log_zeta(&self, s: C64) -> Result<C64> {
        let atoms = self.atoms.mellin_transform(s, None)?;
        Ok(atoms - cln1p(-1.0 / s) - self.li_head(s)?)
    }

    /// log of the residue of exp(log ζ) at s = 1.
    pub fn log_residue(&self) -> Result<f64> {
        let atoms: f64 = self.atoms.atoms.iter().map(|&(v, w)| w * (-v).exp()).sum();
        let ein = exp_difference_from_zero(C64::new(0.0, 0.0), C64::new(-1.0, 0.0), self.log_a_next, None, None)?.re;
        Ok(atoms - ein)
    }

    /// Π(e^v).
    pub fn riemann(&self, v: f64) -> f64 {
        let mut s = self.atoms.atomic_cumulative(v);
        if v > self.log_a_next {
            s += crate::special::li_normalized(v) - crate::special::li_normalized(self.log_a_next);
        }
        s
    }

    /// The measure on [1, e^{v_cap}] with the Li tail as a density piece.
    pub fn to_measure(&self, v_cap: f64) -> Result<HalfLineMeasure> {
        let mut pieces = Vec::new();
        if v_cap > self.log_a_next {
            pieces.push(Piece::new(self.log_a_next, v_cap, Density::MainPsi, true));
        }
        HalfLineMeasure::new(self.atoms.atoms.clone(), pieces)
    }
}

/// log ζ_K − log ζ_{C,K} for a sampled system.
pub struct GapModel<'a> {
    pub hybrid: HybridMeasure,
    pub ctx: ZetaContext<'a>,
    pub k: usize,
}

impl<'a> GapModel<'a> {
    pub fn new(table: &'a SequenceTable, ds: &DiscreteSystem, k: usize) -> Result<Self> {
        if k + 1 > table.k_max() {
            return Err(Error::OutOfRange(format!("A_{{K+1}} needs K_max ≥ {}", k + 1)));
        }
        let hybrid = hybrid_measure(ds, table.row(k + 1).log_a_f())?;
        let ctx = ZetaContext::new(table, k, None, 0.0)?;
        Ok(Self { hybrid, ctx, k })
    }

    /// ∫_1^{A_{K+1}} u^{−s} d(Π_K − Π_{C,K}), which is entire.
    pub fn gap(&self, s: C64) -> Result<C64> {
        let atoms = self.hybrid.atoms.mellin_transform(s, None)?;
        Ok(atoms - self.hybrid.li_head(s)? - self.ctx.segment_sum(s)?)
    }

    pub fn phase_at_tau(&self) -> Result<GapPhase> {
        let tau = self.ctx.table.row(self.k).tau_f();
        let g = self.gap(C64::new(1.0, tau))?;
        let residue = principal(g.im);
        Ok(GapPhase {
            k: self.k,
            tau,
            im_gap: g.im,
            residue,
            bucket: bucket(g.im),
            within_window: residue.abs() <= 7.0 * PI / 160.0,
        })
    }
}

fn principal(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Index l of the bucket S_l = [lπ/80 − π/160, lπ/80 + π/160) + 2πZ containing θ.
pub fn bucket(theta: f64) -> usize {
    let w = PI / 80.0;
    (((theta + 0.5 * w).rem_euclid(TAU) / w).floor() as usize) % BUCKETS
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPhase {
    pub k: usize,
    pub tau: f64,
    pub im_gap: f64,
    /// Im gap reduced to (−π, π].
    pub residue: f64,
    pub bucket: usize,
    /// |residue| ≤ 7π/160.
    pub within_window: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogZetaGapReport {
    /// max |gap|/√log(|t| + 2) over the grid.
    pub d_hat: f64,
    pub worst_sigma: f64,
    pub worst_t: f64,
    pub points: usize,
    pub phase: GapPhase,
}

/// Default σ ≥ 3/4 grid for the gap bound.
pub fn default_gap_grid(t_max: f64) -> (Vec<f64>, Vec<f64>) {
    let sigmas = vec![0.75, 0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0];
    let mut ts = vec![0.0];
    ts.extend(log_grid(0.5f64.ln(), t_max.ln(), 48).into_iter().map(f64::exp));
    (sigmas, ts)
}

pub fn logzeta_gap(model: &GapModel<'_>, sigmas: &[f64], ts: &[f64]) -> Result<LogZetaGapReport> {
    if sigmas.iter().any(|&s| s < 0.75) {
        return Err(Error::Domain("the gap bound is stated for σ ≥ 3/4".into()));
    }
    let pts: Vec<(f64, f64)> = sigmas.iter().flat_map(|&s| ts.iter().map(move |&t| (s, t))).collect();
    let vals = pts
        .par_iter()
        .map(|&(s, t)| Ok(model.gap(C64::new(s, t))?.norm() / (t.abs() + 2.0).ln().sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    let (i, &d_hat) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    Ok(LogZetaGapReport { d_hat, worst_sigma: pts[i].0, worst_t: pts[i].1, points: pts.len(), phase: model.phase_at_tau()? })
}

/// Im of the gap at 1 + iτ_K, with what is needed for the q-trick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub k: usize,
    pub tau: f64,
    pub log_a_next: f64,
    pub im_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QMargin {
    pub k: usize,
    /// π/40 − |Im(−n log(1 − q^{−(1+iτ)})) + bπ/80|.
    pub margin: f64,
    /// n·|log(1 − q^{−s}) + Σ_{q^ν < A} q^{−νs}/ν|, to be < π/160.
    pub tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTrick {
    pub even_counts: Vec<u32>,
    pub odd_counts: Vec<u32>,
    /// Modal even bucket.
    pub l: Option<usize>,
    /// Modal odd bucket.
    pub r: Option<usize>,
    /// Multiplicity given to q: max(l, r).
    pub multiplicity: u32,
    pub q: Option<f64>,
    /// The K whose bucket is the modal one.
    pub selected: Vec<usize>,
    pub margins: Vec<QMargin>,
    /// At least two even and two odd samples.
    pub sufficient_history: bool,
    pub status: QStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QStatus {
    NotNeeded,
    Found,
    NotFound,
}

fn modal(counts: &[u32]) -> Option<usize> {
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    counts.iter().position(|&c| c == best)
}

fn q_term(q: f64, tau: f64, log_a: f64, n: u32) -> (C64, f64) {
    let s = C64::new(1.0, tau);
    let w = (-s * q.ln()).exp();
    let full = -cln1p(-w);
    let mut partial = C64::new(0.0, 0.0);
    let mut nu = 1u32;
    while nu as f64 * q.ln() < log_a {
        partial += (-s * (nu as f64 * q.ln())).exp() / nu as f64;
        nu += 1;
    }
    (full * n as f64, (full - partial).norm() * n as f64)
}

/// Bucket the Im-gaps by parity of K, take the modal buckets l (even) and r
/// (odd), and scan q ∈ [80/π − window, 80/π + window] outward from the
/// centre for one satisfying the rotation inequalities on every selected K.
pub fn qtrick_select(history: &[GapSample], window: f64, step: f64) -> Result<QTrick> {
    if history.is_empty() {
        return Err(Error::InvalidParams("q-trick needs at least one gap sample".into()));
    }
    let mut even_counts = vec![0u32; BUCKETS];
    let mut odd_counts = vec![0u32; BUCKETS];
    for g in history {
        let c = if g.k % 2 == 0 { &mut even_counts } else { &mut odd_counts };
        c[bucket(g.im_gap)] += 1;
    }
    let n_even: u32 = even_counts.iter().sum();
    let n_odd: u32 = odd_counts.iter().sum();
    let l = modal(&even_counts);
    let r = modal(&odd_counts);
    let target = |k: usize| if k % 2 == 0 { l } else { r };
    let selected: Vec<&GapSample> = history.iter().filter(|g| Some(bucket(g.im_gap)) == target(g.k)).collect();
    let multiplicity = l.unwrap_or(0).max(r.unwrap_or(0)) as u32;
    let mut out = QTrick {
        even_counts,
        odd_counts,
        l,
        r,
        multiplicity,
        q: None,
        selected: selected.iter().map(|g| g.k).collect(),
        margins: Vec::new(),
        sufficient_history: n_even >= 2 && n_odd >= 2,
        status: QStatus::NotFound,
    };
    if multiplicity == 0 {
        out.status = QStatus::NotNeeded;
        return Ok(out);
    }
    let margins_for = |q: f64| -> Vec<QMargin> {
        selected
            .iter()
            .map(|g| {
                let (term, tail) = q_term(q, g.tau, g.log_a_next, multiplicity);
                let b = target(g.k).unwrap() as f64;
                QMargin { k: g.k, margin: PI / 40.0 - (term.im + b * PI / 80.0).abs(), tail }
            })
            .collect()
    };
    let centre = 80.0 / PI;
    let steps = (window / step).round() as i64;
    for i in 0..=2 * steps {
        let off = if i % 2 == 0 { -(i / 2) } else { (i + 1) / 2 } as f64 * step;
        let q = centre + off;
        let m = margins_for(q);
        if m.iter().all(|x| x.margin > 0.0 && x.tail < PI / 160.0) {
            out.q = Some(q);
            out.margins = m;
            out.status = QStatus::Found;
            return Ok(out);
        }
    }
    out.margins = margins_for(centre);
    Ok(out)
}

/// A point x̃ ∈ (x − 1, x) whose distance to every generalized integer is at least 1/x̃².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XTilde {
    pub log_x: f64,
    pub x_tilde: f64,
    /// Distance from x̃ to the nearest enumerated integer (∞ if none nearby).
    pub clearance: f64,
    pub required: f64,
    pub window_count: u64,
    pub certified: bool,
}

pub fn probe_x_tilde(ds: &DiscreteSystem, log_x: f64, budget: usize) -> Result<XTilde> {
    let x = log_x.exp();
    if x < 2.0 {
        return Err(Error::Domain("x̃ window needs x ≥ 2".into()));
    }
    let stream = enumerate_integers(ds, (x + 1.0).ln(), budget)?;
    if stream.truncated {
        return Err(Error::Budget("enumeration budget exhausted before x + 1".into()));
    }
    let near: Vec<f64> = stream
        .entries
        .iter()
        .map(|e| e.log_value.exp())
        .filter(|&n| n >= x - 2.0)
        .collect();
    let inside: Vec<f64> = near.iter().copied().filter(|&n| n >= x - 1.0 && n <= x).collect();
    let window_count = inside.len() as u64;
    if (window_count as f64) >= 0.5 * (x - 1.0) * (x - 1.0) {
        return Err(Error::Domain("too many integers in the window for a gap of width 2/x̃²".into()));
    }
    let mut pts = vec![x - 1.0];
    pts.extend(inside.iter().copied());
    pts.push(x);
    let (i, _) = pts
        .windows(2)
        .enumerate()
        .max_by(|a, b| (a.1[1] - a.1[0]).total_cmp(&(b.1[1] - b.1[0])))
        .unwrap();
    let x_tilde = 0.5 * (pts[i] + pts[i + 1]);
    let clearance = near.iter().map(|&n| (n - x_tilde).abs()).fold(f64::INFINITY, f64::min);
    let required = 1.0 / (x_tilde * x_tilde);
    Ok(XTilde { log_x, x_tilde, clearance, required, window_count, certified: clearance >= required })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGap {
    pub log_rho_k: f64,
    pub rho_k: f64,
    /// log((s − 1)ζ_K(s)) at s = 1 + 10⁻⁶, through the Re s > 1 transform.
    pub log_limit_check: f64,
    /// Bound on |log ρ − log ρ_K| from the defect constant and the discretization error.
    pub log_gap_bound: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    /// bound · x_K.
    pub bound_times_x: f64,
}

fn harmonic(n: f64) -> f64 {
    let n = n.floor().max(0.0) as u64;
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// ρ_K in closed form and an interval for ρ. `pnt_sup` is the measured
/// sup |Π_C − Li|·e^{c (log x)^α}/x.
pub fn density_gap(hybrid: &HybridMeasure, ds: &DiscreteSystem, alpha: f64, c: f64, pnt_sup: f64, log_x_k: f64) -> Result<DensityGap> {
    let log_rho_k = hybrid.log_residue()?;
    let s = C64::new(1.0 + 1e-6, 0.0);
    let tail_form = hybrid.atoms.mellin_transform(s, Some(crate::measures::TailModel::Li { from: hybrid.log_a_next }))?;
    let log_limit_check = tail_form.re + (1e-6f64).ln();
    let a = hybrid.log_a_next;
    let qc = QuadConfig::new(1e-300, 1e-10).with_max_intervals(4000);
    // 2·sup·∫_a^∞ e^{−c v^α} dv, via w = v^α
    let w0 = a.powf(alpha);
    let defect = integrate(|w: f64| (-c * w).exp() * w.powf(1.0 / alpha - 1.0) / alpha, w0, w0 + 80.0 / c, &qc)?.value;
    let lp1 = ds.primes.first().map_or(f64::INFINITY, |p| p.0.ln());
    let special = ds.special;
    let disc = |v: f64| {
        let mut e = harmonic(v / lp1);
        if let Some(sp) = special {
            e += sp.l as f64 * harmonic(v / sp.q.ln());
        }
        e
    };
    let disc_int = integrate(|v: f64| 2.0 * disc(v) * (-v).exp(), a, a + 60.0, &qc)?.value;
    let log_gap_bound = 2.0 * pnt_sup * defect + disc_int;
    Ok(DensityGap {
        log_rho_k,
        rho_k: log_rho_k.exp(),
        log_limit_check,
        log_gap_bound,
        rho_lo: (log_rho_k - log_gap_bound).exp(),
        rho_hi: (log_rho_k + log_gap_bound).exp(),
        bound_times_x: log_gap_bound * log_x_k.exp(),
    })
}

/// Random (log y, t) probes: log y uniform on [1, log_y_max], log t uniform on [0, log t_max].
pub fn exp_sum_probes(seed: u64, n: usize, log_y_max: f64, t_max: f64) -> Vec<(f64, f64)> {
    let mut rng = substream(seed, PROBE_STREAM);
    (0..n)
        .map(|_| {
            let ly = 1.0 + (log_y_max - 1.0) * rng.gen::<f64>();
            let t = (t_max.ln() * rng.gen::<f64>()).exp();
            (ly, t)
        })
        .collect()
}

/// |Σ_{p≤y} p^{−it} − ∫_1^y u^{−it} dF| / (√y + √(y log(t+1)/log(y+1))) at each probe.
pub fn exp_sum_ratios(sampled: &Sampled, probes: &[(f64, f64)]) -> Vec<f64> {
    probes
        .iter()
        .map(|&(ly, t)| {
            let y = ly.exp();
            let mut sum = C64::new(0.0, 0.0);
            for &(p, m) in &sampled.system.primes {
                if p > y {
                    break;
                }
                sum += C64::from_polar(m as f64, -t * p.ln());
            }
            let diff = sum - sampled.table.oscillatory_integral(t, ly);
            let scale = y.sqrt() + (y * (t + 1.0).ln() / (y + 1.0).ln()).sqrt();
            diff.norm() / scale
        })
        .collect()
}

/// Linear-interpolated empirical quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

/// sup over `grid` of |Π − Π_C|/max(1, log log x).
pub fn riemann_deviation<F: Fn(f64) -> Result<f64>>(ds: &DiscreteSystem, riemann_c: &F, grid: &[f64]) -> Result<f64> {
    let mut sup = 0.0f64;
    for &v in grid {
        let (_, pi) = prime_power_sums(ds, v)?;
        let scale = v.max(1.0).ln().max(1.0);
        sup = sup.max((pi - riemann_c(v)?).abs() / scale);
    }
    Ok(sup)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretizeConfig {
    pub sampler: SamplerConfig,
    pub exp_sum_probes: usize,
    pub exp_sum_t_max: f64,
    pub gap_t_max: f64,
    pub q_window: f64,
    pub q_step: f64,
    pub enumeration_budget: usize,
}

impl Default for DiscretizeConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            exp_sum_probes: 50,
            exp_sum_t_max: 1e6,
            gap_t_max: 1e3,
            q_window: 0.5,
            q_step: 1e-4,
            enumeration_budget: crate::counting::DEFAULT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpSumReport {
    pub probes: usize,
    pub p95: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretizationReport {
    pub k: usize,
    pub seed: u64,
    pub target: SampleTarget,
    pub primes: usize,
    pub log_x_max: f64,
    pub sup_pi_deviation: f64,
    pub refined_cells: usize,
    pub exp_sum: ExpSumReport,
    pub riemann_deviation: f64,
    /// Gap statistics of the sampled system alone.
    pub gap_without_q: LogZetaGapReport,
    /// Gap statistics after adding q with multiplicity max(l, r).
    pub gap: LogZetaGapReport,
    pub qtrick: QTrick,
    /// Phase at 1 + iτ_K after adding q (equal to `gap.phase` when no q is used).
    pub phase_after_q: GapPhase,
    pub density: DensityGap,
    /// x̃_K when the window near x_K can be enumerated.
    pub x_tilde: Option<XTilde>,
    /// N(x̃) − ρ_K x̃ and whether its sign is (−1)^K.
    pub oscillation: Option<(f64, bool)>,
}

/// Sample primes up to A_{K+1} and compute every discretization statistic for block K.
pub fn discretize(table: &SequenceTable, k: usize, seed: u64, cfg: &DiscretizeConfig) -> Result<(DiscreteSystem, DiscretizationReport)> {
    if k + 1 > table.k_max() {
        return Err(Error::OutOfRange(format!("discretizing block {k} needs K_max ≥ {}", k + 1)));
    }
    let log_x_max = table.row(k + 1).log_a_f();
    let f = target_function(table, cfg.sampler.target);
    let sampled = sample_primes(&f, log_x_max, seed, &cfg.sampler)?;
    let ds = sampled.system.clone();
    let probes = exp_sum_probes(seed, cfg.exp_sum_probes, log_x_max, cfg.exp_sum_t_max);
    let ratios = exp_sum_ratios(&sampled, &probes);
    let exp_sum = ExpSumReport {
        probes: ratios.len(),
        p95: quantile(&ratios, 0.95),
        median: quantile(&ratios, 0.5),
        max: ratios.iter().copied().fold(0.0, f64::max),
    };
    let grid = log_grid(1.0, log_x_max, 400);
    let riemann_c = target_function(table, SampleTarget::Riemann);
    let riemann_dev = riemann_deviation(&ds, &riemann_c, &grid)?;

    let (sigmas, ts) = default_gap_grid(cfg.gap_t_max.max(4.0 * table.row(k).tau_f()));
    let gap_without_q = logzeta_gap(&GapModel::new(table, &ds, k)?, &sigmas, &ts)?;
    let mut history = Vec::new();
    for kk in 0..=k {
        let m = GapModel::new(table, &ds, kk)?;
        let ph = m.phase_at_tau()?;
        history.push(GapSample { k: kk, tau: ph.tau, log_a_next: m.hybrid.log_a_next, im_gap: ph.im_gap });
    }
    let qtrick = qtrick_select(&history, cfg.q_window, cfg.q_step)?;
    let special = qtrick.q.map(|q| SpecialPrime { q, l: qtrick.multiplicity });
    let ds = ds.with_special(special);
    let model = GapModel::new(table, &ds, k)?;
    let gap = logzeta_gap(&model, &sigmas, &ts)?;
    let phase_after_q = gap.phase;
    let pnt = table.pnt_defect(&log_grid(table.row(0).log_a_f(), log_x_max, 400), k)?;
    let row = table.row(k);
    let density = density_gap(&model.hybrid, &ds, table.params.alpha, table.params.c, pnt.sup_pi, row.log_x_f)?;
    let (x_tilde, oscillation) = if row.log_x_f < log_x_max && row.log_x_f < 16.0 {
        let xt = probe_x_tilde(&ds, row.log_x_f, cfg.enumeration_budget)?;
        let stream = enumerate_integers(&ds, xt.x_tilde.ln(), cfg.enumeration_budget)?;
        let n = stream.count(xt.x_tilde.ln())? as f64;
        let e = n - density.rho_k * xt.x_tilde;
        let expected = if k % 2 == 0 { 1.0 } else { -1.0 };
        (Some(xt), Some((e, e * expected > 0.0)))
    } else {
        (None, None)
    };
    let report = DiscretizationReport {
        k,
        seed,
        target: cfg.sampler.target,
        primes: ds.primes.len(),
        log_x_max,
        sup_pi_deviation: sampled.sup_deviation(),
        refined_cells: sampled.refined,
        exp_sum,
        riemann_deviation: riemann_dev,
        gap_without_q,
        gap,
        qtrick,
        phase_after_q,
        density,
        x_tilde,
        oscillation,
    };
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{build_sequences, ParamSet};
    use crate::measures::TailModel;

    fn small() -> SequenceTable {
        build_sequences(&ParamSet::toy(0.5, 1.0, 6.0, 1)).unwrap()
    }

    #[test]
    fn buckets_tile_the_circle() {
        let w = PI / 80.0;
        for l in 0..BUCKETS {
            let c = l as f64 * w;
            assert_eq!(bucket(c), l);
            assert_eq!(bucket(c - 0.5 * w + 1e-12), l);
            assert_eq!(bucket(c - 0.5 * w - 1e-12), (l + BUCKETS - 1) % BUCKETS);
            assert_eq!(bucket(c + 0.5 * w - 1e-12), l);
            assert_eq!(bucket(c + 0.5 * w + 1e-12), (l + 1) % BUCKETS);
            assert_eq!(bucket(c + TAU), l);
        }
    }

    #[test]
    fn zero_bucket_needs_no_q() {
        let h = [GapSample { k: 0, tau: 10.0, log_a_next: 10.0, im_gap: 0.001 }, GapSample { k: 1, tau: 30.0, log_a_next: 30.0, im_gap: -0.002 }];
        let q = qtrick_select(&h, 0.5, 1e-4).unwrap();
        assert_eq!((q.l, q.r, q.status), (Some(0), Some(0), QStatus::NotNeeded));
        assert!(!q.sufficient_history);
    }

    #[test]
    fn rotation_inequality_margin_is_direct() {
        let h = [
            GapSample { k: 0, tau: 137.0, log_a_next: 20.0, im_gap: 3.0 * PI / 80.0 },
            GapSample { k: 2, tau: 2.9e4, log_a_next: 40.0, im_gap: 3.0 * PI / 80.0 + 0.001 },
            GapSample { k: 1, tau: 911.0, log_a_next: 30.0, im_gap: PI / 80.0 },
            GapSample { k: 3, tau: 5.3e5, log_a_next: 50.0, im_gap: PI / 80.0 - 0.002 },
        ];
        let q = qtrick_select(&h, 0.5, 1e-4).unwrap();
        assert!(q.sufficient_history);
        assert_eq!((q.l, q.r, q.multiplicity), (Some(3), Some(1), 3));
        if let Some(qv) = q.q {
            assert!((qv - 80.0 / PI).abs() <= 0.5 + 1e-9);
            for m in &q.margins {
                let g = h.iter().find(|g| g.k == m.k).unwrap();
                let s = C64::new(1.0, g.tau);
                let direct = -3.0 * cln1p(-(-s * qv.ln()).exp());
                let b = if g.k % 2 == 0 { 3.0 } else { 1.0 };
                assert!((PI / 40.0 - (direct.im + b * PI / 80.0).abs() - m.margin).abs() < 1e-12);
                assert!(m.margin > 0.0 && m.tail < PI / 160.0);
            }
        } else {
            assert_eq!(q.status, QStatus::NotFound);
        }
    }

    #[test]
    fn x_tilde_for_two_and_three() {
        let ds = DiscreteSystem::from_primes(vec![(2.0, 1), (3.0, 1)], 10f64.ln());
        let xt = probe_x_tilde(&ds, 10f64.ln(), 1000).unwrap();
        assert_eq!(xt.window_count, 1);
        assert!((xt.x_tilde - 9.5).abs() < 1e-12);
        assert!(xt.certified && xt.clearance >= 1.0 / (xt.x_tilde * xt.x_tilde));
        // (16, 17) holds no integer of {5}
        let ds = DiscreteSystem::from_primes(vec![(5.0, 1)], 17f64.ln());
        let xt = probe_x_tilde(&ds, 17f64.ln(), 1000).unwrap();
        assert_eq!(xt.window_count, 0);
        assert!((xt.x_tilde - 16.5).abs() < 1e-12);
    }

    #[test]
    fn binary_and_json_round_trip() {
        let mut ds = DiscreteSystem::from_primes(vec![(2.5, 1), (3.75, 2), (7.125, 1)], 3.0);
        ds.special = Some(SpecialPrime { q: 25.4647, l: 2 });
        ds.rng_seed = 99;
        let back = DiscreteSystem::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
        let json: DiscreteSystem = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
        assert_eq!(json, ds);
    }

    #[test]
    fn hybrid_mellin_matches_direct_sums() {
        let ds = DiscreteSystem::from_primes(vec![(2.0, 1), (3.0, 1), (5.0, 2), (7.0, 1)], 3.0);
        let h = hybrid_measure(&ds, 3.0).unwrap();
        let s = C64::new(2.0, 0.0);
        let mut direct = 0.0;
        for &(p, m) in &ds.primes {
            let mut nu = 1;
            while (p as f64).powi(nu) < 3f64.exp() {
                direct += m as f64 * p.powi(-2 * nu) / nu as f64;
                nu += 1;
            }
        }
        // ∫_A^∞ u^{−2} dLi(u) = ∫_a^∞ (e^{−v} − e^{−2v})/v dv = E1(a) − E1(2a)
        let tail = integrate(|v: f64| ((-v).exp() - (-2.0 * v).exp()) / v, 3.0, 80.0, &QuadConfig::new(1e-15, 1e-13)).unwrap().value;
        let lz = h.log_zeta(s).unwrap();
        assert!((lz.re - direct - tail).abs() < 1e-10, "{} {}", lz.re, direct + tail);
        let via_tail = h.atoms.mellin_transform(s, Some(TailModel::Li { from: 3.0 })).unwrap();
        assert!((via_tail - lz).norm() < 1e-10);
        // Π_K agrees with Π_D below A
        for v in [0.5, 1.0, 1.7, 2.9] {
            let (_, pi) = prime_power_sums(&ds, v).unwrap();
            assert!((h.riemann(v) - pi).abs() < 1e-14);
        }
    }

    #[test]
    fn residue_matches_limit() {
        let ds = DiscreteSystem::from_primes(vec![(2.0, 1), (3.0, 1), (5.0, 1)], 4.0);
        let h = hybrid_measure(&ds, 4.0).unwrap();
        let d = density_gap(&h, &ds, 1.0, 1.0, 1.0, 3.0).unwrap();
        assert!((d.log_rho_k - d.log_limit_check).abs() < 1e-5, "{} {}", d.log_rho_k, d.log_limit_check);
        assert!(d.rho_lo < d.rho_k && d.rho_k < d.rho_hi);
    }

    #[test]
    fn gap_is_real_on_the_real_axis() {
        let t = small();
        let f = target_function(&t, SampleTarget::Prime);
        let s = sample_primes(&f, t.row(1).log_a_f(), 3, &SamplerConfig::default()).unwrap();
        let m = GapModel::new(&t, &s.system, 0).unwrap();
        let g = m.gap(C64::new(1.5, 0.0)).unwrap();
        assert!(g.im.abs() < 1e-12);
    }

    #[test]
    fn sampler_is_reproducible_and_within_one() {
        let t = small();
        let f = target_function(&t, SampleTarget::Prime);
        let v = t.row(1).log_a_f();
        let a = sample_primes(&f, v, 11, &SamplerConfig::default()).unwrap();
        let b = sample_primes(&f, v, 11, &SamplerConfig::default()).unwrap();
        assert_eq!(a.system, b.system);
        assert!(a.sup_deviation() <= 1.0);
        let grid = log_grid(0.1, v, 300);
        assert!(deviation_on_grid(&a.system, &f, &grid).unwrap() <= 1.0);
        let c = sample_primes(&f, v, 12, &SamplerConfig::default()).unwrap();
        assert_ne!(a.system.primes, c.system.primes);
    }

    #[test]
    fn empty_when_f_stays_below_one() {
        let f = |v: f64| Ok(0.1 * v);
        let s = sample_primes(&f, 5.0, 1, &SamplerConfig::default()).unwrap();
        assert!(s.system.primes.is_empty());
    }
}
