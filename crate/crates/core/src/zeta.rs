//! Evaluators for the truncated zeta function ζ_{C,K}: the block integrals,
//! log ζ_{C,K}, the saddle objective f with derivatives, the prefactor g, and
//! the residue at s = 1.
//!
//! Points are written s = iT_a + z where T_a is the anchor height of the
//! context (0 or τ_K). Every exponential e^{ωv} at a block endpoint takes its
//! phase from the table's anchor phases, so heights like τ_K ≈ e^{20} never
//! enter a double-precision product.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::construction::SequenceTable;
use crate::error::{Error, Result};
use crate::logcomplex::LogComplex;
use crate::quad::{gauss_legendre, integrate, QuadConfig};
use crate::special::{cexpm1, cln1p, exp_over_u, exp_over_u_short, EndPhases};

type C64 = Complex64;

/// Radius (in |ω·v|) below which difference quotients switch to Taylor form.
pub const REMOVABLE_RADIUS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Eta,
    EtaTilde,
    Xi,
}

impl Family {
    fn index(self) -> usize {
        match self {
            Family::Eta => 0,
            Family::EtaTilde => 1,
            Family::Xi => 2,
        }
    }
}

/// f and its first three derivatives; `f` carries Im(T_a·log x) reduced mod 2π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FValues {
    pub f: C64,
    pub d1: C64,
    pub d2: C64,
    pub d3: C64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRoutes {
    /// Direct evaluation of ¼∫_{1/2}^1 B^{(1+iτ−s)u}/u du.
    pub direct: C64,
    /// Three-fold integration by parts with a quadrature remainder.
    pub by_parts: C64,
    /// Leading real-line form (log x/log B)(1 + q + 2q²), q = 1/((1−σ)log B).
    pub leading: f64,
}

impl TailRoutes {
    pub fn relative_gap(&self) -> f64 {
        (self.direct - self.by_parts).norm() / self.direct.norm().max(1e-300)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueReport {
    pub k_trunc: usize,
    pub log_rho_k: f64,
    pub rho_k: f64,
    /// Half-width of the certified interval for log ρ_C − log ρ_{C,K}.
    pub tail_half_width: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    /// 2/(τ_{K+1} log B_{K+1}).
    pub width_target: f64,
}

#[derive(Clone, Debug)]
pub struct ZetaContext<'a> {
    pub table: &'a SequenceTable,
    pub k_trunc: usize,
    pub anchor: Option<usize>,
    /// T_a in double precision (reporting and global coordinates only).
    pub t_anchor: f64,
    pub log_x: f64,
    /// T_a·log x mod 2π.
    pub probe_phase: f64,
}

fn taylor_one_minus_exp_neg(w: C64) -> C64 {
    // (1 − e^{−w})/w
    if w.norm() < REMOVABLE_RADIUS {
        C64::new(1.0, 0.0) - w / 2.0 + w * w / 6.0
    } else {
        -cexpm1(-w) / w
    }
}

fn expm1_over(w: C64) -> C64 {
    if w.norm() < REMOVABLE_RADIUS {
        C64::new(1.0, 0.0) + w / 2.0 + w * w / 6.0
    } else {
        cexpm1(w) / w
    }
}

impl<'a> ZetaContext<'a> {
    /// Context at the designed probe x_K, anchored at τ_K.
    pub fn designed(table: &'a SequenceTable, k: usize) -> Result<Self> {
        if k > table.k_max() {
            return Err(Error::OutOfRange(format!("K = {k} exceeds K_max = {}", table.k_max())));
        }
        let row = table.row(k);
        Ok(Self {
            table,
            k_trunc: k,
            anchor: Some(k),
            t_anchor: row.tau_f(),
            log_x: row.log_x_f,
            probe_phase: table.anchor(Some(k)).probe[k],
        })
    }

    /// Context at an arbitrary log x (taken as exact), with the given anchor.
    pub fn new(table: &'a SequenceTable, k_trunc: usize, anchor: Option<usize>, log_x: f64) -> Result<Self> {
        if k_trunc > table.k_max() {
            return Err(Error::OutOfRange(format!("K = {k_trunc} exceeds K_max = {}", table.k_max())));
        }
        let (t_anchor, probe_phase) = match anchor {
            None => (0.0, 0.0),
            Some(a) => {
                if a > table.k_max() {
                    return Err(Error::OutOfRange(format!("anchor {a} exceeds K_max")));
                }
                (table.row(a).tau_f(), table.tau_phase(a, crate::hp::Dd::from_f64(log_x)))
            }
        };
        Ok(Self { table, k_trunc, anchor, t_anchor, log_x, probe_phase })
    }

    /// s = iT_a + z in double precision.
    pub fn global(&self, z: C64) -> C64 {
        C64::new(z.re, self.t_anchor + z.im)
    }

    fn delta(&self, k: usize, fam: Family) -> f64 {
        let tau = self.table.row(k).tau_f();
        match fam {
            Family::Eta => {
                if self.anchor == Some(k) {
                    0.0
                } else {
                    tau - self.t_anchor
                }
            }
            Family::EtaTilde => -tau - self.t_anchor,
            Family::Xi => -self.t_anchor,
        }
    }

    /// ω with e^{ωv} = v-th block exponential of (1 ± iτ_k − s) or (1 − s).
    pub fn omega(&self, k: usize, fam: Family, z: C64) -> C64 {
        C64::new(1.0 - z.re, self.delta(k, fam) - z.im)
    }

    /// (lo, hi) log endpoints of the block family.
    fn ends(&self, k: usize, fam: Family) -> (f64, f64) {
        let r = self.table.row(k);
        match fam {
            Family::Xi => (r.log_b_f, r.log_c_f()),
            _ => (r.log_a_f(), r.log_b_f),
        }
    }

    /// Exact Im(ω·v) mod 2π at the lower and upper endpoints.
    fn end_phases(&self, k: usize, fam: Family, z: C64) -> EndPhases {
        let sh = &self.table.anchor(self.anchor).shift[k][fam.index()];
        let (lo, hi) = self.ends(k, fam);
        let (e_lo, e_hi) = match fam {
            Family::Xi => (1, 2),
            _ => (0, 1),
        };
        EndPhases::both(sh[e_lo] - z.im * lo, sh[e_hi] - z.im * hi)
    }

    fn end_exp(&self, omega: C64, v: f64, phase: Option<f64>) -> C64 {
        C64::from_polar((omega.re * v).exp(), phase.unwrap_or(omega.im * v))
    }

    /// ∫_s^∞ of the block integrand: ¼∫_{log A}^{log B} e^{ωv}/v dv for η, η̃
    /// and −½∫_{log B}^{log C} e^{ωv}/v dv for ξ.
    pub fn tail(&self, k: usize, fam: Family, z: C64) -> Result<C64> {
        let om = self.omega(k, fam, z);
        let ph = self.end_phases(k, fam, z);
        let r = self.table.row(k);
        match fam {
            Family::Xi => Ok(-0.5 * exp_over_u_short(om, r.log_b_f, r.log_c_over_b, ph, 0.0)?),
            _ => Ok(0.25 * exp_over_u(om, r.log_a_f(), r.log_b_f, ph, 0.0)?),
        }
    }

    /// ∫_s^{s+1} (η_k + η̃_k + ξ_k)(w) dw.
    pub fn segment(&self, k: usize, z: C64) -> Result<C64> {
        let one = C64::new(1.0, 0.0);
        let mut acc = C64::new(0.0, 0.0);
        for fam in [Family::Eta, Family::EtaTilde, Family::Xi] {
            acc += self.tail(k, fam, z)? - self.tail(k, fam, z + one)?;
        }
        Ok(acc)
    }

    /// Σ_{k ≤ K} ∫_s^{s+1}(η_k + η̃_k + ξ_k).
    pub fn segment_sum(&self, z: C64) -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=self.k_trunc {
            acc += self.segment(k, z)?;
        }
        Ok(acc)
    }

    /// log(s/(s−1)) on the principal branch.
    pub fn log_trivial(&self, z: C64) -> Result<C64> {
        let s = self.global(z);
        if s.norm() < 1e-8 || (s - 1.0).norm() < 1e-8 {
            return Err(Error::Domain(format!("log ζ evaluated within 1e-8 of a pole at s = {s}")));
        }
        Ok(-cln1p(-1.0 / s))
    }

    pub fn log_zeta(&self, z: C64) -> Result<C64> {
        Ok(self.log_trivial(z)? + self.segment_sum(z)?)
    }

    /// Closed forms of η_k, η̃_k, ξ_k at s.
    pub fn eta_family(&self, k: usize, z: C64) -> (C64, C64, C64) {
        let eta = |fam: Family| {
            let om = self.omega(k, fam, z);
            let ph = self.end_phases(k, fam, z);
            let (lo, hi) = self.ends(k, fam);
            let h = hi - lo;
            let small = (om * h).norm() < 1.0;
            match fam {
                Family::Xi => {
                    let eb = self.end_exp(om, lo, ph.a);
                    if small {
                        -0.5 * eb * h * expm1_over(om * h)
                    } else {
                        let ec = self.end_exp(om, hi, ph.b);
                        (eb - ec) / (2.0 * om)
                    }
                }
                _ => {
                    let eb = self.end_exp(om, hi, ph.b);
                    if small {
                        0.25 * eb * h * taylor_one_minus_exp_neg(om * h)
                    } else {
                        let ea = self.end_exp(om, lo, ph.a);
                        (eb - ea) / (4.0 * om)
                    }
                }
            }
        };
        (eta(Family::Eta), eta(Family::EtaTilde), eta(Family::Xi))
    }

    /// ¼∫_{L/2}^{L} v^n e^{ωv} dv for n = 1, 2.
    fn eta_moment(&self, n: u32, z: C64) -> C64 {
        let k = self.k_trunc;
        let om = self.omega(k, Family::Eta, z);
        let ph = self.end_phases(k, Family::Eta, z);
        let l = self.table.row(k).log_b_f;
        let w = om * l;
        let scale = l.powi(n as i32 + 1);
        if w.norm() <= 1.0 {
            let (xs, ws) = gauss_legendre(20);
            let mut acc = C64::new(0.0, 0.0);
            for (x, wt) in xs.iter().zip(ws.iter()) {
                let u = 0.75 + 0.25 * x;
                acc += (w * u).exp() * u.powi(n as i32) * (0.25 * wt);
            }
            return 0.25 * scale * acc;
        }
        let prim = |u: f64, e: C64| -> C64 {
            match n {
                1 => e * (u / w - 1.0 / (w * w)),
                _ => e * (u * u / w - 2.0 * u / (w * w) + 2.0 / (w * w * w)),
            }
        };
        let eb = self.end_exp(om, l, ph.b);
        let ea = self.end_exp(om, 0.5 * l, ph.a);
        0.25 * scale * (prim(1.0, eb) - prim(0.5, ea))
    }

    /// f(s) only.
    pub fn f_value(&self, z: C64) -> Result<C64> {
        Ok(z * self.log_x + C64::new(0.0, self.probe_phase) + self.tail(self.k_trunc, Family::Eta, z)?)
    }

    /// f'(s) = log x − η_K(s).
    pub fn f_prime(&self, z: C64) -> C64 {
        self.log_x - self.eta_family(self.k_trunc, z).0
    }

    /// f''(s).
    pub fn f_second(&self, z: C64) -> C64 {
        self.eta_moment(1, z)
    }

    /// f(s) = s·log x + ∫_s^∞ η_K and three derivatives.
    pub fn f_and_derivatives(&self, z: C64) -> Result<FValues> {
        let k = self.k_trunc;
        let j = self.tail(k, Family::Eta, z)?;
        let f = z * self.log_x + C64::new(0.0, self.probe_phase) + j;
        let (eta, _, _) = self.eta_family(k, z);
        Ok(FValues { f, d1: self.log_x - eta, d2: self.eta_moment(1, z), d3: -self.eta_moment(2, z) })
    }

    /// The exponent of g: Σ_k ∫_s^{s+1}(η_k + η̃_k + ξ_k) − ∫_s^∞ η_K.
    pub fn g_exponent(&self, z: C64) -> Result<C64> {
        Ok(self.segment_sum(z)? - self.tail(self.k_trunc, Family::Eta, z)?)
    }

    pub fn g_eval(&self, z: C64) -> Result<LogComplex> {
        let s = self.global(z);
        if (s - 1.0).norm() < 1e-12 {
            return Err(Error::Domain("g is singular at s = 1".into()));
        }
        Ok(LogComplex::exp(self.g_exponent(z)?).div(LogComplex::from_complex(s - 1.0)))
    }

    /// |Σ_{k<K}∫ + ∫(η̃_K + ξ_K) − ∫_{s+1}^∞ η_K|, the bracket bounded by
    /// the prefactor lemmas.
    pub fn bracket_stat(&self, z: C64) -> Result<f64> {
        Ok(self.g_exponent(z)?.norm())
    }

    /// x^s·ζ_{C,K}(s) in log form, via the trivial factor and block sums.
    pub fn x_pow_zeta(&self, z: C64) -> Result<LogComplex> {
        let e = z * self.log_x + C64::new(0.0, self.probe_phase) + self.log_zeta(z)?;
        Ok(LogComplex::exp(e))
    }

    /// The three routes to ∫_s^∞ η_K.
    pub fn int_eta_tail(&self, z: C64) -> Result<TailRoutes> {
        let k = self.k_trunc;
        let direct = self.tail(k, Family::Eta, z)?;
        let om = self.omega(k, Family::Eta, z);
        let ph = self.end_phases(k, Family::Eta, z);
        let l = self.table.row(k).log_b_f;
        let w = om * l;
        let eb = self.end_exp(om, l, ph.b);
        let ea = self.end_exp(om, 0.5 * l, ph.a);
        let bound = |u: f64, e: C64| {
            let wu = w * u;
            e * (1.0 / wu + 1.0 / (wu * wu) + 2.0 / (wu * wu * wu))
        };
        let cfg = QuadConfig::new(1e-300, 1e-14).with_max_intervals(4000);
        // e^{wu} = e^{w}·e^{w(u−1)}, the first factor with its exact phase.
        let rem = integrate(|u: f64| (w * (u - 1.0)).exp() / u.powi(4), 0.5, 1.0, &cfg)?.value * eb;
        let by_parts = 0.25 * (bound(1.0, eb) - bound(0.5, ea) + 6.0 / (w * w * w) * rem);
        let q = 1.0 / ((1.0 - z.re) * l);
        let leading = self.log_x / l * (1.0 + q + 2.0 * q * q);
        Ok(TailRoutes { direct, by_parts, leading })
    }

    /// Residue ρ_{C,K} at s = 1 and the certified interval for ρ_C.
    pub fn residue(table: &SequenceTable, k_trunc: usize) -> Result<ResidueReport> {
        let ctx = ZetaContext::new(table, k_trunc, None, 0.0)?;
        let log_rho_k = ctx.segment_sum(C64::new(1.0, 0.0))?.re;
        let rho_k = log_rho_k.exp();
        let (half, target) = if k_trunc < table.k_max() {
            let r = table.row(k_trunc + 1);
            let per_block = 0.5 / (r.tau_f() * r.log_b_f) + 0.5 * r.log_c_over_b / r.log_b_f;
            (2.0 * per_block, 2.0 / (r.tau_f() * r.log_b_f))
        } else {
            (f64::INFINITY, f64::NAN)
        };
        Ok(ResidueReport {
            k_trunc,
            log_rho_k,
            rho_k,
            tail_half_width: half,
            rho_lo: (log_rho_k - half).exp(),
            rho_hi: (log_rho_k + half).exp(),
            width_target: target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{build_sequences, ParamSet};
    use crate::measures::{HalfLineMeasure, TailModel};

    fn small() -> SequenceTable {
        build_sequences(&ParamSet::toy(0.5, 1.0, 6.0, 1)).unwrap()
    }

    fn toy20() -> SequenceTable {
        build_sequences(&ParamSet::toy(1.0, 1.0, 20.0, 1)).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn xi_limit_at_one() {
        let t = small();
        let ctx = ZetaContext::new(&t, 1, None, 1.0).unwrap();
        let (_, _, xi) = ctx.eta_family(0, c(1.0, 0.0));
        let expect = -0.5 * t.row(0).log_c_over_b;
        assert!((xi.re - expect).abs() < 1e-12 * expect.abs(), "{xi} {expect}");
    }

    #[test]
    fn conjugate_symmetry_unanchored() {
        let t = small();
        let ctx = ZetaContext::new(&t, 1, None, 3.0).unwrap();
        for s in [c(0.8, 5.0), c(1.3, 30.0), c(2.0, 120.0)] {
            let a = ctx.log_zeta(s).unwrap();
            let b = ctx.log_zeta(s.conj()).unwrap();
            assert!((a - b.conj()).norm() < 1e-12 * a.norm().max(1.0));
            let (e1, e2, e3) = ctx.eta_family(0, s);
            let (f1, f2, f3) = ctx.eta_family(0, s.conj());
            assert!((e1 - f2.conj()).norm() < 1e-10 * e1.norm().max(1e-300));
            assert!((e3 - f3.conj()).norm() < 1e-10 * e3.norm().max(1e-300));
            let _ = (e2, f1);
        }
    }

    #[test]
    fn eta_real_on_real_axis() {
        let t = small();
        let ctx = ZetaContext::new(&t, 1, None, 3.0).unwrap();
        let (e, et, _) = ctx.eta_family(1, c(0.9, 0.0));
        assert!((e - et.conj()).norm() < 1e-12 * e.norm());
    }

    #[test]
    fn segment_integral_matches_closed_form_quadrature() {
        // ∫_s^{s+1} η along the horizontal segment against the tail difference.
        let t = small();
        let ctx = ZetaContext::new(&t, 1, None, 3.0).unwrap();
        let s = c(0.9, 11.0);
        let cfg = QuadConfig::new(1e-14, 1e-12);
        for (i, fam) in [Family::Eta, Family::EtaTilde, Family::Xi].into_iter().enumerate() {
            let q = integrate(
                |h: f64| {
                    let v = ctx.eta_family(0, s + h);
                    [v.0, v.1, v.2][i]
                },
                0.0,
                1.0,
                &cfg,
            )
            .unwrap()
            .value;
            let d = ctx.tail(0, fam, s).unwrap() - ctx.tail(0, fam, s + 1.0).unwrap();
            assert!((q - d).norm() < 1e-10 * d.norm().max(1e-12), "{fam:?} {q} {d}");
        }
    }

    #[test]
    fn log_zeta_decays_to_trivial() {
        let t = toy20();
        let ctx = ZetaContext::new(&t, 1, None, 10.0).unwrap();
        let z = c(30.0, 0.0);
        let dev = ctx.segment_sum(z).unwrap();
        assert!(dev.norm() < 1e-8);
        let lz = ctx.log_zeta(z).unwrap();
        assert!((lz.re - (30.0f64 / 29.0).ln()).abs() < 1e-8);
    }

    #[test]
    fn log_zeta_against_measure_mellin() {
        let t = small();
        let ctx = ZetaContext::new(&t, 0, None, 3.0).unwrap();
        let dev = t.deviation_measure(0, true);
        let li = HalfLineMeasure::zero();
        for s in [c(2.0, 0.0), c(1.5, 3.0)] {
            let m = dev.mellin_transform(s, None).unwrap() + li.mellin_transform(s, Some(TailModel::Li { from: 0.0 })).unwrap();
            let lz = ctx.log_zeta(s).unwrap();
            assert!((m - lz).norm() < 1e-9 * lz.norm(), "{m} {lz}");
        }
    }

    #[test]
    fn f_derivatives_by_finite_differences() {
        let t = toy20();
        let ctx = ZetaContext::designed(&t, 0).unwrap();
        let l = t.row(0).log_b_f;
        let h = 1e-6 / l;
        let base = 1.0 - l.ln() / l;
        for (dx, dy) in [(0.0, 0.0), (0.05, 0.1), (-0.1, 0.3), (0.02, -0.25)] {
            let z = c(base + dx, dy);
            let v = ctx.f_and_derivatives(z).unwrap();
            let fp = ctx.f_and_derivatives(z + h).unwrap();
            let fm = ctx.f_and_derivatives(z - h).unwrap();
            let d1 = (fp.f - fm.f) / (2.0 * h);
            let d2 = (fp.d1 - fm.d1) / (2.0 * h);
            let d3 = (fp.d2 - fm.d2) / (2.0 * h);
            assert!((d1 - v.d1).norm() < 1e-6 * v.d1.norm().max(1.0), "{d1} {}", v.d1);
            assert!((d2 - v.d2).norm() < 1e-6 * v.d2.norm(), "{d2} {}", v.d2);
            assert!((d3 - v.d3).norm() < 1e-6 * v.d3.norm(), "{d3} {}", v.d3);
        }
    }

    #[test]
    fn f_real_on_lattice_line() {
        let t = toy20();
        let ctx = ZetaContext::designed(&t, 0).unwrap();
        for sigma in [0.6, 0.8, 0.95] {
            let v = ctx.f_and_derivatives(c(sigma, 0.0)).unwrap();
            let im = (v.f.im - ctx.probe_phase).rem_euclid(std::f64::consts::TAU);
            assert!(im.min(std::f64::consts::TAU - im) < 1e-9, "{im}");
        }
    }

    #[test]
    fn recombination_identity() {
        let t = toy20();
        for k in 0..=1 {
            let ctx = ZetaContext::designed(&t, k).unwrap();
            for z in [c(0.9, 0.0), c(0.85, 0.02), c(1.2, -0.4)] {
                let lhs = LogComplex::exp(ctx.f_and_derivatives(z).unwrap().f)
                    .mul(ctx.g_eval(z).unwrap())
                    .mul_c(ctx.global(z));
                let rhs = ctx.x_pow_zeta(z).unwrap();
                let d = lhs.ln() - rhs.ln();
                let dph = (d.im + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
                assert!(d.re.abs() < 1e-8 && dph.abs() < 1e-8, "{d}");
            }
        }
    }

    #[test]
    fn tail_routes_agree() {
        let t = toy20();
        let ctx = ZetaContext::designed(&t, 0).unwrap();
        let l = t.row(0).log_b_f;
        for z in [c(1.0 - l.ln() / l, 0.0), c(0.8, 0.2), c(10.0, 0.0)] {
            let r = ctx.int_eta_tail(z).unwrap();
            assert!(r.relative_gap() < 1e-10, "{z} {:?}", r);
        }
        let far = ctx.int_eta_tail(c(10.0, 0.0)).unwrap();
        assert!(far.direct.norm() < (-4.0 * l).exp());
    }

    #[test]
    fn residue_limit_and_tail() {
        let t = small();
        let r = ZetaContext::residue(&t, 0).unwrap();
        let ctx = ZetaContext::new(&t, 0, None, 0.0).unwrap();
        let e = 1e-6;
        let z = c(1.0 + e, 0.0);
        let lim = (ctx.log_zeta(z).unwrap().re).exp() * e;
        assert!((lim / r.rho_k - 1.0).abs() < 1e-4);
        assert!(2.0 * r.tail_half_width <= r.width_target * 1.0001 + 1e-300 || r.tail_half_width < 1e-3);
        assert!(r.rho_lo <= r.rho_k && r.rho_k <= r.rho_hi);
    }
}
