//! Saddle points of f near 1 + iτ_K: location and winding certification,
//! asymptotic residuals, steepest-descent paths, Taylor control, the wedge
//! integral bound, and the saddle contributions.
//!
//! All points are local coordinates z = s − iτ_K of a designed context, and
//! heights are measured by θ = (t − τ)·log B.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logcomplex::LogComplex;
use crate::quad::gauss_legendre;
use crate::special::log_sum_exp;
use crate::zeta::ZetaContext;

type C64 = Complex64;

/// Nodes on ∂V_m before adaptive refinement of the winding integral.
pub const WINDING_NODES: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleBox {
    pub m: i64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub m: i64,
    /// Local position s_m − iτ.
    pub z: C64,
    pub sigma: f64,
    pub theta: f64,
    pub f: C64,
    pub f2: C64,
    /// log|1/(1 + iτ − s_m)|.
    pub e_m: f64,
    pub winding: f64,
    pub winding_int: i64,
    pub residual: f64,
    /// 10⁻¹⁰·|f''(s_m)|/log B.
    pub residual_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPolyline {
    pub m: i64,
    /// Local points ordered by increasing height.
    pub points: Vec<C64>,
    pub theta: Vec<f64>,
    /// Argument of the upward tangent at each node.
    pub tangent_arg: Vec<f64>,
    /// Re f at each node.
    pub re_f: Vec<f64>,
    /// Index of the saddle in `points`.
    pub center: usize,
    pub end_lo: String,
    pub end_hi: String,
    pub length: f64,
}

impl PathPolyline {
    /// (σ_m − σ^±)·log B at the lower and upper ends.
    pub fn end_offsets(&self, log_b: f64) -> (f64, f64) {
        let c = self.points[self.center].re;
        (
            (c - self.points[0].re) * log_b,
            (c - self.points[self.points.len() - 1].re) * log_b,
        )
    }

    /// Re f strictly decreases moving away from the saddle along both halves.
    pub fn descends(&self) -> bool {
        let c = self.center;
        let up = self.re_f[c..].windows(2).all(|w| w[1] < w[0]);
        let down = self.re_f[..=c].windows(2).all(|w| w[0] < w[1]);
        up && down
    }

    /// max |arg(γ'·e^{−iπ/2})|.
    pub fn max_wedge(&self) -> f64 {
        self.tangent_arg.iter().map(|a| (a - FRAC_PI_2).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub m: i64,
    /// |(1 − σ_m)·log B − α·log₂B|.
    pub sigma_offset: f64,
    /// sigma_offset/(α·log₂B).
    pub sigma_residual: f64,
    /// |4(1 + iτ − s_m)·log x·B^{s_m−1} − 1|.
    pub log_x_residual: f64,
    /// (log B)^{−α/2}·10.
    pub log_x_threshold: f64,
    /// |(t_m − τ)·log B/(2πm) − 1 − 1/(α·log₂B)| for m ≠ 0.
    pub t_residual: Option<f64>,
    pub e_m: f64,
    pub e_m_prediction: f64,
    /// (σ_0 − σ_m)·log B·(log₂B)² for m ≠ 0.
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaLaw {
    pub theta: Vec<f64>,
    pub a_theta: Vec<f64>,
    /// max |e^{a_θ}·sinθ/θ − 1|.
    pub max_residual: f64,
    /// e^{a_θ} at θ = −π/2 and θ = π/2.
    pub end_values: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub m: i64,
    /// Largest radius, in units of 1/log B, with max(|λ|, |λ̃|) < 1/5.
    pub delta_prime: f64,
    /// sup |f'''|·log₂B/(log B)^{3+α} on that disk.
    pub third_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WedgeResult {
    pub rho: f64,
    pub phi: f64,
    pub abs_integral: f64,
    pub lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S0Contribution {
    pub k: usize,
    /// Sign of (1/π)·Im ∫_{Γ_0} e^f g ds.
    pub sign: i32,
    pub expected_sign: i32,
    /// log |(1/π)·Im ∫_{Γ_0} e^f g ds|.
    pub log_value: f64,
    /// Analytic lower bound on the same quantity (log).
    pub log_lower_bound: f64,
    /// log_value − log_lower_bound.
    pub margin: f64,
    /// Certified wedge lower bound on |∫ e^f g ds| (log).
    pub log_wedge_bound: f64,
    /// |arg(e^{f(s_0)}g(s_0)·(−1)^K)|.
    pub central_phase: f64,
    /// max over Γ_0 of the integrand phase deviation.
    pub max_phase: f64,
    /// max over Γ_0 of |arg(e^{iπ/2}/(s − 1))|.
    pub max_pole_phase: f64,
    /// max over Γ_0 of the prefactor bracket.
    pub bracket_max: f64,
    /// Gaussian half-width used in the lower bound, in units of 1/log B.
    pub gauss_half_width: f64,
    /// Leading exponent log x − (c(α+1))^{1/(α+1)}(log x·log₂x)^{α/(α+1)}(1 + (α/(α+1))·log₃x/log₂x).
    pub envelope_exponent: f64,
    pub envelope_exponent_b: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmBound {
    pub m: i64,
    /// log of max-modulus × length along Γ_m.
    pub log_bound: f64,
    /// log of (x/τ)·exp(−(1−σ_m)log x + Re∫_{s_m}^∞η)·length(Γ_m).
    pub log_formula: f64,
    pub length: f64,
    /// Re∫_{s_m}^∞ η − Re∫_{s_0}^∞ η.
    pub tail_excess: f64,
}

/// Double-precision evaluator of ¼∫_{1/2}^1 B^{ωu}/u du at anchor K by
/// Gauss–Legendre, independent of the table-phase machinery.
struct LocalEta {
    l: f64,
    nodes: Vec<(f64, f64)>,
}

impl LocalEta {
    fn new(l: f64) -> Self {
        let (x, w) = gauss_legendre(40);
        let nodes = x.iter().zip(w.iter()).map(|(x, w)| (0.75 + 0.25 * x, 0.25 * w)).collect();
        Self { l, nodes }
    }

    /// (1/θ)·¼∫ B^{(1−σ)u} sin(θu)/u du, smooth through θ = 0.
    fn sin_over_theta(&self, sigma: f64, theta: f64) -> f64 {
        let y = (1.0 - sigma) * self.l;
        self.nodes
            .iter()
            .map(|&(u, w)| {
                let a = theta * u;
                let sinc = if a.abs() < 1e-6 { 1.0 - a * a / 6.0 } else { a.sin() / a };
                w * (y * u).exp() * sinc
            })
            .sum::<f64>()
            * 0.25
    }

    /// ¼∫ B^{(1−σ)u} sin(θu)/u du and its σ-derivative.
    fn sin_part(&self, sigma: f64, theta: f64) -> (f64, f64) {
        let y = (1.0 - sigma) * self.l;
        let mut v = 0.0;
        let mut d = 0.0;
        for &(u, w) in &self.nodes {
            let e = (y * u).exp() * (theta * u).sin();
            v += w * e / u;
            d -= w * e * self.l;
        }
        (0.25 * v, 0.25 * d)
    }
}

pub struct SaddleContext<'a> {
    pub zeta: ZetaContext<'a>,
    pub k: usize,
    pub log_b: f64,
    pub log2_b: f64,
    pub alpha: f64,
    pub c: f64,
    pub m_max: i64,
    eta: LocalEta,
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

impl<'a> SaddleContext<'a> {
    pub fn new(zeta: ZetaContext<'a>) -> Result<Self> {
        let k = zeta.k_trunc;
        if zeta.anchor != Some(k) {
            return Err(Error::InvalidParams("saddle analysis needs a context anchored at τ_K".into()));
        }
        let log_b = zeta.table.row(k).log_b_f;
        let log2_b = log_b.ln();
        let m_max = log2_b.powf(0.75).floor() as i64;
        let (alpha, c) = (zeta.table.params.alpha, zeta.table.params.c);
        Ok(Self { zeta, k, log_b, log2_b, alpha, c, m_max, eta: LocalEta::new(log_b) })
    }

    pub fn log_x(&self) -> f64 {
        self.zeta.log_x
    }

    pub fn saddle_box(&self, m: i64) -> SaddleBox {
        let th = TAU * m as f64;
        SaddleBox {
            m,
            sigma_lo: 0.5,
            sigma_hi: 1.0 - 0.5 * self.alpha * self.log2_b / self.log_b,
            theta_lo: th - FRAC_PI_2,
            theta_hi: th + FRAC_PI_2,
        }
    }

    fn z_of(&self, sigma: f64, theta: f64) -> C64 {
        C64::new(sigma, theta / self.log_b)
    }

    fn winding(&self, b: &SaddleBox) -> f64 {
        let l = self.log_b;
        let corners = [
            C64::new(b.sigma_lo, b.theta_lo / l),
            C64::new(b.sigma_hi, b.theta_lo / l),
            C64::new(b.sigma_hi, b.theta_hi / l),
            C64::new(b.sigma_lo, b.theta_hi / l),
        ];
        let per_side = WINDING_NODES / 4;
        let mut total = 0.0;
        for i in 0..4 {
            let (p, q) = (corners[i], corners[(i + 1) % 4]);
            let mut prev_z = p;
            let mut prev = self.zeta.f_prime(p);
            for j in 1..=per_side {
                let zq = p + (q - p) * (j as f64 / per_side as f64);
                total += self.arg_increment(prev_z, prev, zq, 0);
                prev_z = zq;
                prev = self.zeta.f_prime(zq);
            }
        }
        total / TAU
    }

    /// Change of arg f' from a to b, bisecting while the step exceeds 0.3 rad.
    fn arg_increment(&self, a: C64, fa: C64, b: C64, depth: u32) -> f64 {
        let fb = self.zeta.f_prime(b);
        let d = (fb / fa).arg();
        if d.abs() < 0.3 || depth > 30 {
            return d;
        }
        let mid = 0.5 * (a + b);
        let fm = self.zeta.f_prime(mid);
        self.arg_increment(a, fa, mid, depth + 1) + self.arg_increment(mid, fm, b, depth + 1)
    }

    fn newton(&self, start: C64, b: &SaddleBox) -> Option<C64> {
        let l = self.log_b;
        let inside = |z: C64| z.re >= b.sigma_lo && z.re <= b.sigma_hi && z.im * l >= b.theta_lo && z.im * l <= b.theta_hi;
        let mut z = start;
        let mut fp = self.zeta.f_prime(z);
        for _ in 0..200 {
            let f2 = self.zeta.f_second(z);
            let step = fp / f2;
            let mut lam = 1.0;
            let mut accepted = false;
            while lam > 1e-6 {
                let cand = z - step * lam;
                if inside(cand) {
                    let fc = self.zeta.f_prime(cand);
                    if fc.norm() < fp.norm() || fc.norm() == 0.0 {
                        z = cand;
                        fp = fc;
                        accepted = true;
                        break;
                    }
                }
                lam *= 0.5;
            }
            if !accepted {
                break;
            }
            if (step * lam).norm() < 1e-15 * z.norm().max(1.0) {
                break;
            }
        }
        let f2 = self.zeta.f_second(z);
        if fp.norm() < 1e-10 * f2.norm() / l {
            Some(z)
        } else {
            None
        }
    }

    /// Locate and certify the saddle in V_m.
    pub fn find_saddle(&self, m: i64) -> Result<SaddlePoint> {
        let b = self.saddle_box(m);
        let l = self.log_b;
        let guess = self.z_of(1.0 - self.alpha * self.log2_b / l, TAU * m as f64);
        let center = self.z_of(0.5 * (b.sigma_lo + b.sigma_hi), TAU * m as f64);
        let mut found = self.newton(guess, &b).or_else(|| self.newton(center, &b));
        if found.is_none() {
            // Grid fallback: best |f'| on a 40×40 grid, then Newton.
            let mut best = (f64::INFINITY, center);
            for i in 0..40 {
                for j in 0..40 {
                    let sg = b.sigma_lo + (b.sigma_hi - b.sigma_lo) * (i as f64 + 0.5) / 40.0;
                    let th = b.theta_lo + (b.theta_hi - b.theta_lo) * (j as f64 + 0.5) / 40.0;
                    let z = self.z_of(sg, th);
                    let v = self.zeta.f_prime(z).norm();
                    if v < best.0 {
                        best = (v, z);
                    }
                }
            }
            found = self.newton(best.1, &b);
        }
        let z = found.ok_or_else(|| Error::Certification { m, reason: "Newton did not converge inside the box".into() })?;
        let winding = self.winding(&b);
        let winding_int = winding.round() as i64;
        if (winding - winding_int as f64).abs() > 0.1 || winding_int != 1 {
            return Err(Error::Certification { m, reason: format!("winding number {winding:.4}") });
        }
        let f = self.zeta.f_value(z)?;
        let f2 = self.zeta.f_second(z);
        let residual = self.zeta.f_prime(z).norm();
        let om = self.zeta.omega(self.k, crate::zeta::Family::Eta, z);
        Ok(SaddlePoint {
            m,
            z,
            sigma: z.re,
            theta: z.im * l,
            f,
            f2,
            e_m: -om.norm().ln(),
            winding,
            winding_int,
            residual,
            residual_limit: 1e-10 * f2.norm() / l,
        })
    }

    /// Saddles for |m| ≤ min(M, m_cap).
    pub fn find_all(&self, m_cap: i64) -> Result<Vec<SaddlePoint>> {
        let mm = self.m_max.min(m_cap);
        (-mm..=mm).map(|m| self.find_saddle(m)).collect()
    }

    pub fn asymptotics(&self, sp: &SaddlePoint, s0: &SaddlePoint) -> AsymptoticReport {
        let l = self.log_b;
        let ll = self.log2_b;
        let sigma_offset = ((1.0 - sp.sigma) * l - self.alpha * ll).abs();
        let om = self.zeta.omega(self.k, crate::zeta::Family::Eta, sp.z);
        // B^{s−1} = e^{−ωL}; its phase is θ since Im ω = −θ/L at anchor K.
        let bs = C64::from_polar((-om.re * l).exp(), sp.theta);
        let log_x_residual = (4.0 * om * self.log_x() * bs - 1.0).norm();
        let t_residual = (sp.m != 0).then(|| (sp.theta / (TAU * sp.m as f64) - 1.0 - 1.0 / (self.alpha * ll)).abs());
        let gap = (sp.m != 0).then(|| (s0.sigma - sp.sigma) * l * ll * ll);
        AsymptoticReport {
            m: sp.m,
            sigma_offset,
            sigma_residual: sigma_offset / (self.alpha * ll),
            log_x_residual,
            log_x_threshold: 10.0 * l.powf(-self.alpha / 2.0),
            t_residual,
            e_m: sp.e_m,
            e_m_prediction: ll - self.log_x().ln().ln(),
            gap,
        }
    }

    /// σ_θ on Γ_0: the root of θ·log x/log B = ¼∫B^{(1−σ)u} sin(θu)/u du.
    pub fn sigma_theta(&self, s0: &SaddlePoint, theta: f64) -> Result<f64> {
        let lhs = self.log_x() / self.log_b;
        let h = |sg: f64| lhs - self.eta.sin_over_theta(sg, theta);
        let mut hi = s0.sigma;
        let mut lo = s0.sigma - 2.0 / self.log_b;
        let mut n = 0;
        while h(lo) > 0.0 {
            lo -= 2.0 / self.log_b;
            n += 1;
            if n > 100 {
                return Err(Error::Path(format!("no bracket for σ_θ at θ = {theta}")));
            }
        }
        if h(hi) < 0.0 {
            hi = s0.sigma + 1e-12;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn theta_grid_0() -> Vec<f64> {
        let mut g: Vec<f64> = Vec::new();
        let n = (FRAC_PI_2 / 1e-2).ceil() as usize;
        for i in 0..=n {
            let t = (i as f64 * 1e-2).min(FRAC_PI_2);
            if t > 0.05 {
                g.push(t);
            }
        }
        for i in 1..=50 {
            g.push(i as f64 * 1e-3);
        }
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        g.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut full: Vec<f64> = g.iter().rev().map(|t| -t).collect();
        full.push(0.0);
        full.extend(g);
        full
    }

    fn tangent_arg(&self, z: C64) -> f64 {
        let fp = self.zeta.f_prime(z);
        if fp.norm() == 0.0 {
            return FRAC_PI_2;
        }
        let d = -fp.conj();
        let d = if d.im < 0.0 { -d } else { d };
        d.arg()
    }

    fn polyline(&self, m: i64, points: Vec<C64>, theta: Vec<f64>, center: usize, end_lo: String, end_hi: String) -> Result<PathPolyline> {
        let mut tangent_arg = Vec::with_capacity(points.len());
        let mut re_f = Vec::with_capacity(points.len());
        for (i, &z) in points.iter().enumerate() {
            tangent_arg.push(if i == center { FRAC_PI_2 } else { self.tangent_arg(z) });
            re_f.push(self.zeta.f_value(z)?.re);
        }
        let length = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Ok(PathPolyline { m, points, theta, tangent_arg, re_f, center, end_lo, end_hi, length })
    }

    /// Γ_0 through s_0 on a θ-grid over [−π/2, π/2].
    pub fn trace_gamma0(&self, s0: &SaddlePoint) -> Result<PathPolyline> {
        let grid = Self::theta_grid_0();
        let mut pts = Vec::with_capacity(grid.len());
        let mut center = 0;
        for (i, &th) in grid.iter().enumerate() {
            if th == 0.0 {
                center = i;
                pts.push(s0.z);
            } else {
                pts.push(self.z_of(self.sigma_theta(s0, th)?, th));
            }
        }
        self.polyline(0, pts, grid, center, "t = t_0^-".into(), "t = t_0^+".into())
    }

    pub fn theta_law(&self, path: &PathPolyline) -> ThetaLaw {
        let c = path.points[path.center].re;
        let mut theta = Vec::new();
        let mut a_theta = Vec::new();
        let mut max_residual: f64 = 0.0;
        for (z, &th) in path.points.iter().zip(path.theta.iter()) {
            if th == 0.0 {
                continue;
            }
            let a = (c - z.re) * self.log_b;
            max_residual = max_residual.max((a.exp() * th.sin() / th - 1.0).abs());
            theta.push(th);
            a_theta.push(a);
        }
        let end_values = (a_theta[0].exp(), a_theta[a_theta.len() - 1].exp());
        ThetaLaw { theta, a_theta, max_residual, end_values }
    }

    /// Γ_m for m ≠ 0: Newton continuation in σ at fixed θ on Im f = Im f(s_m).
    pub fn trace_gamma_m(&self, sp: &SaddlePoint) -> Result<PathPolyline> {
        let l = self.log_b;
        let lx = self.log_x();
        let level = sp.theta * lx / l - self.eta.sin_part(sp.sigma, sp.theta).0;
        let g = |sg: f64, th: f64| {
            let (v, d) = self.eta.sin_part(sg, th);
            (th * lx / l - v - level, -d)
        };
        // Descent direction at s_m from the quadratic model.
        let phi = (PI - sp.f2.arg()) / 2.0;
        let dir = C64::from_polar(1.0, phi);
        let dir = if dir.im < 0.0 { -dir } else { dir };
        let th_lo = TAU * sp.m as f64 - FRAC_PI_2;
        let th_hi = TAU * sp.m as f64 + FRAC_PI_2;
        let mut halves: Vec<Vec<(f64, f64)>> = Vec::new();
        for sgn in [1.0, -1.0] {
            let d = dir * sgn;
            let h0 = 0.02;
            let r = h0 / l / d.im.abs();
            let mut prev = (sp.theta, sp.sigma);
            let mut cur_th = sp.theta + sgn * h0;
            let mut guess = sp.sigma + r * d.re;
            let mut out = Vec::new();
            let end = if sgn > 0.0 { th_hi } else { th_lo };
            let mut step = 0.01;
            loop {
                let mut sg = guess;
                let mut ok = false;
                for _ in 0..60 {
                    let (v, dv) = g(sg, cur_th);
                    let ds = v / dv;
                    sg -= ds;
                    if ds.abs() < 1e-15 {
                        ok = true;
                        break;
                    }
                }
                let re_ok = ok && self.zeta.f_value(self.z_of(sg, cur_th)).map(|f| f.re < sp.f.re).unwrap_or(false);
                if !re_ok || (sg - guess).abs() > 0.5 / l {
                    if step < 1e-5 {
                        return Err(Error::Path(format!("continuation stalled for m = {} at θ = {cur_th}", sp.m)));
                    }
                    step *= 0.5;
                    cur_th = prev.0 + sgn * step;
                    guess = prev.1;
                    continue;
                }
                out.push((cur_th, sg));
                if (cur_th - end).abs() < 1e-13 {
                    break;
                }
                let slope = (sg - prev.1) / (cur_th - prev.0);
                prev = (cur_th, sg);
                step = (step * 1.5).min(0.01);
                let next = cur_th + sgn * step;
                cur_th = if (next - end) * sgn > 0.0 { end } else { next };
                guess = sg + slope * (cur_th - prev.0);
            }
            halves.push(out);
        }
        let mut pts = Vec::new();
        let mut theta = Vec::new();
        for &(th, sg) in halves[1].iter().rev() {
            pts.push(self.z_of(sg, th));
            theta.push(th);
        }
        let center = pts.len();
        pts.push(sp.z);
        theta.push(sp.theta);
        for &(th, sg) in &halves[0] {
            pts.push(self.z_of(sg, th));
            theta.push(th);
        }
        self.polyline(sp.m, pts, theta, center, format!("t = t_{}^-", sp.m), format!("t = t_{}^+", sp.m))
    }

    /// λ_m(s) and λ̃_m(s).
    pub fn taylor_control(&self, sp: &SaddlePoint, z: C64) -> Result<(C64, C64)> {
        let d = z - sp.z;
        let f = self.zeta.f_value(z)?;
        let lam = 2.0 * (f - sp.f) / (sp.f2 * d * d) - 1.0;
        let lam_t = self.zeta.f_prime(z) / (sp.f2 * d) - 1.0;
        Ok((lam, lam_t))
    }

    /// Radius sweep for the Taylor control with ε = 1/5.
    pub fn taylor_radius(&self, sp: &SaddlePoint) -> Result<TaylorReport> {
        let l = self.log_b;
        let mut delta = 0.0;
        let mut r = 0.01;
        while r < 4.0 {
            let mut worst: f64 = 0.0;
            for j in 0..16 {
                let z = sp.z + C64::from_polar(r / l, TAU * j as f64 / 16.0);
                let (a, b) = self.taylor_control(sp, z)?;
                worst = worst.max(a.norm()).max(b.norm());
            }
            if worst >= 0.2 {
                break;
            }
            delta = r;
            r *= 1.1;
        }
        let mut third: f64 = 0.0;
        for i in 0..=4 {
            for j in 0..16 {
                let z = sp.z + C64::from_polar(delta * i as f64 / 4.0 / l, TAU * j as f64 / 16.0);
                third = third.max(self.zeta.f_and_derivatives(z)?.d3.norm());
            }
        }
        Ok(TaylorReport {
            m: sp.m,
            delta_prime: delta,
            third_ratio: third * self.log2_b / l.powf(3.0 + self.alpha),
        })
    }

    /// (1/π)·Im ∫_{Γ_0} e^f g ds with the analytic lower bound.
    pub fn contribution_s0(&self, s0: &SaddlePoint, b: f64) -> Result<S0Contribution> {
        let l = self.log_b;
        let lx = self.log_x();
        let k = self.k;
        let sign_k = if k % 2 == 0 { 1.0 } else { -1.0 };
        // Composite Gauss–Legendre in θ on [−π/2, π/2].
        let (gx, gw) = gauss_legendre(10);
        let panels = 48;
        let h = PI / panels as f64;
        let g0 = self.zeta.g_eval(s0.z)?;
        let shift = s0.f.re + g0.log_abs;
        let mut acc = C64::new(0.0, 0.0);
        let mut wedge_vals = Vec::new();
        let mut wedge_w = Vec::new();
        let mut max_phase: f64 = 0.0;
        let mut max_pole: f64 = 0.0;
        let mut bracket_max: f64 = 0.0;
        let mut gauss_y = FRAC_PI_2 / l;
        for p in 0..panels {
            let a = -FRAC_PI_2 + h * p as f64;
            for (x, w) in gx.iter().zip(gw.iter()) {
                let th = a + 0.5 * h * (x + 1.0);
                let sg = self.sigma_theta(s0, th)?;
                let z = self.z_of(sg, th);
                let fp = self.zeta.f_prime(z);
                let dz = C64::new(-fp.re / (l * fp.im), 1.0 / l);
                let f = self.zeta.f_value(z)?;
                let g = self.zeta.g_eval(z)?;
                let term = LogComplex::exp(f).mul(g).mul_c(dz);
                let val = term.to_complex_scaled(shift);
                acc += val * (0.5 * h * w);
                // Perron element (1/2πi)·e^f g dz, rotated by (−1)^K.
                let rot = val * sign_k / C64::new(0.0, 1.0);
                max_phase = max_phase.max(rot.arg().abs());
                wedge_vals.push(rot);
                wedge_w.push(0.5 * h * w);
                let s = self.zeta.global(z);
                max_pole = max_pole.max((C64::new(0.0, 1.0) / (s - 1.0)).arg().abs());
                bracket_max = bracket_max.max(self.zeta.bracket_stat(z)?);
                let y = th / l;
                if f.re < s0.f.re - 2.0 * l * lx * y * y {
                    gauss_y = gauss_y.min(y.abs());
                }
            }
        }
        let val = acc.im / PI;
        let sign = if val > 0.0 { 1 } else { -1 };
        let log_value = val.abs().ln() + shift;
        let wedge = wedge_integral(&wedge_vals, &wedge_w, 0.0, FRAC_PI_4.max(max_phase + 1e-12))?;
        let log_wedge_bound = wedge.lower_bound.ln() + shift;
        // Gaussian width: ∫_{−Y}^{Y} e^{−2 L log x y²} dy.
        let q = (2.0 * l * lx).sqrt();
        let gauss = (PI.sqrt() / q) * erf(q * gauss_y);
        let s_far = self.zeta.global(self.z_of(s0.sigma - 1.0 / l, FRAC_PI_2));
        let log_lower_bound =
            s0.f.re - bracket_max - (s_far - 1.0).norm().ln() + FRAC_PI_4.cos().ln() + gauss.ln() - PI.ln();
        let central = LogComplex::exp(s0.f).mul(g0);
        let central_phase = wrap(central.arg + if sign_k < 0.0 { PI } else { 0.0 }).abs();
        let (envelope_exponent, envelope_exponent_b) = self.envelope(b);
        Ok(S0Contribution {
            k,
            sign,
            expected_sign: sign_k as i32,
            log_value,
            log_lower_bound,
            margin: log_value - log_lower_bound,
            log_wedge_bound,
            central_phase,
            max_phase,
            max_pole_phase: max_pole,
            bracket_max,
            gauss_half_width: gauss_y * l,
            envelope_exponent,
            envelope_exponent_b,
            b,
        })
    }

    /// Leading envelope exponent at x and its variant with α/(α+1) → b.
    pub fn envelope(&self, b: f64) -> (f64, f64) {
        let lx = self.log_x();
        let l2 = lx.ln();
        let l3 = l2.ln();
        let a = self.alpha;
        let base = (self.c * (a + 1.0)).powf(1.0 / (a + 1.0)) * (lx * l2).powf(a / (a + 1.0));
        (lx - base * (1.0 + a / (a + 1.0) * l3 / l2), lx - base * (1.0 + b * l3 / l2))
    }

    /// Max-modulus × length bound for the contribution of s_m, m ≠ 0.
    pub fn contribution_sm_bound(&self, sp: &SaddlePoint, path: &PathPolyline, s0: &SaddlePoint) -> Result<SmBound> {
        let mut lmax = f64::NEG_INFINITY;
        for &z in &path.points {
            let v = LogComplex::exp(self.zeta.f_value(z)?).mul(self.zeta.g_eval(z)?);
            lmax = lmax.max(v.log_abs);
        }
        let lx = self.log_x();
        let j_m = self.zeta.tail(self.k, crate::zeta::Family::Eta, sp.z)?.re;
        let j_0 = self.zeta.tail(self.k, crate::zeta::Family::Eta, s0.z)?.re;
        let log_tau = self.zeta.table.row(self.k).log_tau;
        let log_formula = lx - log_tau - (1.0 - sp.sigma) * lx + j_m + path.length.ln();
        Ok(SmBound { m: sp.m, log_bound: lmax + path.length.ln() - PI.ln(), log_formula, length: path.length, tail_excess: j_m - j_0 })
    }

    /// log Σ_{0<|m|≤M} bounds.
    pub fn aggregate_sm(bounds: &[SmBound]) -> f64 {
        log_sum_exp(&bounds.iter().map(|b| b.log_bound).collect::<Vec<_>>())
    }
}

/// Polar form of Σ w_i F_i with the certified lower bound
/// |∫F| ≥ Re(e^{−iθ_0}∫F) ≥ cos ω·∫|F| when every node lies in the wedge.
pub fn wedge_integral(values: &[C64], weights: &[f64], theta0: f64, omega: f64) -> Result<WedgeResult> {
    if !(omega >= 0.0 && omega < FRAC_PI_2) {
        return Err(Error::InvalidParams(format!("wedge half-angle {omega} outside [0, π/2)")));
    }
    let rot = C64::from_polar(1.0, -theta0);
    let mut sum = C64::new(0.0, 0.0);
    let mut abs = 0.0;
    for (i, (v, &w)) in values.iter().zip(weights.iter()).enumerate() {
        if w < 0.0 {
            return Err(Error::InvalidParams("negative quadrature weight".into()));
        }
        let r = v * rot;
        if r.norm() > 0.0 && r.arg().abs() > omega {
            return Err(Error::Wedge { node: i, arg: r.arg().abs(), omega });
        }
        sum += r * w;
        abs += v.norm() * w;
    }
    Ok(WedgeResult { rho: sum.norm(), phi: sum.arg(), abs_integral: abs, lower_bound: omega.cos() * abs })
}

/// Error function (Abramowitz–Stegun 7.1.26 refined by one Newton-free
/// series switch); accurate to ~1e-12 for our arguments.
fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 3.0 {
        // Maclaurin series.
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return 2.0 / PI.sqrt() * sum;
    }
    // Continued fraction for erfc.
    let mut f = 0.0;
    for n in (1..60).rev() {
        f = n as f64 / 2.0 / (x + f);
    }
    1.0 - (-x * x).exp() / PI.sqrt() / (x + f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{build_sequences, ParamSet, SequenceTable};

    fn toy20() -> SequenceTable {
        build_sequences(&ParamSet::toy(1.0, 1.0, 20.0, 1)).unwrap()
    }

    #[test]
    fn erf_values() {
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-14);
        assert!((erf(3.5) - 0.999_999_256_901_627_7).abs() < 1e-14);
    }

    #[test]
    fn local_eta_matches_tail() {
        let t = toy20();
        let sc = SaddleContext::new(ZetaContext::designed(&t, 0).unwrap()).unwrap();
        let (sg, th) = (0.83, 0.7);
        let j = sc.zeta.tail(0, crate::zeta::Family::Eta, sc.z_of(sg, th)).unwrap();
        let (v, _) = sc.eta.sin_part(sg, th);
        assert!((j.im + v).abs() < 1e-12 * v.abs());
    }

    #[test]
    fn saddles_certified() {
        let t = toy20();
        let sc = SaddleContext::new(ZetaContext::designed(&t, 0).unwrap()).unwrap();
        let all = sc.find_all(5).unwrap();
        let s0 = all.iter().find(|s| s.m == 0).unwrap().clone();
        assert_eq!(s0.z.im, 0.0);
        for s in &all {
            assert_eq!(s.winding_int, 1);
            assert!(s.residual < s.residual_limit);
            if s.m != 0 {
                assert!(s.sigma < s0.sigma);
            }
            let r = sc.asymptotics(s, &s0);
            assert!(r.log_x_residual < r.log_x_threshold);
            assert!(s.e_m >= 0.0 && s.e_m <= sc.log2_b);
        }
    }

    #[test]
    fn gamma0_and_contribution() {
        let t = toy20();
        let sc = SaddleContext::new(ZetaContext::designed(&t, 0).unwrap()).unwrap();
        let s0 = sc.find_saddle(0).unwrap();
        let p = sc.trace_gamma0(&s0).unwrap();
        assert!(p.descends());
        assert!(p.max_wedge() < PI / 5.0);
        let law = sc.theta_law(&p);
        assert!((law.end_values.1 - FRAC_PI_2).abs() < 0.2, "{:?}", law.end_values);
        let c = sc.contribution_s0(&s0, 0.6).unwrap();
        assert_eq!(c.sign, 1);
        assert!(c.margin > 0.0);
        assert!(c.central_phase < FRAC_PI_4);
    }

    #[test]
    fn gamma_m_paths() {
        let t = toy20();
        let lp = FRAC_PI_2.ln();
        let mut worst = Vec::new();
        for k in 0..2 {
            let sc = SaddleContext::new(ZetaContext::designed(&t, k).unwrap()).unwrap();
            let s0 = sc.find_saddle(0).unwrap();
            let mut w: f64 = 0.0;
            for m in [-1i64, 1] {
                let sp = sc.find_saddle(m).unwrap();
                let p = sc.trace_gamma_m(&sp).unwrap();
                assert!(p.descends());
                assert!(p.length * sc.log_b < 10.0);
                let (lo, hi) = p.end_offsets(sc.log_b);
                assert!(lo > 0.0 && hi > 0.0);
                w = w.max((lo - lp).abs()).max((hi - lp).abs());
                let b = sc.contribution_sm_bound(&sp, &p, &s0).unwrap();
                assert!(b.log_bound < s0.f.re);
            }
            worst.push(w);
        }
        // The endpoint offsets approach log(π/2) only as O(|m|/log₂B).
        assert!(worst[1] < worst[0], "{worst:?}");
    }

    #[test]
    fn taylor_control_vanishes_near_saddle() {
        let t = toy20();
        let sc = SaddleContext::new(ZetaContext::designed(&t, 0).unwrap()).unwrap();
        let s0 = sc.find_saddle(0).unwrap();
        let (a, b) = sc.taylor_control(&s0, s0.z + C64::new(1e-5, 1e-5)).unwrap();
        assert!(a.norm() < 1e-2 && b.norm() < 1e-2);
        let r = sc.taylor_radius(&s0).unwrap();
        assert!(r.delta_prime > 0.0);
    }

    #[test]
    fn wedge_examples() {
        let r = wedge_integral(&[C64::new(1.0, 0.0); 3], &[1.0, 1.0, 1.0], 0.0, 0.0).unwrap();
        assert!((r.rho - 3.0).abs() < 1e-15 && r.phi == 0.0);
        let (x, w) = gauss_legendre(20);
        let vals: Vec<C64> = x.iter().map(|x| C64::from_polar(1.0, (0.5 + 0.5 * x) / 10.0)).collect();
        let ws: Vec<f64> = w.iter().map(|w| 0.5 * w).collect();
        let r = wedge_integral(&vals, &ws, 0.05, 0.05 + 1e-15).unwrap();
        assert!(r.rho >= 0.05f64.cos());
        assert!(matches!(wedge_integral(&vals, &ws, 0.0, 0.01), Err(Error::Wedge { .. })));
    }
}
