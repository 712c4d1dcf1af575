//! Special functions: exponential integrals of the form ∫ e^{zu}/u du on
//! finite intervals, the logarithmic integral series, ζ(n) for integer n ≥ 2,
//! and the Möbius function.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate, QuadConfig};

type C64 = Complex64;

/// |z|·u above which the by-parts expansion is used.
pub const ASYMPTOTIC_THRESHOLD: f64 = 40.0;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exact fractional phases of `Im(z·u)` at the two endpoints, reduced mod 2π.
/// When absent the phase is computed from `z` in double precision.
#[derive(Clone, Copy, Debug, Default)]
pub struct EndPhases {
    pub a: Option<f64>,
    pub b: Option<f64>,
}

impl EndPhases {
    pub fn both(a: f64, b: f64) -> Self {
        Self { a: Some(a), b: Some(b) }
    }
}

#[inline]
fn exp_at(z: C64, u: f64, phase: Option<f64>, shift: f64) -> C64 {
    let re = z.re * u - shift;
    let im = match phase {
        Some(p) => p,
        None => z.im * u,
    };
    C64::from_polar(re.exp(), im)
}

/// Tail sum Σ_{n≥0} n!/(zu)^{n+1}, stopped at the smallest term.
fn by_parts_series(zu: C64) -> C64 {
    let inv = 1.0 / zu;
    let mut term = inv;
    let mut sum = inv;
    let mut last = term.norm();
    for n in 1..200 {
        let next = term * (n as f64) * inv;
        let nn = next.norm();
        if nn >= last {
            break;
        }
        sum += next;
        term = next;
        last = nn;
        if nn < 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

/// e^{-shift} ∫_a^b e^{zu}/u du for 0 < a < b.
///
/// Uses the asymptotic by-parts expansion when |z|·a is large, otherwise
/// adaptive quadrature on the oscillatory head plus the expansion beyond.
pub fn exp_over_u(z: C64, a: f64, b: f64, phases: EndPhases, shift: f64) -> Result<C64> {
    if !(a > 0.0 && b >= a) {
        return Err(Error::Domain(format!("exp_over_u needs 0 < a <= b, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(C64::new(0.0, 0.0));
    }
    let zn = z.norm();
    if zn * a >= ASYMPTOTIC_THRESHOLD {
        let fb = exp_at(z, b, phases.b, shift) * by_parts_series(z * b);
        let fa = exp_at(z, a, phases.a, shift) * by_parts_series(z * a);
        return Ok(fb - fa);
    }
    let m = if zn > 0.0 { (ASYMPTOTIC_THRESHOLD / zn).min(b) } else { b };
    let cfg = QuadConfig::new(1e-300, 2e-15).with_max_intervals(2000);
    let head = integrate(|u: f64| (z * u - shift).exp() / u, a, m, &cfg)
        .or_else(|_| integrate(|u: f64| (z * u - shift).exp() / u, a, m, &QuadConfig::new(1e-300, 1e-12)))?;
    let mut total = head.value;
    if m < b {
        let fb = exp_at(z, b, phases.b, shift) * by_parts_series(z * b);
        let fm = exp_at(z, m, None, shift) * by_parts_series(z * m);
        total += fb - fm;
    }
    Ok(total)
}

/// e^{-shift} ∫_a^{a+h} e^{zu}/u du for a short interval whose width `h`
/// would be lost when added to `a` in double precision.
pub fn exp_over_u_short(z: C64, a: f64, h: f64, phases: EndPhases, shift: f64) -> Result<C64> {
    if !(a > 0.0 && h >= 0.0) {
        return Err(Error::Domain(format!("exp_over_u_short needs a > 0, h >= 0, got a = {a}, h = {h}")));
    }
    if h == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let zn = z.norm();
    if zn * h <= 1.0 && h <= 1e-3 * a {
        let ea = exp_at(z, a, phases.a, shift);
        let rule = gauss_legendre(12);
        let c = 0.5 * h;
        let mut acc = C64::new(0.0, 0.0);
        for (x, w) in rule.0.iter().zip(rule.1.iter()) {
            let v = c + c * x;
            acc += (z * v).exp() / (a + v) * *w;
        }
        return Ok(ea * acc * c);
    }
    if zn * a >= ASYMPTOTIC_THRESHOLD {
        let b = a + h;
        let pb = phases.b.or_else(|| phases.a.map(|p| p + z.im * h));
        let eb = C64::from_polar((z.re * b - shift).exp(), pb.unwrap_or(z.im * b));
        let fb = eb * by_parts_series(z * b);
        let fa = exp_at(z, a, phases.a, shift) * by_parts_series(z * a);
        return Ok(fb - fa);
    }
    exp_over_u(z, a, a + h, phases, shift)
}

#[inline]
pub fn cexpm1(w: C64) -> C64 {
    if w.norm() < 0.1 {
        let mut term = w;
        let mut sum = w;
        for n in 2..30 {
            term = term * w / n as f64;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum
    } else {
        w.exp() - 1.0
    }
}

/// Principal log(1 + w), accurate for small |w|.
pub fn cln1p(w: C64) -> C64 {
    if w.norm() < 1e-3 {
        let mut sum = C64::new(0.0, 0.0);
        let mut pow = w;
        for n in 1..20 {
            let term = pow / n as f64;
            if n % 2 == 1 {
                sum += term;
            } else {
                sum -= term;
            }
            pow *= w;
            if pow.norm() < 1e-18 {
                break;
            }
        }
        sum
    } else {
        (w + 1.0).ln()
    }
}

/// ∫_0^V (e^{z1 v} − e^{z2 v})/v dv, with optional exact phases of Im(z·V).
pub fn exp_difference_from_zero(z1: C64, z2: C64, v: f64, phase1_v: Option<f64>, phase2_v: Option<f64>) -> Result<C64> {
    if v <= 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let zmax = z1.norm().max(z2.norm());
    let m = if zmax > 0.0 { (ASYMPTOTIC_THRESHOLD / zmax).min(v) } else { v };
    let cfg = QuadConfig::new(1e-300, 2e-15).with_max_intervals(2000);
    // e^{z1 u} − e^{z2 u} = e^{z2 u}(e^{(z1 − z2)u} − 1), free of cancellation
    let dz = z1 - z2;
    let integrand = |u: f64| (z2 * u).exp() * cexpm1(dz * u) / u;
    let head = integrate(integrand, 0.0, m, &cfg).or_else(|_| integrate(integrand, 0.0, m, &QuadConfig::new(1e-300, 1e-12)))?;
    let mut total = head.value;
    if m < v {
        total += exp_over_u(z1, m, v, EndPhases { a: None, b: phase1_v }, 0.0)?;
        total -= exp_over_u(z2, m, v, EndPhases { a: None, b: phase2_v }, 0.0)?;
    }
    Ok(total)
}

/// Normalized logarithmic integral Li(x) = ∫_1^x (1−1/u)/log u du as a
/// function of v = log x ≥ 0, via Σ v^n/(n!·n).
pub fn li_normalized(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0; // v^n / n!
    let mut sum = 0.0;
    for n in 1..5000 {
        term *= v / n as f64;
        let add = term / n as f64;
        sum += add;
        if (n as f64) > v && add < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Li(e^{v2}) − Li(e^{v1}) for nearby v1 < v2 without cancellation:
/// ∫_{v1}^{v2} (e^w − 1)/w dw.
pub fn li_increment(v1: f64, dv: f64) -> f64 {
    if dv <= 0.0 {
        return 0.0;
    }
    let rule = gauss_legendre(16);
    let c = 0.5 * dv;
    let mut acc = 0.0;
    for (x, w) in rule.0.iter().zip(rule.1.iter()) {
        let t = c + c * x;
        let wv = v1 + t;
        acc += (wv.exp_m1()) / wv * w;
    }
    if dv > 1e-2 * v1.max(1e-300) {
        // Interval not short: fall back to adaptive quadrature.
        let r = integrate(|w: f64| w.exp_m1() / w, v1, v1 + dv, &QuadConfig::new(1e-300, 1e-15));
        if let Ok(r) = r {
            return r.value;
        }
    }
    acc * c
}

/// ζ(k) for integer k ≥ 2 (direct sum with Euler–Maclaurin tail).
pub fn zeta_int(k: u32) -> f64 {
    assert!(k >= 2, "zeta_int needs k >= 2");
    if k > 60 {
        return 1.0 + 2f64.powi(-(k as i32)) + 3f64.powi(-(k as i32));
    }
    let n = 64usize;
    let kf = k as f64;
    let mut s = 0.0;
    for j in (1..n).rev() {
        s += (j as f64).powf(-kf);
    }
    s + hurwitz_tail(k, n)
}

/// Σ_{j ≥ n} j^{-k} for integer k ≥ 2, n ≥ 16, by Euler–Maclaurin.
pub fn hurwitz_tail(k: u32, n: usize) -> f64 {
    let kf = k as f64;
    let nf = n as f64;
    // Bernoulli numbers B2..B10
    let b = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0];
    let mut s = nf.powf(1.0 - kf) / (kf - 1.0) + 0.5 * nf.powf(-kf);
    // Σ B_{2j}/(2j)! · (k)_{2j-1} n^{-k-2j+1}
    let mut rising = kf; // (k)_{1}
    let mut fact = 2.0; // (2j)!
    for (j, bj) in b.iter().enumerate() {
        let p = 2 * (j + 1);
        s += bj / fact * rising * nf.powf(-kf - p as f64 + 1.0);
        rising *= (kf + p as f64 - 1.0) * (kf + p as f64);
        fact *= ((p + 1) * (p + 2)) as f64;
    }
    s
}

/// Prime-counting analogue of Li: li(x) = Σ v^n/(n!·n·ζ(n+1)), v = log x.
pub fn li_prime(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 0.0;
    for n in 1..5000u32 {
        term *= v / n as f64;
        let z = if n + 1 <= 60 { zeta_int(n + 1) } else { 1.0 };
        let add = term / (n as f64 * z);
        sum += add;
        if (n as f64) > v && add < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Classical Möbius function.
pub fn mobius(n: u64) -> i32 {
    assert!(n >= 1);
    let mut m = n;
    let mut sign = 1;
    let mut p = 2u64;
    while p * p <= m {
        if m % p == 0 {
            m /= p;
            if m % p == 0 {
                return 0;
            }
            sign = -sign;
        }
        p += 1;
    }
    if m > 1 {
        sign = -sign;
    }
    sign
}

/// Stable log(e^a + e^b).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Stable log Σ e^{x_i}.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn euler_gamma() -> f64 {
    EULER_GAMMA
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(z: C64, a: f64, b: f64) -> C64 {
        integrate(|u: f64| (z * u).exp() / u, a, b, &QuadConfig::new(1e-300, 1e-14).with_max_intervals(200_000))
            .unwrap()
            .value
    }

    #[test]
    fn exp_over_u_matches_quadrature_across_regimes() {
        for &(re, im) in &[(3.0, 0.0), (5.0, -12.0), (0.5, 150.0), (-2.0, 300.0), (10.0, 90.0)] {
            let z = C64::new(re, im);
            let v = exp_over_u(z, 0.5, 1.0, EndPhases::default(), 0.0).unwrap();
            let w = brute(z, 0.5, 1.0);
            assert!((v - w).norm() <= 1e-12 * w.norm().max(1e-3), "{z}: {v} vs {w}");
        }
    }

    #[test]
    fn exact_phases_are_used() {
        let z = C64::new(1.0, 1e9);
        let pa = (1e9f64 * 0.5) % std::f64::consts::TAU;
        let pb = 1e9f64 % std::f64::consts::TAU;
        let v = exp_over_u(z, 0.5, 1.0, EndPhases::both(pa, pb), 0.0).unwrap();
        let v2 = exp_over_u(z, 0.5, 1.0, EndPhases::default(), 0.0).unwrap();
        assert!((v - v2).norm() < 1e-12);
        assert!(v.norm() < 1e-8);
    }

    #[test]
    fn short_interval_keeps_width() {
        let z = C64::new(20.0, 0.0);
        let h = 1e-18;
        let v = exp_over_u_short(z, 1.0, h, EndPhases::default(), 0.0).unwrap();
        let expect = 20f64.exp() * h;
        assert!((v.re - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn li_values() {
        assert_eq!(li_normalized(0.0), 0.0);
        // Li(e) = Σ 1/(n! n)
        let direct: f64 = (1..30).map(|n| 1.0 / ((1..=n).map(|j| j as f64).product::<f64>() * n as f64)).sum();
        assert!((li_normalized(1.0) - direct).abs() < 1e-15);
        let q = integrate(|w: f64| w.exp_m1() / w, 0.0, 7.0, &QuadConfig::new(1e-300, 1e-15)).unwrap().value;
        assert!((li_normalized(7.0) - q).abs() < 1e-12 * q);
        assert!((li_increment(7.0, 1e-9) - (li_normalized(7.0 + 1e-9) - li_normalized(7.0))).abs() < 1e-9);
    }

    #[test]
    fn zeta_values() {
        let pi = std::f64::consts::PI;
        assert!((zeta_int(2) - pi * pi / 6.0).abs() < 1e-15);
        assert!((zeta_int(4) - pi.powi(4) / 90.0).abs() < 1e-15);
        assert!((zeta_int(3) - 1.202_056_903_159_594_2).abs() < 1e-15);
        // first li coefficient 1/ζ(2)
        assert!((1.0 / zeta_int(2) - 0.607_927_101_854_026_6).abs() < 1e-15);
    }

    #[test]
    fn mobius_values() {
        let expect = [1, -1, -1, 0, -1, 1, -1, 0, 0, 1, -1, 0];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(mobius(i as u64 + 1), *e);
        }
    }

    #[test]
    fn exp_difference_matches_series() {
        // ∫_0^V (e^v − 1)/v dv = Li(e^V)
        let v = 6.0;
        let r = exp_difference_from_zero(C64::new(1.0, 0.0), C64::new(0.0, 0.0), v, None, None).unwrap();
        assert!((r.re - li_normalized(v)).abs() < 1e-12 * li_normalized(v));
        let z1 = C64::new(0.25, -300.0);
        let z2 = C64::new(-0.75, -300.0);
        let r = exp_difference_from_zero(z1, z2, 5.0, None, None).unwrap();
        let q = integrate(
            |u: f64| (cexpm1(z1 * u) - cexpm1(z2 * u)) / u,
            0.0,
            5.0,
            &QuadConfig::new(1e-300, 1e-13).with_max_intervals(100_000),
        )
        .unwrap()
        .value;
        assert!((r - q).norm() < 1e-11 * q.norm().max(1e-3), "{r} vs {q}");
    }

    #[test]
    fn log_sums() {
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(euler_gamma(), EULER_GAMMA);
    }
}
