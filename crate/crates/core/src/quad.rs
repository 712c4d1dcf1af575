//! Adaptive Gauss–Kronrod quadrature (G10/K21) for real- and complex-valued
//! integrands on finite intervals, plus fixed Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208745428738,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Values the integrator can accumulate.
pub trait QuadValue:
    Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn modulus(self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl QuadConfig {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: f64,
    pub evaluations: usize,
}

struct Panel<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T> Eq for Panel<T> {}
impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One G10/K21 panel: (Kronrod value, |K - G| error estimate).
pub fn gk21<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = T::zero();
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod = kronrod + pair * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + pair * WG[j / 2];
        }
    }
    let kronrod = kronrod * half;
    let gauss = gauss * half;
    let err = (kronrod - gauss).modulus();
    (kronrod, err)
}

/// Adaptive bisection driven by the largest local error estimate.
pub fn integrate<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult<T>> {
    integrate_with_breaks(&mut f, &[a, b], cfg)
}

/// Adaptive integration over consecutive panels `[breaks[i], breaks[i+1]]`.
pub fn integrate_with_breaks<T: QuadValue, F: FnMut(f64) -> T>(
    f: &mut F,
    breaks: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult<T>> {
    if breaks.len() < 2 {
        return Err(Error::Domain("quadrature needs at least two break points".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut total = T::zero();
    let mut total_err = 0.0;
    let mut evals = 0usize;
    for w in breaks.windows(2) {
        if !(w[0].is_finite() && w[1].is_finite()) {
            return Err(Error::Domain(format!("non-finite quadrature limits [{}, {}]", w[0], w[1])));
        }
        if w[0] == w[1] {
            continue;
        }
        let (v, e) = gk21(f, w[0], w[1]);
        evals += 21;
        total = total + v;
        total_err += e;
        heap.push(Panel { a: w[0], b: w[1], value: v, error: e });
    }
    if heap.is_empty() {
        return Ok(QuadResult { value: T::zero(), error: 0.0, evaluations: 0 });
    }
    loop {
        let tol = cfg.abs_tol.max(cfg.rel_tol * total.modulus());
        if total_err <= tol {
            break;
        }
        if heap.len() >= cfg.max_intervals {
            return Err(Error::Quadrature {
                error: total_err,
                tolerance: tol,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in f64.
            heap.push(worst);
            return Err(Error::Quadrature {
                error: total_err,
                tolerance: tol,
                intervals: heap.len(),
            });
        }
        let (v1, e1) = gk21(f, worst.a, mid);
        let (v2, e2) = gk21(f, mid, worst.b);
        evals += 42;
        total = total - worst.value + v1 + v2;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // Re-sum to avoid drift from incremental updates.
    let mut value = T::zero();
    let mut error = 0.0;
    for p in heap.iter() {
        value = value + p.value;
        error += p.error;
    }
    Ok(QuadResult { value, error, evaluations: evals })
}

/// Gauss–Legendre nodes and weights on [-1, 1] (Newton iteration on P_n).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Fixed n-point Gauss–Legendre rule on [a, b].
pub fn fixed_gauss<T: QuadValue, F: FnMut(f64) -> T>(mut f: F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> T {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = T::zero();
    for (x, w) in rule.0.iter().zip(rule.1.iter()) {
        acc = acc + f(c + h * x) * *w;
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x: f64| x.powi(5) - 3.0 * x * x, -1.0, 2.0, &QuadConfig::default()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_complex() {
        // ∫_0^{10} e^{i 7 x} dx
        let r = integrate(
            |x: f64| Complex64::new(0.0, 7.0 * x).exp(),
            0.0,
            10.0,
            &QuadConfig::new(1e-14, 1e-13),
        )
        .unwrap();
        let exact = (Complex64::new(0.0, 70.0).exp() - 1.0) / Complex64::new(0.0, 7.0);
        assert!((r.value - exact).norm() < 1e-12);
    }

    #[test]
    fn endpoint_singularity_is_handled() {
        let r = integrate(|x: f64| x.sqrt().ln(), 0.0, 1.0, &QuadConfig::new(1e-10, 1e-10)).unwrap();
        assert!((r.value + 0.5).abs() < 1e-9);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let cfg = QuadConfig::new(1e-15, 0.0).with_max_intervals(3);
        let r = integrate(|x: f64| (1000.0 * x).sin(), 0.0, 100.0, &cfg);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn gauss_legendre_integrates_degree_2n_minus_1() {
        let rule = gauss_legendre(8);
        let v = fixed_gauss(|x: f64| x.powi(15) + x.powi(14), -1.0, 1.0, &rule);
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
        let s: f64 = rule.1.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }
}
