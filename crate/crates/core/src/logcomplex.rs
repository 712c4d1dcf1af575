//! Complex numbers held as (log modulus, argument) so that values like
//! e^{f(s)} with Re f in the thousands can be multiplied and compared.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::special::log_add_exp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogComplex {
    pub log_abs: f64,
    pub arg: f64,
}

impl LogComplex {
    pub const ZERO: LogComplex = LogComplex { log_abs: f64::NEG_INFINITY, arg: 0.0 };

    pub fn new(log_abs: f64, arg: f64) -> Self {
        Self { log_abs, arg: wrap(arg) }
    }

    /// e^w for complex w.
    pub fn exp(w: Complex64) -> Self {
        Self::new(w.re, w.im)
    }

    pub fn from_complex(z: Complex64) -> Self {
        if z.re == 0.0 && z.im == 0.0 {
            return Self::ZERO;
        }
        Self { log_abs: z.norm().ln(), arg: z.arg() }
    }

    pub fn is_zero(&self) -> bool {
        self.log_abs == f64::NEG_INFINITY
    }

    /// Value as an ordinary complex (may overflow to infinity).
    pub fn to_complex(&self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(self.log_abs.exp(), self.arg)
    }

    /// Value times e^{-shift}.
    pub fn to_complex_scaled(&self, shift: f64) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar((self.log_abs - shift).exp(), self.arg)
    }

    /// Principal-branch logarithm as a complex number.
    pub fn ln(&self) -> Complex64 {
        Complex64::new(self.log_abs, self.arg)
    }

    pub fn mul(self, o: Self) -> Self {
        if self.is_zero() || o.is_zero() {
            return Self::ZERO;
        }
        Self::new(self.log_abs + o.log_abs, self.arg + o.arg)
    }

    pub fn div(self, o: Self) -> Self {
        if self.is_zero() {
            return Self::ZERO;
        }
        Self::new(self.log_abs - o.log_abs, self.arg - o.arg)
    }

    pub fn mul_c(self, z: Complex64) -> Self {
        self.mul(Self::from_complex(z))
    }

    pub fn add(self, o: Self) -> Self {
        if self.is_zero() {
            return o;
        }
        if o.is_zero() {
            return self;
        }
        let m = self.log_abs.max(o.log_abs);
        let s = self.to_complex_scaled(m) + o.to_complex_scaled(m);
        let r = Self::from_complex(s);
        if r.is_zero() {
            return r;
        }
        Self { log_abs: r.log_abs + m, arg: r.arg }
    }

    pub fn neg(self) -> Self {
        Self::new(self.log_abs, self.arg + std::f64::consts::PI)
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    pub fn conj(self) -> Self {
        Self { log_abs: self.log_abs, arg: -self.arg }
    }

    pub fn abs_log(&self) -> f64 {
        self.log_abs
    }
}

/// Upper bound on log Σ|z_i| given log-moduli.
pub fn log_abs_sum(items: &[LogComplex]) -> f64 {
    items.iter().fold(f64::NEG_INFINITY, |acc, z| log_add_exp(acc, z.log_abs))
}

fn wrap(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    if a > -pi && a <= pi {
        return a;
    }
    let r = (a + pi).rem_euclid(2.0 * pi) - pi;
    if r == -pi { pi } else { r }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_matches_complex() {
        let a = Complex64::new(1.5, -2.0);
        let b = Complex64::new(-0.3, 0.7);
        let la = LogComplex::from_complex(a);
        let lb = LogComplex::from_complex(b);
        assert!((la.mul(lb).to_complex() - a * b).norm() < 1e-14);
        assert!((la.div(lb).to_complex() - a / b).norm() < 1e-13);
        assert!((la.add(lb).to_complex() - (a + b)).norm() < 1e-14);
        assert!((la.sub(lb).to_complex() - (a - b)).norm() < 1e-14);
    }

    #[test]
    fn huge_values_survive() {
        let x = LogComplex::exp(Complex64::new(5000.0, 1.0));
        let y = LogComplex::exp(Complex64::new(5000.0 + 2f64.ln(), 1.0));
        let s = x.add(x);
        assert!((s.log_abs - y.log_abs).abs() < 1e-12);
        assert!((s.arg - 1.0).abs() < 1e-12);
        assert!(x.sub(x).is_zero() || x.sub(x).log_abs < 5000.0 - 30.0);
    }
}
