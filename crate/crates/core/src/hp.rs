//! Arbitrary-precision reals for sequence solving, and double-double
//! arithmetic for phase reduction at double-precision call sites.

use std::fmt;

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

use crate::error::{Error, Result};

const RM: RoundingMode = RoundingMode::ToEven;

/// Working context: precision in bits plus the constants cache.
pub struct HpCtx {
    pub bits: usize,
    cc: Consts,
}

impl fmt::Debug for HpCtx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HpCtx").field("bits", &self.bits).finish()
    }
}

/// Bits needed for `digits` decimal digits (rounded up to a word).
pub fn digits_to_bits(digits: usize) -> usize {
    let bits = (digits as f64 * std::f64::consts::LOG2_10).ceil() as usize + 8;
    bits.div_ceil(64) * 64
}

impl HpCtx {
    pub fn with_digits(digits: usize) -> Result<Self> {
        Self::with_bits(digits_to_bits(digits))
    }

    pub fn with_bits(bits: usize) -> Result<Self> {
        let cc = Consts::new().map_err(|e| Error::Domain(format!("astro-float constants: {e:?}")))?;
        Ok(Self { bits, cc })
    }

    pub fn num(&self, v: f64) -> Hp {
        Hp(BigFloat::from_f64(v, self.bits))
    }

    pub fn int(&self, v: i64) -> Hp {
        Hp(BigFloat::from_i64(v, self.bits))
    }

    pub fn parse(&mut self, s: &str) -> Result<Hp> {
        let v = BigFloat::parse(s, Radix::Dec, self.bits, RM, &mut self.cc);
        if v.is_nan() {
            return Err(Error::Domain(format!("cannot parse high-precision value {s:?}")));
        }
        Ok(Hp(v))
    }

    pub fn pi(&mut self) -> Hp {
        Hp(self.cc.pi(self.bits, RM))
    }

    pub fn two_pi(&mut self) -> Hp {
        let pi = self.pi();
        self.mul(&pi, &self.num(2.0))
    }

    pub fn add(&self, a: &Hp, b: &Hp) -> Hp {
        Hp(a.0.add(&b.0, self.bits, RM))
    }
    pub fn sub(&self, a: &Hp, b: &Hp) -> Hp {
        Hp(a.0.sub(&b.0, self.bits, RM))
    }
    pub fn mul(&self, a: &Hp, b: &Hp) -> Hp {
        Hp(a.0.mul(&b.0, self.bits, RM))
    }
    pub fn div(&self, a: &Hp, b: &Hp) -> Hp {
        Hp(a.0.div(&b.0, self.bits, RM))
    }
    pub fn exp(&mut self, a: &Hp) -> Hp {
        Hp(a.0.exp(self.bits, RM, &mut self.cc))
    }
    pub fn ln(&mut self, a: &Hp) -> Hp {
        Hp(a.0.ln(self.bits, RM, &mut self.cc))
    }
    pub fn sin(&mut self, a: &Hp) -> Hp {
        Hp(a.0.sin(self.bits, RM, &mut self.cc))
    }
    pub fn cos(&mut self, a: &Hp) -> Hp {
        Hp(a.0.cos(self.bits, RM, &mut self.cc))
    }
    pub fn sqrt(&self, a: &Hp) -> Hp {
        Hp(a.0.sqrt(self.bits, RM))
    }
    /// `a^p` for `a > 0` via `exp(p ln a)`.
    pub fn powf(&mut self, a: &Hp, p: &Hp) -> Hp {
        if p.0.cmp(&BigFloat::from_f64(1.0, 64)) == Some(0) {
            return a.clone();
        }
        let l = self.ln(a);
        let e = self.mul(&l, p);
        self.exp(&e)
    }

    /// `a mod m` reduced to `[0, m)`.
    pub fn rem_euclid(&self, a: &Hp, m: &Hp) -> Hp {
        let q = self.div(a, m).0.floor();
        let qm = q.mul(&m.0, self.bits, RM);
        Hp(a.0.sub(&qm, self.bits, RM))
    }

    /// Signed distance from `a / m` to the nearest integer, i.e.
    /// `a/m - round(a/m)`.
    pub fn frac_to_nearest(&self, a: &Hp, m: &Hp) -> Hp {
        let q = self.div(a, m);
        let half = BigFloat::from_f64(0.5, self.bits);
        let n = q.0.add(&half, self.bits, RM).floor();
        Hp(q.0.sub(&n, self.bits, RM))
    }

    pub fn to_string(&mut self, a: &Hp) -> String {
        a.0.format(Radix::Dec, RM, &mut self.cc)
            .unwrap_or_else(|_| "NaN".to_string())
    }

    pub fn to_f64(&mut self, a: &Hp) -> f64 {
        a.to_f64()
    }

    pub fn to_dd(&mut self, a: &Hp) -> Dd {
        let hi = self.to_f64(a);
        let rest = self.sub(a, &self.num(hi));
        let lo = self.to_f64(&rest);
        Dd::new(hi, lo)
    }

    pub fn cmp(&self, a: &Hp, b: &Hp) -> std::cmp::Ordering {
        match a.0.cmp(&b.0) {
            Some(x) if x < 0 => std::cmp::Ordering::Less,
            Some(0) => std::cmp::Ordering::Equal,
            _ => std::cmp::Ordering::Greater,
        }
    }

    pub fn floor(&self, a: &Hp) -> Hp {
        Hp(a.0.floor())
    }

    pub fn ceil(&self, a: &Hp) -> Hp {
        Hp(a.0.ceil())
    }

    pub fn abs(&self, a: &Hp) -> Hp {
        Hp(a.0.abs())
    }

    /// log(1 + d), by series when |d| is far below the working precision.
    pub fn ln1p(&mut self, d: &Hp) -> Hp {
        if d.to_f64().abs() > 1e-6 {
            let one = self.num(1.0);
            let s = self.add(&one, d);
            return self.ln(&s);
        }
        let tol = 2f64.powi(-(self.bits as i32) + 4) * d.to_f64().abs();
        let mut sum = d.clone();
        let mut pow = d.clone();
        for n in 2..10_000 {
            pow = self.mul(&pow, d);
            let term = self.div(&pow, &self.int(n));
            if n % 2 == 0 {
                sum = self.sub(&sum, &term);
            } else {
                sum = self.add(&sum, &term);
            }
            if term.to_f64().abs() < tol {
                break;
            }
        }
        sum
    }
}

/// `(tau·x) mod 2π` in `[0, 2π)`, evaluated at `bits` precision without a
/// constants cache.
pub fn phase_mod_two_pi(tau: &Hp, x: &Hp, two_pi: &Hp, bits: usize) -> f64 {
    let prod = tau.0.mul(&x.0, bits, RM);
    let q = prod.div(&two_pi.0, bits, RM);
    let fl = q.floor();
    let frac = q.sub(&fl, bits, RM);
    Hp(frac.mul(&two_pi.0, bits, RM)).to_f64()
}

/// A high-precision real.
#[derive(Clone, Debug)]
pub struct Hp(pub BigFloat);

impl Hp {
    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }
    pub fn is_nan(&self) -> bool {
        self.0.is_nan()
    }

    /// Nearest double, read from the top two mantissa words.
    pub fn to_f64(&self) -> f64 {
        if self.0.is_nan() {
            return f64::NAN;
        }
        if self.0.is_zero() {
            return 0.0;
        }
        if self.0.is_inf() {
            return if self.0.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY };
        }
        let Some((words, _, sign, exp, _)) = self.0.as_raw_parts() else {
            return f64::NAN;
        };
        let n = words.len();
        let hi = words[n - 1] as f64;
        let lo = if n >= 2 { words[n - 2] as f64 } else { 0.0 };
        // mantissa is a fraction in [1/2, 1) scaled by 2^exp
        let m = (hi + lo * 2f64.powi(-64)) * 2f64.powi(-64);
        let v = if exp > 1000 {
            m * 2f64.powi(1000) * 2f64.powi(exp - 1000)
        } else if exp < -1000 {
            m * 2f64.powi(-1000) * 2f64.powi(exp + 1000)
        } else {
            m * 2f64.powi(exp)
        };
        if sign == astro_float::Sign::Neg { -v } else { v }
    }
}

/// Unevaluated sum `hi + lo` with |lo| <= ulp(hi)/2.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

/// 2π as a double-double.
pub const TWO_PI_DD: Dd = Dd {
    hi: std::f64::consts::TAU,
    lo: 2.4492935982947064e-16,
};

impl Dd {
    pub fn new(hi: f64, lo: f64) -> Self {
        let (h, l) = two_sum(hi, lo);
        Self { hi: h, lo: l }
    }

    pub fn from_f64(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        Dd::new(s, e)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        Dd::new(p, e)
    }

    pub fn mul_f64(self, v: f64) -> Dd {
        self.mul(Dd::from_f64(v))
    }

    /// Reduce modulo 2π into `[0, 2π)` and round to f64.
    pub fn rem_two_pi(self) -> f64 {
        let q = (self.to_f64() / TWO_PI_DD.hi).floor();
        let r = self.sub(TWO_PI_DD.mul_f64(q));
        let mut v = r.to_f64();
        // One correction step for the quotient estimate.
        if v < 0.0 {
            v += TWO_PI_DD.hi;
        } else if v >= TWO_PI_DD.hi {
            v -= TWO_PI_DD.hi;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hp_round_trip_and_constants() {
        let mut ctx = HpCtx::with_digits(60).unwrap();
        let pi = ctx.pi();
        assert_eq!(ctx.to_f64(&pi), std::f64::consts::PI);
        let e20 = ctx.exp(&ctx.num(20.0));
        let back = ctx.ln(&e20);
        let d = ctx.sub(&back, &ctx.num(20.0));
        assert!(ctx.to_f64(&d).abs() < 1e-55);
    }

    #[test]
    fn dd_phase_reduction_matches_hp() {
        let mut ctx = HpCtx::with_digits(60).unwrap();
        let tau = ctx.exp(&ctx.num(20.0));
        let tau_dd = ctx.to_dd(&tau);
        let x = 17.123456789;
        let prod = ctx.mul(&tau, &ctx.num(x));
        let tp = ctx.two_pi();
        let r = ctx.rem_euclid(&prod, &tp);
        let exact = ctx.to_f64(&r);
        let approx = tau_dd.mul_f64(x).rem_two_pi();
        assert!((exact - approx).abs() < 1e-12, "{exact} vs {approx}");
    }

    #[test]
    fn direct_f64_conversion_matches_decimal() {
        let mut ctx = HpCtx::with_digits(80).unwrap();
        for &v in &[1.0, -3.5, 1e-300, 6.02e23, -2.5e300, 0.1] {
            assert_eq!(ctx.num(v).to_f64(), v);
        }
        let e = ctx.exp(&ctx.num(318.0));
        let s: f64 = ctx.to_string(&e).parse().unwrap();
        assert!((e.to_f64() / s - 1.0).abs() < 2e-16);
        let third = ctx.div(&ctx.num(1.0), &ctx.num(3.0));
        assert_eq!(third.to_f64(), 1.0 / 3.0);
    }

    #[test]
    fn frac_to_nearest_is_signed() {
        let ctx = HpCtx::with_digits(40).unwrap();
        let f = ctx.frac_to_nearest(&ctx.num(7.25), &ctx.num(1.0));
        assert!((f.0.cmp(&BigFloat::from_f64(0.25, 64))) == Some(0));
        let g = ctx.frac_to_nearest(&ctx.num(6.75), &ctx.num(1.0));
        assert!((g.0.cmp(&BigFloat::from_f64(-0.25, 64))) == Some(0));
    }
}
