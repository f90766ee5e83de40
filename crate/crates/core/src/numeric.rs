//! Extended-precision helpers.
//!
//! Alternating subset sums cancel by many orders of magnitude, so plain
//! binary64 accumulation is not enough for the exact oracles. This module
//! provides error-free transforms, a compensated accumulator and a small
//! double-double type with just the operations the oracles need.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Error-free sum: `a + b = s + e` exactly.
#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free product via fused multiply-add: `a * b = p + e` exactly.
#[inline]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

/// Compensated (Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    /// Adds `a * b` without rounding the product first.
    #[inline]
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, e) = two_prod(a, b);
        self.add(p);
        self.lo += e;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.hi);
        self.lo += other.lo;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

impl std::iter::Sum<f64> for CompensatedSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`; about 106 bits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };
    pub const ONE: DoubleDouble = DoubleDouble { hi: 1.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    /// Exact for every integer below 2^106.
    pub fn from_u128(n: u128) -> Self {
        let hi = n as f64;
        // `hi` is n rounded; the remainder fits in 53 bits when n < 2^106.
        let rem = n as i128 - hi as i128;
        let (s, e) = two_sum(hi, rem as f64);
        Self { hi: s, lo: e }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (s, e) = two_sum(hi, lo);
        Self { hi: s, lo: e }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::renorm(p, e + self.lo * b)
    }

    pub fn div_f64(self, b: f64) -> Self {
        self / DoubleDouble::from_f64(b)
    }

    /// Natural logarithm of a positive integer.
    ///
    /// Reduces `k = 2^e * r` with `r` in [1/sqrt2, sqrt2] and sums the
    /// `atanh` series of `(r - 1) / (r + 1)`, which is at most 0.172.
    pub fn ln_u64(k: u64) -> Self {
        assert!(k > 0, "logarithm of zero");
        if k == 1 {
            return Self::ZERO;
        }
        let e = (k as f64).log2().round() as i32;
        let scale = 2f64.powi(-e);
        // Power-of-two scaling is exact.
        let kk = DoubleDouble::from_u128(k as u128);
        let r = DoubleDouble {
            hi: kk.hi * scale,
            lo: kk.lo * scale,
        };
        let z = (r - Self::ONE) / (r + Self::ONE);
        let z2 = z * z;
        let mut term = z;
        let mut acc = z;
        let mut j = 1u32;
        loop {
            term = term * z2;
            let contrib = term.div_f64((2 * j + 1) as f64);
            acc = acc + contrib;
            if contrib.hi.abs() < 1e-34 * acc.hi.abs() {
                break;
            }
            j += 1;
            if j > 200 {
                break;
            }
        }
        LN2.mul_f64(e as f64) + acc.mul_f64(2.0)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        Self::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (s, e) = two_sum(q1, q2);
        Self::renorm(s, e + q3)
    }
}
