//! Double-double arithmetic (~106-bit significand) and a small scalar trait
//! so reference computations can run in either `f64` or extended precision.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} + {:e}", self.hi, self.lo)
    }
}

const LN2: DoubleDouble = DoubleDouble {
    hi: 6.931471805599452862e-1,
    lo: 2.319046813846299558e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> DoubleDouble {
    let s = a + b;
    DoubleDouble { hi: s, lo: b - (s - a) }
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        quick_two_sum(p, e + self.lo * b)
    }

    /// Exact scaling by a power of two.
    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    /// `e^r − 1` for `|r| ≤ ln2 / 2`, plus the binade `k` such that
    /// `e^x = (1 + s)·2^k`.
    fn exp_parts(self) -> (Self, i32) {
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        let mut term = r;
        let mut s = r;
        let mut i = 2.0;
        while term.hi.abs() > 1e-36 * s.hi.abs().max(1e-300) {
            term = term * r / Self::new(i);
            s += term;
            i += 1.0;
        }
        for _ in 0..10 {
            s = s.mul_f64(2.0) + s * s;
        }
        (s, k as i32)
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        let (s, k) = self.exp_parts();
        (s + Self::ONE).ldexp(k)
    }

    pub fn exp_m1(self) -> Self {
        if self.hi.abs() > 1.0 {
            return self.exp() - Self::ONE;
        }
        let (s, k) = self.exp_parts();
        if k == 0 {
            s
        } else {
            (s + Self::ONE).ldexp(k) - Self::ONE
        }
    }

    /// Natural logarithm by Newton refinement of the `f64` estimate.
    pub fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        let mut y = Self::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::ONE;
        }
        y
    }

    pub fn tanh(self) -> Self {
        let a = self.abs();
        let t = if a.hi < 0.5 {
            let e = (a + a).exp_m1();
            e / (e + Self::new(2.0))
        } else {
            Self::ONE - Self::new(2.0) / ((a + a).exp() + Self::ONE)
        };
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self::new(v)
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

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let r = quick_two_sum(s1, s2 + t1);
        quick_two_sum(r.hi, r.lo + t2)
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
        quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi))
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
        quick_two_sum(q1, q2) + Self::new(q3)
    }
}

impl AddAssign for DoubleDouble {
    fn add_assign(&mut self, b: Self) {
        *self = *self + b;
    }
}

/// The operations reference computations need, over `f64` or [`DoubleDouble`].
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

impl Scalar for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        Self::new(v)
    }
    fn to_f64(self) -> f64 {
        DoubleDouble::to_f64(self)
    }
    fn exp(self) -> Self {
        DoubleDouble::exp(self)
    }
    fn ln(self) -> Self {
        DoubleDouble::ln(self)
    }
    fn tanh(self) -> Self {
        DoubleDouble::tanh(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Dd = DoubleDouble;

    fn close(a: Dd, b: Dd, rel: f64) -> bool {
        let d = (a - b).abs().to_f64();
        d <= rel * b.abs().to_f64().max(1e-300)
    }

    #[test]
    fn euler_number_to_full_precision() {
        // e = 2.71828182845904523536028747135266...
        let e = Dd {
            hi: 2.718281828459045,
            lo: 1.4456468917292502e-16,
        };
        assert!(close(Dd::ONE.exp(), e, 1e-31));
    }

    #[test]
    fn arithmetic_beats_f64() {
        let third = Dd::ONE / Dd::new(3.0);
        assert!(close(third * Dd::new(3.0), Dd::ONE, 1e-31));
        // 1 + 1e-20 is not representable in f64.
        let x = Dd::new(1.0) + Dd::new(1e-20);
        assert_eq!((x - Dd::ONE).to_f64(), 1e-20);
    }

    #[test]
    fn exp_ln_identities() {
        for &v in &[-20.0, -3.7, -0.4, -1e-7, 1e-9, 0.3, 1.0, 2.5, 11.0, 50.0] {
            let x = Dd::new(v) / Dd::new(3.0);
            assert!(close(x.exp() * (-x).exp(), Dd::ONE, 1e-30), "{v}");
            let err = (x.exp().ln() - x).abs().to_f64();
            assert!(err <= 1e-30 * x.abs().to_f64().max(1.0), "{v}");
            let h = x / Dd::new(2.0);
            assert!(close(h.exp() * h.exp(), x.exp(), 1e-30), "{v}");
        }
        assert!(close(Dd::new(2.0).ln(), LN2, 1e-31));
    }

    #[test]
    fn exp_m1_keeps_relative_precision_near_zero() {
        let x = Dd::new(1e-12) / Dd::new(7.0);
        let series = x + x * x / Dd::new(2.0) + x * x * x / Dd::new(6.0);
        assert!(close(x.exp_m1(), series, 1e-30));
    }

    #[test]
    fn tanh_double_angle() {
        for &v in &[-4.0, -0.7, -0.1, 1e-8, 0.2, 0.45, 0.9, 3.0] {
            let x = Dd::new(v) / Dd::new(3.0);
            let t = x.tanh();
            let t2 = (x + x).tanh();
            assert!(close(Dd::new(2.0) * t / (Dd::ONE + t * t), t2, 1e-29), "{v}");
            assert!((t.to_f64() - (v / 3.0).tanh()).abs() < 1e-15);
        }
    }
}
