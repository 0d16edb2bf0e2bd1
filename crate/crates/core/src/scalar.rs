//! Scalar abstraction shared by the evaluator, the integrators and the tuner.
//!
//! Everything numeric in the crate is generic over [`Scalar`] so that the
//! same code path runs on plain `f64` and on forward-mode [`Dual`] numbers.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// A real-like number usable by the evaluator and the integrators.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64(v: f64) -> Self;
    /// The primal (real) part.
    fn value(&self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// `|x|`, with derivative 0 at `x == 0`.
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, e: Self) -> Self;
    fn recip(self) -> Self {
        Self::one() / self
    }

    fn is_finite(&self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Forward-mode dual number with `N` tangent directions.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub const fn constant(re: f64) -> Self {
        Dual { re, eps: [0.0; N] }
    }

    /// A variable seeded along tangent direction `dir`.
    pub fn variable(re: f64, dir: usize) -> Self {
        let mut eps = [0.0; N];
        eps[dir] = 1.0;
        Dual { re, eps }
    }

    pub fn new(re: f64, eps: [f64; N]) -> Self {
        Dual { re, eps }
    }

    /// Applies the chain rule for a unary function with value `f` and
    /// derivative `df` at `self.re`.
    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= df;
        }
        Dual { re: f, eps }
    }
}

impl<const N: usize> fmt::Debug for Dual<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({:?}, {:?})", self.re, self.eps)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a += b;
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= b;
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual { re: self.re * rhs.re, eps }
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Dual { re: -self.re, eps }
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn scale(mut self, k: f64) -> Self {
        self.re *= k;
        for e in self.eps.iter_mut() {
            *e *= k;
        }
        self
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn abs(self) -> Self {
        let d = if self.re > 0.0 {
            1.0
        } else if self.re < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.re.abs(), d)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(1.0);
        }
        self.chain(self.re.powi(n), n as f64 * self.re.powi(n - 1))
    }
    fn powf(self, e: Self) -> Self {
        let f = self.re.powf(e.re);
        let mut eps = [0.0; N];
        // d(a^b) = b a^(b-1) da + a^b ln(a) db; the second term only when b varies.
        let da = if e.re == 0.0 { 0.0 } else { e.re * self.re.powf(e.re - 1.0) };
        let varies = e.eps.iter().any(|&x| x != 0.0);
        let db = if varies { f * self.re.ln() } else { 0.0 };
        for i in 0..N {
            eps[i] = da * self.eps[i] + if varies { db * e.eps[i] } else { 0.0 };
        }
        Dual { re: f, eps }
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.iter().all(|e| e.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::<1>::new(2.0, [1.0]);
        let y = Dual::<1>::new(3.0, [0.0]);
        let z = x * y;
        assert_eq!(z.re, 6.0);
        assert_eq!(z.eps[0], 3.0);
    }

    #[test]
    fn quotient_and_transcendentals() {
        let x = Dual::<1>::variable(0.7, 0);
        let f = (x.sin() * x.exp()) / (x.sqrt() + Dual::constant(1.0));
        let g = |v: f64| (v.sin() * v.exp()) / (v.sqrt() + 1.0);
        let h = 1e-6;
        let fd = (g(0.7 + h) - g(0.7 - h)) / (2.0 * h);
        assert!((f.eps[0] - fd).abs() < 1e-8);
    }

    #[test]
    fn abs_at_zero_has_zero_slope() {
        let x = Dual::<1>::variable(0.0, 0);
        assert_eq!(x.abs().eps[0], 0.0);
    }

    #[test]
    fn powf_constant_exponent_of_negative_base() {
        let x = Dual::<1>::variable(-2.0, 0);
        let y = x.powf(Dual::constant(2.0));
        assert_eq!(y.re, 4.0);
        assert_eq!(y.eps[0], -4.0);
    }
}
