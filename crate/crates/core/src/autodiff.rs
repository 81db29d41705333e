//! Scalar abstraction shared by plain `f64` evaluation and forward-mode duals.
//!
//! Plant dynamics and stage costs are written once against [`Real`]. Rolling
//! them out with `f64` gives costs; rolling one step out with [`Dual<K>`]
//! seeded on `(state, control)` gives that step's Jacobians, which the
//! adjoint pass in `nmpc::rollout` chains backwards into a plan gradient.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Send
    + Sync
{
    fn cst(v: f64) -> Self;
    fn re(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn atan(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    fn sq(self) -> Self {
        self * self
    }

    fn abs(self) -> Self {
        if self.re() < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Clamp by value; the derivative is zero where the bound is active.
    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        if self.re() < lo {
            Self::cst(lo)
        } else if self.re() > hi {
            Self::cst(hi)
        } else {
            self
        }
    }

    fn max_cst(self, lo: f64) -> Self {
        if self.re() < lo {
            Self::cst(lo)
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Value plus `K` directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const K: usize> {
    pub v: f64,
    pub d: [f64; K],
}

impl<const K: usize> Dual<K> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; K] }
    }

    /// Independent variable number `i`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; K];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dv;
        }
        Self { v, d }
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for (a, b) in self.d.iter_mut().zip(o.d) {
            *a += b;
        }
        self
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for (a, b) in self.d.iter_mut().zip(o.d) {
            *a -= b;
        }
        self
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; K];
        for ((r, a), b) in d.iter_mut().zip(self.d).zip(o.d) {
            *r = a * o.v + b * self.v;
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; K];
        for ((r, a), b) in d.iter_mut().zip(self.d).zip(o.d) {
            *r = (a - v * b) * inv;
        }
        Self { v, d }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const K: usize> AddAssign for Dual<K> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const K: usize> SubAssign for Dual<K> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const K: usize> MulAssign for Dual<K> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const K: usize> Add<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.v += o;
        self
    }
}

impl<const K: usize> Sub<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.v -= o;
        self
    }
}

impl<const K: usize> Mul<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl<const K: usize> Div<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl<const K: usize> Real for Dual<K> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn re(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn tan(self) -> Self {
        let t = self.v.tan();
        self.chain(t, 1.0 + t * t)
    }
    fn atan(self) -> Self {
        self.chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, 1.0 - t * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn expr<T: Real>(x: T) -> T {
        (x.sin() * x.tan() + x.cos().sq()) / (x.sqrt() + 1.0) - x.atan() * 3.0 + x.tanh()
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for &x in &[0.1, 0.4, 0.9, 1.3] {
            let d = expr(Dual::<1>::var(x, 0));
            assert!((d.v - expr(x)).abs() < 1e-15);
            assert!((d.d[0] - fd(expr::<f64>, x)).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn partials_are_independent() {
        let a = Dual::<2>::var(2.0, 0);
        let b = Dual::<2>::var(3.0, 1);
        let p = a * b / (a - b * 0.5);
        // p = ab / (a - b/2); at (2,3): dp/da = -(b^2/2)/(a-b/2)^2, dp/db = a^2/(a-b/2)^2
        assert!((p.d[0] - (-4.5 / 0.25)).abs() < 1e-12);
        assert!((p.d[1] - (4.0 / 0.25)).abs() < 1e-12);
    }

    #[test]
    fn clamp_kills_derivative_outside() {
        let x = Dual::<1>::var(2.0, 0);
        assert_eq!(x.clamp_to(-1.0, 1.0).d[0], 0.0);
        assert_eq!(x.clamp_to(-3.0, 3.0).d[0], 1.0);
    }
}
