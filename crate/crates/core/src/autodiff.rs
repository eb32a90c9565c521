//! Forward-mode differentiation types.
//!
//! Every derivative in the planner (Jacobians, their time derivatives, cost
//! and constraint gradients) comes from evaluating the same generic kinematic
//! code with one of these scalar types:
//!
//! * [`Dual<N>`] carries an `N`-dimensional first-order tangent.
//! * [`Jet2<T>`] is a truncated Taylor polynomial `c0 + c1 t + c2 t^2` in time.
//!   Pushing the joint path `q + qd t + (u/2) t^2` through forward kinematics
//!   yields `p`, `J qd` and `(J u + Jdot qd) / 2` as the three coefficients.
//!
//! Nesting `Jet2<Dual<N>>` differentiates the acceleration itself.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    /// Primal value (the `t^0`, non-tangent part).
    fn value(&self) -> f64;
    fn sin_cos(self) -> (Self, Self);
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
}

/// First-order dual number with an `N`-wide tangent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// Independent variable `i` with value `re`.
    pub fn variable(re: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Self { re, eps }
    }

    pub fn seeded(re: f64, i: usize, seed: f64) -> Self {
        let mut eps = [0.0; N];
        eps[i] = seed;
        Self { re, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a += *b;
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= *b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)] // product rule
    fn mul(self, rhs: Self) -> Self {
        let eps = std::array::from_fn(|i| self.re * rhs.eps[i] + rhs.re * self.eps[i]);
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for a in self.eps.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re += rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.re *= rhs;
        for a in self.eps.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.re.sin_cos();
        let mut ds = [0.0; N];
        let mut dc = [0.0; N];
        for i in 0..N {
            ds[i] = c * self.eps[i];
            dc[i] = -s * self.eps[i];
        }
        (Dual { re: s, eps: ds }, Dual { re: c, eps: dc })
    }
}

/// Second-order Taylor polynomial in time: `c[0] + c[1] t + c[2] t^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<T> {
    pub c: [T; 3],
}

impl<T: Scalar> Jet2<T> {
    pub fn new(c0: T, c1: T, c2: T) -> Self {
        Self { c: [c0, c1, c2] }
    }

    /// Value of the second time derivative at `t = 0`.
    pub fn second_derivative(&self) -> T {
        self.c[2] * 2.0
    }
}

impl<T: Scalar> Add for Jet2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Jet2::new(
            self.c[0] + rhs.c[0],
            self.c[1] + rhs.c[1],
            self.c[2] + rhs.c[2],
        )
    }
}

impl<T: Scalar> AddAssign for Jet2<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> Sub for Jet2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Jet2::new(
            self.c[0] - rhs.c[0],
            self.c[1] - rhs.c[1],
            self.c[2] - rhs.c[2],
        )
    }
}

impl<T: Scalar> Mul for Jet2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let [a0, a1, a2] = self.c;
        let [b0, b1, b2] = rhs.c;
        Jet2::new(a0 * b0, a0 * b1 + a1 * b0, a0 * b2 + a1 * b1 + a2 * b0)
    }
}

impl<T: Scalar> Neg for Jet2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet2::new(-self.c[0], -self.c[1], -self.c[2])
    }
}

impl<T: Scalar> Add<f64> for Jet2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Jet2::new(self.c[0] + rhs, self.c[1], self.c[2])
    }
}

impl<T: Scalar> Mul<f64> for Jet2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Jet2::new(self.c[0] * rhs, self.c[1] * rhs, self.c[2] * rhs)
    }
}

impl<T: Scalar> Scalar for Jet2<T> {
    #[inline]
    fn constant(v: f64) -> Self {
        Jet2::new(T::constant(v), T::constant(0.0), T::constant(0.0))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.c[0].value()
    }
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        // sin(c0 + h), h = c1 t + c2 t^2, expanded to second order in t.
        let [c0, c1, c2] = self.c;
        let (s, c) = c0.sin_cos();
        let half_sq = c1 * c1 * 0.5;
        let sin = Jet2::new(s, c * c1, c * c2 - s * half_sq);
        let cos = Jet2::new(c, -(s * c1), -(s * c2) - c * half_sq);
        (sin, cos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        let x = Dual::<2>::variable(3.0, 0);
        let y = Dual::<2>::variable(-2.0, 1);
        let f = x * y + x * 3.0;
        assert_eq!(f.re, 3.0);
        assert_eq!(f.eps, [1.0, 3.0]);
    }

    #[test]
    fn dual_sin_cos_derivatives() {
        let x = Dual::<1>::variable(0.7, 0);
        let (s, c) = x.sin_cos();
        assert!((s.eps[0] - 0.7f64.cos()).abs() < 1e-15);
        assert!((c.eps[0] + 0.7f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn jet_sin_matches_second_derivative_of_composition() {
        // f(t) = sin(a + b t + c t^2): f''(0) = 2c cos(a) - b^2 sin(a)
        let (a, b, c) = (0.4, 1.3, -0.8);
        let j = Jet2::new(a, b, c);
        let (s, _) = j.sin_cos();
        let expected = 2.0 * c * a.cos() - b * b * a.sin();
        assert!((s.second_derivative() - expected).abs() < 1e-14);
        assert!((s.c[1] - b * a.cos()).abs() < 1e-15);
    }

    #[test]
    fn jet_cos_matches_second_derivative_of_composition() {
        let (a, b, c) = (-1.1, 0.5, 2.0);
        let (_, co) = Jet2::new(a, b, c).sin_cos();
        let expected = -2.0 * c * a.sin() - b * b * a.cos();
        assert!((co.second_derivative() - expected).abs() < 1e-14);
    }

    #[test]
    fn nested_jet_dual_differentiates_acceleration() {
        // d/da of the t^2 coefficient of sin(a + b t)
        let a = Dual::<1>::variable(0.3, 0);
        let j = Jet2::new(a, Dual::constant(2.0), Dual::constant(0.0));
        let (s, _) = j.sin_cos();
        // c2 = -sin(a) * b^2 / 2, derivative = -cos(a) * 2
        assert!((s.c[2].eps[0] + 0.3f64.cos() * 2.0).abs() < 1e-14);
    }
}
