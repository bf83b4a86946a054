//! Forward-mode automatic differentiation.
//!
//! [`Dual`] carries a value and one tangent component. Duals nest: a
//! `Dual<Dual<f64>>` propagates second derivatives, and every generic routine
//! in this crate is written against [`Real`] so it can be evaluated at any
//! nesting depth.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar arithmetic shared by `f64` and dual numbers.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + 'static
{
    fn cst(v: f64) -> Self;
    /// Underlying `f64` value with all tangents dropped.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn powi(self, n: i32) -> Self {
        let mut acc = Self::one();
        let base = if n < 0 { self.recip() } else { self };
        for _ in 0..n.unsigned_abs() {
            acc *= base;
        }
        acc
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
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
    fn sqrt(self) -> Self {
        f64::sqrt(self)
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
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// A value together with its derivative along one direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// Independent variable: unit tangent.
    pub fn var(re: T) -> Self {
        Dual { re, eps: T::one() }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = o.re.recip();
        let q = self.re * inv;
        Dual::new(q, (self.eps - q * o.eps) * inv)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Real> Add<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Dual::new(self.re + o, self.eps)
    }
}

impl<T: Real> Sub<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Dual::new(self.re - o, self.eps)
    }
}

impl<T: Real> Mul<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        Dual::new(self.re * o, self.eps * o)
    }
}

impl<T: Real> Div<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        Dual::new(self.re / o, self.eps / o)
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl<T: Real> $tr for Dual<T> {
            #[inline]
            fn $m(&mut self, o: Self) {
                *self = *self $op o;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(T::cst(v))
    }
    #[inline]
    fn value(self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s * 2.0))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = x.re * x.re + self.re * self.re;
        Dual::new(self.re.atan2(x.re), (x.re * self.eps - self.re * x.eps) / r2)
    }
}

/// Lifts a plain point to constant duals.
pub fn lift<T: Real, const N: usize>(x: &[T; N]) -> [Dual<T>; N] {
    x.map(Dual::constant)
}

/// Value and derivative of `f` at `x` along `dir`.
pub fn directional<T, F, const N: usize>(f: F, x: &[T; N], dir: &[T; N]) -> (T, T)
where
    T: Real,
    F: Fn(&[Dual<T>; N]) -> Dual<T>,
{
    let mut z = lift(x);
    for i in 0..N {
        z[i].eps = dir[i];
    }
    let y = f(&z);
    (y.re, y.eps)
}

/// Value and gradient of a scalar function.
pub fn gradient<T, F, const N: usize>(f: F, x: &[T; N]) -> (T, [T; N])
where
    T: Real,
    F: Fn(&[Dual<T>; N]) -> Dual<T>,
{
    let mut g = [T::zero(); N];
    let mut val = T::zero();
    for i in 0..N {
        let mut z = lift(x);
        z[i].eps = T::one();
        let y = f(&z);
        val = y.re;
        g[i] = y.eps;
    }
    if N == 0 {
        val = f(&lift(x)).re;
    }
    (val, g)
}

/// Value and Jacobian `J[i][j] = d f_i / d x_j` of a vector function.
pub fn jacobian<T, F, const N: usize, const M: usize>(f: F, x: &[T; N]) -> ([T; M], [[T; N]; M])
where
    T: Real,
    F: Fn(&[Dual<T>; N]) -> [Dual<T>; M],
{
    let mut jac = [[T::zero(); N]; M];
    let mut val = [T::zero(); M];
    for j in 0..N {
        let mut z = lift(x);
        z[j].eps = T::one();
        let y = f(&z);
        for i in 0..M {
            val[i] = y[i].re;
            jac[i][j] = y[i].eps;
        }
    }
    (val, jac)
}

/// Value, gradient and Hessian of a scalar function (nested duals).
pub fn hessian<T, F, const N: usize>(f: F, x: &[T; N]) -> (T, [T; N], [[T; N]; N])
where
    T: Real,
    F: Fn(&[Dual<Dual<T>>; N]) -> Dual<Dual<T>>,
{
    let (g, h) = jacobian(
        |z: &[Dual<T>; N]| {
            let (_, g) = gradient(&f, z);
            g
        },
        x,
    );
    let val = f(&lift(&lift(x))).re.re;
    (val, g, h)
}
