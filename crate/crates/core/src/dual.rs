//! Forward-mode differentiation scalar.
//!
//! [`Dual`] carries a primal value together with one tangent component and
//! propagates derivatives through every arithmetic operation. Running the
//! analytic gradient kernels of [`crate::nn`] over `Dual` inputs yields exact
//! Hessian-vector products: seed the tangent of one parameter with 1 and the
//! tangent of the resulting gradient is the corresponding Hessian column.
//! This is an analytic computation (no step size, no truncation error), so
//! finite differences stay available as an independent oracle in tests.

use std::cmp::Ordering;
use std::fmt;
use std::iter::{Product, Sum};
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use ndarray::{NdFloat, ScalarOperand};
use num_traits::{Float, Num, NumCast, One, ToPrimitive, Zero};

use crate::scalar::Scalar;

/// A first-order dual number `re + eps·ε` with `ε² = 0`.
///
/// Ordering and equality follow the primal value only; the tangent rides
/// along. Branches in numeric code (ReLU masks, log-sum-exp maxima, line
/// searches) therefore take the same path they would take over `f64`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    #[inline]
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }

    #[inline]
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: 0.0 }
    }

    /// A value with unit tangent, for seeding one differentiation direction.
    #[inline]
    pub fn seeded(re: f64) -> Self {
        Dual { re, eps: 1.0 }
    }
}

impl fmt::Display for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.re)
    }
}

impl fmt::LowerExp for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerExp::fmt(&self.re, f)
    }
}

impl fmt::UpperExp for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::UpperExp::fmt(&self.re, f)
    }
}

impl PartialEq for Dual {
    #[inline]
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl PartialOrd for Dual {
    #[inline]
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        Dual::new(
            self.re / rhs.re,
            (self.eps * rhs.re - self.re * rhs.eps) / (rhs.re * rhs.re),
        )
    }
}

impl Rem for Dual {
    type Output = Dual;
    #[inline]
    fn rem(self, rhs: Self) -> Self {
        // d/dx (x mod y) = 1, d/dy = -trunc(x/y)
        Dual::new(
            self.re % rhs.re,
            self.eps - (self.re / rhs.re).trunc() * rhs.eps,
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

macro_rules! impl_assign {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for Dual {
            #[inline]
            fn $method(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}

impl_assign!(AddAssign, add_assign, +);
impl_assign!(SubAssign, sub_assign, -);
impl_assign!(MulAssign, mul_assign, *);
impl_assign!(DivAssign, div_assign, /);
impl_assign!(RemAssign, rem_assign, %);

impl Zero for Dual {
    #[inline]
    fn zero() -> Self {
        Dual::constant(0.0)
    }
    #[inline]
    fn is_zero(&self) -> bool {
        self.re == 0.0
    }
}

impl One for Dual {
    #[inline]
    fn one() -> Self {
        Dual::constant(1.0)
    }
}

impl Num for Dual {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(str: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(str, radix).map(Dual::constant)
    }
}

impl ToPrimitive for Dual {
    fn to_i64(&self) -> Option<i64> {
        self.re.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.re.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.re)
    }
}

impl NumCast for Dual {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Dual::constant)
    }
}

impl Sum for Dual {
    fn sum<I: Iterator<Item = Dual>>(iter: I) -> Self {
        iter.fold(Dual::zero(), Add::add)
    }
}

impl Product for Dual {
    fn product<I: Iterator<Item = Dual>>(iter: I) -> Self {
        iter.fold(Dual::one(), Mul::mul)
    }
}

impl Float for Dual {
    fn nan() -> Self {
        Dual::constant(f64::NAN)
    }
    fn infinity() -> Self {
        Dual::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Dual::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Dual::constant(-0.0)
    }
    fn min_value() -> Self {
        Dual::constant(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Dual::constant(f64::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Dual::constant(f64::MAX)
    }

    fn is_nan(self) -> bool {
        self.re.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.re.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite()
    }
    fn is_normal(self) -> bool {
        self.re.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.re.classify()
    }

    fn floor(self) -> Self {
        Dual::constant(self.re.floor())
    }
    fn ceil(self) -> Self {
        Dual::constant(self.re.ceil())
    }
    fn round(self) -> Self {
        Dual::constant(self.re.round())
    }
    fn trunc(self) -> Self {
        Dual::constant(self.re.trunc())
    }
    fn fract(self) -> Self {
        Dual::new(self.re.fract(), self.eps)
    }

    fn abs(self) -> Self {
        if self.re >= 0.0 {
            self
        } else {
            -self
        }
    }
    fn signum(self) -> Self {
        Dual::constant(self.re.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.re.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.re.is_sign_negative()
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        Dual::new(
            self.re.mul_add(a.re, b.re),
            self.eps * a.re + self.re * a.eps + b.eps,
        )
    }
    fn recip(self) -> Self {
        Dual::new(self.re.recip(), -self.eps / (self.re * self.re))
    }

    fn powi(self, n: i32) -> Self {
        Dual::new(self.re.powi(n), self.eps * (n as f64) * self.re.powi(n - 1))
    }
    fn powf(self, p: Self) -> Self {
        let v = self.re.powf(p.re);
        // d(a^b) = a^b·(b'·ln a + b·a'/a)
        let d = v * (p.eps * self.re.ln() + p.re * self.eps / self.re);
        Dual::new(v, d)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (2.0 * s))
    }
    fn cbrt(self) -> Self {
        let c = self.re.cbrt();
        Dual::new(c, self.eps / (3.0 * c * c))
    }
    fn hypot(self, other: Self) -> Self {
        let h = self.re.hypot(other.re);
        Dual::new(h, (self.re * self.eps + other.re * other.eps) / h)
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn exp2(self) -> Self {
        let e = self.re.exp2();
        Dual::new(e, self.eps * std::f64::consts::LN_2 * e)
    }
    fn exp_m1(self) -> Self {
        Dual::new(self.re.exp_m1(), self.eps * self.re.exp())
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn ln_1p(self) -> Self {
        Dual::new(self.re.ln_1p(), self.eps / (1.0 + self.re))
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        Dual::new(self.re.log2(), self.eps / (self.re * std::f64::consts::LN_2))
    }
    fn log10(self) -> Self {
        Dual::new(
            self.re.log10(),
            self.eps / (self.re * std::f64::consts::LN_10),
        )
    }

    fn max(self, other: Self) -> Self {
        if self.re.is_nan() {
            other
        } else if other.re.is_nan() || self.re >= other.re {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self.re.is_nan() {
            other
        } else if other.re.is_nan() || self.re <= other.re {
            self
        } else {
            other
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        (self - other).max(Dual::zero())
    }

    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.eps * self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        Dual::new(t, self.eps * (1.0 + t * t))
    }
    fn asin(self) -> Self {
        Dual::new(self.re.asin(), self.eps / (1.0 - self.re * self.re).sqrt())
    }
    fn acos(self) -> Self {
        Dual::new(self.re.acos(), -self.eps / (1.0 - self.re * self.re).sqrt())
    }
    fn atan(self) -> Self {
        Dual::new(self.re.atan(), self.eps / (1.0 + self.re * self.re))
    }
    fn atan2(self, other: Self) -> Self {
        let denom = self.re * self.re + other.re * other.re;
        Dual::new(
            self.re.atan2(other.re),
            (self.eps * other.re - self.re * other.eps) / denom,
        )
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn sinh(self) -> Self {
        Dual::new(self.re.sinh(), self.eps * self.re.cosh())
    }
    fn cosh(self) -> Self {
        Dual::new(self.re.cosh(), self.eps * self.re.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.eps * (1.0 - t * t))
    }
    fn asinh(self) -> Self {
        Dual::new(self.re.asinh(), self.eps / (self.re * self.re + 1.0).sqrt())
    }
    fn acosh(self) -> Self {
        Dual::new(self.re.acosh(), self.eps / (self.re * self.re - 1.0).sqrt())
    }
    fn atanh(self) -> Self {
        Dual::new(self.re.atanh(), self.eps / (1.0 - self.re * self.re))
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.re.integer_decode()
    }
}

impl ScalarOperand for Dual {}
impl NdFloat for Dual {}

impl Scalar for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self.re
    }
}
