//! Forward-mode dual numbers and the scalar abstraction the physics cores
//! are written against.
//!
//! The single-track core runs twice under two instantiations of [`Scalar`]:
//! plain `f64` for prediction, and [`Dual`] with one tangent slot per
//! identified physical parameter during training. One dual pass yields the
//! full Jacobian of the predicted delta with respect to the guarded
//! parameters, which the encoder backward pass then consumes.

use core::ops::{Add, Div, Mul, Neg, Sub};

/// Plain `f64` trig routed through one symbol. Inside this module neither
/// [`Scalar`] nor `num_traits::Float` is in scope at call sites elsewhere,
/// so both std (inherent methods) and no_std (libm-backed trait) builds
/// resolve unambiguously.
pub(crate) mod real {
    #[cfg(not(feature = "std"))]
    use num_traits::Float;

    #[inline]
    pub fn sin(x: f64) -> f64 {
        x.sin()
    }

    #[inline]
    pub fn cos(x: f64) -> f64 {
        x.cos()
    }

    #[inline]
    pub fn atan(x: f64) -> f64 {
        x.atan()
    }

    #[inline]
    pub fn atan2(y: f64, x: f64) -> f64 {
        y.atan2(x)
    }
}

/// Arithmetic surface the physics cores need. Branching operations
/// (`max_val`, `sign0`, the standstill clamp) branch on the *value* part;
/// tangents follow the chosen branch.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan(self) -> Self;
    /// `atan2(self, x)` with `self` as the ordinate.
    fn atan2(self, x: Self) -> Self;
    fn abs(self) -> Self;
    /// Value-branching maximum.
    fn max_val(self, other: Self) -> Self;
    /// Sign with `sign(0) = 0`; derivative zero everywhere.
    fn sign0(self) -> Self;
    /// Multiplication by a plain constant.
    fn scale(self, k: f64) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }

    fn value(self) -> f64 {
        self
    }

    fn sin(self) -> Self {
        real::sin(self)
    }

    fn cos(self) -> Self {
        real::cos(self)
    }

    fn atan(self) -> Self {
        real::atan(self)
    }

    fn atan2(self, x: Self) -> Self {
        real::atan2(self, x)
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }

    fn max_val(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    fn sign0(self) -> Self {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// `v + Σ d_i ε_i` with `P` independent infinitesimals.
#[derive(Debug, Clone, Copy)]
pub struct Dual<const P: usize> {
    pub v: f64,
    pub d: [f64; P],
}

impl<const P: usize> Dual<P> {
    /// A variable seeded with tangent 1 in slot `i`.
    pub fn seeded(v: f64, i: usize) -> Self {
        let mut d = [0.0; P];
        d[i] = 1.0;
        Self { v, d }
    }
}

impl<const P: usize> Add for Dual<P> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: core::array::from_fn(|i| self.d[i] + o.d[i]) }
    }
}

impl<const P: usize> Sub for Dual<P> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: core::array::from_fn(|i| self.d[i] - o.d[i]) }
    }
}

impl<const P: usize> Mul for Dual<P> {
    type Output = Self;
    // Product rule: (fg)' = f'g + g'f.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: core::array::from_fn(|i| self.d[i] * o.v + o.d[i] * self.v) }
    }
}

impl<const P: usize> Div for Dual<P> {
    type Output = Self;
    // Quotient rule: (f/g)' = (f' - (f/g) g') / g.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Self { v: q, d: core::array::from_fn(|i| (self.d[i] - q * o.d[i]) / o.v) }
    }
}

impl<const P: usize> Neg for Dual<P> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: core::array::from_fn(|i| -self.d[i]) }
    }
}

impl<const P: usize> Scalar for Dual<P> {
    fn constant(v: f64) -> Self {
        Self { v, d: [0.0; P] }
    }

    fn value(self) -> f64 {
        self.v
    }

    fn sin(self) -> Self {
        let c = real::cos(self.v);
        Self { v: real::sin(self.v), d: core::array::from_fn(|i| c * self.d[i]) }
    }

    fn cos(self) -> Self {
        let s = -real::sin(self.v);
        Self { v: real::cos(self.v), d: core::array::from_fn(|i| s * self.d[i]) }
    }

    fn atan(self) -> Self {
        let g = 1.0 / (1.0 + self.v * self.v);
        Self { v: real::atan(self.v), d: core::array::from_fn(|i| g * self.d[i]) }
    }

    fn atan2(self, x: Self) -> Self {
        let den = x.v * x.v + self.v * self.v;
        Self {
            v: real::atan2(self.v, x.v),
            d: core::array::from_fn(|i| (x.v * self.d[i] - self.v * x.d[i]) / den),
        }
    }

    fn abs(self) -> Self {
        let s = Scalar::sign0(self.v).value();
        Self { v: self.v.abs(), d: core::array::from_fn(|i| s * self.d[i]) }
    }

    fn max_val(self, other: Self) -> Self {
        if self.v >= other.v {
            self
        } else {
            other
        }
    }

    fn sign0(self) -> Self {
        Self::constant(Scalar::sign0(self.v))
    }

    fn scale(self, k: f64) -> Self {
        Self { v: self.v * k, d: core::array::from_fn(|i| self.d[i] * k) }
    }
}
