use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number type that problem definitions are generic over, so one definition
/// serves plain evaluation (`f64`), first derivatives ([`super::Dual`]), and
/// second derivatives ([`super::HyperDual`]).
///
/// Constants are made with [`Scalar::promote`] from any value already in the
/// expression (carriers need to know how many directions are seeded), or with
/// the mixed `f64` operator overloads.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Plain value, derivative payload dropped.
    fn value(&self) -> f64;

    /// Constant with the same derivative shape as `self`.
    fn promote(&self, v: f64) -> Self;

    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn tanh(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, e: f64) -> Self;

    /// `max(self, c)` with subderivative 0 at the kink.
    fn max_const(&self, c: f64) -> Self;

    fn sq(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }

    fn promote(&self, v: f64) -> Self {
        v
    }

    fn exp(&self) -> Self {
        f64::exp(*self)
    }

    fn ln(&self) -> Self {
        f64::ln(*self)
    }

    fn sin(&self) -> Self {
        f64::sin(*self)
    }

    fn cos(&self) -> Self {
        f64::cos(*self)
    }

    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }

    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }

    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }

    fn powf(&self, e: f64) -> Self {
        f64::powf(*self, e)
    }

    fn max_const(&self, c: f64) -> Self {
        if *self > c {
            *self
        } else {
            c
        }
    }
}
