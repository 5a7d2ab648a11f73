use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Forward-mode number carrying two first derivatives and the mixed second
/// derivative, enough for one Hessian entry per evaluation.
///
/// The `d12` update of every primitive is written so the `(d1, d2)` roles are
/// algebraically and floating-point symmetric: transposing the seeds
/// reproduces `d12` bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl HyperDual {
    pub fn constant(value: f64) -> Self {
        HyperDual { value, d1: 0.0, d2: 0.0, d12: 0.0 }
    }

    /// Chain rule for a univariate primitive with first and second derivative
    /// `dv`, `ddv` at `self.value`.
    fn chain(&self, v: f64, dv: f64, ddv: f64) -> HyperDual {
        HyperDual {
            value: v,
            d1: dv * self.d1,
            d2: dv * self.d2,
            d12: dv * self.d12 + ddv * (self.d1 * self.d2),
        }
    }

    fn recip(&self) -> HyperDual {
        let inv = 1.0 / self.value;
        self.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

impl Add for HyperDual {
    type Output = HyperDual;
    fn add(self, rhs: HyperDual) -> HyperDual {
        HyperDual {
            value: self.value + rhs.value,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
            d12: self.d12 + rhs.d12,
        }
    }
}

impl Sub for HyperDual {
    type Output = HyperDual;
    fn sub(self, rhs: HyperDual) -> HyperDual {
        HyperDual {
            value: self.value - rhs.value,
            d1: self.d1 - rhs.d1,
            d2: self.d2 - rhs.d2,
            d12: self.d12 - rhs.d12,
        }
    }
}

impl Mul for HyperDual {
    type Output = HyperDual;
    fn mul(self, rhs: HyperDual) -> HyperDual {
        HyperDual {
            value: self.value * rhs.value,
            d1: self.value * rhs.d1 + self.d1 * rhs.value,
            d2: self.value * rhs.d2 + self.d2 * rhs.value,
            d12: self.value * rhs.d12
                + self.d12 * rhs.value
                + (self.d1 * rhs.d2 + self.d2 * rhs.d1),
        }
    }
}

impl Div for HyperDual {
    type Output = HyperDual;
    fn div(self, rhs: HyperDual) -> HyperDual {
        self * rhs.recip()
    }
}

impl Neg for HyperDual {
    type Output = HyperDual;
    fn neg(self) -> HyperDual {
        HyperDual { value: -self.value, d1: -self.d1, d2: -self.d2, d12: -self.d12 }
    }
}

impl Add<f64> for HyperDual {
    type Output = HyperDual;
    fn add(mut self, rhs: f64) -> HyperDual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for HyperDual {
    type Output = HyperDual;
    fn sub(mut self, rhs: f64) -> HyperDual {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for HyperDual {
    type Output = HyperDual;
    fn mul(self, rhs: f64) -> HyperDual {
        HyperDual {
            value: self.value * rhs,
            d1: self.d1 * rhs,
            d2: self.d2 * rhs,
            d12: self.d12 * rhs,
        }
    }
}

impl Div<f64> for HyperDual {
    type Output = HyperDual;
    fn div(self, rhs: f64) -> HyperDual {
        self * (1.0 / rhs)
    }
}

impl Scalar for HyperDual {
    fn value(&self) -> f64 {
        self.value
    }

    fn promote(&self, v: f64) -> Self {
        HyperDual::constant(v)
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    fn ln(&self) -> Self {
        let inv = 1.0 / self.value;
        self.chain(self.value.ln(), inv, -inv * inv)
    }

    fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    fn sqrt(&self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.value))
    }

    fn tanh(&self) -> Self {
        let t = self.value.tanh();
        let sech2 = 1.0 - t * t;
        self.chain(t, sech2, -2.0 * t * sech2)
    }

    fn powi(&self, n: i32) -> Self {
        let nf = f64::from(n);
        self.chain(
            self.value.powi(n),
            nf * self.value.powi(n - 1),
            nf * (nf - 1.0) * self.value.powi(n - 2),
        )
    }

    fn powf(&self, e: f64) -> Self {
        self.chain(
            self.value.powf(e),
            e * self.value.powf(e - 1.0),
            e * (e - 1.0) * self.value.powf(e - 2.0),
        )
    }

    fn max_const(&self, c: f64) -> Self {
        if self.value > c {
            *self
        } else {
            HyperDual::constant(c)
        }
    }
}
