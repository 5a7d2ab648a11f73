use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Forward-mode number carrying one first derivative per seeded direction.
///
/// Every `Dual` flowing through one expression must carry the same number of
/// directions; mixing lengths is a caller bug (debug-asserted).
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: Vec<f64>,
}

impl Dual {
    /// Constant with respect to all `dirs` seeded directions.
    pub fn constant(value: f64, dirs: usize) -> Self {
        Dual { value, deriv: vec![0.0; dirs] }
    }

    /// Variable number `k` of `dirs`: unit seed in direction `k`.
    pub fn seeded(value: f64, k: usize, dirs: usize) -> Self {
        let mut deriv = vec![0.0; dirs];
        deriv[k] = 1.0;
        Dual { value, deriv }
    }

    pub fn dirs(&self) -> usize {
        self.deriv.len()
    }

    /// Chain rule: apply a univariate primitive with value `v` and slope `dv`.
    fn chain(&self, v: f64, dv: f64) -> Dual {
        Dual { value: v, deriv: self.deriv.iter().map(|d| dv * d).collect() }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        debug_assert_eq!(self.dirs(), rhs.dirs());
        Dual {
            value: self.value + rhs.value,
            deriv: self.deriv.iter().zip(&rhs.deriv).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        debug_assert_eq!(self.dirs(), rhs.dirs());
        Dual {
            value: self.value - rhs.value,
            deriv: self.deriv.iter().zip(&rhs.deriv).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        debug_assert_eq!(self.dirs(), rhs.dirs());
        Dual {
            value: self.value * rhs.value,
            deriv: self
                .deriv
                .iter()
                .zip(&rhs.deriv)
                .map(|(a, b)| self.value * b + a * rhs.value)
                .collect(),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        debug_assert_eq!(self.dirs(), rhs.dirs());
        let inv = 1.0 / rhs.value;
        let value = self.value * inv;
        Dual {
            value,
            deriv: self
                .deriv
                .iter()
                .zip(&rhs.deriv)
                .map(|(a, b)| (a - value * b) * inv)
                .collect(),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { value: -self.value, deriv: self.deriv.iter().map(|d| -d).collect() }
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: f64) -> Dual {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        Dual { value: self.value * rhs, deriv: self.deriv.iter().map(|d| d * rhs).collect() }
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        self * (1.0 / rhs)
    }
}

impl Scalar for Dual {
    fn value(&self) -> f64 {
        self.value
    }

    fn promote(&self, v: f64) -> Self {
        Dual::constant(v, self.dirs())
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    fn ln(&self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }

    fn sin(&self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    fn cos(&self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    fn sqrt(&self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r)
    }

    fn tanh(&self) -> Self {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }

    fn powi(&self, n: i32) -> Self {
        let dv = f64::from(n) * self.value.powi(n - 1);
        self.chain(self.value.powi(n), dv)
    }

    fn powf(&self, e: f64) -> Self {
        self.chain(self.value.powf(e), e * self.value.powf(e - 1.0))
    }

    fn max_const(&self, c: f64) -> Self {
        if self.value > c {
            self.clone()
        } else {
            Dual::constant(c, self.dirs())
        }
    }
}
