use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{ParametricProblem, ProblemError};
use crate::autodiff::Scalar;

/// Risk-capped portfolio selection.
///
/// `max_x mu' x` subject to `x' Sigma x <= sigma_max^2`, `1' x <= B`,
/// `x >= 0`, posed to the minimizer as `min -mu' x`. The parameter is
/// `p = (mu, sigma_max)`, so `d = n + 1`. The solver sees the quadratic risk
/// form; the projection layer uses the factored form `||L' x|| <= sigma_max`
/// with `Sigma = L L'` (both classify feasibility identically).
#[derive(Debug, Clone)]
pub struct Markowitz {
    n: usize,
    name: String,
    sigma: Vec<Vec<f64>>,
    sigma_half: Vec<Vec<f64>>,
    budget: f64,
    mu_box: (f64, f64),
    sigma_max_box: (f64, f64),
}

/// Instance data for the `markowitz-N` registry family is derived from this
/// fixed stream so every run sees the same covariance.
const INSTANCE_SEED: u64 = 0x706f7274;

impl Markowitz {
    pub fn new(
        sigma: Vec<Vec<f64>>,
        budget: f64,
        mu_box: (f64, f64),
        sigma_max_box: (f64, f64),
    ) -> Result<Self, ProblemError> {
        let n = sigma.len();
        if n == 0 || sigma.iter().any(|row| row.len() != n) {
            return Err(ProblemError::BadDimension("covariance must be square".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| sigma[i][j]);
        let chol = m.cholesky().ok_or(ProblemError::NotPositiveDefinite)?;
        let l = chol.l();
        let sigma_half = (0..n).map(|i| (0..n).map(|j| l[(i, j)]).collect()).collect();
        let name = format!("markowitz-{n}");
        Ok(Markowitz { n, name, sigma, sigma_half, budget, mu_box, sigma_max_box })
    }

    /// Deterministic n-asset instance: volatilities drawn once from a fixed
    /// stream, correlations decaying as 0.35^|i-j|.
    pub fn seeded(n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(INSTANCE_SEED ^ n as u64);
        let vols: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.30)).collect();
        let rho: f64 = 0.35;
        let sigma: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| rho.powi((i as i32 - j as i32).abs()) * vols[i] * vols[j])
                    .collect()
            })
            .collect();
        Markowitz::new(sigma, 1.0, (0.01, 0.25), (0.05, 0.30))
            .expect("decaying correlation with positive vols is positive definite")
    }

    pub fn num_assets(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    /// Lower-triangular L with Sigma = L L'.
    pub fn sigma_half(&self) -> &[Vec<f64>] {
        &self.sigma_half
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }
}

impl ParametricProblem for Markowitz {
    fn name(&self) -> &str {
        &self.name
    }
    fn num_vars(&self) -> usize {
        self.n
    }
    fn num_params(&self) -> usize {
        self.n + 1
    }
    fn num_eq(&self) -> usize {
        0
    }
    /// Risk cap, then budget.
    fn num_ineq(&self) -> usize {
        2
    }

    fn objective<S: Scalar>(&self, x: &[S], p: &[S]) -> S {
        let mut acc = x[0].promote(0.0);
        for i in 0..self.n {
            acc = acc + x[i].clone() * p[i].clone();
        }
        -acc
    }

    fn eq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
        Vec::new()
    }

    fn ineq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S> {
        let sigma_max = &p[self.n];
        let mut risk = x[0].promote(0.0);
        for i in 0..self.n {
            for j in 0..self.n {
                risk = risk + x[i].clone() * x[j].clone() * self.sigma[i][j];
            }
        }
        let mut total = x[0].promote(0.0);
        for xi in x.iter().take(self.n) {
            total = total + xi.clone();
        }
        vec![risk - sigma_max.sq(), total - self.budget]
    }

    fn lower_bounds(&self) -> Vec<f64> {
        vec![0.0; self.n]
    }

    fn upper_bounds(&self) -> Vec<f64> {
        vec![f64::INFINITY; self.n]
    }

    fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.mu_box.0; self.n];
        let mut hi = vec![self.mu_box.1; self.n];
        lo.push(self.sigma_max_box.0);
        hi.push(self.sigma_max_box.1);
        (lo, hi)
    }
}
