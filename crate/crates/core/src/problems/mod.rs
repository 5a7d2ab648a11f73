//! Parametric optimization problems.
//!
//! A problem is `min_x f(x; p)` subject to `cE(x; p) = 0`, `cI(x; p) <= 0`,
//! and box bounds `lb <= x <= ub`, with the parameter `p` ranging over a box.
//! Definitions are generic over [`Scalar`] so the same code yields values,
//! first derivatives, and second derivatives.
//!
//! Bound constraints are folded into the inequality list (`cI`, then finite
//! lower bounds `lb_i - x_i`, then finite upper bounds `x_i - ub_i`) for the
//! solver, sensitivity, and infeasibility metrics, so there is a single
//! inequality mechanism everywhere.

mod acopf;
mod markowitz;
mod penalized;
mod toy_qp;

pub use acopf::{AcOpf3Bus, AcOpfData, Branch, Generator};
pub use markowitz::Markowitz;
pub use penalized::{penalized_objective, PenalizedProblem};
pub use toy_qp::ToyQp;

use crate::autodiff::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem name {0:?} (expected toy-qp, markowitz-N, or acopf3)")]
    UnknownName(String),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("bad problem dimension: {0}")]
    BadDimension(String),
}

pub trait ParametricProblem {
    fn name(&self) -> &str;
    /// Decision dimension n.
    fn num_vars(&self) -> usize;
    /// Parameter dimension d.
    fn num_params(&self) -> usize;
    /// Equality constraint count mE.
    fn num_eq(&self) -> usize;
    /// Inequality constraint count mI, bounds not included.
    fn num_ineq(&self) -> usize;

    fn objective<S: Scalar>(&self, x: &[S], p: &[S]) -> S;
    fn eq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S>;
    fn ineq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S>;

    /// Per-variable lower bounds, `-inf` when free below.
    fn lower_bounds(&self) -> Vec<f64>;
    /// Per-variable upper bounds, `+inf` when free above.
    fn upper_bounds(&self) -> Vec<f64>;

    /// Componentwise parameter box `(lo, hi)` with `lo < hi`.
    fn param_box(&self) -> (Vec<f64>, Vec<f64>);

    /// Base point that distribution sampling scales; defaults to the box
    /// midpoint.
    fn reference_param(&self) -> Vec<f64> {
        let (lo, hi) = self.param_box();
        lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Uniform scaling-factor range for distribution sampling of the
    /// reference parameter.
    fn scale_range(&self) -> (f64, f64) {
        (0.8, 1.1)
    }
}

/// Objective, equality residuals, and (unfolded) inequality values at a point.
pub fn evaluate<P: ParametricProblem>(
    problem: &P,
    x: &[f64],
    p: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    (
        problem.objective(x, p),
        problem.eq_constraints(x, p),
        problem.ineq_constraints(x, p),
    )
}

/// Number of inequalities after folding finite bounds in.
pub fn folded_ineq_count<P: ParametricProblem>(problem: &P) -> usize {
    let finite = |b: &[f64]| b.iter().filter(|v| v.is_finite()).count();
    problem.num_ineq() + finite(&problem.lower_bounds()) + finite(&problem.upper_bounds())
}

/// Inequality values with finite bounds folded in: `cI`, then `lb_i - x_i`,
/// then `x_i - ub_i`, each `<= 0` when satisfied.
pub fn folded_ineq<P: ParametricProblem, S: Scalar>(problem: &P, x: &[S], p: &[S]) -> Vec<S> {
    let mut out = problem.ineq_constraints(x, p);
    for (i, lb) in problem.lower_bounds().iter().enumerate() {
        if lb.is_finite() {
            out.push(-x[i].clone() + *lb);
        }
    }
    for (i, ub) in problem.upper_bounds().iter().enumerate() {
        if ub.is_finite() {
            out.push(x[i].clone() - *ub);
        }
    }
    out
}

/// Concrete problem selected by name; implements [`ParametricProblem`] by
/// delegation so generic pipelines work off a runtime choice.
#[derive(Debug, Clone)]
pub enum ProblemInstance {
    ToyQp(ToyQp),
    Markowitz(Markowitz),
    AcOpf3(AcOpf3Bus),
}

/// Parse `toy-qp`, `markowitz-N` (N assets), or `acopf3`.
pub fn problem_by_name(name: &str) -> Result<ProblemInstance, ProblemError> {
    if name == "toy-qp" {
        return Ok(ProblemInstance::ToyQp(ToyQp::default()));
    }
    if name == "acopf3" {
        return Ok(ProblemInstance::AcOpf3(AcOpf3Bus::case3()));
    }
    if let Some(n) = name.strip_prefix("markowitz-") {
        let n: usize = n
            .parse()
            .map_err(|_| ProblemError::UnknownName(name.to_string()))?;
        if n == 0 {
            return Err(ProblemError::BadDimension("markowitz needs n >= 1".into()));
        }
        return Ok(ProblemInstance::Markowitz(Markowitz::seeded(n)));
    }
    Err(ProblemError::UnknownName(name.to_string()))
}

macro_rules! delegate {
    ($self:ident, $inner:ident => $body:expr) => {
        match $self {
            ProblemInstance::ToyQp($inner) => $body,
            ProblemInstance::Markowitz($inner) => $body,
            ProblemInstance::AcOpf3($inner) => $body,
        }
    };
}

impl ParametricProblem for ProblemInstance {
    fn name(&self) -> &str {
        delegate!(self, q => q.name())
    }
    fn num_vars(&self) -> usize {
        delegate!(self, q => q.num_vars())
    }
    fn num_params(&self) -> usize {
        delegate!(self, q => q.num_params())
    }
    fn num_eq(&self) -> usize {
        delegate!(self, q => q.num_eq())
    }
    fn num_ineq(&self) -> usize {
        delegate!(self, q => q.num_ineq())
    }
    fn objective<S: Scalar>(&self, x: &[S], p: &[S]) -> S {
        delegate!(self, q => q.objective(x, p))
    }
    fn eq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S> {
        delegate!(self, q => q.eq_constraints(x, p))
    }
    fn ineq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S> {
        delegate!(self, q => q.ineq_constraints(x, p))
    }
    fn lower_bounds(&self) -> Vec<f64> {
        delegate!(self, q => q.lower_bounds())
    }
    fn upper_bounds(&self) -> Vec<f64> {
        delegate!(self, q => q.upper_bounds())
    }
    fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
        delegate!(self, q => q.param_box())
    }
    fn reference_param(&self) -> Vec<f64> {
        delegate!(self, q => q.reference_param())
    }
    fn scale_range(&self) -> (f64, f64) {
        delegate!(self, q => q.scale_range())
    }
}
