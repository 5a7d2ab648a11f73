use super::ParametricProblem;
use crate::autodiff::Scalar;

/// Smooth(ish) single-objective surrogate for constrained problems, used as
/// the self-supervised training signal: the objective plus quadratic
/// penalties on constraint violation and a hinge on lower-bound violation.
#[derive(Debug, Clone)]
pub struct PenalizedProblem<'a, P: ParametricProblem> {
    pub base: &'a P,
    pub beta: f64,
    pub gamma: f64,
}

impl<'a, P: ParametricProblem> PenalizedProblem<'a, P> {
    pub fn new(base: &'a P, beta: f64, gamma: f64) -> Self {
        PenalizedProblem { base, beta, gamma }
    }
}

/// `f + beta ||cE||^2 + beta sum max(cI, 0)^2 + gamma sum max(lb_i - x_i, 0)`.
///
/// The hinge terms use the max-with-constant subderivative convention
/// (derivative 0 at the kink), so the surrogate is differentiable everywhere
/// the autodiff primitives are.
pub fn penalized_objective<P: ParametricProblem, S: Scalar>(
    pen: &PenalizedProblem<'_, P>,
    x: &[S],
    p: &[S],
) -> S {
    let mut total = pen.base.objective(x, p);
    for ce in pen.base.eq_constraints(x, p) {
        total = total + ce.sq() * pen.beta;
    }
    for ci in pen.base.ineq_constraints(x, p) {
        total = total + ci.max_const(0.0).sq() * pen.beta;
    }
    for (i, lb) in pen.base.lower_bounds().iter().enumerate() {
        if lb.is_finite() {
            total = total + (-x[i].clone() + *lb).max_const(0.0) * pen.gamma;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Markowitz, ToyQp};

    /// Equality-constrained test fixture: min 0.5||x||^2 with p - x1 - x2 = 0.
    struct SumToParam;

    impl ParametricProblem for SumToParam {
        fn name(&self) -> &str {
            "sum-to-param"
        }
        fn num_vars(&self) -> usize {
            2
        }
        fn num_params(&self) -> usize {
            1
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn objective<S: Scalar>(&self, x: &[S], _p: &[S]) -> S {
            (x[0].sq() + x[1].sq()) * 0.5
        }
        fn eq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S> {
            vec![p[0].clone() - x[0].clone() - x[1].clone()]
        }
        fn ineq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
            Vec::new()
        }
        fn lower_bounds(&self) -> Vec<f64> {
            vec![f64::NEG_INFINITY; 2]
        }
        fn upper_bounds(&self) -> Vec<f64> {
            vec![f64::INFINITY; 2]
        }
        fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![0.5], vec![2.0])
        }
    }

    #[test]
    fn equality_violation_adds_beta_times_square() {
        let base = SumToParam;
        let pen = PenalizedProblem::new(&base, 100.0, 100.0);
        // x sums to 0.9 against p = 1.0: violation 0.1.
        let x = [0.4, 0.5];
        let f = base.objective(&x, &[1.0]);
        let total = penalized_objective(&pen, &x, &[1.0]);
        assert!((total - (f + 100.0 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_violation_adds_gamma_times_hinge() {
        let base = ToyQp::default();
        let pen = PenalizedProblem::new(&base, 100.0, 100.0);
        let total = penalized_objective(&pen, &[-0.25], &[1.0]);
        let f = 0.5 * (-0.25f64 - 1.0).powi(2);
        assert!((total - (f + 100.0 * 0.25)).abs() < 1e-12);
        // Feasible point: penalty-free.
        let clean = penalized_objective(&pen, &[1.5], &[1.0]);
        assert_eq!(clean, 0.5 * 0.25);
    }

    #[test]
    fn inequality_violation_is_squared_and_scaled() {
        let m = Markowitz::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0, (0.01, 0.25), (0.05, 0.30))
            .unwrap();
        let pen = PenalizedProblem::new(&m, 50.0, 10.0);
        // Budget exceeded by 0.5, risk cap 1.0 not binding at ||x||^2 = 1.13.
        let x = [0.7, 0.8];
        let p = [0.1, 0.1, 1.5];
        let f = m.objective(&x, &p);
        let risk = 0.7f64 * 0.7 + 0.8 * 0.8 - 1.5f64 * 1.5;
        assert!(risk < 0.0);
        let total = penalized_objective(&pen, &x, &p);
        assert!((total - (f + 50.0 * 0.25)).abs() < 1e-12);
    }
}
