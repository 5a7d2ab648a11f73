use super::ParametricProblem;
use crate::autodiff::Scalar;

/// Scalar tracking problem `min_x 0.5 (x - p)^2` subject to `x >= 0`.
///
/// On parameter boxes above zero the bound never binds and the solution map
/// is the identity `x*(p) = p` with sensitivity 1; boxes crossing zero
/// exercise the active-set switch at `p = 0`.
#[derive(Debug, Clone)]
pub struct ToyQp {
    p_lo: f64,
    p_hi: f64,
}

impl ToyQp {
    pub fn new(p_lo: f64, p_hi: f64) -> Self {
        assert!(p_lo < p_hi, "parameter box must have positive width");
        ToyQp { p_lo, p_hi }
    }
}

impl Default for ToyQp {
    fn default() -> Self {
        ToyQp::new(1.0, 2.0)
    }
}

impl ParametricProblem for ToyQp {
    fn name(&self) -> &str {
        "toy-qp"
    }
    fn num_vars(&self) -> usize {
        1
    }
    fn num_params(&self) -> usize {
        1
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        0
    }

    fn objective<S: Scalar>(&self, x: &[S], p: &[S]) -> S {
        (x[0].clone() - p[0].clone()).sq() * 0.5
    }

    fn eq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
        Vec::new()
    }

    fn ineq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
        Vec::new()
    }

    fn lower_bounds(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn upper_bounds(&self) -> Vec<f64> {
        vec![f64::INFINITY]
    }

    fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.p_lo], vec![self.p_hi])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_is_half_squared_distance() {
        let q = ToyQp::default();
        assert_eq!(q.objective(&[3.0], &[1.0]), 2.0);
        assert_eq!(q.objective(&[1.0], &[1.0]), 0.0);
    }

    #[test]
    fn only_constraint_is_the_nonnegativity_bound() {
        let q = ToyQp::default();
        assert_eq!(q.num_eq(), 0);
        assert_eq!(q.num_ineq(), 0);
        assert_eq!(q.lower_bounds(), vec![0.0]);
        assert_eq!(super::super::folded_ineq_count(&q), 1);
    }
}
