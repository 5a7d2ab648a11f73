//! Exact solution sensitivities from the implicit function theorem on the
//! active-set KKT system.
//!
//! At a regular solution (strict complementarity, LICQ, SOSC) the map
//! `F(s, p) = (grad_x L, cE, c_active)` with `s = (x, lambda_E, z_active)`
//! satisfies `F(s*(p), p) = 0`, so `d s*/d p = -(d F/d s)^{-1} (d F/d p)`.
//! Both blocks are assembled by differentiating the problem jointly in
//! `(x, p)` with the forward-mode carriers; nothing is hand-linearized.
//!
//! Regularity failures are diagnosed and reported, never repaired: a weakly
//! active constraint, a rank-deficient active Jacobian, or an indefinite
//! reduced Hessian each yield a distinct error, and downstream consumers keep
//! such records value-only.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::autodiff::{self, AdError, HyperDual};
use crate::problems::{folded_ineq, ParametricProblem};
use crate::solver::SolverResult;

#[derive(Debug, Clone)]
pub struct SensitivityOptions {
    /// A folded inequality is active when |cI_i(x*)| is at most this.
    pub act_tol: f64,
    /// Active constraints need a multiplier at least this to count as
    /// strictly complementary.
    pub sc_tol: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions { act_tol: 1e-6, sc_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// n x d: solution shift per parameter.
    pub dx_dp: Vec<Vec<f64>>,
    /// (mE + mI_folded) x d: equality multipliers first, then every folded
    /// inequality multiplier; rows of inactive inequalities are exactly zero.
    pub dlambda_dp: Vec<Vec<f64>>,
    /// Indices into the folded inequality list that were treated as active.
    pub active_set: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("active constraint {constraint} has multiplier {multiplier:.3e} below the strict-complementarity threshold")]
    DegenerateComplementarity { constraint: usize, multiplier: f64 },
    #[error("active constraint gradients have rank {rank} < {rows} (LICQ fails)")]
    LicqViolated { rank: usize, rows: usize },
    #[error("reduced Hessian has eigenvalue {min_eig:.3e} < 0 (SOSC fails)")]
    SoscIndefinite { min_eig: f64 },
    #[error("KKT system is singular despite passing the regularity checks")]
    SingularKkt,
    #[error(transparent)]
    Ad(#[from] AdError),
}

impl SensitivityError {
    /// Wire label for dataset records; `None` for non-degeneracy failures.
    pub fn regularity_label(&self) -> Option<&'static str> {
        match self {
            SensitivityError::DegenerateComplementarity { .. } => {
                Some("degenerate_complementarity")
            }
            SensitivityError::LicqViolated { .. } => Some("licq_violated"),
            SensitivityError::SoscIndefinite { .. } => Some("sosc_indefinite"),
            _ => None,
        }
    }
}

const RANK_RTOL: f64 = 1e-8;
const EIG_TOL: f64 = -1e-8;

pub fn kkt_sensitivity<P: ParametricProblem>(
    problem: &P,
    p: &[f64],
    result: &SolverResult,
    opts: &SensitivityOptions,
) -> Result<Sensitivity, SensitivityError> {
    let n = problem.num_vars();
    let d = problem.num_params();
    let m_eq = problem.num_eq();
    let x = &result.x_star;

    // Classify each folded inequality. Strict complementarity means exactly
    // one of (slack, multiplier) is zero; a constraint where both are below
    // their thresholds is weakly active, and one where both are significant
    // is the interior-point signature of a solution sitting on a kink
    // (slack and multiplier both converge to sqrt(mu)). Either way the
    // active set is ambiguous and the record is flagged, not repaired.
    let c_in = folded_ineq(problem, x.as_slice(), p);
    let m_in = c_in.len();
    let mut active: Vec<usize> = Vec::new();
    for i in 0..m_in {
        let slack = c_in[i].abs();
        let zi = result.lambda_ineq[i];
        if slack <= opts.act_tol {
            if zi < opts.sc_tol {
                return Err(SensitivityError::DegenerateComplementarity {
                    constraint: i,
                    multiplier: zi,
                });
            }
            active.push(i);
        } else if zi >= opts.sc_tol {
            return Err(SensitivityError::DegenerateComplementarity {
                constraint: i,
                multiplier: zi,
            });
        }
    }
    let m_act = active.len();

    // Joint Jacobians in (x, p): columns split into the x and p blocks.
    let joint: Vec<f64> = x.iter().chain(p.iter()).copied().collect();
    let rows_eq = autodiff::jacobian(
        |v| {
            let (xs, ps) = v.split_at(n);
            problem.eq_constraints(xs, ps)
        },
        &joint,
    )?;
    let rows_act = autodiff::jacobian(
        |v| {
            let (xs, ps) = v.split_at(n);
            let ci = folded_ineq(problem, xs, ps);
            active.iter().map(|&i| ci[i].clone()).collect()
        },
        &joint,
    )?;

    // LICQ on the x-block of the active gradients.
    let j_act_x = DMatrix::from_fn(m_eq + m_act, n, |i, j| {
        if i < m_eq {
            rows_eq[i][j]
        } else {
            rows_act[i - m_eq][j]
        }
    });
    if m_eq + m_act > 0 {
        let svd = j_act_x.clone().svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&v| v > RANK_RTOL * smax.max(1.0))
            .count();
        if rank < m_eq + m_act {
            return Err(SensitivityError::LicqViolated { rank, rows: m_eq + m_act });
        }
    }

    // Joint Hessian of the active-set Lagrangian.
    let lam = result.lambda_eq.clone();
    let z_act: Vec<f64> = active.iter().map(|&i| result.lambda_ineq[i]).collect();
    let h_joint = autodiff::hessian(
        |v: &[HyperDual]| {
            let (xs, ps) = v.split_at(n);
            let mut acc = problem.objective(xs, ps);
            for (i, c) in problem.eq_constraints(xs, ps).into_iter().enumerate() {
                acc = acc + c * lam[i];
            }
            let ci = folded_ineq(problem, xs, ps);
            for (k, &i) in active.iter().enumerate() {
                acc = acc + ci[i].clone() * z_act[k];
            }
            acc
        },
        &joint,
    )?;
    let w_xx = DMatrix::from_fn(n, n, |i, j| h_joint[i][j]);
    let w_xp = DMatrix::from_fn(n, d, |i, j| h_joint[i][n + j]);

    // SOSC on the null space of the active gradients.
    if m_eq + m_act < n {
        let basis = null_space(&j_act_x, n);
        let reduced = basis.transpose() * &w_xx * &basis;
        let eig = reduced.symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if min_eig < EIG_TOL {
            return Err(SensitivityError::SoscIndefinite { min_eig });
        }
    }

    // dF/ds and dF/dp for F = (grad_x L, cE, c_active).
    let dim = n + m_eq + m_act;
    let mut f_s = DMatrix::zeros(dim, dim);
    let mut f_p = DMatrix::zeros(dim, d);
    for i in 0..n {
        for j in 0..n {
            f_s[(i, j)] = w_xx[(i, j)];
        }
        for j in 0..d {
            f_p[(i, j)] = w_xp[(i, j)];
        }
    }
    for (r, row) in rows_eq.iter().enumerate() {
        for j in 0..n {
            f_s[(n + r, j)] = row[j];
            f_s[(j, n + r)] = row[j];
        }
        for j in 0..d {
            f_p[(n + r, j)] = row[n + j];
        }
    }
    for (r, row) in rows_act.iter().enumerate() {
        for j in 0..n {
            f_s[(n + m_eq + r, j)] = row[j];
            f_s[(j, n + m_eq + r)] = row[j];
        }
        for j in 0..d {
            f_p[(n + m_eq + r, j)] = row[n + j];
        }
    }

    let lu = f_s.lu();
    let sol = lu.solve(&(-f_p)).ok_or(SensitivityError::SingularKkt)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(SensitivityError::SingularKkt);
    }

    let dx_dp = (0..n).map(|i| (0..d).map(|j| sol[(i, j)]).collect()).collect();
    let mut dlambda_dp = vec![vec![0.0; d]; m_eq + m_in];
    for r in 0..m_eq {
        for j in 0..d {
            dlambda_dp[r][j] = sol[(n + r, j)];
        }
    }
    for (k, &i) in active.iter().enumerate() {
        for j in 0..d {
            dlambda_dp[m_eq + i][j] = sol[(n + m_eq + k, j)];
        }
    }

    Ok(Sensitivity { dx_dp, dlambda_dp, active_set: active })
}

/// Orthonormal basis of the null space of `a` (cols = n - rank).
fn null_space(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&v| v > RANK_RTOL * smax.max(1.0))
        .count();
    // Rows of v_t beyond the rank span the null space; v_t is (min(m,n) x n),
    // so directions with no singular value at all are appended from the
    // orthogonal complement via full SVD padding.
    let rows = v_t.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for r in rank..rows {
        cols.push(v_t.row(r).transpose());
    }
    if rows < n {
        // Complete the basis by Gram-Schmidt against the known rows.
        let mut have: Vec<DVector<f64>> = (0..rows).map(|r| v_t.row(r).transpose()).collect();
        for e in 0..n {
            if have.len() == n {
                break;
            }
            let mut cand = DVector::zeros(n);
            cand[e] = 1.0;
            for h in &have {
                let proj = h.dot(&cand);
                cand -= h * proj;
            }
            let norm = cand.norm();
            if norm > 1e-10 {
                let unit = cand / norm;
                have.push(unit.clone());
                cols.push(unit);
            }
        }
    }
    let mut basis = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        basis.set_column(j, c);
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Scalar;
    use crate::problems::{Markowitz, ToyQp};
    use crate::solver::{solve, SolveOptions, SolverStatus};

    /// min 0.5||x||^2 s.t. p - x1 - x2 = 0.
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
    fn equality_qp_sensitivity_matches_hand_algebra() {
        let prob = SumToParam;
        let r = solve(&prob, &[1.0], &SolveOptions::default()).unwrap();
        let s = kkt_sensitivity(&prob, &[1.0], &r, &SensitivityOptions::default()).unwrap();
        assert!((s.dx_dp[0][0] - 0.5).abs() < 1e-9);
        assert!((s.dx_dp[1][0] - 0.5).abs() < 1e-9);
        assert!((s.dlambda_dp[0][0] - 0.5).abs() < 1e-9);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn toy_qp_one_sided_sensitivities_switch_at_zero() {
        let q = ToyQp::new(-1.0, 1.0);
        let opts = SolveOptions::default();
        let r_free = solve(&q, &[0.1], &opts).unwrap();
        let s_free =
            kkt_sensitivity(&q, &[0.1], &r_free, &SensitivityOptions::default()).unwrap();
        assert!((s_free.dx_dp[0][0] - 1.0).abs() < 1e-6);
        assert!(s_free.active_set.is_empty());
        // Inactive bound row is exactly zero.
        assert_eq!(s_free.dlambda_dp[0], vec![0.0]);

        let r_pinned = solve(&q, &[-0.1], &opts).unwrap();
        let s_pinned =
            kkt_sensitivity(&q, &[-0.1], &r_pinned, &SensitivityOptions::default()).unwrap();
        assert!(s_pinned.dx_dp[0][0].abs() < 1e-6);
        assert_eq!(s_pinned.active_set, vec![0]);
        // Pinned bound multiplier moves one-for-one with -p.
        assert!((s_pinned.dlambda_dp[0][0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn boundary_parameter_is_flagged_degenerate_not_repaired() {
        let q = ToyQp::new(-1.0, 1.0);
        let r = solve(&q, &[0.0], &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        let err = kkt_sensitivity(&q, &[0.0], &r, &SensitivityOptions::default()).unwrap_err();
        assert!(matches!(err, SensitivityError::DegenerateComplementarity { .. }));
        assert_eq!(err.regularity_label(), Some("degenerate_complementarity"));
    }

    fn risk_instance() -> Markowitz {
        Markowitz::new(
            vec![vec![0.04, 0.0], vec![0.0, 0.09]],
            1.0,
            (0.01, 0.25),
            (0.05, 0.30),
        )
        .unwrap()
    }

    /// Central finite differences of the full solve, the oracle the exact
    /// sensitivities are judged against.
    fn fd_of_solves<P: ParametricProblem>(prob: &P, p: &[f64], h: f64) -> Vec<Vec<f64>> {
        let opts = SolveOptions { tol: 1e-10, ..Default::default() };
        let n = prob.num_vars();
        let d = prob.num_params();
        let mut cols = vec![vec![0.0; d]; n];
        for k in 0..d {
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[k] += h;
            pm[k] -= h;
            let rp = solve(prob, &pp, &opts).unwrap();
            let rm = solve(prob, &pm, &opts).unwrap();
            assert_eq!(rp.status, SolverStatus::Converged);
            assert_eq!(rm.status, SolverStatus::Converged);
            for i in 0..n {
                cols[i][k] = (rp.x_star[i] - rm.x_star[i]) / (2.0 * h);
            }
        }
        cols
    }

    #[test]
    fn markowitz_sensitivity_matches_fd_of_solves() {
        let m = risk_instance();
        let p = [0.1, 0.2, 0.1];
        let opts = SolveOptions { tol: 1e-10, ..Default::default() };
        let r = solve(&m, &p, &opts).unwrap();
        let s = kkt_sensitivity(&m, &p, &r, &SensitivityOptions::default()).unwrap();
        let fd = fd_of_solves(&m, &p, 1e-5);
        for k in 0..3 {
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..2 {
                diff = diff.max((s.dx_dp[i][k] - fd[i][k]).abs());
                scale = scale.max(fd[i][k].abs());
            }
            assert!(diff / scale.max(1.0) <= 1e-4, "column {k}: {diff} vs scale {scale}");
        }
    }

    #[test]
    fn taylor_remainder_shrinks_quadratically() {
        let m = risk_instance();
        let p = [0.1, 0.2, 0.1];
        let opts = SolveOptions { tol: 1e-10, ..Default::default() };
        let r = solve(&m, &p, &opts).unwrap();
        let s = kkt_sensitivity(&m, &p, &r, &SensitivityOptions::default()).unwrap();
        let v = [0.7, -0.4, 0.5];
        let mut ratios = Vec::new();
        for &t in &[1e-2, 5e-3, 2.5e-3] {
            let pt: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi + t * vi).collect();
            let rt = solve(&m, &pt, &opts).unwrap();
            let mut err = 0.0f64;
            for i in 0..2 {
                let lin: f64 = (0..3).map(|k| s.dx_dp[i][k] * v[k]).sum();
                err = err.max((rt.x_star[i] - r.x_star[i] - t * lin).abs());
            }
            ratios.push(err / (t * t));
        }
        let hi = ratios.iter().fold(0.0f64, |a, &b| a.max(b));
        let lo = ratios.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(hi / lo <= 4.0, "remainder ratios {ratios:?} not O(t^2)");
    }

    #[test]
    fn duplicated_active_constraint_trips_licq() {
        /// x >= 0 twice via cI; both active when p < 0.
        struct DoubleBound;
        impl ParametricProblem for DoubleBound {
            fn name(&self) -> &str {
                "double-bound"
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
                2
            }
            fn objective<S: Scalar>(&self, x: &[S], p: &[S]) -> S {
                (x[0].clone() - p[0].clone()).sq() * 0.5
            }
            fn eq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
                Vec::new()
            }
            fn ineq_constraints<S: Scalar>(&self, x: &[S], _p: &[S]) -> Vec<S> {
                vec![-x[0].clone(), -x[0].clone()]
            }
            fn lower_bounds(&self) -> Vec<f64> {
                vec![f64::NEG_INFINITY]
            }
            fn upper_bounds(&self) -> Vec<f64> {
                vec![f64::INFINITY]
            }
            fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
                (vec![-1.0], vec![1.0])
            }
        }
        let r = solve(&DoubleBound, &[-0.5], &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        let err =
            kkt_sensitivity(&DoubleBound, &[-0.5], &r, &SensitivityOptions::default()).unwrap_err();
        assert!(matches!(err, SensitivityError::LicqViolated { rank: 1, rows: 2 }));
    }

    #[test]
    fn indefinite_curvature_trips_sosc() {
        /// Concave objective: x = 0 is a stationary point, not a minimum.
        struct Concave;
        impl ParametricProblem for Concave {
            fn name(&self) -> &str {
                "concave"
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
            fn objective<S: Scalar>(&self, x: &[S], _p: &[S]) -> S {
                -x[0].sq()
            }
            fn eq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
                Vec::new()
            }
            fn ineq_constraints<S: Scalar>(&self, _x: &[S], _p: &[S]) -> Vec<S> {
                Vec::new()
            }
            fn lower_bounds(&self) -> Vec<f64> {
                vec![f64::NEG_INFINITY]
            }
            fn upper_bounds(&self) -> Vec<f64> {
                vec![f64::INFINITY]
            }
            fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
                (vec![-1.0], vec![1.0])
            }
        }
        let fake = SolverResult {
            x_star: vec![0.0],
            lambda_eq: vec![],
            lambda_ineq: vec![],
            objective: 0.0,
            kkt_residual: 0.0,
            stationarity_residual: 0.0,
            iterations: 0,
            status: SolverStatus::Converged,
        };
        let err =
            kkt_sensitivity(&Concave, &[0.0], &fake, &SensitivityOptions::default()).unwrap_err();
        assert!(matches!(err, SensitivityError::SoscIndefinite { .. }));
    }
}
