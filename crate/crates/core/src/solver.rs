//! Primal-dual interior-point solver for the parametric problems.
//!
//! Finite bounds are folded into the inequality list, slacks `s >= 0` carry
//! the log barrier (`cI(x) + s = 0`), and each iteration takes one damped
//! Newton step on the perturbed KKT system
//!
//! ```text
//!   grad f + JE' lambda + JI' z = 0
//!   cE = 0,   cI + s = 0,   z .* s = mu
//! ```
//!
//! assembled dense and solved with LU (partial pivoting). The barrier weight
//! shrinks monotonically once the inner residual is small. Steps respect a
//! fraction-to-boundary rule on `s` and `z` and backtrack against an l1
//! penalty merit function. When the Newton direction is not a descent
//! direction (nonconvex case) or the factorization fails, a diagonal shift
//! `delta` is added to the Lagrangian Hessian and grown by 10x until it is.
//!
//! Derivatives come from the forward-mode carriers; the problems supply no
//! hand-coded gradients anywhere.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::autodiff::{self, AdError, HyperDual};
use crate::problems::{folded_ineq, folded_ineq_count, ParametricProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    /// Iteration budget exhausted; best iterate returned.
    MaxIter,
    /// Newton system stayed singular (or ascent) through the regularization
    /// ladder.
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub x_star: Vec<f64>,
    pub lambda_eq: Vec<f64>,
    /// Multipliers for the folded inequality list (problem `cI`, then finite
    /// lower bounds, then finite upper bounds); nonnegative at convergence.
    pub lambda_ineq: Vec<f64>,
    pub objective: f64,
    /// Infinity norm over stationarity, feasibility, and complementarity.
    pub kkt_residual: f64,
    /// The stationarity component alone, re-evaluated at the returned point.
    pub stationarity_residual: f64,
    pub iterations: usize,
    pub status: SolverStatus,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mu0: f64,
    pub mu_shrink: f64,
    pub frac_to_boundary: f64,
    /// Override the default start (bound midpoints); used by tests probing
    /// start-point invariance.
    pub start: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 200,
            mu0: 0.1,
            mu_shrink: 0.2,
            frac_to_boundary: 0.995,
            start: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("parameter has length {got}, problem expects {expected}")]
    ParamDimension { expected: usize, got: usize },
    #[error("start override has length {got}, problem expects {expected}")]
    StartDimension { expected: usize, got: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Midpoint of two-sided bounds, one unit inside one-sided bounds, zero when
/// free.
fn default_start<P: ParametricProblem>(problem: &P) -> Vec<f64> {
    problem
        .lower_bounds()
        .iter()
        .zip(problem.upper_bounds())
        .map(|(&lb, ub)| match (lb.is_finite(), ub.is_finite()) {
            (true, true) => 0.5 * (lb + ub),
            (true, false) => lb + 1.0,
            (false, true) => ub - 1.0,
            (false, false) => 0.0,
        })
        .collect()
}

struct Derivatives {
    grad_f: DVector<f64>,
    c_eq: DVector<f64>,
    j_eq: DMatrix<f64>,
    c_in: DVector<f64>,
    j_in: DMatrix<f64>,
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

fn eval_derivatives<P: ParametricProblem>(
    problem: &P,
    x: &[f64],
    p: &[f64],
) -> Result<Derivatives, AdError> {
    let n = x.len();
    let pc = autodiff::dual_constants(p, n);
    let grad_f = autodiff::grad(|xs| problem.objective(xs, &pc), x)?;
    let j_eq = autodiff::jacobian(|xs| problem.eq_constraints(xs, &pc), x)?;
    let j_in = autodiff::jacobian(|xs| folded_ineq(problem, xs, &pc), x)?;
    Ok(Derivatives {
        grad_f: DVector::from_vec(grad_f),
        c_eq: DVector::from_vec(problem.eq_constraints(x, p)),
        j_eq: rows_to_matrix(j_eq, n),
        c_in: DVector::from_vec(folded_ineq(problem, x, p)),
        j_in: rows_to_matrix(j_in, n),
    })
}

fn lagrangian_hessian<P: ParametricProblem>(
    problem: &P,
    x: &[f64],
    p: &[f64],
    lam: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DMatrix<f64>, AdError> {
    let n = x.len();
    let lam = lam.clone();
    let z = z.clone();
    let h = autodiff::hessian(
        |xs: &[HyperDual]| {
            let pc = autodiff::hyper_constants(p);
            let mut acc = problem.objective(xs, &pc);
            for (i, c) in problem.eq_constraints(xs, &pc).into_iter().enumerate() {
                acc = acc + c * lam[i];
            }
            for (i, c) in folded_ineq(problem, xs, &pc).into_iter().enumerate() {
                acc = acc + c * z[i];
            }
            acc
        },
        x,
    )?;
    Ok(rows_to_matrix(h, n))
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, &a| m.max(a.abs()))
}

/// Residual of the mu-perturbed KKT system at a primal-dual point, in the
/// infinity norm over all four blocks.
fn barrier_residual(
    d: &Derivatives,
    s: &DVector<f64>,
    lam: &DVector<f64>,
    z: &DVector<f64>,
    mu: f64,
) -> f64 {
    let r_stat = &d.grad_f + d.j_eq.transpose() * lam + d.j_in.transpose() * z;
    let r_slack = &d.c_in + s;
    let r_comp = DVector::from_fn(s.len(), |i, _| z[i] * s[i] - mu);
    inf_norm(&r_stat)
        .max(inf_norm(&d.c_eq))
        .max(inf_norm(&r_slack))
        .max(inf_norm(&r_comp))
}

/// Unperturbed KKT error: (stationarity, eq feasibility, ineq violation,
/// dual feasibility, complementarity), each in the infinity norm.
fn kkt_components(d: &Derivatives, lam: &DVector<f64>, z: &DVector<f64>) -> (f64, f64) {
    let stat = &d.grad_f + d.j_eq.transpose() * lam + d.j_in.transpose() * z;
    let stationarity = inf_norm(&stat);
    let feas_e = inf_norm(&d.c_eq);
    let viol_i = d.c_in.iter().fold(0.0f64, |m, &c| m.max(c));
    let dual = z.iter().fold(0.0f64, |m, &zi| m.max(-zi));
    let comp = d.c_in.iter().zip(z.iter()).fold(0.0f64, |m, (&c, &zi)| m.max((zi * c).abs()));
    (stationarity, stationarity.max(feas_e).max(viol_i).max(dual).max(comp))
}

/// l1 penalty merit with the barrier objective.
fn merit<P: ParametricProblem>(
    problem: &P,
    x: &[f64],
    p: &[f64],
    s: &DVector<f64>,
    mu: f64,
    nu: f64,
) -> f64 {
    let f = problem.objective(x, p);
    let barrier: f64 = s.iter().map(|&si| si.ln()).sum();
    let ce = problem.eq_constraints(x, p);
    let ci = folded_ineq(problem, x, p);
    let mut infeas: f64 = ce.iter().map(|c| c.abs()).sum();
    for (c, si) in ci.iter().zip(s.iter()) {
        infeas += (c + si).abs();
    }
    f - mu * barrier + nu * infeas
}

pub fn solve<P: ParametricProblem>(
    problem: &P,
    p: &[f64],
    opts: &SolveOptions,
) -> Result<SolverResult, SolverError> {
    let n = problem.num_vars();
    let m_eq = problem.num_eq();
    let m_in = folded_ineq_count(problem);
    if p.len() != problem.num_params() {
        return Err(SolverError::ParamDimension {
            expected: problem.num_params(),
            got: p.len(),
        });
    }
    let mut x = match &opts.start {
        Some(x0) if x0.len() != n => {
            return Err(SolverError::StartDimension { expected: n, got: x0.len() })
        }
        Some(x0) => x0.clone(),
        None => default_start(problem),
    };

    let c_in0 = folded_ineq(problem, &x, p);
    let mut s = DVector::from_fn(m_in, |i, _| (-c_in0[i]).max(1e-2));
    let mut lam = DVector::from_element(m_eq, 1e-2);
    let mut z = DVector::from_element(m_in, 1e-2);
    let mut mu = opts.mu0;
    let mu_min = opts.tol / 10.0;
    let tau = opts.frac_to_boundary;
    let mut nu = 1.0;
    let mut status = SolverStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter;
        let d = eval_derivatives(problem, &x, p)?;
        let (_, kkt_err) = kkt_components(&d, &lam, &z);
        if kkt_err <= opts.tol {
            status = SolverStatus::Converged;
            break;
        }

        // Inner (barrier) residual drives the monotone mu schedule.
        let r_stat = &d.grad_f + d.j_eq.transpose() * &lam + d.j_in.transpose() * &z;
        let r_slack = &d.c_in + &s;
        let r_comp = DVector::from_fn(m_in, |i, _| z[i] * s[i] - mu);
        let barrier_err = inf_norm(&r_stat)
            .max(inf_norm(&d.c_eq))
            .max(inf_norm(&r_slack))
            .max(inf_norm(&r_comp));
        if barrier_err <= 10.0 * mu && mu > mu_min {
            mu = (mu * opts.mu_shrink).max(mu_min);
        }
        let r_comp = DVector::from_fn(m_in, |i, _| z[i] * s[i] - mu);

        let w = lagrangian_hessian(problem, &x, p, &lam, &z)?;

        // Regularization ladder: retry with a larger diagonal shift until the
        // system factors and the direction descends the merit function.
        let mut delta = 0.0f64;
        let dim = n + m_eq + 2 * m_in;
        let mut step: Option<(DVector<f64>, f64)> = None;
        // Least-regularized direction that factored, kept for the fallback.
        let mut newton_dir: Option<DVector<f64>> = None;
        loop {
            let mut k = DMatrix::zeros(dim, dim);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = w[(i, j)];
                }
                k[(i, i)] += delta;
            }
            for i in 0..m_eq {
                for j in 0..n {
                    k[(n + i, j)] = d.j_eq[(i, j)];
                    k[(j, n + i)] = d.j_eq[(i, j)];
                }
                k[(n + i, n + i)] = -delta;
            }
            for i in 0..m_in {
                for j in 0..n {
                    k[(n + m_eq + i, j)] = d.j_in[(i, j)];
                    k[(j, n + m_eq + i)] = d.j_in[(i, j)];
                }
                // d r_slack / d s = I, complementarity row diagonals.
                k[(n + m_eq + i, n + m_eq + m_in + i)] = 1.0;
                k[(n + m_eq + m_in + i, n + m_eq + i)] = s[i];
                k[(n + m_eq + m_in + i, n + m_eq + m_in + i)] = z[i];
            }
            let mut rhs = DVector::zeros(dim);
            for i in 0..n {
                rhs[i] = -r_stat[i];
            }
            for i in 0..m_eq {
                rhs[n + i] = -d.c_eq[i];
            }
            for i in 0..m_in {
                rhs[n + m_eq + i] = -r_slack[i];
                rhs[n + m_eq + m_in + i] = -r_comp[i];
            }

            let solution = k.lu().solve(&rhs).filter(|sol| sol.iter().all(|v| v.is_finite()));
            if let Some(sol) = solution {
                if newton_dir.is_none() {
                    newton_dir = Some(sol.clone());
                }
                // Predicted merit slope along the direction.
                let dx = sol.rows(0, n);
                let ds = sol.rows(n + m_eq + m_in, m_in);
                let mut slope = d.grad_f.dot(&dx.clone_owned());
                for i in 0..m_in {
                    slope -= mu * ds[i] / s[i];
                }
                let infeas: f64 = d.c_eq.iter().map(|c| c.abs()).sum::<f64>()
                    + r_slack.iter().map(|r| r.abs()).sum::<f64>();
                slope -= nu * infeas;
                let x_scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if slope < 0.0 || sol.amax() <= 1e-12 * x_scale {
                    step = Some((sol, slope));
                    break;
                }
            }
            delta = if delta == 0.0 { 1e-8 } else { delta * 10.0 };
            if delta > 1e10 {
                break;
            }
        }
        let Some((sol, slope)) = step else {
            // The l1 barrier merit ignores the multipliers, so it can veto a
            // direction whose progress is mostly dual (complementarity far
            // from centered). Fall back to the plain damped Newton step and
            // accept it on decrease of the mu-perturbed KKT residual itself;
            // only when even that fails is the iteration genuinely stuck.
            let mut recovered = false;
            if let Some(sol) = newton_dir {
                let dx = sol.rows(0, n).clone_owned();
                let dlam = sol.rows(n, m_eq).clone_owned();
                let dz = sol.rows(n + m_eq, m_in).clone_owned();
                let ds = sol.rows(n + m_eq + m_in, m_in).clone_owned();
                let mut alpha: f64 = 1.0;
                for i in 0..m_in {
                    if ds[i] < 0.0 {
                        alpha = alpha.min(-tau * s[i] / ds[i]);
                    }
                    if dz[i] < 0.0 {
                        alpha = alpha.min(-tau * z[i] / dz[i]);
                    }
                }
                let current = barrier_residual(&d, &s, &lam, &z, mu);
                for _ in 0..30 {
                    let x_t: Vec<f64> =
                        x.iter().zip(dx.iter()).map(|(xi, di)| xi + alpha * di).collect();
                    let s_t = &s + &ds * alpha;
                    let lam_t = &lam + &dlam * alpha;
                    let z_t = &z + &dz * alpha;
                    let d_t = eval_derivatives(problem, &x_t, p)?;
                    if barrier_residual(&d_t, &s_t, &lam_t, &z_t, mu)
                        <= (1.0 - 1e-4 * alpha) * current
                    {
                        x = x_t;
                        s = s_t;
                        lam = lam_t;
                        z = z_t;
                        recovered = true;
                        break;
                    }
                    alpha *= 0.5;
                }
            }
            if recovered {
                iterations = iter + 1;
                continue;
            }
            status = SolverStatus::NumericalFailure;
            break;
        };

        let dx = sol.rows(0, n).clone_owned();
        let dlam = sol.rows(n, m_eq).clone_owned();
        let dz = sol.rows(n + m_eq, m_in).clone_owned();
        let ds = sol.rows(n + m_eq + m_in, m_in).clone_owned();

        // Fraction-to-boundary caps.
        let mut alpha_p: f64 = 1.0;
        let mut alpha_d: f64 = 1.0;
        for i in 0..m_in {
            if ds[i] < 0.0 {
                alpha_p = alpha_p.min(-tau * s[i] / ds[i]);
            }
            if dz[i] < 0.0 {
                alpha_d = alpha_d.min(-tau * z[i] / dz[i]);
            }
        }

        // Keep the penalty weight ahead of the multipliers.
        let mult_scale = inf_norm(&lam).max(inf_norm(&z));
        nu = nu.max(1.2 * mult_scale + 1.0);

        let phi0 = merit(problem, &x, p, &s, mu, nu);
        let mut alpha = alpha_p;
        for _ in 0..40 {
            let x_trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(xi, di)| xi + alpha * di).collect();
            let s_trial = DVector::from_fn(m_in, |i, _| s[i] + alpha * ds[i]);
            let phi = merit(problem, &x_trial, p, &s_trial, mu, nu);
            if phi <= phi0 + 1e-4 * alpha * slope || alpha <= 1e-12 {
                break;
            }
            alpha *= 0.5;
        }

        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for i in 0..m_in {
            s[i] += alpha * ds[i];
        }
        lam += alpha_d * &dlam;
        z += alpha_d * &dz;
        iterations = iter + 1;
    }

    let d = eval_derivatives(problem, &x, p)?;
    let (stationarity, kkt_err) = kkt_components(&d, &lam, &z);
    Ok(SolverResult {
        objective: problem.objective(x.as_slice(), p),
        x_star: x,
        lambda_eq: lam.iter().copied().collect(),
        lambda_ineq: z.iter().copied().collect(),
        kkt_residual: kkt_err,
        stationarity_residual: stationarity,
        iterations,
        status,
    })
}
