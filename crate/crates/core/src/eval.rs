//! Evaluation: proxy quality metrics, covering radii, Lipschitz estimates,
//! verification of the uniform error bounds on constructed interpolants, and
//! the mask-sparsity ablation.
//!
//! The bound harness builds two exact interpolants of a smooth scalar
//! reference map: a piecewise-linear one (value matching only) and a cubic
//! Hermite one (value plus derivative matching). With covering radius delta
//! and Lipschitz constants L (values) and M (derivatives), the guarantees
//! under test are
//!
//! * value matching:      sup |ghat - g|  <= (L_g + L_ghat) * delta
//! * derivative matching: sup |ghat' - g'| <= (M_g + M_ghat) * delta
//! * both (Sobolev):      sup |ghat - g|  <= (M_g + M_ghat) / 2 * delta^2
//!
//! Constants are estimated from dense consecutive pairs, so they are lower
//! bounds of the true constants; sup errors are measured on a fixed grid.
//! The rate check gates on the ratio of successive bound values (delta vs
//! delta squared scaling). Measured sup-error ratios are reported alongside:
//! for these interpolants they shrink faster than the guarantee (roughly
//! h^2 and h^4), which is better than the bounds require.

use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{sample_mask, Dataset, SolutionRecord};
use crate::problems::{evaluate, folded_ineq, ParametricProblem, ProblemInstance};
use crate::proxy::MlpModel;
use crate::training::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
}

/// Mean squared error between a prediction and the reference solution.
pub fn mse(x_tilde: &[f64], x_star: &[f64]) -> Result<f64, EvalError> {
    if x_tilde.len() != x_star.len() {
        return Err(EvalError::Dimension { left: x_tilde.len(), right: x_star.len() });
    }
    let n = x_tilde.len() as f64;
    Ok(x_tilde.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Relative optimality gap |z_tilde - z_star| / |z_star|; `None` when the
/// reference objective is zero and the ratio is undefined.
pub fn gap(z_tilde: f64, z_star: f64) -> Option<f64> {
    if z_star == 0.0 {
        None
    } else {
        Some((z_tilde - z_star).abs() / z_star.abs())
    }
}

/// Mean absolute infeasibility over equality residuals and folded inequality
/// violations. Returns zero for unconstrained problems.
pub fn infeasibility(c_eq: &[f64], c_in_folded: &[f64]) -> f64 {
    let m = c_eq.len() + c_in_folded.len();
    if m == 0 {
        return 0.0;
    }
    let eq: f64 = c_eq.iter().map(|c| c.abs()).sum();
    let ineq: f64 = c_in_folded.iter().map(|c| c.max(0.0)).sum();
    (eq + ineq) / m as f64
}

/// Infeasibility of a candidate point on a problem instance, with variable
/// bounds folded into the inequality list.
pub fn inf_metric<P: ParametricProblem>(problem: &P, x_tilde: &[f64], p: &[f64]) -> f64 {
    let (_, c_eq, _) = evaluate(problem, x_tilde, p);
    let folded = folded_ineq(problem, x_tilde, p);
    infeasibility(&c_eq, &folded)
}

/// Per-constraint violation vector: |cE_j| for equalities followed by
/// max(cI_j, 0) for every folded inequality.
pub fn constraint_violations<P: ParametricProblem>(
    problem: &P,
    x_tilde: &[f64],
    p: &[f64],
) -> Vec<f64> {
    let (_, c_eq, _) = evaluate(problem, x_tilde, p);
    let folded = folded_ineq(problem, x_tilde, p);
    c_eq.iter().map(|c| c.abs()).chain(folded.iter().map(|c| c.max(0.0))).collect()
}

/// Relative reduction in maximum infeasibility, instance by instance:
/// `100 * (max_j A_ij - max_j B_ij) / max_ij B_ij` with A the benchmark
/// model and B the comparison model. `None` when B never violates anything
/// (the normalizer vanishes).
pub fn rmi(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<Vec<f64>> {
    assert_eq!(a.len(), b.len(), "instance counts differ");
    let row_max = |row: &[f64]| row.iter().fold(0.0f64, |m, &v| m.max(v));
    let global_b = b.iter().map(|r| row_max(r)).fold(0.0f64, f64::max);
    if global_b == 0.0 {
        return None;
    }
    Some(
        a.iter()
            .zip(b)
            .map(|(ra, rb)| 100.0 * (row_max(ra) - row_max(rb)) / global_b)
            .collect(),
    )
}

fn dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Largest distance from any grid point to its nearest sample: the covering
/// radius of `points` as seen by the grid approximation of the domain.
pub fn covering_radius(points: &[Vec<f64>], grid: &[Vec<f64>]) -> f64 {
    assert!(!points.is_empty() && !grid.is_empty(), "empty point sets");
    grid.par_iter()
        .map(|g| points.iter().map(|p| dist(p, g)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max)
}

/// Largest observed slope of `f` over the given pairs: a lower estimate of
/// the Lipschitz constant that converges as the pair set densifies.
pub fn estimate_lipschitz<F>(f: F, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pairs
        .par_iter()
        .map(|(p, q)| {
            let d = dist(p, q);
            debug_assert!(d > 0.0, "degenerate pair");
            let fp = f(p);
            let fq = f(q);
            dist(&fp, &fq) / d
        })
        .reduce(|| 0.0, f64::max)
}

/// Piecewise-linear interpolant through (xs, ys): matches values only.
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

fn segment(xs: &[f64], x: f64) -> usize {
    let i = xs.partition_point(|&t| t <= x);
    i.clamp(1, xs.len() - 1) - 1
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2 && xs.windows(2).all(|w| w[0] < w[1]), "nodes must increase");
        PiecewiseLinear { xs, ys }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = segment(&self.xs, x);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let i = segment(&self.xs, x);
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }
}

/// Cubic Hermite interpolant through (xs, ys) with prescribed node
/// derivatives: matches values and first derivatives.
pub struct CubicHermite {
    xs: Vec<f64>,
    ys: Vec<f64>,
    dys: Vec<f64>,
}

impl CubicHermite {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, dys: Vec<f64>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert_eq!(xs.len(), dys.len());
        assert!(xs.len() >= 2 && xs.windows(2).all(|w| w[0] < w[1]), "nodes must increase");
        CubicHermite { xs, ys, dys }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = segment(&self.xs, x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.dys[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.dys[i + 1]
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let i = segment(&self.xs, x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        (6.0 * t2 - 6.0 * t) * (self.ys[i] - self.ys[i + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.dys[i]
            + (3.0 * t2 - 2.0 * t) * self.dys[i + 1]
    }
}

/// Which uniform guarantee a record checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Value-matching bound (L_g + L_ghat) * delta on the value error.
    Value,
    /// Derivative-matching bound (M_g + M_ghat) * delta on the Jacobian error.
    Jacobian,
    /// Combined bound (M_g + M_ghat) / 2 * delta^2 on the value error.
    Sobolev,
}

impl BoundKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundKind::Value => "value",
            BoundKind::Jacobian => "jacobian",
            BoundKind::Sobolev => "sobolev",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundRecord {
    pub kind: BoundKind,
    pub train_size: usize,
    pub delta: f64,
    /// Estimated constant of the reference map (L_g or M_g).
    pub const_g: f64,
    /// Estimated constant of the interpolant (L_ghat or M_ghat).
    pub const_hat: f64,
    pub sup_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Verifies the three uniform bounds for one training set of a scalar
/// reference map. Constants come from `pair_count` consecutive pairs over
/// the grid's span; sup errors are measured on `test_grid`.
pub fn verify_bounds(
    g: &(dyn Fn(f64) -> f64 + Sync),
    dg: &(dyn Fn(f64) -> f64 + Sync),
    train_points: &[f64],
    test_grid: &[f64],
    pair_count: usize,
) -> Vec<BoundRecord> {
    assert!(train_points.len() >= 2, "need at least two training points");
    let ys: Vec<f64> = train_points.iter().map(|&x| g(x)).collect();
    let dys: Vec<f64> = train_points.iter().map(|&x| dg(x)).collect();
    let pl = PiecewiseLinear::new(train_points.to_vec(), ys.clone());
    let hermite = CubicHermite::new(train_points.to_vec(), ys, dys);

    let lo = test_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = test_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..pair_count)
        .map(|i| {
            let a = lo + (hi - lo) * i as f64 / pair_count as f64;
            let b = lo + (hi - lo) * (i + 1) as f64 / pair_count as f64;
            (vec![a], vec![b])
        })
        .collect();
    let l_g = estimate_lipschitz(|x| vec![g(x[0])], &pairs);
    let l_pl = estimate_lipschitz(|x| vec![pl.eval(x[0])], &pairs);
    let m_g = estimate_lipschitz(|x| vec![dg(x[0])], &pairs);
    let m_h = estimate_lipschitz(|x| vec![hermite.deriv(x[0])], &pairs);

    let pts: Vec<Vec<f64>> = train_points.iter().map(|&x| vec![x]).collect();
    let grid: Vec<Vec<f64>> = test_grid.iter().map(|&x| vec![x]).collect();
    let delta = covering_radius(&pts, &grid);

    let sup = |f: &dyn Fn(f64) -> f64| {
        test_grid.iter().map(|&x| f(x).abs()).fold(0.0f64, f64::max)
    };
    let value_err = sup(&|x| pl.eval(x) - g(x));
    let jac_err = sup(&|x| hermite.deriv(x) - dg(x));
    let sobolev_err = sup(&|x| hermite.eval(x) - g(x));

    let mk = |kind, cg: f64, ch: f64, err: f64, bound: f64| BoundRecord {
        kind,
        train_size: train_points.len(),
        delta,
        const_g: cg,
        const_hat: ch,
        sup_error: err,
        bound,
        pass: err <= bound,
    };
    vec![
        mk(BoundKind::Value, l_g, l_pl, value_err, (l_g + l_pl) * delta),
        mk(BoundKind::Jacobian, m_g, m_h, jac_err, (m_g + m_h) * delta),
        mk(BoundKind::Sobolev, m_g, m_h, sobolev_err, 0.5 * (m_g + m_h) * delta * delta),
    ]
}

/// Runs `verify_bounds` for equispaced training sets of the given sizes on
/// g = sin over [0, 2*pi].
pub fn verify_bounds_sin(sizes: &[usize], grid_len: usize, pair_count: usize) -> Vec<BoundRecord> {
    let span = 2.0 * std::f64::consts::PI;
    let grid: Vec<f64> =
        (0..grid_len).map(|i| span * i as f64 / (grid_len - 1) as f64).collect();
    let mut out = Vec::new();
    for &k in sizes {
        let pts: Vec<f64> = (0..k).map(|i| span * i as f64 / (k - 1) as f64).collect();
        out.extend(verify_bounds(&f64::sin, &f64::cos, &pts, &grid, pair_count));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RateCheck {
    pub kind: BoundKind,
    pub from_size: usize,
    pub to_size: usize,
    /// Ratio of successive bound values; gated against the band implied by
    /// the guarantee's delta power.
    pub bound_ratio: f64,
    /// Ratio of successive measured sup errors, reported for information:
    /// these interpolants converge faster than the guaranteed rate.
    pub error_ratio: f64,
    pub band: (f64, f64),
    pub pass: bool,
}

/// Checks that halving the covering radius scales the value bound by about
/// 2x and the combined bound by about 4x, per their delta powers.
pub fn bound_rate_checks(records: &[BoundRecord]) -> Vec<RateCheck> {
    let mut out = Vec::new();
    for (kind, band) in [(BoundKind::Value, (1.6, 2.6)), (BoundKind::Sobolev, (3.0, 5.0))] {
        let mut seq: Vec<&BoundRecord> = records.iter().filter(|r| r.kind == kind).collect();
        seq.sort_by_key(|r| r.train_size);
        for w in seq.windows(2) {
            let bound_ratio = w[0].bound / w[1].bound;
            let error_ratio = w[0].sup_error / w[1].sup_error;
            out.push(RateCheck {
                kind,
                from_size: w[0].train_size,
                to_size: w[1].train_size,
                bound_ratio,
                error_ratio,
                band,
                pass: bound_ratio >= band.0 && bound_ratio <= band.1,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceMetrics {
    pub mse: f64,
    pub gap: Option<f64>,
    pub inf: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Aggregate {
    pub fn from_values(xs: &[f64]) -> Option<Aggregate> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Some(Aggregate { mean, median, std: var.sqrt() })
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_instance: Vec<InstanceMetrics>,
    pub mse_agg: Option<Aggregate>,
    pub inf_agg: Option<Aggregate>,
    pub gap_agg: Option<Aggregate>,
    /// Records whose reference objective was zero, making GAP undefined.
    pub gap_undefined: usize,
}

/// Per-record proxy metrics over a dataset: prediction MSE, relative
/// objective gap at the prediction, and mean infeasibility.
pub fn evaluate_model(
    model: &MlpModel,
    data: &Dataset,
    problem: &ProblemInstance,
) -> EvalReport {
    let per_instance: Vec<InstanceMetrics> = data
        .records
        .par_iter()
        .map(|rec| {
            let pred = model.forward(&rec.p);
            let m = mse(&pred, &rec.x_star).expect("dataset dimensions");
            let (z_tilde, _, _) = evaluate(problem, &pred, &rec.p);
            InstanceMetrics {
                mse: m,
                gap: gap(z_tilde, rec.objective),
                inf: inf_metric(problem, &pred, &rec.p),
            }
        })
        .collect();
    let mses: Vec<f64> = per_instance.iter().map(|m| m.mse).collect();
    let infs: Vec<f64> = per_instance.iter().map(|m| m.inf).collect();
    let gaps: Vec<f64> = per_instance.iter().filter_map(|m| m.gap).collect();
    EvalReport {
        gap_undefined: per_instance.len() - gaps.len(),
        mse_agg: Aggregate::from_values(&mses),
        inf_agg: Aggregate::from_values(&infs),
        gap_agg: Aggregate::from_values(&gaps),
        per_instance,
    }
}

/// Violation matrix (instances x constraints) of a model's predictions,
/// ready for `rmi`.
pub fn violation_matrix(
    model: &MlpModel,
    data: &Dataset,
    problem: &ProblemInstance,
) -> Vec<Vec<f64>> {
    data.records
        .par_iter()
        .map(|rec| constraint_violations(problem, &model.forward(&rec.p), &rec.p))
        .collect()
}

/// Mean per-record MSE of a model over a record set.
pub fn model_mse(model: &MlpModel, records: &[SolutionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .map(|r| mse(&model.forward(&r.p), &r.x_star).expect("dataset dimensions"))
        .sum::<f64>()
        / records.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct AblationRow {
    pub sparsity: f64,
    pub kept_fraction: f64,
    pub test_mse: f64,
}

/// Re-masks a full-Jacobian training set at each sparsity, retrains from the
/// same seed, and reports the trained model's test MSE. Records that lack a
/// requested Jacobian entry keep the intersection (degenerate records stay
/// value-only), so no sensitivities are ever invented.
pub fn ablate_mask(
    train_data: &Dataset,
    test_data: &Dataset,
    sparsities: &[f64],
    base_config: &TrainConfig,
    problem: Option<&ProblemInstance>,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(sparsities.len());
    for &s in sparsities {
        let mut remasked = train_data.clone();
        remasked.config.sparsity = s;
        for (i, rec) in remasked.records.iter_mut().enumerate() {
            let mask = sample_mask(train_data.n, train_data.d, s, train_data.config.seed ^ i as u64);
            let stored: std::collections::HashMap<(usize, usize), f64> =
                rec.jac_entries.iter().map(|&(r, c, v)| ((r, c), v)).collect();
            rec.jac_entries = mask
                .kept_entries
                .iter()
                .filter_map(|&(r, c)| stored.get(&(r, c)).map(|&v| (r, c, v)))
                .collect();
            rec.mask = mask;
        }
        let (model, _) = train(&remasked, None, base_config, problem)?;
        rows.push(AblationRow {
            sparsity: s,
            kept_fraction: 1.0 - s,
            test_mse: model_mse(&model, &test_data.records),
        });
    }
    Ok(rows)
}
