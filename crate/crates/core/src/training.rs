//! Training loop: the four loss modes, Adam, deterministic shuffling, and
//! per-epoch reporting.
//!
//! Everything that influences the trajectory (weight init, shuffle order,
//! batch boundaries) derives from the config seed, so two runs with the same
//! config and dataset produce bit-identical models and reports. The masked
//! Jacobian machinery is only entered for Sobolev modes with a nonzero
//! weight, which keeps value-mode epochs independent of mask size and makes
//! `lambda = 0` literally the value-mode code path.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datagen::{Dataset, SolutionRecord};
use crate::problems::{penalized_objective, PenalizedProblem, ProblemInstance};
use crate::proxy::{
    loss_and_gradient, Activation, LossMode, MlpModel, PortfolioProjection, ProxyError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    BadBatch,
    #[error("lambda weight must be nonnegative, got {0}")]
    BadLambda(f64),
    #[error("self-supervised training requires the problem instance")]
    MissingProblem,
    #[error("training loss became non-finite at epoch {epoch} (value {value})")]
    Diverged { epoch: usize, value: f64 },
    #[error(transparent)]
    Proxy(#[from] ProxyError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub lambda_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Constraint penalty weight for the self-supervised objective.
    pub beta: f64,
    /// Bound penalty weight for the self-supervised objective.
    pub gamma: f64,
    /// Validation MSE is recorded every this many epochs (and at the end).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: LossMode::Value,
            lambda_weight: 0.1,
            epochs: 2000,
            batch_size: 32,
            eta: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            hidden: vec![16],
            activation: Activation::Tanh,
            beta: 100.0,
            gamma: 100.0,
            val_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub value_term: f64,
    pub jacobian_term: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ValPoint {
    pub epoch: usize,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_trajectory: Vec<EpochLoss>,
    pub val_trajectory: Vec<ValPoint>,
    pub warnings: Vec<String>,
    /// Wall time is informational only; serialized outputs omit it so runs
    /// stay byte-identical.
    pub wall_time_secs: f64,
}

/// Mean squared error of the (projected) forward map against stored optima.
pub fn value_loss(model: &MlpModel, rec: &SolutionRecord) -> f64 {
    let out = model.forward(&rec.p);
    let n = out.len() as f64;
    out.iter().zip(&rec.x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Masked Jacobian residual mean over a record's kept entries; zero when the
/// record carries no Jacobian (degenerate records train on values only).
fn jacobian_term(model: &MlpModel, rec: &SolutionRecord) -> f64 {
    if rec.jac_entries.is_empty() {
        return 0.0;
    }
    let jac = model.input_jacobian(&rec.p);
    let k = rec.jac_entries.len() as f64;
    rec.jac_entries
        .iter()
        .map(|&(r, c, target)| {
            let res = jac[r][c] - target;
            res * res
        })
        .sum::<f64>()
        / k
}

/// Value loss plus the weighted masked-Jacobian penalty.
pub fn sobolev_loss(model: &MlpModel, rec: &SolutionRecord, lambda_weight: f64) -> f64 {
    value_loss(model, rec) + lambda_weight * jacobian_term(model, rec)
}

/// Penalized problem objective at the proxy's (projected) output: the
/// training signal that needs no solver labels.
pub fn selfsup_loss(
    model: &MlpModel,
    pen: &PenalizedProblem<'_, ProblemInstance>,
    p: &[f64],
) -> f64 {
    let out = model.forward(p);
    penalized_objective(pen, &out, p)
}

/// Self-supervised value term plus the masked-Jacobian penalty.
pub fn selfsup_sobolev_loss(
    model: &MlpModel,
    rec: &SolutionRecord,
    pen: &PenalizedProblem<'_, ProblemInstance>,
    lambda_weight: f64,
) -> f64 {
    selfsup_loss(model, pen, &rec.p) + lambda_weight * jacobian_term(model, rec)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    eta: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(len: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            eta: cfg.eta,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.eta * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

fn dataset_mse(model: &MlpModel, records: &[SolutionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| value_loss(model, r)).sum::<f64>() / records.len() as f64
}

/// Trains a fresh proxy on `train_data`. The problem instance is required
/// for self-supervised modes and, when it is the portfolio family, provides
/// the feasibility projection head.
pub fn train(
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    config: &TrainConfig,
    problem: Option<&ProblemInstance>,
) -> Result<(MlpModel, TrainReport), TrainError> {
    if train_data.records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(TrainError::BadBatch);
    }
    if config.lambda_weight < 0.0 {
        return Err(TrainError::BadLambda(config.lambda_weight));
    }
    if config.mode.is_self_supervised() && problem.is_none() {
        return Err(TrainError::MissingProblem);
    }

    let started = Instant::now();
    let mut warnings = Vec::new();
    if config.mode.has_jacobian_term() && config.activation.second_derivative_degenerate() {
        warnings.push(format!(
            "activation {} has an almost-everywhere zero second derivative; the Jacobian term trains only through first-order structure",
            config.activation.as_str()
        ));
    }

    let mut model = MlpModel::new(
        train_data.d,
        config.hidden.clone(),
        train_data.n,
        config.activation,
        config.seed,
    );
    if let Some(ProblemInstance::Markowitz(m)) = problem {
        model = model.with_projection(PortfolioProjection::for_markowitz(m));
    }
    let pen = problem.map(|base| PenalizedProblem { base, beta: config.beta, gamma: config.gamma });
    let pen_ref = if config.mode.is_self_supervised() { pen.as_ref() } else { None };

    let mut params = model.params_flat();
    let mut adam = Adam::new(params.len(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_records = train_data.records.len();
    let mut order: Vec<usize> = (0..n_records).collect();

    let mut train_trajectory = Vec::with_capacity(config.epochs);
    let mut val_trajectory = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_value = 0.0;
        let mut sum_jac = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SolutionRecord> =
                chunk.iter().map(|&i| &train_data.records[i]).collect();
            let (loss, grad) =
                loss_and_gradient(&model, &batch, config.lambda_weight, config.mode, pen_ref)?;
            if !loss.total.is_finite() {
                return Err(TrainError::Diverged { epoch, value: loss.total });
            }
            let w = chunk.len() as f64;
            sum_total += loss.total * w;
            sum_value += loss.value_term * w;
            sum_jac += loss.jacobian_term * w;
            adam.step(&mut params, &grad);
            model.set_params_flat(&params);
        }
        let scale = n_records as f64;
        train_trajectory.push(EpochLoss {
            epoch,
            total: sum_total / scale,
            value_term: sum_value / scale,
            jacobian_term: sum_jac / scale,
        });
        if let Some(val) = val_data {
            if epoch % config.val_every == 0 || epoch == config.epochs {
                val_trajectory.push(ValPoint { epoch, mse: dataset_mse(&model, &val.records) });
            }
        }
    }

    let report = TrainReport {
        epochs_run: config.epochs,
        train_trajectory,
        val_trajectory,
        warnings,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_dataset, MaskSpec, Regularity, SplitCounts};
    use crate::problems::{Markowitz, ToyQp};
    use crate::solver::{solve, SolveOptions};

    fn toy_datasets(train: usize, val: usize, seed: u64) -> (Dataset, Dataset) {
        let q = ToyQp::default();
        let counts = SplitCounts { train, val, test: 0 };
        let (mut sets, report) =
            build_dataset(&q, counts, [1.0, 0.0, 0.0], 0.0, seed).unwrap();
        assert_eq!(report.total_failures(), 0);
        let v = sets.remove(1);
        let t = sets.remove(0);
        (t, v)
    }

    #[test]
    fn zero_epochs_returns_the_initialized_model_unchanged() {
        let (train_set, _) = toy_datasets(8, 0, 3);
        let config = TrainConfig { epochs: 0, ..Default::default() };
        let (model, report) = train(&train_set, None, &config, None).unwrap();
        let fresh = MlpModel::new(1, config.hidden.clone(), 1, config.activation, config.seed);
        assert_eq!(model.params_flat(), fresh.params_flat());
        assert!(report.train_trajectory.is_empty());
        assert!(report.val_trajectory.is_empty());
    }

    #[test]
    fn lambda_zero_sobolev_walks_the_exact_value_mode_trajectory() {
        let (train_set, _) = toy_datasets(24, 0, 5);
        let base = TrainConfig {
            epochs: 15,
            batch_size: 8,
            lambda_weight: 0.0,
            ..Default::default()
        };
        let value_cfg = TrainConfig { mode: LossMode::Value, ..base.clone() };
        let sobolev_cfg = TrainConfig { mode: LossMode::Sobolev, ..base };
        let (m1, r1) = train(&train_set, None, &value_cfg, None).unwrap();
        let (m2, r2) = train(&train_set, None, &sobolev_cfg, None).unwrap();
        for (a, b) in m1.params_flat().iter().zip(m2.params_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in r1.train_trajectory.iter().zip(&r2.train_trajectory) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
    }

    #[test]
    fn training_is_deterministic_bit_for_bit() {
        let (train_set, val_set) = toy_datasets(32, 8, 9);
        let config = TrainConfig {
            mode: LossMode::Sobolev,
            lambda_weight: 0.2,
            epochs: 12,
            batch_size: 8,
            val_every: 4,
            ..Default::default()
        };
        let (m1, r1) = train(&train_set, Some(&val_set), &config, None).unwrap();
        let (m2, r2) = train(&train_set, Some(&val_set), &config, None).unwrap();
        assert_eq!(m1.params_flat(), m2.params_flat());
        assert_eq!(r1.train_trajectory.len(), r2.train_trajectory.len());
        for (a, b) in r1.train_trajectory.iter().zip(&r2.train_trajectory) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
            assert_eq!(a.value_term.to_bits(), b.value_term.to_bits());
            assert_eq!(a.jacobian_term.to_bits(), b.jacobian_term.to_bits());
        }
        for (a, b) in r1.val_trajectory.iter().zip(&r2.val_trajectory) {
            assert_eq!(a.mse.to_bits(), b.mse.to_bits());
        }
    }

    #[test]
    fn reported_loss_decomposes_exactly_every_epoch() {
        let (train_set, _) = toy_datasets(32, 0, 13);
        let config = TrainConfig {
            mode: LossMode::Sobolev,
            lambda_weight: 0.35,
            epochs: 10,
            batch_size: 8,
            ..Default::default()
        };
        let (_, report) = train(&train_set, None, &config, None).unwrap();
        assert_eq!(report.train_trajectory.len(), 10);
        for e in &report.train_trajectory {
            let recomposed = e.value_term + 0.35 * e.jacobian_term;
            assert!(
                (e.total - recomposed).abs() <= 1e-12,
                "epoch {}: {} vs {}",
                e.epoch,
                e.total,
                recomposed
            );
        }
    }

    #[test]
    fn trajectory_lengths_follow_epochs_and_cadence() {
        let (train_set, val_set) = toy_datasets(16, 8, 17);
        let config = TrainConfig { epochs: 25, val_every: 10, ..Default::default() };
        let (_, report) = train(&train_set, Some(&val_set), &config, None).unwrap();
        assert_eq!(report.train_trajectory.len(), 25);
        let epochs: Vec<usize> = report.val_trajectory.iter().map(|v| v.epoch).collect();
        assert_eq!(epochs, vec![10, 20, 25]);
        assert!(report.wall_time_secs > 0.0);
    }

    #[test]
    fn exploding_step_size_trips_the_divergence_guard() {
        let (train_set, _) = toy_datasets(8, 0, 19);
        let config = TrainConfig { eta: 1e160, epochs: 5, ..Default::default() };
        match train(&train_set, None, &config, None) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn selfsup_without_problem_is_rejected_and_relu_sobolev_warns() {
        let (train_set, _) = toy_datasets(8, 0, 23);
        let config = TrainConfig { mode: LossMode::SelfSup, epochs: 1, ..Default::default() };
        assert!(matches!(train(&train_set, None, &config, None), Err(TrainError::MissingProblem)));

        let relu_cfg = TrainConfig {
            mode: LossMode::Sobolev,
            activation: Activation::Relu,
            epochs: 1,
            ..Default::default()
        };
        let (_, report) = train(&train_set, None, &relu_cfg, None).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("second derivative"));
    }

    #[test]
    fn value_loss_examples() {
        let mut m = MlpModel::new(1, vec![], 2, Activation::Tanh, 1);
        m.set_params_flat(&[0.0, 0.0, 1.0, 1.0]);
        let rec = SolutionRecord {
            p: vec![0.5],
            x_star: vec![0.0, 0.0],
            lambda: vec![],
            objective: 0.0,
            jac_entries: vec![],
            mask: MaskSpec { kept_entries: vec![], sparsity: 0.0 },
            regularity: Regularity::Regular,
        };
        // Prediction (1,1) against target (0,0): mean squared error 1.
        assert_eq!(value_loss(&m, &rec), 1.0);
        let exact = SolutionRecord { x_star: vec![1.0, 1.0], ..rec };
        assert_eq!(value_loss(&m, &exact), 0.0);
    }

    #[test]
    fn sobolev_loss_reduces_to_value_loss_when_the_jacobian_matches() {
        let rec = SolutionRecord {
            p: vec![1.5],
            x_star: vec![0.75],
            lambda: vec![],
            objective: 0.0,
            jac_entries: vec![(0, 0, 0.5)],
            mask: MaskSpec { kept_entries: vec![(0, 0)], sparsity: 0.0 },
            regularity: Regularity::Regular,
        };
        let mut m = MlpModel::new(1, vec![], 1, Activation::Tanh, 1);
        m.set_params_flat(&[0.5, 0.0]);
        assert!((sobolev_loss(&m, &rec, 2.0) - value_loss(&m, &rec)).abs() < 1e-15);
        // A mismatched slope adds exactly lambda * (slope difference)^2.
        m.set_params_flat(&[1.5, 0.0]);
        let expect = value_loss(&m, &rec) + 2.0 * 1.0;
        assert!((sobolev_loss(&m, &rec, 2.0) - expect).abs() < 1e-12);
        // Degenerate records (no Jacobian entries) fall back to value loss.
        let degenerate = SolutionRecord {
            jac_entries: vec![],
            regularity: Regularity::DegenerateComplementarity,
            ..rec
        };
        assert_eq!(sobolev_loss(&m, &degenerate, 2.0), value_loss(&m, &degenerate));
    }

    #[test]
    fn selfsup_loss_at_the_known_optimum_equals_the_solver_objective() {
        let m = Markowitz::seeded(2);
        let p = vec![0.12, 0.2, 0.18];
        let result = solve(&m, &p, &SolveOptions::default()).unwrap();
        let base = ProblemInstance::Markowitz(m);
        let pen = PenalizedProblem { base: &base, beta: 100.0, gamma: 100.0 };
        // A constant network pinned to x*.
        let mut model = MlpModel::new(3, vec![], 2, Activation::Tanh, 1);
        let mut theta = vec![0.0; model.num_params()];
        theta[6] = result.x_star[0];
        theta[7] = result.x_star[1];
        model.set_params_flat(&theta);
        let loss = selfsup_loss(&model, &pen, &p);
        assert!(
            (loss - result.objective).abs() < 1e-9,
            "{loss} vs solver objective {}",
            result.objective
        );
        // With penalties off, the loss is the raw objective of the output.
        let pen_off = PenalizedProblem { base: &base, beta: 0.0, gamma: 0.0 };
        let loss_off = selfsup_loss(&model, &pen_off, &p);
        let mu_dot: f64 = -(p[0] * result.x_star[0] + p[1] * result.x_star[1]);
        assert!((loss_off - mu_dot).abs() < 1e-12);
    }

    #[test]
    fn selfsup_sobolev_is_the_sum_of_its_parts() {
        let base = ProblemInstance::ToyQp(ToyQp::default());
        let pen = PenalizedProblem { base: &base, beta: 100.0, gamma: 100.0 };
        let rec = SolutionRecord {
            p: vec![1.4],
            x_star: vec![1.4],
            lambda: vec![0.0],
            objective: 0.0,
            jac_entries: vec![(0, 0, 1.0)],
            mask: MaskSpec { kept_entries: vec![(0, 0)], sparsity: 0.0 },
            regularity: Regularity::Regular,
        };
        let mut model = MlpModel::new(1, vec![], 1, Activation::Tanh, 1);
        model.set_params_flat(&[0.7, 0.4]);
        let lambda = 0.6;
        let composite = selfsup_sobolev_loss(&model, &rec, &pen, lambda);
        let jac = model.input_jacobian(&rec.p)[0][0];
        let parts = selfsup_loss(&model, &pen, &rec.p) + lambda * (jac - 1.0) * (jac - 1.0);
        assert!((composite - parts).abs() < 1e-12);
    }

    #[test]
    fn tanh_width_16_fits_the_affine_solution_map() {
        // The toy QP solution is x* = p on this box, so an affine model must
        // fit it nearly perfectly; verify that before asking it of the net.
        let (train_set, val_set) = toy_datasets(512, 128, 29);
        let xs: Vec<f64> = train_set.records.iter().map(|r| r.p[0]).collect();
        let ys: Vec<f64> = train_set.records.iter().map(|r| r.x_star[0]).collect();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx = xs.iter().map(|x| x * x).sum::<f64>();
        let sxy = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>();
        let w = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let b = (sy - w * sx) / n;
        let lsq_mse = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let r = w * x + b - y;
                r * r
            })
            .sum::<f64>()
            / n;
        assert!(lsq_mse <= 1e-6, "affine fit MSE {lsq_mse}");

        let config = TrainConfig {
            mode: LossMode::Value,
            epochs: 2000,
            val_every: 500,
            seed: 1,
            ..Default::default()
        };
        let (_, report) = train(&train_set, Some(&val_set), &config, None).unwrap();
        let final_mse = report.val_trajectory.last().unwrap().mse;
        assert!(final_mse <= 1e-4, "validation MSE {final_mse}");
    }
}
