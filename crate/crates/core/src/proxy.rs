//! The neural proxy: a fully connected network with an analytic
//! input-Jacobian, exact gradients for every loss mode (including the nested
//! derivative of the masked-Jacobian term), and an optional feasibility
//! projection head for portfolio problems.
//!
//! The network maps parameters p in R^d to a predicted solution in R^n
//! through hidden layers with a pointwise activation; the output layer is
//! affine. The input Jacobian is the exact chain-rule product
//! `W_L D_{L-1} ... D_1 W_1` evaluated on the pre-projection output, where
//! `D_l` is the diagonal of activation derivatives at layer l.
//!
//! Training the Jacobian term needs d(J_rc)/d(theta), a derivative of a
//! derivative. Rather than a second-order tape, each masked column c gets a
//! forward tangent sweep (seeded with e_c) interleaved with the primal pass,
//! and a reverse sweep over the doubled graph; the activation's second
//! derivative enters exactly once per layer, as a diagonal term. The cost
//! scales with the number of distinct masked columns, which is what makes
//! sparse masks cheap.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{self, AdError};
use crate::datagen::SolutionRecord;
use crate::jsonfmt;
use crate::problems::{penalized_objective, Markowitz, PenalizedProblem, ProblemInstance};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("record has dimensions incompatible with the model")]
    Dimension,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("self-supervised mode requires the problem instance")]
    MissingProblem,
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("model file line {0}: {1}")]
    Parse(usize, String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Pointwise activation applied to every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
    Sigmoid,
    Relu,
    LeakyRelu,
}

const LEAKY_SLOPE: f64 = 0.01;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "softplus" => Some(Activation::Softplus),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            "leaky_relu" => Some(Activation::LeakyRelu),
            _ => None,
        }
    }

    /// True when the second derivative vanishes almost everywhere, which
    /// weakens (but does not break) Jacobian-term training.
    pub fn second_derivative_degenerate(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }

    pub fn act(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    pub fn d1(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    pub fn d2(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Relu | Activation::LeakyRelu => 0.0,
        }
    }
}

/// Feasibility head for portfolio outputs: clip negatives, rescale onto the
/// budget, then rescale into the risk ball. Each stage is the identity when
/// its constraint already holds, so the composed map is idempotent.
#[derive(Debug, Clone)]
pub struct PortfolioProjection {
    /// Transposed Cholesky factor: risk(v) = ||sigma_half_t * v||.
    sigma_half_t: DMatrix<f64>,
    budget: f64,
}

/// Intermediates of one projection evaluation, kept for the backward pass.
struct ProjectionTrace {
    clipped: DVector<f64>,
    budget_scaled: bool,
    sum: f64,
    v: DVector<f64>,
    risk_scaled: bool,
    q: DVector<f64>,
    rho: f64,
    sigma_max: f64,
}

impl PortfolioProjection {
    pub fn new(sigma_half: &[Vec<f64>], budget: f64) -> Self {
        let n = sigma_half.len();
        let sigma_half_t = DMatrix::from_fn(n, n, |i, j| sigma_half[j][i]);
        PortfolioProjection { sigma_half_t, budget }
    }

    pub fn for_markowitz(m: &Markowitz) -> Self {
        PortfolioProjection::new(m.sigma_half(), m.budget())
    }

    pub fn dim(&self) -> usize {
        self.sigma_half_t.nrows()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn sigma_half_t(&self) -> &DMatrix<f64> {
        &self.sigma_half_t
    }

    fn project_trace(&self, x_raw: &DVector<f64>, sigma_max: f64) -> (DVector<f64>, ProjectionTrace) {
        let clipped = x_raw.map(|v| v.max(0.0));
        let sum = clipped.sum();
        let (v, budget_scaled) = if sum > self.budget {
            (&clipped * (self.budget / sum), true)
        } else {
            (clipped.clone(), false)
        };
        let q = &self.sigma_half_t * &v;
        let rho = q.norm();
        let (out, risk_scaled) = if rho > sigma_max {
            (&v * (sigma_max / rho), true)
        } else {
            (v.clone(), false)
        };
        let trace = ProjectionTrace {
            clipped,
            budget_scaled,
            sum,
            v,
            risk_scaled,
            q,
            rho,
            sigma_max,
        };
        (out, trace)
    }

    pub fn project(&self, x_raw: &[f64], sigma_max: f64) -> Vec<f64> {
        let (out, _) = self.project_trace(&DVector::from_column_slice(x_raw), sigma_max);
        out.iter().copied().collect()
    }

    /// Pulls a cotangent on the projected output back to the raw input.
    fn vjp(&self, trace: &ProjectionTrace, cotangent: &DVector<f64>) -> DVector<f64> {
        let mut bar = cotangent.clone();
        if trace.risk_scaled {
            // out = sigma_max * v / rho(v), rho = ||sigma_half_t v||.
            let s = trace.sigma_max / trace.rho;
            let dot = bar.dot(&trace.v);
            let grad_rho = self.sigma_half_t.transpose() * &trace.q / trace.rho;
            bar = &bar * s - grad_rho * (s * dot / (trace.rho * trace.rho)) * trace.rho;
        }
        if trace.budget_scaled {
            // v = B * u / sum(u).
            let s = self.budget / trace.sum;
            let dot = bar.dot(&trace.clipped);
            let correction = s * dot / trace.sum;
            bar = bar.map(|b| s * b - correction);
        }
        // Clip stage: zero where the input was clipped.
        DVector::from_fn(bar.len(), |i, _| {
            if trace.clipped[i] > 0.0 {
                bar[i]
            } else {
                0.0
            }
        })
    }
}

/// Projects a raw output using the sigma_max carried in the parameter
/// vector's last coordinate.
pub fn project_portfolio(head: &PortfolioProjection, x_raw: &[f64], p: &[f64]) -> Vec<f64> {
    head.project(x_raw, p[p.len() - 1])
}

/// Which loss the proxy is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Value,
    Sobolev,
    SelfSup,
    SelfSupSobolev,
}

impl LossMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Value => "value",
            LossMode::Sobolev => "sobolev",
            LossMode::SelfSup => "selfsup",
            LossMode::SelfSupSobolev => "selfsup_sobolev",
        }
    }

    pub fn parse(s: &str) -> Option<LossMode> {
        match s.replace('-', "_").as_str() {
            "value" => Some(LossMode::Value),
            "sobolev" => Some(LossMode::Sobolev),
            "selfsup" => Some(LossMode::SelfSup),
            "selfsup_sobolev" => Some(LossMode::SelfSupSobolev),
            _ => None,
        }
    }

    pub fn has_jacobian_term(&self) -> bool {
        matches!(self, LossMode::Sobolev | LossMode::SelfSupSobolev)
    }

    pub fn is_self_supervised(&self) -> bool {
        matches!(self, LossMode::SelfSup | LossMode::SelfSupSobolev)
    }
}

/// Fully connected proxy model mapping R^d to R^n.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// weights[l] has shape (widths[l+1], widths[l]).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub projection: Option<PortfolioProjection>,
}

impl MlpModel {
    /// Glorot-uniform weights (`+-sqrt(6/(fan_in+fan_out))`), zero biases,
    /// all draws from one seeded stream in layer order.
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&hidden);
        widths.push(output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for r in 0..fan_out {
                for c in 0..fan_in {
                    w[(r, c)] = rng.random_range(-lim..=lim);
                }
            }
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        MlpModel { input_dim, hidden, output_dim, activation, weights, biases, projection: None }
    }

    pub fn with_projection(mut self, head: PortfolioProjection) -> Self {
        assert_eq!(head.dim(), self.output_dim, "projection dimension mismatch");
        self.projection = Some(head);
        self
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Weights then bias per layer, weights row-major. The gradient from
    /// `loss_and_gradient` uses the same layout.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = flat[k];
                    k += 1;
                }
            }
            for i in 0..b.len() {
                b[i] = flat[k];
                k += 1;
            }
        }
    }

    fn forward_trace(&self, p: &[f64]) -> ForwardTrace {
        let l_count = self.num_layers();
        let mut acts = Vec::with_capacity(l_count);
        let mut zs = Vec::with_capacity(l_count);
        acts.push(DVector::from_column_slice(p));
        for l in 0..l_count {
            let z = &self.weights[l] * &acts[l] + &self.biases[l];
            if l + 1 < l_count {
                acts.push(z.map(|v| self.activation.act(v)));
            }
            zs.push(z);
        }
        ForwardTrace { acts, zs }
    }

    /// Pre-projection network output.
    pub fn forward_raw(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.input_dim, "input dimension mismatch");
        let trace = self.forward_trace(p);
        trace.zs.last().unwrap().iter().copied().collect()
    }

    /// Full forward map; applies the projection head last when present
    /// (sigma_max is read from the final parameter coordinate).
    pub fn forward(&self, p: &[f64]) -> Vec<f64> {
        let raw = self.forward_raw(p);
        match &self.projection {
            Some(head) => project_portfolio(head, &raw, p),
            None => raw,
        }
    }

    /// Exact n x d Jacobian of the pre-projection output.
    pub fn input_jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(p.len(), self.input_dim, "input dimension mismatch");
        let trace = self.forward_trace(p);
        let mut m = self.weights[0].clone();
        for l in 1..self.num_layers() {
            let d1 = trace.zs[l - 1].map(|v| self.activation.d1(v));
            for r in 0..m.nrows() {
                let s = d1[r];
                for c in 0..m.ncols() {
                    m[(r, c)] *= s;
                }
            }
            m = &self.weights[l] * m;
        }
        (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_model(self, &mut w)?;
        w.flush()
    }

    pub fn load(path: &Path) -> Result<MlpModel, ProxyError> {
        let mut text = String::new();
        BufReader::new(File::open(path)?).read_to_string(&mut text)?;
        read_model(&text)
    }
}

struct ForwardTrace {
    /// acts[l] is the input to layer l (acts[0] = p).
    acts: Vec<DVector<f64>>,
    /// zs[l] is the pre-activation output of layer l; zs.last() is the raw output.
    zs: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub value_term: f64,
    pub jacobian_term: f64,
}

/// Per-layer gradient accumulator with the same shapes as the model.
struct GradAcc {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl GradAcc {
    fn zeros(model: &MlpModel) -> Self {
        GradAcc {
            w: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            b: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Standard reverse sweep from an adjoint on the raw output.
fn backprop_value(model: &MlpModel, trace: &ForwardTrace, out_adjoint: DVector<f64>, acc: &mut GradAcc) {
    let l_count = model.num_layers();
    let mut delta = out_adjoint;
    for l in (0..l_count).rev() {
        acc.w[l] += &delta * trace.acts[l].transpose();
        acc.b[l] += &delta;
        if l > 0 {
            let back = model.weights[l].transpose() * delta;
            let d1 = trace.zs[l - 1].map(|v| model.activation.d1(v));
            delta = back.component_mul(&d1);
        }
    }
}

/// Reverse sweep for the masked-Jacobian term of one input column.
///
/// The forward tangent (seeded with e_c) produces zeta_l = W_l tau_{l-1};
/// J[:, c] is the last zeta. Differentiating that scalar pattern w.r.t. the
/// weights threads two adjoints backwards: one along the tangent line
/// (zeta_hat) and one along the primal line (z_hat), coupled by the
/// activation's first and second derivatives.
fn backprop_jacobian_column(
    model: &MlpModel,
    trace: &ForwardTrace,
    col: usize,
    out_tangent_adjoint: DVector<f64>,
    acc: &mut GradAcc,
) {
    let l_count = model.num_layers();
    // Forward tangent pass, storing the tangent at each layer input (tau)
    // and each pre-activation (zeta).
    let mut taus: Vec<DVector<f64>> = Vec::with_capacity(l_count);
    let mut zetas: Vec<DVector<f64>> = Vec::with_capacity(l_count);
    let mut tau = DVector::zeros(model.input_dim);
    tau[col] = 1.0;
    for l in 0..l_count {
        taus.push(tau.clone());
        let zeta = &model.weights[l] * &tau;
        if l + 1 < l_count {
            let d1 = trace.zs[l].map(|v| model.activation.d1(v));
            tau = zeta.component_mul(&d1);
        }
        zetas.push(zeta);
    }

    let mut zeta_hat = out_tangent_adjoint;
    let mut z_hat = DVector::zeros(zeta_hat.len());
    for l in (0..l_count).rev() {
        acc.w[l] += &zeta_hat * taus[l].transpose() + &z_hat * trace.acts[l].transpose();
        acc.b[l] += &z_hat;
        if l > 0 {
            let tau_bar = model.weights[l].transpose() * zeta_hat;
            let a_bar = model.weights[l].transpose() * z_hat;
            let d1 = trace.zs[l - 1].map(|v| model.activation.d1(v));
            let d2 = trace.zs[l - 1].map(|v| model.activation.d2(v));
            zeta_hat = tau_bar.component_mul(&d1);
            z_hat = tau_bar.component_mul(&d2).component_mul(&zetas[l - 1])
                + a_bar.component_mul(&d1);
        }
    }
}

/// One record's loss terms and parameter gradient.
fn record_loss_grad(
    model: &MlpModel,
    rec: &SolutionRecord,
    lambda_weight: f64,
    mode: LossMode,
    selfsup: Option<&PenalizedProblem<'_, ProblemInstance>>,
) -> Result<(f64, f64, GradAcc), ProxyError> {
    if rec.p.len() != model.input_dim || rec.x_star.len() != model.output_dim {
        return Err(ProxyError::Dimension);
    }
    let n = model.output_dim;
    let trace = model.forward_trace(&rec.p);
    let raw = trace.zs.last().unwrap().clone();
    let mut acc = GradAcc::zeros(model);

    let projected = model
        .projection
        .as_ref()
        .map(|head| head.project_trace(&raw, rec.p[rec.p.len() - 1]));

    let value_term = if mode.is_self_supervised() {
        let pen = selfsup.ok_or(ProxyError::MissingProblem)?;
        let out: Vec<f64> = match &projected {
            Some((out, _)) => out.iter().copied().collect(),
            None => raw.iter().copied().collect(),
        };
        let loss = penalized_objective(pen, &out, &rec.p);
        let grad_x = autodiff::grad(
            |x| {
                let p_const = autodiff::dual_constants(&rec.p, x[0].dirs());
                penalized_objective(pen, x, &p_const)
            },
            &out,
        )?;
        let cotangent = DVector::from_vec(grad_x);
        let out_adjoint = match (&model.projection, &projected) {
            (Some(head), Some((_, tr))) => head.vjp(tr, &cotangent),
            _ => cotangent,
        };
        backprop_value(model, &trace, out_adjoint, &mut acc);
        loss
    } else {
        let out = match &projected {
            Some((out, _)) => out.clone(),
            None => raw.clone(),
        };
        let residual = &out - DVector::from_column_slice(&rec.x_star);
        let loss = residual.norm_squared() / n as f64;
        let cotangent = &residual * (2.0 / n as f64);
        let out_adjoint = match (&model.projection, &projected) {
            (Some(head), Some((_, tr))) => head.vjp(tr, &cotangent),
            _ => cotangent,
        };
        backprop_value(model, &trace, out_adjoint, &mut acc);
        loss
    };

    let mut jac_term = 0.0;
    if mode.has_jacobian_term() && lambda_weight != 0.0 && !rec.jac_entries.is_empty() {
        let k = rec.jac_entries.len() as f64;
        // Group masked entries by column so each column costs one sweep.
        let mut cols: Vec<usize> = rec.jac_entries.iter().map(|&(_, c, _)| c).collect();
        cols.sort_unstable();
        cols.dedup();
        for &c in &cols {
            // Tangent forward for this column to obtain J[:, c].
            let mut tau = DVector::zeros(model.input_dim);
            tau[c] = 1.0;
            let mut zeta = DVector::zeros(0);
            for l in 0..model.num_layers() {
                zeta = &model.weights[l] * &tau;
                if l + 1 < model.num_layers() {
                    let d1 = trace.zs[l].map(|v| model.activation.d1(v));
                    tau = zeta.component_mul(&d1);
                }
            }
            let mut seed = DVector::zeros(n);
            for &(r, cc, target) in &rec.jac_entries {
                if cc == c {
                    let res = zeta[r] - target;
                    jac_term += res * res / k;
                    seed[r] += lambda_weight * 2.0 * res / k;
                }
            }
            backprop_jacobian_column(model, &trace, c, seed, &mut acc);
        }
    }

    Ok((value_term, jac_term, acc))
}

/// Batch loss and its exact parameter gradient.
///
/// The reported total is `mean(value) + lambda * mean(jacobian term)`; the
/// two components are returned alongside it. Records are processed in
/// parallel, but the reduction runs in record order so results do not depend
/// on thread count. With `lambda_weight = 0` (or a mode without the Jacobian
/// term) the masked-derivative machinery is never entered.
pub fn loss_and_gradient(
    model: &MlpModel,
    records: &[&SolutionRecord],
    lambda_weight: f64,
    mode: LossMode,
    selfsup: Option<&PenalizedProblem<'_, ProblemInstance>>,
) -> Result<(LossBreakdown, Vec<f64>), ProxyError> {
    if records.is_empty() {
        return Err(ProxyError::EmptyBatch);
    }
    let per_record: Vec<Result<(f64, f64, GradAcc), ProxyError>> = records
        .par_iter()
        .map(|rec| record_loss_grad(model, rec, lambda_weight, mode, selfsup))
        .collect();

    let b = records.len() as f64;
    let mut value_term = 0.0;
    let mut jac_term = 0.0;
    let mut grad = vec![0.0; model.num_params()];
    for item in per_record {
        let (v, j, acc) = item?;
        value_term += v / b;
        jac_term += j / b;
        for (g, a) in grad.iter_mut().zip(acc.flat()) {
            *g += a / b;
        }
    }
    let total = value_term + lambda_weight * jac_term;
    Ok((LossBreakdown { total, value_term, jacobian_term: jac_term }, grad))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Serializes a model as single-line JSON with lossless float formatting.
pub fn write_model<W: Write>(model: &MlpModel, w: &mut W) -> io::Result<()> {
    let widths: Vec<String> = model.hidden.iter().map(|h| h.to_string()).collect();
    let weights: Vec<String> =
        model.weights.iter().map(|m| jsonfmt::f64_array(&matrix_rows(m))).collect();
    let biases: Vec<String> = model
        .biases
        .iter()
        .map(|b| jsonfmt::f64_array(b.as_slice()))
        .collect();
    let projection = match &model.projection {
        Some(head) => format!(
            "{{\"sigma_half_t\":{},\"budget\":{}}}",
            jsonfmt::f64_array(&matrix_rows(head.sigma_half_t())),
            jsonfmt::f64_repr(head.budget()),
        ),
        None => "null".to_string(),
    };
    writeln!(
        w,
        "{{\"input_dim\":{},\"hidden\":[{}],\"output_dim\":{},\"activation\":\"{}\",\"weights\":[{}],\"biases\":[{}],\"projection\":{}}}",
        model.input_dim,
        widths.join(","),
        model.output_dim,
        model.activation.as_str(),
        weights.join(","),
        biases.join(","),
        projection,
    )
}

/// Parses a model produced by [`write_model`], bit-exactly.
pub fn read_model(text: &str) -> Result<MlpModel, ProxyError> {
    let perr = |msg: &str| ProxyError::Parse(1, msg.to_string());
    let v: serde_json::Value =
        serde_json::from_str(text.trim()).map_err(|e| ProxyError::Parse(1, e.to_string()))?;
    let input_dim =
        v["input_dim"].as_u64().ok_or_else(|| perr("input_dim"))? as usize;
    let output_dim =
        v["output_dim"].as_u64().ok_or_else(|| perr("output_dim"))? as usize;
    let hidden: Vec<usize> = v["hidden"]
        .as_array()
        .ok_or_else(|| perr("hidden"))?
        .iter()
        .map(|h| h.as_u64().map(|u| u as usize).ok_or_else(|| perr("hidden entry")))
        .collect::<Result<_, _>>()?;
    let activation = Activation::parse(
        v["activation"].as_str().ok_or_else(|| perr("activation"))?,
    )
    .ok_or_else(|| perr("unknown activation"))?;
    let mut widths = vec![input_dim];
    widths.extend_from_slice(&hidden);
    widths.push(output_dim);

    let f64_list = |val: &serde_json::Value, what: &str| -> Result<Vec<f64>, ProxyError> {
        val.as_array()
            .ok_or_else(|| perr(what))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| perr(what)))
            .collect()
    };

    let weight_arrays = v["weights"].as_array().ok_or_else(|| perr("weights"))?;
    let bias_arrays = v["biases"].as_array().ok_or_else(|| perr("biases"))?;
    if weight_arrays.len() != widths.len() - 1 || bias_arrays.len() != widths.len() - 1 {
        return Err(perr("layer count mismatch"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..widths.len() - 1 {
        let (rows, cols) = (widths[l + 1], widths[l]);
        let wv = f64_list(&weight_arrays[l], "weight entry")?;
        if wv.len() != rows * cols {
            return Err(perr("weight shape mismatch"));
        }
        weights.push(DMatrix::from_row_slice(rows, cols, &wv));
        let bv = f64_list(&bias_arrays[l], "bias entry")?;
        if bv.len() != rows {
            return Err(perr("bias shape mismatch"));
        }
        biases.push(DVector::from_vec(bv));
    }

    let projection = if v["projection"].is_null() {
        None
    } else {
        let pv = &v["projection"];
        let flat = f64_list(&pv["sigma_half_t"], "projection matrix")?;
        if flat.len() != output_dim * output_dim {
            return Err(perr("projection shape mismatch"));
        }
        let budget = pv["budget"].as_f64().ok_or_else(|| perr("projection budget"))?;
        Some(PortfolioProjection {
            sigma_half_t: DMatrix::from_row_slice(output_dim, output_dim, &flat),
            budget,
        })
    };

    Ok(MlpModel { input_dim, hidden, output_dim, activation, weights, biases, projection })
}
