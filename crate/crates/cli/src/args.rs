//! Flag grammar. Every value flag is optional at parse time; the runners
//! resolve flags over config-file values over built-in defaults, and report
//! missing required settings as validation errors.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sobolev-proxy",
    version,
    about = "Train and evaluate neural proxies for parametric optimization problems",
    disable_help_subcommand = true
)]
pub struct Cli {
    /// Cap on worker threads (fallback: SOBOLEV_PROXY_THREADS).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Solve sampled instances and write train/validation/test JSONL files.
    Generate(GenerateArgs),
    /// Solve one instance and print the solver record.
    Solve(SolveArgs),
    /// Train a proxy and write the model, report, and loss curve.
    Train(TrainArgs),
    /// Evaluate a trained proxy on a dataset (MSE, GAP, INF).
    Eval(EvalArgs),
    /// Compare two proxies by relative reduction in maximum infeasibility.
    Compare(CompareArgs),
    /// Verify the uniform error bounds on constructed interpolants.
    VerifyBounds(VerifyBoundsArgs),
    /// Retrain under progressively sparser Jacobian masks.
    AblateMask(AblateMaskArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Problem name: toy-qp, markowitz-N, or acopf3.
    #[arg(long)]
    pub problem: Option<String>,
    /// Training records to generate [default: 512].
    #[arg(long)]
    pub train: Option<usize>,
    /// Validation records to generate [default: 128].
    #[arg(long)]
    pub val: Option<usize>,
    /// Test records to generate [default: 128].
    #[arg(long)]
    pub test: Option<usize>,
    /// Sampling proportions box,line,distribution [default: per problem].
    #[arg(long)]
    pub proportions: Option<String>,
    /// Fraction of Jacobian entries masked out, in [0, 1) [default: 0.9].
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Dataset seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the three JSONL files and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct SolveArgs {
    /// Problem name: toy-qp, markowitz-N, or acopf3.
    #[arg(long)]
    pub problem: Option<String>,
    /// Parameter vector, comma separated.
    #[arg(long)]
    pub p: Option<String>,
    /// Start point override, comma separated.
    #[arg(long)]
    pub x0: Option<String>,
    /// KKT residual tolerance [default: 1e-8].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration budget [default: 200].
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Also write the record to this file (plus a manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset (JSONL).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation dataset (JSONL).
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Loss mode: value, sobolev, selfsup, selfsup_sobolev [default: value].
    #[arg(long)]
    pub mode: Option<String>,
    /// Jacobian term weight [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Training epochs [default: 2000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 32].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Hidden layer widths, comma separated [default: 16].
    #[arg(long)]
    pub widths: Option<String>,
    /// Activation: tanh, softplus, sigmoid, relu, leaky_relu [default: tanh].
    #[arg(long)]
    pub activation: Option<String>,
    /// Init and shuffle seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam step size [default: 1e-3].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Constraint penalty weight for self-supervised modes [default: 100].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Bound penalty weight for self-supervised modes [default: 100].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Validation cadence in epochs [default: 100].
    #[arg(long = "val-every")]
    pub val_every: Option<usize>,
    /// Output model path; report and loss CSV are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset to evaluate on (JSONL).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output report path; a per-instance CSV is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Benchmark model (JSON).
    #[arg(long = "model-a")]
    pub model_a: Option<PathBuf>,
    /// Comparison model (JSON); its worst violation normalizes the metric.
    #[arg(long = "model-b")]
    pub model_b: Option<PathBuf>,
    /// Dataset to compare on (JSONL).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output CSV of per-instance values.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyBoundsArgs {
    /// Training set sizes, comma separated [default: 5,9,17,33].
    #[arg(long)]
    pub points: Option<String>,
    /// Test grid resolution [default: 4096].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Dense pairs for constant estimation [default: 100000].
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Also write the table as CSV (plus a manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateMaskArgs {
    /// Full-Jacobian training dataset (JSONL, generated at sparsity 0).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test dataset (JSONL).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Sparsity levels to re-mask at, comma separated
    /// [default: 0.95,0.9,0.75,0.0].
    #[arg(long)]
    pub sparsities: Option<String>,
    /// Loss mode [default: sobolev].
    #[arg(long)]
    pub mode: Option<String>,
    /// Jacobian term weight [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Training epochs per row [default: 2000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 32].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Hidden layer widths, comma separated [default: 16].
    #[arg(long)]
    pub widths: Option<String>,
    /// Activation [default: tanh].
    #[arg(long)]
    pub activation: Option<String>,
    /// Init and shuffle seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam step size [default: 1e-3].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Output CSV of ablation rows.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}
