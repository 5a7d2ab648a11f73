//! Subcommand runners. Each resolves its configuration (flags over config
//! file over defaults), does the work, writes outputs atomically, and leaves
//! one run manifest next to them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sobolev_proxy::datagen::{build_dataset, load_dataset, write_dataset, Dataset, SplitCounts};
use sobolev_proxy::eval::{
    ablate_mask, bound_rate_checks, evaluate_model, rmi, verify_bounds_sin, violation_matrix,
};
use sobolev_proxy::jsonfmt::f64_repr;
use sobolev_proxy::problems::{problem_by_name, ParametricProblem, ProblemInstance};
use sobolev_proxy::proxy::{write_model, Activation, LossMode, MlpModel};
use sobolev_proxy::solver::{solve, SolveOptions, SolverStatus};
use sobolev_proxy::training::{train, TrainConfig, TrainError};

use crate::args::{
    AblateMaskArgs, CompareArgs, EvalArgs, GenerateArgs, SolveArgs, TrainArgs, VerifyBoundsArgs,
};
use crate::output::{
    ablation_csv, bounds_csv, eval_report_csv, eval_report_json, rmi_csv, sibling,
    train_losses_csv, train_report_json, write_atomic, RunManifest,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: unknown names, malformed files, dimension mismatches.
    Validation(String),
    /// The computation itself failed: divergence, non-convergence, a bound
    /// check that did not hold.
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

macro_rules! validation_from {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> CliError {
                CliError::Validation(e.to_string())
            }
        }
    };
}

validation_from!(std::io::Error);
validation_from!(serde_json::Error);
validation_from!(sobolev_proxy::datagen::DatagenError);
validation_from!(sobolev_proxy::proxy::ProxyError);
validation_from!(sobolev_proxy::problems::ProblemError);
validation_from!(sobolev_proxy::solver::SolverError);
validation_from!(sobolev_proxy::eval::EvalError);

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

/// JSON config file whose keys mirror the long flag names; flags win over
/// file values, file values win over defaults.
pub struct FileCfg {
    map: serde_json::Map<String, Value>,
}

impl FileCfg {
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<FileCfg, CliError> {
        let map = match path {
            None => serde_json::Map::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::Validation(format!("config {}: {e}", p.display()))
                })?;
                let value: Value = serde_json::from_str(&text).map_err(|e| {
                    CliError::Validation(format!("config {}: {e}", p.display()))
                })?;
                match value {
                    Value::Object(m) => m,
                    _ => {
                        return Err(CliError::Validation(format!(
                            "config {}: expected a JSON object",
                            p.display()
                        )))
                    }
                }
            }
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Validation(format!(
                    "config key {key:?} is not recognized here (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(FileCfg { map })
    }

    fn bad(key: &str, want: &str) -> CliError {
        CliError::Validation(format!("config key {key:?}: expected {want}"))
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Self::bad(key, "a string")),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| Self::bad(key, "a nonnegative integer")),
        }
    }

    pub fn usize_(&self, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn f64_(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| Self::bad(key, "a number")),
        }
    }

    /// Accepts a JSON array of numbers or the same comma-separated string
    /// the flag takes.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => parse_f64_csv(s, key).map(Some),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Self::bad(key, "numbers")))
                .collect::<Result<Vec<f64>, CliError>>()
                .map(Some),
            Some(_) => Err(Self::bad(key, "an array of numbers or a comma-separated string")),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => parse_usize_csv(s, key).map(Some),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64().map(|u| u as usize).ok_or_else(|| Self::bad(key, "integers"))
                })
                .collect::<Result<Vec<usize>, CliError>>()
                .map(Some),
            Some(_) => Err(Self::bad(key, "an array of integers or a comma-separated string")),
        }
    }
}

pub fn parse_f64_csv(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("{what}: {t:?} is not a number")))
        })
        .collect()
}

pub fn parse_usize_csv(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Validation(format!("{what}: {t:?} is not an integer")))
        })
        .collect()
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("--{flag} is required")))
}

fn parse_mode(s: &str) -> Result<LossMode, CliError> {
    LossMode::parse(s).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown mode {s:?} (expected value, sobolev, selfsup, or selfsup_sobolev)"
        ))
    })
}

fn parse_activation(s: &str) -> Result<Activation, CliError> {
    Activation::parse(s).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown activation {s:?} (expected tanh, softplus, sigmoid, relu, or leaky_relu)"
        ))
    })
}

fn load_problem(ds: &Dataset) -> Result<ProblemInstance, CliError> {
    let problem = problem_by_name(&ds.problem_name)?;
    if problem.num_vars() != ds.n || problem.num_params() != ds.d {
        return Err(CliError::Validation(format!(
            "dataset dimensions ({}, {}) do not match problem {:?} ({}, {})",
            ds.n,
            ds.d,
            ds.problem_name,
            problem.num_vars(),
            problem.num_params()
        )));
    }
    Ok(problem)
}

fn status_str(status: SolverStatus) -> &'static str {
    match status {
        SolverStatus::Converged => "converged",
        SolverStatus::MaxIter => "max_iter",
        SolverStatus::NumericalFailure => "numerical_failure",
    }
}

pub fn run_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileCfg::load(
        args.config.as_deref(),
        &["problem", "train", "val", "test", "proportions", "sparsity", "seed", "out"],
    )?;
    let problem_name = require(args.problem.clone().or(cfg.string("problem")?), "problem")?;
    let problem = problem_by_name(&problem_name)?;
    let counts = SplitCounts {
        train: args.train.or(cfg.usize_("train")?).unwrap_or(512),
        val: args.val.or(cfg.usize_("val")?).unwrap_or(128),
        test: args.test.or(cfg.usize_("test")?).unwrap_or(128),
    };
    let default_props = match problem {
        ProblemInstance::AcOpf3(_) => [0.6, 0.2, 0.2],
        _ => [0.8, 0.2, 0.0],
    };
    let proportions = match args
        .proportions
        .as_deref()
        .map(|s| parse_f64_csv(s, "--proportions"))
        .transpose()?
        .or(cfg.f64_list("proportions")?)
    {
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(v) => {
            return Err(CliError::Validation(format!(
                "--proportions needs exactly 3 values, got {}",
                v.len()
            )))
        }
        None => default_props,
    };
    let sparsity = args.sparsity.or(cfg.f64_("sparsity")?).unwrap_or(0.9);
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(0);
    let out_dir = require(
        args.out.clone().or(cfg.string("out")?.map(PathBuf::from)),
        "out",
    )?;

    let mut manifest = RunManifest::begin(
        "generate",
        json!({
            "problem": problem_name,
            "train": counts.train,
            "val": counts.val,
            "test": counts.test,
            "proportions": proportions,
            "sparsity": sparsity,
            "seed": seed,
            "out": out_dir.display().to_string(),
        }),
    );
    manifest.seed = Some(seed);

    let (datasets, report) = build_dataset(&problem, counts, proportions, sparsity, seed)?;
    let requested = counts.train + counts.val + counts.test;
    let written: usize = report.splits.iter().map(|s| s.written).sum();
    if requested > 0 && written == 0 {
        return Err(CliError::Numerical(format!(
            "solver failed on all {requested} requested instances"
        )));
    }

    fs::create_dir_all(&out_dir)?;
    for ds in &datasets {
        let mut bytes = Vec::new();
        write_dataset(ds, &mut bytes)?;
        let path = out_dir.join(format!("{}.jsonl", ds.split.as_str()));
        write_atomic(&path, &bytes)?;
        manifest.outputs.push(path.display().to_string());
    }
    for s in &report.splits {
        println!(
            "{}: {} records written ({} requested, {} solver failures, {} degenerate)",
            s.split.as_str(),
            s.written,
            s.requested,
            s.solver_failures,
            s.degenerate
        );
    }
    manifest.notes = json!({
        "splits": report
            .splits
            .iter()
            .map(|s| {
                json!({
                    "split": s.split.as_str(),
                    "requested": s.requested,
                    "written": s.written,
                    "solver_failures": s.solver_failures,
                    "degenerate": s.degenerate,
                })
            })
            .collect::<Vec<Value>>(),
        "degenerate_fraction": report.degenerate_fraction(),
    });
    manifest.finish(started.elapsed());
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

pub fn run_solve(args: &SolveArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileCfg::load(
        args.config.as_deref(),
        &["problem", "p", "x0", "tol", "max-iter", "out"],
    )?;
    let problem_name = require(args.problem.clone().or(cfg.string("problem")?), "problem")?;
    let problem = problem_by_name(&problem_name)?;
    let p_text = require(args.p.clone().or(cfg.string("p")?), "p")?;
    let p = parse_f64_csv(&p_text, "--p")?;
    let start = args
        .x0
        .as_deref()
        .map(|s| parse_f64_csv(s, "--x0"))
        .transpose()?
        .or(cfg.f64_list("x0")?);
    let opts = SolveOptions {
        tol: args.tol.or(cfg.f64_("tol")?).unwrap_or(1e-8),
        max_iter: args.max_iter.or(cfg.usize_("max-iter")?).unwrap_or(200),
        start,
        ..SolveOptions::default()
    };

    let result = solve(&problem, &p, &opts)?;
    let mut record = String::new();
    let _ = writeln!(record, "problem: {problem_name}");
    let _ = writeln!(record, "p: {}", p.iter().map(|v| f64_repr(*v)).collect::<Vec<_>>().join(", "));
    let _ = writeln!(record, "status: {}", status_str(result.status));
    let _ = writeln!(record, "iterations: {}", result.iterations);
    let _ = writeln!(record, "objective: {}", f64_repr(result.objective));
    let _ = writeln!(
        record,
        "x: {}",
        result.x_star.iter().map(|v| f64_repr(*v)).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(
        record,
        "lambda_eq: {}",
        result.lambda_eq.iter().map(|v| f64_repr(*v)).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(
        record,
        "lambda_ineq: {}",
        result.lambda_ineq.iter().map(|v| f64_repr(*v)).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(record, "kkt_residual: {}", f64_repr(result.kkt_residual));
    let _ = writeln!(
        record,
        "stationarity_residual: {}",
        f64_repr(result.stationarity_residual)
    );
    print!("{record}");

    if let Some(out) = args.out.clone().or(cfg.string("out")?.map(PathBuf::from)) {
        let mut manifest = RunManifest::begin(
            "solve",
            json!({
                "problem": problem_name,
                "p": p,
                "tol": opts.tol,
                "max-iter": opts.max_iter,
                "out": out.display().to_string(),
            }),
        );
        write_atomic(&out, record.as_bytes())?;
        manifest.outputs.push(out.display().to_string());
        manifest.notes = json!({ "status": status_str(result.status) });
        manifest.finish(started.elapsed());
        manifest.write(&sibling(&out, "manifest.json"))?;
    }

    if result.status != SolverStatus::Converged {
        return Err(CliError::Numerical(format!(
            "solver finished with status {} after {} iterations (KKT residual {})",
            status_str(result.status),
            result.iterations,
            f64_repr(result.kkt_residual)
        )));
    }
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "data", "val", "mode", "lambda", "epochs", "batch", "widths", "activation", "seed", "eta",
    "beta", "gamma", "val-every", "out",
];

struct ResolvedTrain {
    config: TrainConfig,
    mode_name: String,
    activation_name: String,
}

fn resolve_train_config(
    cfg: &FileCfg,
    mode: Option<&str>,
    lambda: Option<f64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    widths: Option<&str>,
    activation: Option<&str>,
    seed: Option<u64>,
    eta: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    val_every: Option<usize>,
) -> Result<ResolvedTrain, CliError> {
    let defaults = TrainConfig::default();
    let mode_name = mode
        .map(str::to_string)
        .or(cfg.string("mode")?)
        .unwrap_or_else(|| defaults.mode.as_str().to_string());
    let activation_name = activation
        .map(str::to_string)
        .or(cfg.string("activation")?)
        .unwrap_or_else(|| defaults.activation.as_str().to_string());
    let hidden = widths
        .map(|s| parse_usize_csv(s, "--widths"))
        .transpose()?
        .or(cfg.usize_list("widths")?)
        .unwrap_or(defaults.hidden.clone());
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(CliError::Validation("--widths needs positive layer sizes".into()));
    }
    let config = TrainConfig {
        mode: parse_mode(&mode_name)?,
        lambda_weight: lambda.or(cfg.f64_("lambda")?).unwrap_or(defaults.lambda_weight),
        epochs: epochs.or(cfg.usize_("epochs")?).unwrap_or(defaults.epochs),
        batch_size: batch.or(cfg.usize_("batch")?).unwrap_or(defaults.batch_size),
        eta: eta.or(cfg.f64_("eta")?).unwrap_or(defaults.eta),
        seed: seed.or(cfg.u64("seed")?).unwrap_or(defaults.seed),
        hidden,
        activation: parse_activation(&activation_name)?,
        beta: beta.or(cfg.f64_("beta")?).unwrap_or(defaults.beta),
        gamma: gamma.or(cfg.f64_("gamma")?).unwrap_or(defaults.gamma),
        val_every: val_every.or(cfg.usize_("val-every")?).unwrap_or(defaults.val_every),
        ..defaults
    };
    Ok(ResolvedTrain { config, mode_name, activation_name })
}

fn train_config_json(r: &ResolvedTrain) -> Value {
    json!({
        "mode": r.mode_name,
        "lambda": r.config.lambda_weight,
        "epochs": r.config.epochs,
        "batch": r.config.batch_size,
        "widths": r.config.hidden,
        "activation": r.activation_name,
        "seed": r.config.seed,
        "eta": r.config.eta,
        "beta": r.config.beta,
        "gamma": r.config.gamma,
        "val-every": r.config.val_every,
    })
}

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileCfg::load(args.config.as_deref(), TRAIN_KEYS)?;
    let data_path = require(
        args.data.clone().or(cfg.string("data")?.map(PathBuf::from)),
        "data",
    )?;
    let val_path = args.val.clone().or(cfg.string("val")?.map(PathBuf::from));
    let out = require(args.out.clone().or(cfg.string("out")?.map(PathBuf::from)), "out")?;
    let resolved = resolve_train_config(
        &cfg,
        args.mode.as_deref(),
        args.lambda,
        args.epochs,
        args.batch,
        args.widths.as_deref(),
        args.activation.as_deref(),
        args.seed,
        args.eta,
        args.beta,
        args.gamma,
        args.val_every,
    )?;

    let train_data = load_dataset(&data_path)?;
    let val_data = val_path.as_deref().map(load_dataset).transpose()?;
    if let Some(v) = &val_data {
        if v.problem_name != train_data.problem_name {
            return Err(CliError::Validation(format!(
                "validation data is for {:?}, training data for {:?}",
                v.problem_name, train_data.problem_name
            )));
        }
    }
    let problem = load_problem(&train_data)?;

    let mut config_value = train_config_json(&resolved);
    config_value["data"] = json!(data_path.display().to_string());
    if let Some(v) = &val_path {
        config_value["val"] = json!(v.display().to_string());
    }
    config_value["out"] = json!(out.display().to_string());
    let mut manifest = RunManifest::begin("train", config_value);
    manifest.seed = Some(resolved.config.seed);
    manifest.inputs.push(data_path.display().to_string());
    if let Some(v) = &val_path {
        manifest.inputs.push(v.display().to_string());
    }

    let (model, report) =
        train(&train_data, val_data.as_ref(), &resolved.config, Some(&problem))
            .map_err(train_error)?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes)?;
    write_atomic(&out, &bytes)?;
    let report_path = sibling(&out, "report.json");
    let losses_path = sibling(&out, "losses.csv");
    write_atomic(&report_path, &train_report_json(&report))?;
    write_atomic(&losses_path, &train_losses_csv(&report))?;
    for p in [&out, &report_path, &losses_path] {
        manifest.outputs.push(p.display().to_string());
    }

    if let Some(last) = report.train_trajectory.last() {
        println!(
            "trained {} epochs: loss {:.6e} (value {:.6e}, jacobian {:.6e})",
            report.epochs_run, last.total, last.value_term, last.jacobian_term
        );
    }
    if let Some(last) = report.val_trajectory.last() {
        println!("validation mse: {:.6e}", last.mse);
    }
    manifest.notes = json!({ "warnings": report.warnings });
    manifest.finish(started.elapsed());
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileCfg::load(args.config.as_deref(), &["model", "data", "out"])?;
    let model_path = require(
        args.model.clone().or(cfg.string("model")?.map(PathBuf::from)),
        "model",
    )?;
    let data_path = require(
        args.data.clone().or(cfg.string("data")?.map(PathBuf::from)),
        "data",
    )?;
    let out = require(args.out.clone().or(cfg.string("out")?.map(PathBuf::from)), "out")?;

    let model = MlpModel::load(&model_path)?;
    let data = load_dataset(&data_path)?;
    let problem = load_problem(&data)?;
    if model.input_dim != data.d || model.output_dim != data.n {
        return Err(CliError::Validation(format!(
            "model maps {} -> {}, dataset needs {} -> {}",
            model.input_dim, model.output_dim, data.d, data.n
        )));
    }

    let mut manifest = RunManifest::begin(
        "eval",
        json!({
            "model": model_path.display().to_string(),
            "data": data_path.display().to_string(),
            "out": out.display().to_string(),
        }),
    );
    manifest.inputs.push(model_path.display().to_string());
    manifest.inputs.push(data_path.display().to_string());

    let report = evaluate_model(&model, &data, &problem);
    write_atomic(&out, &eval_report_json(&report))?;
    let csv_path = sibling(&out, "csv");
    write_atomic(&csv_path, &eval_report_csv(&report))?;
    manifest.outputs.push(out.display().to_string());
    manifest.outputs.push(csv_path.display().to_string());

    println!("instances: {}", report.per_instance.len());
    if let Some(a) = report.mse_agg {
        println!("mse:  mean {:.6e}  median {:.6e}  std {:.6e}", a.mean, a.median, a.std);
    }
    match report.gap_agg {
        Some(a) => {
            println!("gap:  mean {:.6e}  median {:.6e}  std {:.6e}", a.mean, a.median, a.std)
        }
        None => println!("gap:  undefined on every record (reference objective zero)"),
    }
    if report.gap_undefined > 0 {
        println!("gap undefined on {} records", report.gap_undefined);
    }
    if let Some(a) = report.inf_agg {
        println!("inf:  mean {:.6e}  median {:.6e}  std {:.6e}", a.mean, a.median, a.std);
    }
    manifest.notes = json!({ "gap_undefined": report.gap_undefined });
    manifest.finish(started.elapsed());
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(())
}

pub fn run_compare(args: &CompareArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileCfg::load(args.config.as_deref(), &["model-a", "model-b", "data", "out"])?;
    let path_a = require(
        args.model_a.clone().or(cfg.string("model-a")?.map(PathBuf::from)),
        "model-a",
    )?;
    let path_b = require(
        args.model_b.clone().or(cfg.string("model-b")?.map(PathBuf::from)),
        "model-b",
    )?;
    let data_path = require(
        args.data.clone().or(cfg.string("data")?.map(PathBuf::from)),
        "data",
    )?;
    let out = require(args.out.clone().or(cfg.string("out")?.map(PathBuf::from)), "out")?;

    let model_a = MlpModel::load(&path_a)?;
    let model_b = MlpModel::load(&path_b)?;
    let data = load_dataset(&data_path)?;
    let problem = load_problem(&data)?;
    for (label, m) in [("model-a", &model_a), ("model-b", &model_b)] {
        if m.input_dim != data.d || m.output_dim != data.n {
            return Err(CliError::Validation(format!(
                "{label} maps {} -> {}, dataset needs {} -> {}",
                m.input_dim, m.output_dim, data.d, data.n
            )));
        }
    }

    let mut manifest = RunManifest::begin(
        "compare",
        json!({
            "model-a": path_a.display().to_string(),
            "model-b": path_b.display().to_string(),
            "data": data_path.display().to_string(),
            "out": out.display().to_string(),
        }),
    );
    manifest.inputs = vec![
        path_a.display().to_string(),
        path_b.display().to_string(),
        data_path.display().to_string(),
    ];

    let viol_a = violation_matrix(&model_a, &data, &problem);
    let viol_b = violation_matrix(&model_b, &data, &problem);
    let values = rmi(&viol_a, &viol_b);
    match &values {
        Some(v) => {
            write_atomic(&out, &rmi_csv(v))?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "rmi over {} instances: mean {:.3}%, min {:.3}%, max {:.3}%",
                v.len(),
                mean,
                v.iter().copied().fold(f64::INFINITY, f64::min),
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            );
        }
        None => {
            write_atomic(&out, &rmi_csv(&[]))?;
            println!("rmi undefined: model-b never violates a constraint on this data");
        }
    }
    manifest.outputs.push(out.display().to_string());
    manifest.notes = json!({ "rmi_defined": values.is_some() });
    manifest.finish(started.elapsed());
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(())
}

pub fn run_verify_bounds(args: &VerifyBoundsArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileCfg::load(args.config.as_deref(), &["points", "grid", "pairs", "out"])?;
    let sizes = args
        .points
        .as_deref()
        .map(|s| parse_usize_csv(s, "--points"))
        .transpose()?
        .or(cfg.usize_list("points")?)
        .unwrap_or_else(|| vec![5, 9, 17, 33]);
    if sizes.iter().any(|&k| k < 2) {
        return Err(CliError::Validation("--points sizes must be at least 2".into()));
    }
    let grid = args.grid.or(cfg.usize_("grid")?).unwrap_or(4096);
    if grid < 2 {
        return Err(CliError::Validation("--grid must be at least 2".into()));
    }
    let pairs = args.pairs.or(cfg.usize_("pairs")?).unwrap_or(100_000);
    if pairs == 0 {
        return Err(CliError::Validation("--pairs must be positive".into()));
    }
    let out = args.out.clone().or(cfg.string("out")?.map(PathBuf::from));

    let records = verify_bounds_sin(&sizes, grid, pairs);
    let rates = bound_rate_checks(&records);

    println!(
        "{:<9} {:>5} {:>12} {:>12} {:>12} {:>5}",
        "kind", "size", "delta", "sup_error", "bound", "pass"
    );
    for r in &records {
        println!(
            "{:<9} {:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>5}",
            r.kind.as_str(),
            r.train_size,
            r.delta,
            r.sup_error,
            r.bound,
            r.pass
        );
    }
    if !rates.is_empty() {
        println!();
        println!(
            "{:<9} {:>11} {:>12} {:>12} {:>12} {:>5}",
            "kind", "sizes", "bound_ratio", "error_ratio", "band", "pass"
        );
        for rc in &rates {
            println!(
                "{:<9} {:>5}->{:<5} {:>12.3} {:>12.3} [{:.1}, {:.1}] {:>5}",
                rc.kind.as_str(),
                rc.from_size,
                rc.to_size,
                rc.bound_ratio,
                rc.error_ratio,
                rc.band.0,
                rc.band.1,
                rc.pass
            );
        }
    }

    if let Some(out_path) = &out {
        let mut manifest = RunManifest::begin(
            "verify-bounds",
            json!({
                "points": sizes,
                "grid": grid,
                "pairs": pairs,
                "out": out_path.display().to_string(),
            }),
        );
        write_atomic(out_path, &bounds_csv(&records, &rates))?;
        manifest.outputs.push(out_path.display().to_string());
        manifest.notes = json!({
            "bounds_hold": records.iter().all(|r| r.pass),
            "rates_hold": rates.iter().all(|r| r.pass),
        });
        manifest.finish(started.elapsed());
        manifest.write(&sibling(out_path, "manifest.json"))?;
    }

    let failed_bounds = records.iter().filter(|r| !r.pass).count();
    let failed_rates = rates.iter().filter(|r| !r.pass).count();
    if failed_bounds + failed_rates > 0 {
        return Err(CliError::Numerical(format!(
            "{failed_bounds} bound checks and {failed_rates} rate checks failed"
        )));
    }
    println!();
    println!("all {} bound checks and {} rate checks hold", records.len(), rates.len());
    Ok(())
}

pub fn run_ablate_mask(args: &AblateMaskArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut keys = vec!["train", "test", "sparsities", "out"];
    keys.extend_from_slice(TRAIN_KEYS);
    let cfg = FileCfg::load(args.config.as_deref(), &keys)?;
    let train_path = require(
        args.train.clone().or(cfg.string("train")?.map(PathBuf::from)),
        "train",
    )?;
    let test_path = require(
        args.test.clone().or(cfg.string("test")?.map(PathBuf::from)),
        "test",
    )?;
    let out = require(args.out.clone().or(cfg.string("out")?.map(PathBuf::from)), "out")?;
    let sparsities = args
        .sparsities
        .as_deref()
        .map(|s| parse_f64_csv(s, "--sparsities"))
        .transpose()?
        .or(cfg.f64_list("sparsities")?)
        .unwrap_or_else(|| vec![0.95, 0.9, 0.75, 0.0]);
    if sparsities.iter().any(|&s| !(0.0..1.0).contains(&s)) {
        return Err(CliError::Validation("--sparsities values must lie in [0, 1)".into()));
    }
    let mut resolved = resolve_train_config(
        &cfg,
        args.mode.as_deref(),
        args.lambda,
        args.epochs,
        args.batch,
        args.widths.as_deref(),
        args.activation.as_deref(),
        args.seed,
        args.eta,
        None,
        None,
        None,
    )?;
    if args.mode.is_none() && cfg.string("mode")?.is_none() {
        resolved.config.mode = LossMode::Sobolev;
        resolved.mode_name = LossMode::Sobolev.as_str().to_string();
    }

    let train_data = load_dataset(&train_path)?;
    let test_data = load_dataset(&test_path)?;
    if test_data.problem_name != train_data.problem_name {
        return Err(CliError::Validation(format!(
            "test data is for {:?}, training data for {:?}",
            test_data.problem_name, train_data.problem_name
        )));
    }
    let problem = load_problem(&train_data)?;
    if train_data.config.sparsity != 0.0 {
        eprintln!(
            "warning: training data was generated at sparsity {}, so re-masked Jacobian \
             entries outside its stored set are unavailable",
            train_data.config.sparsity
        );
    }

    let mut config_value = train_config_json(&resolved);
    config_value["train"] = json!(train_path.display().to_string());
    config_value["test"] = json!(test_path.display().to_string());
    config_value["sparsities"] = json!(sparsities);
    config_value["out"] = json!(out.display().to_string());
    let mut manifest = RunManifest::begin("ablate-mask", config_value);
    manifest.seed = Some(resolved.config.seed);
    manifest.inputs =
        vec![train_path.display().to_string(), test_path.display().to_string()];

    let rows = ablate_mask(&train_data, &test_data, &sparsities, &resolved.config, Some(&problem))
        .map_err(train_error)?;

    println!("{:<10} {:<14} {:<12}", "sparsity", "kept_fraction", "test_mse");
    for r in &rows {
        println!("{:<10} {:<14} {:<12.6e}", r.sparsity, r.kept_fraction, r.test_mse);
    }
    write_atomic(&out, &ablation_csv(&rows))?;
    manifest.outputs.push(out.display().to_string());
    manifest.finish(started.elapsed());
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(())
}
