//! Dataset generation: parameter sampling, offline solving, sensitivity
//! extraction, per-record Jacobian masking, and JSON Lines persistence.
//!
//! A dataset is built by sampling parameters with a mix of three strategies
//! (uniform box, single-coordinate line excursions, and scaling a reference
//! point by a global factor), solving each instance offline, and attaching
//! exact solution sensitivities where the solution is regular. Records whose
//! solve fails are dropped and counted; records whose sensitivity is
//! degenerate are kept with an empty Jacobian so they still serve the value
//! loss. Each record gets its own RNG stream seeded `dataset_seed XOR
//! global_record_index`, which makes generation order-independent and safe to
//! parallelize.
//!
//! The on-disk format is JSON Lines: one header object
//! `{"problem":…,"n":…,"d":…,"config":{…}}` followed by one record object
//! per line. Floats are written with 17 significant digits so the decimal
//! form round-trips to the exact same bits.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::jsonfmt;
use crate::problems::ParametricProblem;
use crate::sensitivity::{kkt_sensitivity, SensitivityOptions};
use crate::solver::{solve, SolveOptions, SolverStatus};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("sample count must be positive")]
    EmptyCount,
    #[error("proportions must be nonnegative and sum to 1, got {0:?}")]
    BadProportions([f64; 3]),
    #[error("sparsity must lie in [0, 1), got {0}")]
    BadSparsity(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Regularity status of a stored record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularity {
    Regular,
    DegenerateComplementarity,
    LicqViolated,
    SoscIndefinite,
}

impl Regularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regularity::Regular => "regular",
            Regularity::DegenerateComplementarity => "degenerate_complementarity",
            Regularity::LicqViolated => "licq_violated",
            Regularity::SoscIndefinite => "sosc_indefinite",
        }
    }

    pub fn parse(s: &str) -> Option<Regularity> {
        match s {
            "regular" => Some(Regularity::Regular),
            "degenerate_complementarity" => Some(Regularity::DegenerateComplementarity),
            "licq_violated" => Some(Regularity::LicqViolated),
            "sosc_indefinite" => Some(Regularity::SoscIndefinite),
            _ => None,
        }
    }

    pub fn is_regular(&self) -> bool {
        matches!(self, Regularity::Regular)
    }
}

/// Which entries of the n x d solution Jacobian a record keeps.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// (row, col) pairs, sorted row-major, unique, in range.
    pub kept_entries: Vec<(usize, usize)>,
    /// Fraction of entries masked out, in [0, 1).
    pub sparsity: f64,
}

/// One dataset row: parameters, solution, multipliers, and the masked
/// Jacobian entries (empty unless the record is regular).
#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub p: Vec<f64>,
    pub x_star: Vec<f64>,
    /// Equality multipliers followed by all folded inequality multipliers.
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// (row, col, dx_dp value), aligned with `mask.kept_entries` when regular.
    pub jac_entries: Vec<(usize, usize, f64)>,
    pub mask: MaskSpec,
    pub regularity: Regularity,
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub seed: u64,
    pub proportions: [f64; 3],
    pub sparsity: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub problem_name: String,
    pub n: usize,
    pub d: usize,
    pub split: Split,
    pub config: GenerationConfig,
    pub records: Vec<SolutionRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone)]
pub struct SplitReport {
    pub split: Split,
    pub requested: usize,
    pub written: usize,
    pub solver_failures: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone)]
pub struct GenerationReport {
    pub splits: Vec<SplitReport>,
}

impl GenerationReport {
    pub fn total_failures(&self) -> usize {
        self.splits.iter().map(|s| s.solver_failures).sum()
    }

    pub fn total_degenerate(&self) -> usize {
        self.splits.iter().map(|s| s.degenerate).sum()
    }

    /// Degenerate records as a fraction of everything written.
    pub fn degenerate_fraction(&self) -> f64 {
        let written: usize = self.splits.iter().map(|s| s.written).sum();
        if written == 0 {
            0.0
        } else {
            self.total_degenerate() as f64 / written as f64
        }
    }
}

/// Splits `count` into three strategy blocks with exact largest-remainder
/// rounding, so fixed proportions give fixed counts.
fn allocate(count: usize, proportions: [f64; 3]) -> [usize; 3] {
    let total: f64 = proportions.iter().sum();
    let raw: Vec<f64> = proportions.iter().map(|w| count as f64 * w / total).collect();
    let mut alloc = [raw[0].floor() as usize, raw[1].floor() as usize, raw[2].floor() as usize];
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(count - assigned) {
        alloc[i] += 1;
    }
    alloc
}

fn check_proportions(proportions: [f64; 3]) -> Result<(), DatagenError> {
    let sum: f64 = proportions.iter().sum();
    if proportions.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatagenError::BadProportions(proportions));
    }
    Ok(())
}

/// Draws `count` parameter vectors: a block of uniform box samples, a block
/// forming one evenly spaced single-coordinate line excursion, and a block of
/// global scalings of the problem's reference parameter, in that order.
pub fn sample_parameters<P: ParametricProblem>(
    problem: &P,
    count: usize,
    proportions: [f64; 3],
    seed: u64,
) -> Result<Vec<Vec<f64>>, DatagenError> {
    if count == 0 {
        return Err(DatagenError::EmptyCount);
    }
    check_proportions(proportions)?;
    let (lo, hi) = problem.param_box();
    let d = problem.num_params();
    let [n_box, n_line, n_dist] = allocate(count, proportions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);

    for _ in 0..n_box {
        out.push((0..d).map(|j| rng.random_range(lo[j]..=hi[j])).collect());
    }

    if n_line > 0 {
        let base: Vec<f64> = (0..d).map(|j| rng.random_range(lo[j]..=hi[j])).collect();
        let coord = rng.random_range(0..d);
        for i in 0..n_line {
            let t = if n_line == 1 { 0.0 } else { i as f64 / (n_line - 1) as f64 };
            let mut p = base.clone();
            p[coord] = lo[coord] + t * (hi[coord] - lo[coord]);
            out.push(p);
        }
    }

    if n_dist > 0 {
        let reference = problem.reference_param();
        let (s_lo, s_hi) = problem.scale_range();
        for _ in 0..n_dist {
            let f = rng.random_range(s_lo..=s_hi);
            out.push(reference.iter().map(|&r| f * r).collect());
        }
    }

    Ok(out)
}

/// Uniformly samples which Jacobian entries a record keeps. The kept count is
/// `round((1 - sparsity) * n * d)`, never below one, and the draw is fully
/// determined by `seed`.
pub fn sample_mask(n: usize, d: usize, sparsity: f64, seed: u64) -> MaskSpec {
    assert!((0.0..1.0).contains(&sparsity), "sparsity {sparsity} outside [0, 1)");
    let total = n * d;
    let keep = (((1.0 - sparsity) * total as f64).round() as usize).clamp(1, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, keep).into_vec();
    idx.sort_unstable();
    MaskSpec {
        kept_entries: idx.into_iter().map(|i| (i / d, i % d)).collect(),
        sparsity,
    }
}

/// Solve one instance and classify it. `None` means the record is dropped.
fn make_record<P: ParametricProblem>(
    problem: &P,
    p: &[f64],
    sparsity: f64,
    record_seed: u64,
) -> Option<(SolutionRecord, bool)> {
    let result = solve(problem, p, &SolveOptions::default()).ok()?;
    if result.status != SolverStatus::Converged {
        return None;
    }
    let n = problem.num_vars();
    let d = problem.num_params();
    let mask = sample_mask(n, d, sparsity, record_seed);
    let mut lambda = result.lambda_eq.clone();
    lambda.extend_from_slice(&result.lambda_ineq);
    let base = SolutionRecord {
        p: p.to_vec(),
        x_star: result.x_star.clone(),
        lambda,
        objective: result.objective,
        jac_entries: Vec::new(),
        mask,
        regularity: Regularity::Regular,
    };
    match kkt_sensitivity(problem, p, &result, &SensitivityOptions::default()) {
        Ok(sens) => {
            let jac = base
                .mask
                .kept_entries
                .iter()
                .map(|&(r, c)| (r, c, sens.dx_dp[r][c]))
                .collect();
            Some((SolutionRecord { jac_entries: jac, ..base }, false))
        }
        Err(e) => {
            let label = e.regularity_label()?;
            let regularity = Regularity::parse(label).expect("known label");
            Some((SolutionRecord { regularity, ..base }, true))
        }
    }
}

/// Builds the train/validation/test triple. Solving and differentiation run
/// in parallel across records; output order follows sample order.
pub fn build_dataset<P: ParametricProblem + Sync>(
    problem: &P,
    counts: SplitCounts,
    proportions: [f64; 3],
    sparsity: f64,
    seed: u64,
) -> Result<(Vec<Dataset>, GenerationReport), DatagenError> {
    check_proportions(proportions)?;
    if !(0.0..1.0).contains(&sparsity) {
        return Err(DatagenError::BadSparsity(sparsity));
    }
    let plan = [
        (Split::Train, counts.train, 0usize),
        (Split::Validation, counts.val, counts.train),
        (Split::Test, counts.test, counts.train + counts.val),
    ];
    let mut datasets = Vec::with_capacity(3);
    let mut reports = Vec::with_capacity(3);
    for (i, &(split, count, offset)) in plan.iter().enumerate() {
        let config = GenerationConfig { seed, proportions, sparsity };
        let mut records = Vec::new();
        let mut failures = 0;
        let mut degenerate = 0;
        if count > 0 {
            let params =
                sample_parameters(problem, count, proportions, seed.wrapping_add(i as u64))?;
            let outcomes: Vec<Option<(SolutionRecord, bool)>> = params
                .par_iter()
                .enumerate()
                .map(|(k, p)| make_record(problem, p, sparsity, seed ^ (offset + k) as u64))
                .collect();
            for outcome in outcomes {
                match outcome {
                    Some((rec, true)) => {
                        degenerate += 1;
                        records.push(rec);
                    }
                    Some((rec, false)) => records.push(rec),
                    None => failures += 1,
                }
            }
        }
        reports.push(SplitReport {
            split,
            requested: count,
            written: records.len(),
            solver_failures: failures,
            degenerate,
        });
        datasets.push(Dataset {
            problem_name: problem.name().to_string(),
            n: problem.num_vars(),
            d: problem.num_params(),
            split,
            config,
            records,
        });
    }
    Ok((datasets, GenerationReport { splits: reports }))
}

fn mask_json(entries: &[(usize, usize)]) -> String {
    let parts: Vec<String> = entries.iter().map(|&(r, c)| format!("[{r},{c}]")).collect();
    format!("[{}]", parts.join(","))
}

fn jac_json(entries: &[(usize, usize, f64)]) -> String {
    let parts: Vec<String> = entries
        .iter()
        .map(|&(r, c, v)| format!("[{r},{c},{}]", jsonfmt::f64_repr(v)))
        .collect();
    format!("[{}]", parts.join(","))
}

pub fn write_dataset<W: Write>(ds: &Dataset, w: &mut W) -> io::Result<()> {
    writeln!(
        w,
        "{{\"problem\":{},\"n\":{},\"d\":{},\"config\":{{\"seed\":{},\"proportions\":{},\"sparsity\":{},\"split\":\"{}\"}}}}",
        serde_json::to_string(&ds.problem_name).expect("string"),
        ds.n,
        ds.d,
        ds.config.seed,
        jsonfmt::f64_array(&ds.config.proportions),
        jsonfmt::f64_repr(ds.config.sparsity),
        ds.split.as_str(),
    )?;
    for rec in &ds.records {
        writeln!(
            w,
            "{{\"p\":{},\"x\":{},\"lambda\":{},\"obj\":{},\"mask\":{},\"jac\":{},\"reg\":\"{}\"}}",
            jsonfmt::f64_array(&rec.p),
            jsonfmt::f64_array(&rec.x_star),
            jsonfmt::f64_array(&rec.lambda),
            jsonfmt::f64_repr(rec.objective),
            mask_json(&rec.mask.kept_entries),
            jac_json(&rec.jac_entries),
            rec.regularity.as_str(),
        )?;
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()
}

fn parse_err(line: usize, reason: impl Into<String>) -> DatagenError {
    DatagenError::Parse { line, reason: reason.into() }
}

fn json_f64(v: &serde_json::Value, line: usize, what: &str) -> Result<f64, DatagenError> {
    v.as_f64().ok_or_else(|| parse_err(line, format!("{what} is not a number")))
}

fn json_f64_array(
    v: &serde_json::Value,
    line: usize,
    what: &str,
) -> Result<Vec<f64>, DatagenError> {
    v.as_array()
        .ok_or_else(|| parse_err(line, format!("{what} is not an array")))?
        .iter()
        .map(|x| json_f64(x, line, what))
        .collect()
}

fn json_usize(v: &serde_json::Value, line: usize, what: &str) -> Result<usize, DatagenError> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| parse_err(line, format!("{what} is not an unsigned integer")))
}

fn field<'v>(
    obj: &'v serde_json::Value,
    key: &str,
    line: usize,
) -> Result<&'v serde_json::Value, DatagenError> {
    obj.get(key).ok_or_else(|| parse_err(line, format!("missing field {key:?}")))
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset, DatagenError> {
    let mut lines = r.lines();
    let header_line = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let header: serde_json::Value =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    let problem_name = field(&header, "problem", 1)?
        .as_str()
        .ok_or_else(|| parse_err(1, "problem is not a string"))?
        .to_string();
    let n = json_usize(field(&header, "n", 1)?, 1, "n")?;
    let d = json_usize(field(&header, "d", 1)?, 1, "d")?;
    let cfg = field(&header, "config", 1)?;
    let seed = field(cfg, "seed", 1)?
        .as_u64()
        .ok_or_else(|| parse_err(1, "seed is not an unsigned integer"))?;
    let props = json_f64_array(field(cfg, "proportions", 1)?, 1, "proportions")?;
    if props.len() != 3 {
        return Err(parse_err(1, "proportions must have 3 entries"));
    }
    let sparsity = json_f64(field(cfg, "sparsity", 1)?, 1, "sparsity")?;
    let split_str =
        field(cfg, "split", 1)?.as_str().ok_or_else(|| parse_err(1, "split is not a string"))?;
    let split =
        Split::parse(split_str).ok_or_else(|| parse_err(1, format!("unknown split {split_str:?}")))?;

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let p = json_f64_array(field(&v, "p", lineno)?, lineno, "p")?;
        let x_star = json_f64_array(field(&v, "x", lineno)?, lineno, "x")?;
        if p.len() != d || x_star.len() != n {
            return Err(parse_err(lineno, "record dimensions disagree with header"));
        }
        let lambda = json_f64_array(field(&v, "lambda", lineno)?, lineno, "lambda")?;
        let objective = json_f64(field(&v, "obj", lineno)?, lineno, "obj")?;
        let mask_v = field(&v, "mask", lineno)?
            .as_array()
            .ok_or_else(|| parse_err(lineno, "mask is not an array"))?;
        let mut kept = Vec::with_capacity(mask_v.len());
        for e in mask_v {
            let pair = e.as_array().ok_or_else(|| parse_err(lineno, "mask entry shape"))?;
            if pair.len() != 2 {
                return Err(parse_err(lineno, "mask entry shape"));
            }
            kept.push((
                json_usize(&pair[0], lineno, "mask row")?,
                json_usize(&pair[1], lineno, "mask col")?,
            ));
        }
        let jac_v = field(&v, "jac", lineno)?
            .as_array()
            .ok_or_else(|| parse_err(lineno, "jac is not an array"))?;
        let mut jac = Vec::with_capacity(jac_v.len());
        for e in jac_v {
            let triple = e.as_array().ok_or_else(|| parse_err(lineno, "jac entry shape"))?;
            if triple.len() != 3 {
                return Err(parse_err(lineno, "jac entry shape"));
            }
            jac.push((
                json_usize(&triple[0], lineno, "jac row")?,
                json_usize(&triple[1], lineno, "jac col")?,
                json_f64(&triple[2], lineno, "jac value")?,
            ));
        }
        let reg_str = field(&v, "reg", lineno)?
            .as_str()
            .ok_or_else(|| parse_err(lineno, "reg is not a string"))?;
        let regularity = Regularity::parse(reg_str)
            .ok_or_else(|| parse_err(lineno, format!("unknown regularity {reg_str:?}")))?;
        records.push(SolutionRecord {
            p,
            x_star,
            lambda,
            objective,
            jac_entries: jac,
            mask: MaskSpec { kept_entries: kept, sparsity },
            regularity,
        });
    }
    Ok(Dataset {
        problem_name,
        n,
        d,
        split,
        config: GenerationConfig { seed, proportions: [props[0], props[1], props[2]], sparsity },
        records,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatagenError> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Scalar;
    use crate::problems::{Markowitz, ToyQp};
    use proptest::prelude::*;

    /// Minimal two-parameter problem for exercising the samplers.
    struct UnitBox;

    impl ParametricProblem for UnitBox {
        fn name(&self) -> &str {
            "unit-box"
        }
        fn num_vars(&self) -> usize {
            1
        }
        fn num_params(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn objective<S: Scalar>(&self, x: &[S], p: &[S]) -> S {
            (x[0].clone() - p[0].clone() - p[1].clone()).sq() * 0.5
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
            (vec![0.0, 0.0], vec![1.0, 1.0])
        }
    }

    #[test]
    fn box_samples_follow_the_uniform_law() {
        let ps = sample_parameters(&UnitBox, 1000, [1.0, 0.0, 0.0], 42).unwrap();
        assert_eq!(ps.len(), 1000);
        for j in 0..2 {
            let vals: Vec<f64> = ps.iter().map(|p| p[j]).collect();
            assert!(vals.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - 0.5).abs() < 0.05, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn line_excursion_varies_exactly_one_coordinate_on_an_even_grid() {
        let ps = sample_parameters(&UnitBox, 11, [0.0, 1.0, 0.0], 3).unwrap();
        assert_eq!(ps.len(), 11);
        let varying: Vec<usize> = (0..2)
            .filter(|&j| ps.iter().any(|p| (p[j] - ps[0][j]).abs() > 0.0))
            .collect();
        assert_eq!(varying.len(), 1);
        let j = varying[0];
        for (i, p) in ps.iter().enumerate() {
            let expect = i as f64 / 10.0;
            assert!((p[j] - expect).abs() < 1e-12, "grid point {i}: {} vs {expect}", p[j]);
        }
    }

    #[test]
    fn mixed_proportions_give_exact_block_counts() {
        let ps = sample_parameters(&UnitBox, 100, [0.5, 0.3, 0.2], 9).unwrap();
        assert_eq!(ps.len(), 100);
        // The trailing 20 are global scalings of the reference midpoint, so
        // both coordinates agree; no earlier sample does that.
        let (s_lo, s_hi) = UnitBox.scale_range();
        for p in &ps[80..] {
            assert!((p[0] - p[1]).abs() < 1e-15);
            let f = p[0] / 0.5;
            assert!(f >= s_lo && f <= s_hi, "scale factor {f}");
        }
        assert!(ps[..80].iter().all(|p| (p[0] - p[1]).abs() > 1e-12));
        // Samples 50..80 form the line block: one shared coordinate.
        let block = &ps[50..80];
        let shared: Vec<usize> = (0..2)
            .filter(|&j| block.iter().all(|p| (p[j] - block[0][j]).abs() == 0.0))
            .collect();
        assert_eq!(shared.len(), 1);
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            sample_parameters(&UnitBox, 0, [1.0, 0.0, 0.0], 1),
            Err(DatagenError::EmptyCount)
        ));
        assert!(matches!(
            sample_parameters(&UnitBox, 10, [0.5, 0.0, 0.0], 1),
            Err(DatagenError::BadProportions(_))
        ));
    }

    #[test]
    fn mask_density_and_determinism() {
        let all = sample_mask(4, 5, 0.0, 1);
        assert_eq!(all.kept_entries.len(), 20);
        let m = sample_mask(20, 20, 0.95, 7);
        assert_eq!(m.kept_entries.len(), 20);
        assert_eq!(m.kept_entries, sample_mask(20, 20, 0.95, 7).kept_entries);
        // Extreme sparsity still keeps one entry.
        assert_eq!(sample_mask(1, 1, 0.99, 3).kept_entries.len(), 1);
    }

    proptest! {
        #[test]
        fn mask_entries_unique_in_range_and_counted(
            n in 1usize..8, d in 1usize..8, s in 0.0f64..0.99, seed in any::<u64>()
        ) {
            let m = sample_mask(n, d, s, seed);
            let expect = (((1.0 - s) * (n * d) as f64).round() as usize).clamp(1, n * d);
            prop_assert_eq!(m.kept_entries.len(), expect);
            let mut seen = std::collections::HashSet::new();
            for &(r, c) in &m.kept_entries {
                prop_assert!(r < n && c < d);
                prop_assert!(seen.insert((r, c)));
            }
        }
    }

    #[test]
    fn toy_qp_interior_box_yields_all_regular_unit_jacobians() {
        let q = ToyQp::default();
        let counts = SplitCounts { train: 100, val: 0, test: 0 };
        let (sets, report) = build_dataset(&q, counts, [1.0, 0.0, 0.0], 0.0, 11).unwrap();
        assert_eq!(sets.len(), 3);
        let train = &sets[0];
        assert_eq!(train.records.len(), 100);
        assert_eq!(report.splits[0].solver_failures, 0);
        assert_eq!(report.splits[0].degenerate, 0);
        for rec in &train.records {
            assert_eq!(rec.regularity, Regularity::Regular);
            assert_eq!(rec.mask.kept_entries, vec![(0, 0)]);
            assert_eq!(rec.jac_entries.len(), 1);
            let (r, c, v) = rec.jac_entries[0];
            assert_eq!((r, c), (0, 0));
            assert!((v - 1.0).abs() < 1e-6, "jac {v}");
            assert!((rec.x_star[0] - rec.p[0]).abs() < 1e-6);
        }
        assert!(sets[1].records.is_empty() && sets[2].records.is_empty());
    }

    #[test]
    fn slack_risk_budget_always_binds_and_shows_in_multipliers() {
        // sigma_max is far above any attainable risk, so only the budget and
        // the loser's nonnegativity bind.
        let m = Markowitz::new(
            vec![vec![0.04, 0.01], vec![0.01, 0.09]],
            1.0,
            (0.01, 0.25),
            (10.0, 11.0),
        )
        .unwrap();
        let counts = SplitCounts { train: 60, val: 0, test: 0 };
        let (sets, report) = build_dataset(&m, counts, [1.0, 0.0, 0.0], 0.5, 5).unwrap();
        let train = &sets[0];
        assert_eq!(report.splits[0].solver_failures, 0);
        assert!(train.records.len() >= 58, "kept {}", train.records.len());
        for rec in train.records.iter().filter(|r| r.regularity.is_regular()) {
            // Folded inequality order: risk, budget, then the two bounds.
            assert!(rec.lambda[0].abs() <= 1e-6, "risk multiplier {}", rec.lambda[0]);
            assert!(rec.lambda[1] >= 1e-6, "budget multiplier {}", rec.lambda[1]);
        }
        let distinct: std::collections::HashSet<Vec<(usize, usize)>> = train
            .records
            .iter()
            .map(|r| r.mask.kept_entries.clone())
            .collect();
        assert!(distinct.len() > 1, "per-record masks should differ");
    }

    #[test]
    fn generation_is_deterministic() {
        let q = ToyQp::default();
        let counts = SplitCounts { train: 30, val: 10, test: 0 };
        let run = |seed| {
            let (sets, _) = build_dataset(&q, counts, [0.8, 0.2, 0.0], 0.0, seed).unwrap();
            let mut buf = Vec::new();
            for s in &sets {
                write_dataset(s, &mut buf).unwrap();
            }
            buf
        };
        assert_eq!(run(21), run(21));
        assert_ne!(run(21), run(22));
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let ds = Dataset {
            problem_name: "toy-qp".to_string(),
            n: 2,
            d: 3,
            split: Split::Validation,
            config: GenerationConfig { seed: 99, proportions: [0.6, 0.2, 0.2], sparsity: 0.75 },
            records: vec![
                SolutionRecord {
                    p: vec![0.1, -0.0, f64::MIN_POSITIVE],
                    x_star: vec![1.0 / 3.0, -2.5e-300],
                    lambda: vec![0.5, 0.0, 1e300],
                    objective: -7.25,
                    jac_entries: vec![(0, 1, 0.1 + 0.2), (1, 2, -1.0)],
                    mask: MaskSpec { kept_entries: vec![(0, 1), (1, 2)], sparsity: 0.75 },
                    regularity: Regularity::Regular,
                },
                SolutionRecord {
                    p: vec![1.0, 2.0, 3.0],
                    x_star: vec![0.0, 0.0],
                    lambda: vec![0.0, 0.0, 0.0],
                    objective: 0.0,
                    jac_entries: Vec::new(),
                    mask: MaskSpec { kept_entries: vec![(1, 0)], sparsity: 0.75 },
                    regularity: Regularity::DegenerateComplementarity,
                },
            ],
        };
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back.problem_name, ds.problem_name);
        assert_eq!((back.n, back.d), (ds.n, ds.d));
        assert_eq!(back.split, ds.split);
        assert_eq!(back.config.seed, ds.config.seed);
        assert_eq!(back.records.len(), 2);
        for (a, b) in back.records.iter().zip(&ds.records) {
            assert_eq!(a.regularity, b.regularity);
            assert_eq!(a.mask.kept_entries, b.mask.kept_entries);
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            for (x, y) in a.p.iter().zip(&b.p) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.x_star.iter().zip(&b.x_star) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.lambda.iter().zip(&b.lambda) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.jac_entries.len(), b.jac_entries.len());
            for ((r1, c1, v1), (r2, c2, v2)) in a.jac_entries.iter().zip(&b.jac_entries) {
                assert_eq!((r1, c1), (r2, c2));
                assert_eq!(v1.to_bits(), v2.to_bits());
            }
        }
        // A second write of the parsed dataset reproduces the bytes exactly.
        let mut buf2 = Vec::new();
        write_dataset(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn empty_counts_produce_valid_header_only_files() {
        let q = ToyQp::default();
        let (sets, _) =
            build_dataset(&q, SplitCounts::default(), [1.0, 0.0, 0.0], 0.0, 1).unwrap();
        for s in &sets {
            let mut buf = Vec::new();
            write_dataset(s, &mut buf).unwrap();
            let back = read_dataset(&buf[..]).unwrap();
            assert!(back.records.is_empty());
        }
    }

    #[test]
    fn malformed_lines_are_reported_with_position() {
        let text = "{\"problem\":\"t\",\"n\":1,\"d\":1,\"config\":{\"seed\":1,\"proportions\":[1.0e0,0.0e0,0.0e0],\"sparsity\":0.0e0,\"split\":\"train\"}}\nnot json\n";
        let err = read_dataset(text.as_bytes()).unwrap_err();
        match err {
            DatagenError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
