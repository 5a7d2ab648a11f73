//! Output plumbing: atomic file writes, run manifests, and the fixed-format
//! report serializers that keep repeated runs byte-identical.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sobolev_proxy::eval::{AblationRow, Aggregate, BoundRecord, EvalReport, RateCheck};
use sobolev_proxy::jsonfmt::f64_repr;
use sobolev_proxy::training::TrainReport;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

/// Writes through a temp file in the target directory, then renames, so a
/// crash never leaves a half-written output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp_name = format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => PathBuf::from(&tmp_name),
    };
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn now_rfc3339() -> String {
    OffsetDateTime::now_utc()
        .format(&Rfc3339)
        .unwrap_or_else(|_| "1970-01-01T00:00:00Z".to_string())
}

/// One manifest per run, written next to the outputs. This is the only
/// artifact that carries timestamps and wall time, so everything else stays
/// byte-identical across reruns.
#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub notes: serde_json::Value,
}

impl RunManifest {
    pub fn begin(subcommand: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now_rfc3339(),
            finished: String::new(),
            wall_time_secs: 0.0,
            notes: serde_json::Value::Null,
        }
    }

    pub fn finish(&mut self, wall: std::time::Duration) {
        self.finished = now_rfc3339();
        self.wall_time_secs = wall.as_secs_f64();
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

/// Manifest path for a primary output file: `model.json` ->
/// `model.manifest.json`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn aggregate_json(agg: Option<Aggregate>) -> String {
    match agg {
        Some(a) => format!(
            "{{\"mean\":{},\"median\":{},\"std\":{}}}",
            f64_repr(a.mean),
            f64_repr(a.median),
            f64_repr(a.std)
        ),
        None => "null".to_string(),
    }
}

/// Evaluation report as single-object JSON with lossless float text.
pub fn eval_report_json(report: &EvalReport) -> Vec<u8> {
    let mut s = String::new();
    s.push_str(&format!(
        "{{\"instances\":{},\"gap_undefined\":{},\"mse\":{},\"gap\":{},\"inf\":{}}}\n",
        report.per_instance.len(),
        report.gap_undefined,
        aggregate_json(report.mse_agg),
        aggregate_json(report.gap_agg),
        aggregate_json(report.inf_agg),
    ));
    s.into_bytes()
}

/// Per-instance metric rows; the gap cell is empty when the reference
/// objective was zero.
pub fn eval_report_csv(report: &EvalReport) -> Vec<u8> {
    let mut s = String::from("instance,mse,gap,inf\n");
    for (i, m) in report.per_instance.iter().enumerate() {
        let gap_cell = m.gap.map(f64_repr).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", i, f64_repr(m.mse), gap_cell, f64_repr(m.inf)));
    }
    s.into_bytes()
}

/// Training report without wall time, so reruns stay byte-identical.
pub fn train_report_json(report: &TrainReport) -> Vec<u8> {
    let mut s = String::from("{");
    s.push_str(&format!("\"epochs_run\":{},\"warnings\":[", report.epochs_run));
    for (i, w) in report.warnings.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&serde_json::to_string(w).expect("string encodes"));
    }
    s.push_str("],\"train\":[");
    for (i, e) in report.train_trajectory.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!(
            "{{\"epoch\":{},\"total\":{},\"value\":{},\"jacobian\":{}}}",
            e.epoch,
            f64_repr(e.total),
            f64_repr(e.value_term),
            f64_repr(e.jacobian_term)
        ));
    }
    s.push_str("],\"val\":[");
    for (i, v) in report.val_trajectory.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{{\"epoch\":{},\"mse\":{}}}", v.epoch, f64_repr(v.mse)));
    }
    s.push_str("]}\n");
    s.into_bytes()
}

/// Per-epoch loss rows for external plotting.
pub fn train_losses_csv(report: &TrainReport) -> Vec<u8> {
    let mut s = String::from("epoch,total,value,jacobian\n");
    for e in &report.train_trajectory {
        s.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            f64_repr(e.total),
            f64_repr(e.value_term),
            f64_repr(e.jacobian_term)
        ));
    }
    s.into_bytes()
}

/// Per-instance relative reduction in maximum infeasibility.
pub fn rmi_csv(values: &[f64]) -> Vec<u8> {
    let mut s = String::from("instance,rmi_percent\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i, f64_repr(*v)));
    }
    s.into_bytes()
}

pub fn bounds_csv(records: &[BoundRecord], rates: &[RateCheck]) -> Vec<u8> {
    let mut s = String::from("kind,train_size,delta,const_g,const_hat,sup_error,bound,pass\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.kind.as_str(),
            r.train_size,
            f64_repr(r.delta),
            f64_repr(r.const_g),
            f64_repr(r.const_hat),
            f64_repr(r.sup_error),
            f64_repr(r.bound),
            r.pass
        ));
    }
    if !rates.is_empty() {
        s.push_str("kind,from_size,to_size,bound_ratio,error_ratio,band_lo,band_hi,pass\n");
        for rc in rates {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                rc.kind.as_str(),
                rc.from_size,
                rc.to_size,
                f64_repr(rc.bound_ratio),
                f64_repr(rc.error_ratio),
                f64_repr(rc.band.0),
                f64_repr(rc.band.1),
                rc.pass
            ));
        }
    }
    s.into_bytes()
}

pub fn ablation_csv(rows: &[AblationRow]) -> Vec<u8> {
    let mut s = String::from("sparsity,kept_fraction,test_mse\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{}\n",
            f64_repr(r.sparsity),
            f64_repr(r.kept_fraction),
            f64_repr(r.test_mse)
        ));
    }
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn sibling_paths_replace_the_final_extension() {
        assert_eq!(
            sibling(Path::new("runs/model.json"), "manifest.json"),
            PathBuf::from("runs/model.manifest.json")
        );
        assert_eq!(
            sibling(Path::new("model"), "losses.csv"),
            PathBuf::from("model.losses.csv")
        );
    }

    #[test]
    fn csv_and_json_reports_are_deterministic_bytes() {
        use sobolev_proxy::eval::InstanceMetrics;
        let report = EvalReport {
            per_instance: vec![
                InstanceMetrics { mse: 0.25, gap: Some(0.1), inf: 0.0 },
                InstanceMetrics { mse: 1.0, gap: None, inf: 0.5 },
            ],
            mse_agg: Aggregate::from_values(&[0.25, 1.0]),
            inf_agg: Aggregate::from_values(&[0.0, 0.5]),
            gap_agg: Aggregate::from_values(&[0.1]),
            gap_undefined: 1,
        };
        let a = eval_report_csv(&report);
        let b = eval_report_csv(&report);
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",,"), "empty gap cell: {text}");
        let j = String::from_utf8(eval_report_json(&report)).unwrap();
        assert!(j.contains("\"gap_undefined\":1"));
        assert!(j.ends_with("}\n"));
    }
}
