//! CSV and JSON writers for experiment outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::driver::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, ExperimentOutput, Table};

pub const RUN_HEADER: [&str; 9] = [
    "iter",
    "dist_sq",
    "loss_anchor",
    "loss_final",
    "loss_ratio",
    "inner_steps",
    "grad_evals",
    "alpha_flag",
    "wall_ms",
];

pub const AGGREGATE_HEADER: [&str; 5] = ["iter", "mean_dist_sq", "ci_lo", "ci_hi", "n_runs"];

/// Round-trip exact float formatting.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

fn io<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(e.to_string())
}

fn write_csv(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(io)?;
    String::from_utf8(bytes).map_err(io)
}

pub fn trajectory_csv(rec: &TrajectoryRecord) -> Result<String> {
    let header: Vec<String> = RUN_HEADER.iter().map(|s| s.to_string()).collect();
    let mut rows = vec![vec![
        "0".into(),
        fmt_float(rec.initial_dist_sq),
        String::new(),
        String::new(),
        String::new(),
        "0".into(),
        "0".into(),
        String::new(),
        fmt_float(0.0),
    ]];
    for r in &rec.rows {
        rows.push(vec![
            r.iter.to_string(),
            fmt_float(r.dist_sq),
            fmt_float(r.loss_anchor),
            fmt_float(r.loss_final),
            fmt_float(r.loss_ratio),
            r.inner_steps.to_string(),
            r.grad_evals.to_string(),
            u8::from(r.alpha_flag).to_string(),
            fmt_float(r.wall_ms),
        ]);
    }
    write_csv(&header, &rows)
}

/// Across-seed mean of `dist_sq` with a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRow {
    pub iter: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_runs: usize,
}

/// Aggregates over the runs still alive at each iteration.
pub fn aggregate_rows(records: &[TrajectoryRecord]) -> Vec<AggregateRow> {
    let len = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(len + 1);
    let initial: Vec<f64> = records.iter().map(|r| r.initial_dist_sq).collect();
    if !initial.is_empty() {
        out.push(summarize(0, &initial));
    }
    for k in 0..len {
        let xs: Vec<f64> = records
            .iter()
            .filter_map(|r| r.rows.get(k).map(|row| row.dist_sq))
            .collect();
        let iter = records
            .iter()
            .find_map(|r| r.rows.get(k).map(|row| row.iter))
            .unwrap_or(k + 1);
        out.push(summarize(iter, &xs));
    }
    out
}

fn summarize(iter: usize, xs: &[f64]) -> AggregateRow {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let half = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    AggregateRow {
        iter,
        mean,
        ci_lo: mean - half,
        ci_hi: mean + half,
        n_runs: n,
    }
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let header: Vec<String> = AGGREGATE_HEADER.iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                fmt_float(r.mean),
                fmt_float(r.ci_lo),
                fmt_float(r.ci_hi),
                r.n_runs.to_string(),
            ]
        })
        .collect();
    write_csv(&header, &body)
}

pub fn table_csv(t: &Table) -> Result<String> {
    write_csv(&t.header, &t.rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestRun {
    pub series: String,
    pub index: usize,
    pub seed: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub runs: Vec<ManifestRun>,
    pub blowups: usize,
    pub wall_ms: f64,
    pub files: Vec<String>,
}

/// Writes every CSV plus `summary.json` and `manifest.json` under `dir`.
pub fn write_output(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    wall_ms: f64,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io)?;
    let mut files = Vec::new();
    let mut put = |rel: PathBuf, text: String| -> Result<()> {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(&path, text).map_err(io)?;
        files.push(rel.to_string_lossy().replace('\\', "/"));
        Ok(())
    };
    let mut runs = Vec::new();
    for s in &out.series {
        for (i, (rec, seed)) in s.records.iter().zip(&s.seeds).enumerate() {
            put(
                Path::new(&s.label).join(format!("run_{i:04}.csv")),
                trajectory_csv(rec)?,
            )?;
            runs.push(ManifestRun {
                series: s.label.clone(),
                index: i,
                seed: *seed,
                status: format!("{:?}", rec.status),
            });
        }
        put(
            Path::new(&s.label).join("aggregate.csv"),
            aggregate_csv(&s.aggregate)?,
        )?;
    }
    for t in &out.tables {
        put(PathBuf::from(format!("{}.csv", t.name)), table_csv(t)?)?;
    }
    let summary = serde_json::to_string_pretty(&out.summary).map_err(io)?;
    put(PathBuf::from("summary.json"), summary + "\n")?;
    let manifest = Manifest {
        experiment: cfg.spec.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        config: serde_json::to_value(cfg).map_err(io)?,
        runs,
        blowups: out.blowups(),
        wall_ms,
        files: {
            let mut f = files.clone();
            f.push("manifest.json".into());
            f
        },
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(io)?;
    fs::write(dir.join("manifest.json"), text + "\n").map_err(io)?;
    Ok(manifest)
}
