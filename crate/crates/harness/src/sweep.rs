//! Monte Carlo sweeps with common random numbers and deterministic outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use faultyris::optimizer::{baselines, OptSettings, SchemeResult};
use faultyris::scenario::Scenario;
use faultyris::signal::sinr_db;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spec::ExperimentSpec;
use crate::Result;

/// All scheme results of one (axis value, trial) cell.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub value_index: usize,
    pub value: f64,
    pub trial: u64,
    pub results: std::result::Result<Vec<SchemeResult>, String>,
    pub wall_s: f64,
}

/// Runs every cell in parallel; the output order is (value, trial)
/// regardless of completion order.
pub fn run_trials(spec: &ExperimentSpec, st: &OptSettings) -> Result<Vec<TrialOutcome>> {
    spec.validate()?;
    let cfgs = (0..spec.values.len()).map(|i| spec.config_at(i)).collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, u64)> = (0..spec.values.len()).flat_map(|i| (0..spec.n_trials as u64).map(move |t| (i, t))).collect();
    let mut out: Vec<TrialOutcome> = cells
        .par_iter()
        .map(|&(i, trial)| {
            let t0 = Instant::now();
            let results = Scenario::generate(&cfgs[i], trial)
                .and_then(|sc| baselines(&sc, &spec.schemes, st))
                .map_err(|e| e.to_string());
            TrialOutcome { value_index: i, value: spec.values[i], trial, results, wall_s: t0.elapsed().as_secs_f64() }
        })
        .collect();
    out.sort_by_key(|o| (o.value_index, o.trial));
    Ok(out)
}

/// One CSV row: one scheme in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub axis: String,
    pub value: f64,
    pub trial: u64,
    pub scheme: String,
    pub status: String,
    pub tr_bound: Option<f64>,
    pub ratio_to_ub: Option<f64>,
    pub min_sinr_margin_db: Option<f64>,
    pub sinr_ok: Option<bool>,
    pub outer_iterations: Option<usize>,
    pub converged: Option<bool>,
    pub rank_gap: Option<f64>,
    pub error: String,
}

/// Aggregate over trials of one scheme at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub n_ok: usize,
    pub n_err: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub ci95: Option<f64>,
    pub mean_ratio_to_ub: Option<f64>,
}

pub fn rows(spec: &ExperimentSpec, outcomes: &[TrialOutcome]) -> Vec<Row> {
    let axis = spec.axis.name().to_string();
    let mut out = Vec::new();
    for o in outcomes {
        let gamma_db = sinr_db(spec.config_at(o.value_index).map(|c| c.sinr_threshold).unwrap_or(f64::NAN));
        match &o.results {
            Ok(res) => {
                let ub = res.iter().find(|r| r.scheme == faultyris::optimizer::Scheme::Ub).map(|r| r.tr_bound);
                for r in res {
                    let bcd = r.bcd.as_ref();
                    out.push(Row {
                        axis: axis.clone(),
                        value: o.value,
                        trial: o.trial,
                        scheme: r.scheme.name().into(),
                        status: "ok".into(),
                        tr_bound: Some(r.tr_bound),
                        ratio_to_ub: ub.map(|u| r.tr_bound / u),
                        min_sinr_margin_db: r.sinr_db.iter().copied().reduce(f64::min).map(|s| s - gamma_db),
                        sinr_ok: Some(r.sinr_ok),
                        outer_iterations: bcd.map(|b| b.outer_iterations()),
                        converged: bcd.map(|b| b.converged),
                        rank_gap: bcd.map(|b| b.rank_gap),
                        error: String::new(),
                    });
                }
            }
            Err(e) => {
                for s in &spec.schemes {
                    out.push(Row {
                        axis: axis.clone(),
                        value: o.value,
                        trial: o.trial,
                        scheme: s.name().into(),
                        status: "error".into(),
                        tr_bound: None,
                        ratio_to_ub: None,
                        min_sinr_margin_db: None,
                        sinr_ok: None,
                        outer_iterations: None,
                        converged: None,
                        rank_gap: None,
                        error: e.clone(),
                    });
                }
            }
        }
    }
    out
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn summarize(spec: &ExperimentSpec, rows: &[Row]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &value in &spec.values {
        for s in &spec.schemes {
            let cell: Vec<&Row> = rows.iter().filter(|r| r.value == value && r.scheme == s.name()).collect();
            let mut ok: Vec<f64> = cell.iter().filter_map(|r| r.tr_bound).collect();
            let ratios: Vec<f64> = cell.iter().filter_map(|r| r.ratio_to_ub).collect();
            let n = ok.len();
            let mean = (n > 0).then(|| ok.iter().sum::<f64>() / n as f64);
            let ci95 = mean.filter(|_| n > 1).map(|m| {
                let var = ok.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                1.96 * (var / n as f64).sqrt()
            });
            out.push(SummaryRow {
                axis: spec.axis.name().into(),
                value,
                scheme: s.name().into(),
                n_ok: n,
                n_err: cell.len() - n,
                mean,
                median: median(&mut ok),
                ci95,
                mean_ratio_to_ub: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
            });
        }
    }
    out
}

pub fn csv_string<T: Serialize>(items: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for it in items {
        w.serialize(it)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::HarnessError::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::HarnessError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub axis: String,
    pub values: Vec<f64>,
    pub schemes: Vec<String>,
    pub n_trials: usize,
    pub files: Vec<String>,
    pub wall_time_s: f64,
    /// Summed cell time per axis value.
    pub cell_time_s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub outcomes: Vec<TrialOutcome>,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Runs the sweep and, if `out_dir` is given, writes `rows.csv`,
/// `summary.csv` and `manifest.json` there. Only the manifest carries timing.
pub fn run_sweep(spec: &ExperimentSpec, st: &OptSettings, out_dir: Option<&Path>) -> Result<SweepReport> {
    let t0 = Instant::now();
    let outcomes = run_trials(spec, st)?;
    let rows = rows(spec, &outcomes);
    let summary = summarize(spec, &rows);
    let mut cell_time_s = vec![0.0; spec.values.len()];
    for o in &outcomes {
        cell_time_s[o.value_index] += o.wall_s;
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: version_string(),
        config_hash: spec.hash()?,
        seed: spec.seed,
        axis: spec.axis.name().into(),
        values: spec.values.clone(),
        schemes: spec.schemes.iter().map(|s| s.name().to_string()).collect(),
        n_trials: spec.n_trials,
        files: vec!["rows.csv".into(), "summary.csv".into()],
        wall_time_s: t0.elapsed().as_secs_f64(),
        cell_time_s,
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &rows, &summary, &manifest)?;
    }
    Ok(SweepReport { outcomes, rows, summary, manifest })
}

pub fn write_outputs(dir: &Path, rows: &[Row], summary: &[SummaryRow], manifest: &Manifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (dir.join("rows.csv"), csv_string(rows)?),
        (dir.join("summary.csv"), csv_string(summary)?),
        (dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n"),
    ];
    for (p, text) in &files {
        std::fs::write(p, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
