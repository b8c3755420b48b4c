//! Report files: `table1.csv`/`table1.json` (global metrics, mean ± std over
//! seeds) and `table2.csv`/`table2.json` (per-stratum metrics pooled over
//! seeds). CSV files start with `#`-prefixed lines echoing the run config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::evaluate::{columns, EvalPoint, Method, SeedEvaluation};
use super::metrics::{z_stats, MetricsReport};
use super::stratify::{pooled_stratified_r2, StratifiedPair, Stratum};
use crate::error::Result;

pub const TABLE1_CSV: &str = "table1.csv";
pub const TABLE1_JSON: &str = "table1.json";
pub const TABLE2_CSV: &str = "table2.csv";
pub const TABLE2_JSON: &str = "table2.json";

/// All seeds of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<SeedEvaluation>,
}

impl MethodSummary {
    pub fn pooled_points(&self) -> Vec<EvalPoint> {
        self.seeds.iter().flat_map(|s| s.points.iter().copied()).collect()
    }
}

struct Metric {
    section: &'static str,
    label: &'static str,
    key: &'static str,
    scale: f64,
    decimals: usize,
    get: fn(&MetricsReport) -> f64,
}

const TABLE1: [Metric; 8] = [
    Metric { section: "Accuracy", label: "Log R²", key: "log_r2", scale: 1.0, decimals: 2, get: |r| r.log_r2 },
    Metric { section: "Accuracy", label: "Log RMSE", key: "log_rmse", scale: 1.0, decimals: 3, get: |r| r.log_rmse },
    Metric { section: "Accuracy", label: "Linear RMSE (Mg/ha)", key: "linear_rmse_mgha", scale: 1.0, decimals: 1, get: |r| r.linear_rmse_mgha },
    Metric { section: "Accuracy", label: "Linear MAE (Mg/ha)", key: "linear_mae_mgha", scale: 1.0, decimals: 1, get: |r| r.linear_mae_mgha },
    Metric { section: "Uncertainty Calibration", label: "1σ Coverage (68%)", key: "cov1", scale: 100.0, decimals: 1, get: |r| r.cov1 },
    Metric { section: "Uncertainty Calibration", label: "2σ Coverage (95%)", key: "cov2", scale: 100.0, decimals: 1, get: |r| r.cov2 },
    Metric { section: "Uncertainty Calibration", label: "Z-Score Mean (0.0)", key: "z_mean", scale: 1.0, decimals: 2, get: |r| r.z_mean },
    Metric { section: "Uncertainty Calibration", label: "Z-Score Std (1.0)", key: "z_std", scale: 1.0, decimals: 2, get: |r| r.z_std },
];

/// Row labels of the global table, in order.
pub fn table1_labels() -> Vec<&'static str> {
    TABLE1.iter().map(|m| m.label).collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1 {
    pub config: BTreeMap<String, String>,
    pub std_convention: &'static str,
    /// metric key → method → cell
    pub metrics: BTreeMap<String, BTreeMap<String, Cell>>,
    pub skipped_tiles: BTreeMap<String, usize>,
    pub crossings: BTreeMap<String, usize>,
}

pub fn table1(summaries: &[MethodSummary], config: &BTreeMap<String, String>) -> Table1 {
    let mut metrics = BTreeMap::new();
    for m in &TABLE1 {
        let row: BTreeMap<String, Cell> = summaries
            .iter()
            .filter(|s| !s.seeds.is_empty())
            .map(|s| {
                let vals: Vec<f64> = s.seeds.iter().map(|e| (m.get)(&e.report) * m.scale).collect();
                let (mean, std) = mean_std(&vals);
                (s.method.to_string(), Cell { mean, std, seeds: vals.len() })
            })
            .collect();
        metrics.insert(m.key.to_string(), row);
    }
    let per = |f: fn(&SeedEvaluation) -> usize| {
        summaries
            .iter()
            .map(|s| (s.method.to_string(), s.seeds.iter().map(f).sum()))
            .collect()
    };
    Table1 {
        config: config.clone(),
        std_convention: "across-seed std uses divisor n-1; z-score std within a seed uses divisor n",
        metrics,
        skipped_tiles: per(|e| e.skipped_tiles.len()),
        crossings: per(|e| e.crossings),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumCell {
    /// `None` when the stratum is empty or has no spread.
    pub log_r2: Option<f64>,
    pub log_rmse: Option<f64>,
    pub z_mean: Option<f64>,
    pub z_std: Option<f64>,
    pub n: usize,
    pub crossings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table2 {
    pub config: BTreeMap<String, String>,
    /// stratum → method → pooled metrics
    pub strata: BTreeMap<String, BTreeMap<String, StratumCell>>,
}

pub fn stratum_cell(points: &[EvalPoint], stratum: Stratum) -> StratumCell {
    let sel: Vec<EvalPoint> = points.iter().filter(|p| p.stratum == Some(stratum)).copied().collect();
    let (y, mu, sigma) = columns(&sel);
    let pairs: Vec<StratifiedPair> = sel.iter().map(|p| StratifiedPair { y: p.y, pred: p.mu, stratum }).collect();
    let z = z_stats(&y, &mu, &sigma).ok();
    StratumCell {
        log_r2: pooled_stratified_r2(&pairs, stratum).ok(),
        log_rmse: (!y.is_empty()).then(|| (y.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()),
        z_mean: z.map(|v| v.0),
        z_std: z.map(|v| v.1),
        n: sel.len(),
        crossings: sel.iter().filter(|p| p.crossed).count(),
    }
}

pub fn table2(summaries: &[MethodSummary], config: &BTreeMap<String, String>) -> Table2 {
    let mut strata = BTreeMap::new();
    for s in Stratum::ALL {
        let row = summaries
            .iter()
            .map(|m| (m.method.to_string(), stratum_cell(&m.pooled_points(), s)))
            .collect();
        strata.insert(s.to_string(), row);
    }
    Table2 {
        config: config.clone(),
        strata,
    }
}

fn echo(out: &mut String, config: &BTreeMap<String, String>) {
    for (k, v) in config {
        writeln!(out, "# {k}={v}").expect("write to string");
    }
}

fn ordered(summaries: &[MethodSummary]) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| summaries.iter().any(|s| s.method == *m))
        .collect()
}

fn quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn table1_csv(t: &Table1, methods: &[Method]) -> String {
    let mut out = String::new();
    echo(&mut out, &t.config);
    let head: Vec<String> = methods.iter().map(Method::to_string).collect();
    writeln!(out, "section,metric,{}", head.join(",")).expect("write to string");
    for m in &TABLE1 {
        let cells: Vec<String> = methods
            .iter()
            .map(|me| match t.metrics[m.key].get(&me.to_string()) {
                Some(c) => format!("{:.*} ± {:.*}", m.decimals, c.mean, m.decimals, c.std),
                None => "NA".to_string(),
            })
            .collect();
        writeln!(out, "{},{},{}", m.section, quote(m.label), cells.join(",")).expect("write to string");
    }
    out
}

pub fn table2_csv(t: &Table2, methods: &[Method]) -> String {
    let mut out = String::new();
    echo(&mut out, &t.config);
    let head: Vec<String> = methods.iter().map(Method::to_string).collect();
    writeln!(out, "stratum,metric,{}", head.join(",")).expect("write to string");
    let rows: [(&str, usize, fn(&StratumCell) -> Option<f64>); 4] = [
        ("Log R²", 3, |c| c.log_r2),
        ("Log RMSE", 3, |c| c.log_rmse),
        ("Z-Score Mean", 2, |c| c.z_mean),
        ("Z-Score Std", 2, |c| c.z_std),
    ];
    for s in Stratum::ALL {
        for (label, dec, get) in &rows {
            let cells: Vec<String> = methods
                .iter()
                .map(|me| match t.strata[&s.to_string()].get(&me.to_string()).and_then(get) {
                    Some(v) => format!("{v:.*}", dec),
                    None => "NA".to_string(),
                })
                .collect();
            writeln!(out, "{s},{label},{}", cells.join(",")).expect("write to string");
        }
    }
    out
}

/// Writes both tables and their JSON twins into `dir`.
pub fn write_reports(dir: &Path, summaries: &[MethodSummary], config: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let methods = ordered(summaries);
    let t1 = table1(summaries, config);
    let t2 = table2(summaries, config);
    fs::write(dir.join(TABLE1_CSV), table1_csv(&t1, &methods))?;
    fs::write(dir.join(TABLE2_CSV), table2_csv(&t2, &methods))?;
    fs::write(dir.join(TABLE1_JSON), to_json(&t1))?;
    fs::write(dir.join(TABLE2_JSON), to_json(&t2))?;
    Ok(())
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
