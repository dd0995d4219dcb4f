//! Per-sample SSIM / PSNR of the network and the sparse DAS baseline.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::data::PreparedSet;
use crate::dataset::read_dataset;
use crate::error::{Error, Result};
use crate::metrics::{mean_std, psnr_slices, ssim_slices};
use crate::nn::{infer, load_checkpoint, NetConfig, ParamStore};

pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const EVAL_JSON_FILE: &str = "eval.json";
const EVAL_BATCH: usize = 8;

/// How images are brought to unit range before scoring.
pub const NORMALIZATION_NOTE: &str =
    "network output clamped to [0,1]; DAS images and targets min-max normalized to [0,1]";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub index: usize,
    pub method: String,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == name)
    }

    /// Builds rows and summaries from `(method, per-sample (ssim, psnr))`.
    pub fn from_scores(methods: Vec<(String, Vec<(f64, f64)>)>) -> Self {
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for (method, scores) in methods {
            for (index, &(ssim, psnr)) in scores.iter().enumerate() {
                rows.push(EvalRow {
                    index,
                    method: method.clone(),
                    ssim,
                    psnr,
                });
            }
            let (ssim_mean, ssim_std) = mean_std(&scores.iter().map(|s| s.0).collect::<Vec<_>>());
            let (psnr_mean, psnr_std) = mean_std(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
            summary.push(MethodSummary {
                method,
                n: scores.len(),
                ssim_mean,
                ssim_std,
                psnr_mean,
                psnr_std,
            });
        }
        Self { rows, summary }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,method,ssim,psnr\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.index,
                r.method,
                num_text(r.ssim),
                num_text(r.psnr)
            );
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let methods: Vec<Value> = self
            .summary
            .iter()
            .map(|s| {
                json!({
                    "method": s.method,
                    "n": s.n,
                    "ssim_mean": num(s.ssim_mean),
                    "ssim_std": num(s.ssim_std),
                    "psnr_mean": num(s.psnr_mean),
                    "psnr_std": num(s.psnr_std),
                })
            })
            .collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| json!({"index": r.index, "method": r.method, "ssim": num(r.ssim), "psnr": num(r.psnr)}))
            .collect();
        json!({"normalization": NORMALIZATION_NOTE, "summary": methods, "samples": rows})
    }
}

fn num_text(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// JSON number, or a string for non-finite values.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(num_text(v))
    }
}

fn score(y: &[f32], g: &[f32]) -> Result<(f64, f64)> {
    Ok((ssim_slices(y, g)?, psnr_slices(y, g)?))
}

/// Scores `params` on a prepared dataset.
pub fn evaluate_with(
    cfg: &NetConfig,
    params: &ParamStore<f32>,
    data: &PreparedSet,
) -> Result<EvalReport> {
    let n = data.len();
    let order: Vec<usize> = (0..n).collect();
    let mut network = Vec::with_capacity(n);
    for batch in order.chunks(EVAL_BATCH) {
        let (signal, das, _) = data.batch(batch)?;
        let (y_r, _) = infer(cfg, params, signal, das);
        let plane = cfg.side_n * cfg.side_n;
        for (k, &i) in batch.iter().enumerate() {
            let y: Vec<f32> = y_r.data[k * plane..(k + 1) * plane]
                .iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            network.push(score(&y, &data.targets[i])?);
        }
    }
    let das = (0..n)
        .map(|i| score(&data.das[i], &data.targets[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(vec![
        ("network".into(), network),
        ("das_sparse".into(), das),
    ]))
}

/// Loads a checkpoint and scores it on the dataset in `dataset_dir`.
pub fn evaluate(checkpoint: &Path, dataset_dir: &Path) -> Result<EvalReport> {
    let (cfg, params) = load_checkpoint(checkpoint)?;
    let ds = read_dataset(dataset_dir)?;
    let data = PreparedSet::load(&ds, &cfg).map_err(|e| match e {
        Error::Shape(msg) => Error::Validation(format!("checkpoint does not match dataset: {msg}")),
        other => other,
    })?;
    evaluate_with(&cfg, &params, &data)
}

/// Writes `eval.csv` and `eval.json` under `out_dir`.
pub fn write_eval_report(report: &EvalReport, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(EVAL_CSV_FILE);
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let json = out_dir.join(EVAL_JSON_FILE);
    crate::dataset::write_json(&json, &report.to_json())?;
    Ok((csv, json))
}
