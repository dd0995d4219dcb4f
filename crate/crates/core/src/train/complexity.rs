//! Parameter counts, analytic FLOPs, and forward latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::nn::{
    count_params, infer, init_params, trace, LayerCost, NetConfig, ParamStore, Tensor,
};

/// Per-sample FLOPs (2 per multiply-accumulate) of the whole network.
pub fn estimate_flops(cfg: &NetConfig) -> u64 {
    trace(cfg).total_flops()
}

/// Median wall-clock seconds of single-sample forward passes, after
/// `warmup` discarded runs; also returns every timed run.
pub fn benchmark_latency(
    cfg: &NetConfig,
    params: &ParamStore<f32>,
    n_runs: usize,
    warmup: usize,
) -> (f64, Vec<f64>) {
    let n = cfg.side_n;
    let signal = Tensor::full(&cfg.signal_input_shape(1), 0.1f32);
    let das = Tensor::full(&[1, 1, n, n], 0.5f32);
    for _ in 0..warmup {
        infer(cfg, params, signal.clone(), das.clone());
    }
    let mut runs: Vec<f64> = (0..n_runs.max(1))
        .map(|_| {
            let (s, d) = (signal.clone(), das.clone());
            let t0 = Instant::now();
            infer(cfg, params, s, d);
            t0.elapsed().as_secs_f64()
        })
        .collect();
    let timed = runs.clone();
    runs.sort_by(f64::total_cmp);
    let mid = runs.len() / 2;
    let median = if runs.len() % 2 == 1 {
        runs[mid]
    } else {
        0.5 * (runs[mid - 1] + runs[mid])
    };
    (median, timed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub config: NetConfig,
    pub n_params: usize,
    pub flops_per_sample: u64,
    pub latency_s: f64,
    pub latency_std_s: f64,
    pub latency_runs: usize,
    pub environment: String,
    pub layers: Vec<LayerCost>,
    /// FLOPs of residual adds and pooling, not attributed to a layer.
    pub elementwise_flops: u64,
}

/// Unfolded-stem variant relative to the folded one at matched widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityComparison {
    pub ft: ComplexityReport,
    pub no_ft: ComplexityReport,
    /// `ft / no_ft`.
    pub param_ratio: f64,
    pub flop_ratio: f64,
    pub latency_ratio: f64,
    /// `100 · (1 − param_ratio)`.
    pub param_reduction_pct: f64,
    pub flop_reduction_pct: f64,
}

impl ComplexityComparison {
    pub fn new(ft: ComplexityReport, no_ft: ComplexityReport) -> Self {
        let param_ratio = ft.n_params as f64 / no_ft.n_params as f64;
        let flop_ratio = ft.flops_per_sample as f64 / no_ft.flops_per_sample as f64;
        Self {
            param_ratio,
            flop_ratio,
            latency_ratio: ft.latency_s / no_ft.latency_s,
            param_reduction_pct: 100.0 * (1.0 - param_ratio),
            flop_reduction_pct: 100.0 * (1.0 - flop_ratio),
            ft,
            no_ft,
        }
    }
}

pub fn environment() -> String {
    format!(
        "{}-{}, {} worker threads",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

/// Full report for `cfg`; freshly initialized weights are used when `params`
/// is `None` (latency does not depend on weight values).
pub fn complexity_report(
    cfg: &NetConfig,
    params: Option<&ParamStore<f32>>,
    n_runs: usize,
) -> ComplexityReport {
    let owned;
    let params = match params {
        Some(p) => p,
        None => {
            owned = init_params::<f32>(cfg);
            &owned
        }
    };
    let t = trace(cfg);
    let (latency_s, runs) = benchmark_latency(cfg, params, n_runs, 3);
    let (_, latency_std_s) = crate::metrics::mean_std(&runs);
    ComplexityReport {
        config: cfg.clone(),
        n_params: count_params(cfg),
        flops_per_sample: t.total_flops(),
        latency_s,
        latency_std_s,
        latency_runs: runs.len(),
        environment: environment(),
        elementwise_flops: t.elementwise_flops,
        layers: t.layers,
    }
}
