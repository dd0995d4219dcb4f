//! Loss, optimizer, learning-rate schedule, and the training loop.

mod complexity;
mod data;
mod eval;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::read_dataset;
use crate::error::{Error, Result};
use crate::metrics::smooth_l1;
use crate::nn::{
    asnet_forward, init_params, save_checkpoint, Graph, GraphBackend, NetConfig, ParamStore, Tensor,
};

pub use complexity::{
    benchmark_latency, complexity_report, estimate_flops, ComplexityComparison, ComplexityReport,
};
pub use data::{net_config_for, PreparedSet};
pub use eval::{
    evaluate, evaluate_with, write_eval_report, EvalReport, EvalRow, MethodSummary, EVAL_CSV_FILE,
    EVAL_JSON_FILE,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const LOSS_LOG_HEADER: &str = "epoch,lr,loss,recon,aux";

/// Training variants: the full model and four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Raw signal through a 20×3 stride-20 stem instead of the folded cube.
    NoFt,
    /// Signal path only.
    NoSfe,
    /// Image path only.
    NoBpr,
    /// Auxiliary loss weight set to zero.
    NoAux,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Self::Full,
        Self::NoFt,
        Self::NoSfe,
        Self::NoBpr,
        Self::NoAux,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoFt => "no_ft",
            Self::NoSfe => "no_sfe",
            Self::NoBpr => "no_bpr",
            Self::NoAux => "no_aux",
        }
    }

    /// Network configuration for this variant of `base`.
    pub fn net_config(self, base: &NetConfig) -> NetConfig {
        let mut cfg = base.clone();
        match self {
            Self::NoFt => cfg.use_ft_stem = false,
            Self::NoSfe => cfg.branches = crate::nn::Branches::SignalOnly,
            Self::NoBpr => cfg.branches = crate::nn::Branches::ImageOnly,
            Self::Full | Self::NoAux => {}
        }
        cfg
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown ablation {s:?}; expected full, no_ft, no_sfe, no_bpr or no_aux"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Multiplicative factor applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub lambda_r: f64,
    pub lambda_a: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            base_lr: 0.005,
            lr_decay: 0.2,
            decay_every: 50,
            lambda_r: 0.2,
            lambda_a: 1.0,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: 600 epochs, batch 16.
    pub fn full_size() -> Self {
        Self {
            epochs: 600,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Validation(
                "epochs, batch_size and decay_every must be at least 1".into(),
            ));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda_r) || !finite_nonneg(self.lambda_a) {
            return Err(Error::Validation(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || !finite_nonneg(self.lr_decay) {
            return Err(Error::Validation(
                "learning rate and decay must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Auxiliary weight after applying the ablation.
    pub fn effective_lambda_a(&self) -> f64 {
        if self.ablation == Ablation::NoAux {
            0.0
        } else {
            self.lambda_a
        }
    }
}

/// `λ_r·L(y, y_r) + λ_a·L(y, y_d)`; the auxiliary term is 0 without `y_d`.
pub fn total_loss(
    y: &[f32],
    y_r: &[f32],
    y_d: Option<&[f32]>,
    lambda_r: f64,
    lambda_a: f64,
) -> Result<f64> {
    let recon = smooth_l1(y, y_r)?;
    let aux = match y_d {
        Some(d) => smooth_l1(y, d)?,
        None => 0.0,
    };
    Ok(lambda_r * recon + lambda_a * aux)
}

/// `base_lr · decay^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.lr_decay.powi((epoch / cfg.decay_every) as i32)
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// One update of every parameter that has a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &BTreeMap<String, Tensor<f32>>,
        lr: f64,
    ) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let eps = self.eps as f32;
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .expect("gradient for unknown parameter");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= step_size * *mi / (vi.sqrt() / c2_sqrt + eps);
            }
        }
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub recon: f64,
    pub aux: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.lr, self.loss, self.recon, self.aux
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub net_config: NetConfig,
    pub epochs: Vec<EpochLog>,
}

/// Losses of one batch: `(total, recon, aux)`, and parameter gradients.
pub fn batch_step(
    cfg: &NetConfig,
    params: &ParamStore<f32>,
    signal: Tensor<f32>,
    das: Tensor<f32>,
    target: &Tensor<f32>,
    lambda_r: f64,
    lambda_a: f64,
) -> ((f64, f64, f64), BTreeMap<String, Tensor<f32>>) {
    let mut graph = Graph::new();
    let mut be = GraphBackend::new(&mut graph, params, true);
    let s = be.graph.input(signal);
    let d = be.graph.input(das);
    let out = asnet_forward(&mut be, cfg, s, d);
    let recon = be.graph.smooth_l1(out.y_r, target);
    let mut terms = vec![(recon, lambda_r)];
    let aux = out.y_d.map(|y_d| {
        let a = be.graph.smooth_l1(y_d, target);
        terms.push((a, lambda_a));
        a
    });
    let total = be.graph.weighted_sum(&terms);
    let vars = be.into_param_vars();
    let mut grads = graph.backward(total);
    let named = vars
        .into_iter()
        .filter_map(|(name, v)| grads.take(v).map(|g| (name, g)))
        .collect();
    let value = |v| graph.value(v).item() as f64;
    ((value(total), value(recon), aux.map_or(0.0, value)), named)
}

/// Trains on the dataset in `dataset_dir`, writing a checkpoint and a loss
/// log to `out_dir`. `net` is the base configuration; the ablation in `cfg`
/// is applied to it.
pub fn train(
    dataset_dir: &Path,
    cfg: &TrainConfig,
    net: &NetConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = cfg.ablation.net_config(net);
    net.validate()?;
    let ds = read_dataset(dataset_dir)?;
    if ds.is_empty() {
        return Err(Error::Validation(format!(
            "dataset {} has no samples",
            dataset_dir.display()
        )));
    }
    let data = PreparedSet::load(&ds, &net)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut params = init_params::<f32>(&net);
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let lambda_a = cfg.effective_lambda_a();
    let mut log = String::from(LOSS_LOG_HEADER);
    log.push('\n');
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_recon, mut sum_aux) = (0.0, 0.0, 0.0);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (signal, das, target) = data.batch(batch)?;
            let ((total, recon, aux), grads) =
                batch_step(&net, &params, signal, das, &target, cfg.lambda_r, lambda_a);
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss: total,
                });
            }
            adam.step(&mut params, &grads, lr);
            let w = batch.len() as f64;
            sum_total += total * w;
            sum_recon += recon * w;
            sum_aux += aux * w;
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            epoch,
            lr,
            loss: sum_total / n,
            recon: sum_recon / n,
            aux: sum_aux / n,
        };
        let _ = writeln!(log, "{}", entry.csv_row());
        epochs.push(entry);
    }
    let loss_log = out_dir.join(LOSS_LOG_FILE);
    fs::write(&loss_log, log).map_err(|e| Error::io(&loss_log, e))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &net, &params)?;
    Ok(TrainOutcome {
        checkpoint,
        loss_log,
        net_config: net,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.005);
        assert_eq!(lr_at(49, &c), 0.005);
        assert!((lr_at(50, &c) - 0.001).abs() < 1e-15);
        assert!((lr_at(100, &c) - 0.0002).abs() < 1e-15);
        assert!((1..400).all(|e| lr_at(e, &c) <= lr_at(e - 1, &c)));
    }

    #[test]
    fn weighted_loss_arithmetic() {
        // recon residual 1.5 → 1.0, aux residual 1.0 → 0.5
        let y = [0.0f32];
        let v = total_loss(&y, &[1.5], Some(&[1.0]), 0.2, 1.0).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        assert_eq!(total_loss(&y, &y, Some(&y), 0.2, 1.0).unwrap(), 0.0);
        assert_eq!(total_loss(&y, &[1.5], None, 0.2, 1.0).unwrap(), 0.2);
    }

    #[test]
    fn adam_moves_toward_minimum() {
        // f(w) = (w − 3)², one step from 0 with lr 0.1 moves by exactly lr
        let mut p = ParamStore::default();
        p.insert("w", Tensor::scalar(0.0f32));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(2.0f32 * (0.0 - 3.0)));
        let mut adam = Adam::default();
        adam.step(&mut p, &grads, 0.1);
        let w = p.get("w").unwrap().item();
        assert!((w - 0.1).abs() < 1e-6, "{w}");
    }

    #[test]
    fn ablation_names_roundtrip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("none".parse::<Ablation>().is_err());
        let c = TrainConfig {
            ablation: Ablation::NoAux,
            ..TrainConfig::default()
        };
        assert_eq!(c.effective_lambda_a(), 0.0);
    }
}
