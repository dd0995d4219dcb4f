//! Network inputs and targets derived from a dataset.

use crate::beamform::das_reconstruct;
use crate::dataset::{sample_file, Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::fold::{fold, q_of};
use crate::nn::config::RAW_STEM_STRIDE;
use crate::nn::{NetConfig, Tensor};
use crate::simulate::DENSE_PREFIX;
use crate::types::RawSignalMatrix;

/// Network configuration matching a dataset's shapes; `desk` selects the
/// half-width preset.
pub fn net_config_for(manifest: &DatasetManifest, desk: bool, seed: u64) -> NetConfig {
    let n = manifest.image_shape.0;
    let q = q_of(manifest.signal_shape.0, n);
    if desk {
        NetConfig::desk(q, n, seed)
    } else {
        NetConfig::full_size(q, n, seed)
    }
}

/// Signal-path input of one sample: the signal scaled to unit peak
/// magnitude, then folded to `q × N × N` or, for the raw stem, zero-padded
/// to `20N × N`.
pub fn signal_input(sig: &RawSignalMatrix, cfg: &NetConfig) -> Result<Vec<f32>> {
    let n = cfg.side_n;
    let peak = sig.max_abs();
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let scaled: Vec<f32> = sig.data.iter().map(|&v| v * scale).collect();
    let scaled = RawSignalMatrix::from_vec(sig.m, sig.n, sig.fs_hz, scaled)?;
    if cfg.use_ft_stem {
        let f = fold(&scaled, n, true)?;
        if f.q != cfg.in_channels_q {
            return Err(Error::Shape(format!(
                "signal folds to {} channels but the network expects {}",
                f.q, cfg.in_channels_q
            )));
        }
        Ok(f.data)
    } else {
        let rows = RAW_STEM_STRIDE * n;
        if sig.m > rows || sig.n > n {
            return Err(Error::Shape(format!(
                "{}x{} signal does not fit the {rows}x{n} raw-stem input",
                sig.m, sig.n
            )));
        }
        let mut out = vec![0.0f32; rows * n];
        for t in 0..sig.m {
            out[t * n..t * n + sig.n].copy_from_slice(&scaled.data[t * sig.n..(t + 1) * sig.n]);
        }
        Ok(out)
    }
}

/// Dataset view with cached DAS inputs and targets. Signals are re-read and
/// transformed per batch.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    dataset: Dataset,
    cfg: NetConfig,
    /// Min-max normalized sparse DAS images.
    pub das: Vec<Vec<f32>>,
    /// Dense-array DAS images when present, otherwise the stored images.
    pub targets: Vec<Vec<f32>>,
}

impl PreparedSet {
    pub fn load(ds: &Dataset, cfg: &NetConfig) -> Result<Self> {
        let n = ds.manifest.image_shape.0;
        if n != cfg.side_n {
            return Err(Error::Shape(format!(
                "dataset images are {n}x{n} but the network side is {}",
                cfg.side_n
            )));
        }
        let mut das = Vec::with_capacity(ds.len());
        let mut targets = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            let sig = ds.signal(i)?;
            das.push(das_reconstruct(&sig, ds.geometry())?.normalized().data);
            let dense = ds.dir.join(sample_file(DENSE_PREFIX, i));
            let target = if dense.is_file() {
                ds.image_file(DENSE_PREFIX, i)?
            } else {
                ds.image(i)?
            };
            targets.push(target.data);
        }
        Ok(Self {
            dataset: ds.clone(),
            cfg: cfg.clone(),
            das,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.das.len()
    }

    pub fn is_empty(&self) -> bool {
        self.das.is_empty()
    }

    /// `(signal input, DAS input, target)` tensors for the given samples.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let b = indices.len();
        let n = self.cfg.side_n;
        let mut sig = Vec::new();
        let mut das = Vec::with_capacity(b * n * n);
        let mut tgt = Vec::with_capacity(b * n * n);
        for &i in indices {
            sig.extend(signal_input(&self.dataset.signal(i)?, &self.cfg)?);
            das.extend_from_slice(&self.das[i]);
            tgt.extend_from_slice(&self.targets[i]);
        }
        Ok((
            Tensor::from_vec(&self.cfg.signal_input_shape(b), sig),
            Tensor::from_vec(&[b, 1, n, n], das),
            Tensor::from_vec(&[b, 1, n, n], tgt),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_input_is_padded_and_scaled() {
        let mut cfg = NetConfig::desk(1, 16, 0);
        cfg.use_ft_stem = false;
        let sig =
            RawSignalMatrix::from_vec(3, 2, 1.0, vec![1.0, -4.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let v = signal_input(&sig, &cfg).unwrap();
        assert_eq!(v.len(), 320 * 16);
        assert_eq!(&v[..2], &[0.25, -1.0]);
        assert_eq!(v[16], 0.5);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 3);
    }

    #[test]
    fn folded_input_checks_q() {
        let cfg = NetConfig::desk(2, 16, 0);
        let sig = RawSignalMatrix::from_vec(40, 4, 1.0, vec![1.0; 160]).unwrap();
        assert!(signal_input(&sig, &cfg).is_err());
        let sig = RawSignalMatrix::from_vec(32, 4, 1.0, vec![2.0; 128]).unwrap();
        let v = signal_input(&sig, &cfg).unwrap();
        assert_eq!(v.len(), 2 * 16 * 16);
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 128);
    }
}
