//! Synthetic vessel phantoms and an analytic time-of-flight forward model for
//! ring arrays.
//!
//! The forward model treats every pixel as a point emitter whose pulse (the
//! transducer impulse response) reaches element `j` after `d/c` seconds and is
//! attenuated by `1/d`:
//!
//! ```text
//! s[t, j] = Σ_x p(x) · w(t − d(x, e_j)·fs/c) / max(d(x, e_j), pitch)
//! ```
//!
//! with `w` linearly interpolated at fractional sample offsets.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::das_reconstruct;
use crate::dataset::{DatasetManifest, DatasetWriter, Split};
use crate::error::{Error, Result};
use crate::types::{ArrayGeometry, ImageGrid, RawSignalMatrix};

/// File prefix of the dense-array target images written next to each sample.
pub const DENSE_PREFIX: &str = "dense";

/// Ring geometry from acquisition parameters; see [`ArrayGeometry::new`].
#[allow(clippy::too_many_arguments)]
pub fn make_geometry(
    n_elements: usize,
    radius_m: f64,
    fov_m: f64,
    n_grid: usize,
    speed_mps: f64,
    fs_hz: f64,
    center_freq_hz: f64,
    frac_bandwidth: f64,
) -> Result<ArrayGeometry> {
    ArrayGeometry::new(
        n_elements,
        radius_m,
        fov_m,
        n_grid,
        speed_mps,
        fs_hz,
        center_freq_hz,
        frac_bandwidth,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_branches: (usize, usize),
    pub width_px: (f64, f64),
    pub n_discs: (usize, usize),
    pub disc_radius_px: (f64, f64),
    pub intensity: (f64, f64),
    pub seed: u64,
}

impl PhantomConfig {
    /// Vessel-tree defaults scaled to the grid size (tuned at 128 pixels).
    pub fn for_grid(n_grid: usize, seed: u64) -> Self {
        let s = n_grid as f64 / 128.0;
        Self {
            n_branches: (3, 7),
            width_px: ((2.0 * s).max(1.0), (5.0 * s).max(1.5)),
            n_discs: (0, 2),
            disc_radius_px: ((2.0 * s).max(1.0), (6.0 * s).max(1.5)),
            intensity: (0.4, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_branches.0 <= self.n_branches.1
            && self.n_discs.0 <= self.n_discs.1
            && self.width_px.0 <= self.width_px.1
            && self.width_px.0 > 0.0
            && self.disc_radius_px.0 <= self.disc_radius_px.1
            && self.disc_radius_px.0 > 0.0
            && self.intensity.0 <= self.intensity.1
            && self.intensity.0 > 0.0
            && self.intensity.1 <= 1.0;
        if !ok {
            return Err(Error::Validation(format!("bad phantom ranges: {self:?}")));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// Stamps a filled disc, combining by maximum.
fn stamp_disc(img: &mut ImageGrid, cy: f64, cx: f64, radius: f64, value: f32) {
    let n = img.n as isize;
    let r = radius.max(0.5);
    let r2 = r * r;
    let (r0, r1) = ((cy - r).floor() as isize, (cy + r).ceil() as isize);
    let (c0, c1) = ((cx - r).floor() as isize, (cx + r).ceil() as isize);
    for row in r0.max(0)..=r1.min(n - 1) {
        for col in c0.max(0)..=c1.min(n - 1) {
            let dy = row as f64 - cy;
            let dx = col as f64 - cx;
            if dy * dy + dx * dx <= r2 {
                let cur = img.get(row as usize, col as usize);
                img.set(row as usize, col as usize, cur.max(value));
            }
        }
    }
}

/// Deterministic phantom for `(cfg.seed, index)`: a tree of quadratic Bézier
/// vessel segments plus optional discs, values in `[0, 1]`.
pub fn gen_phantom(cfg: &PhantomConfig, n_grid: usize, fov_m: f64, index: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut img = ImageGrid::zeros(n_grid, fov_m);
    let n = n_grid as f64;
    let margin = 0.1 * n;
    let mut anchor_points: Vec<(f64, f64)> = Vec::new();

    let branches = count(&mut rng, cfg.n_branches);
    for _ in 0..branches {
        let start = if anchor_points.is_empty() || rng.gen_bool(0.25) {
            (
                rng.gen_range(margin..n - margin),
                rng.gen_range(margin..n - margin),
            )
        } else {
            anchor_points[rng.gen_range(0..anchor_points.len())]
        };
        let angle = rng.gen_range(0.0..2.0 * PI);
        let length = rng.gen_range(0.25 * n..0.6 * n);
        let end = (
            (start.0 + length * angle.sin()).clamp(margin, n - margin),
            (start.1 + length * angle.cos()).clamp(margin, n - margin),
        );
        let bend = rng.gen_range(-0.35..0.35) * length;
        let mid = ((start.0 + end.0) / 2.0, (start.1 + end.1) / 2.0);
        let ctrl = (mid.0 + bend * angle.cos(), mid.1 - bend * angle.sin());
        let width = uniform(&mut rng, cfg.width_px);
        let value = uniform(&mut rng, cfg.intensity) as f32;
        let steps = (4.0 * length).ceil() as usize + 1;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let a = (1.0 - t) * (1.0 - t);
            let b = 2.0 * (1.0 - t) * t;
            let c = t * t;
            let y = a * start.0 + b * ctrl.0 + c * end.0;
            let x = a * start.1 + b * ctrl.1 + c * end.1;
            // taper slightly toward the tip
            stamp_disc(&mut img, y, x, 0.5 * width * (1.0 - 0.3 * t), value);
            if s % (steps / 4).max(1) == 0 {
                anchor_points.push((y, x));
            }
        }
    }

    let discs = count(&mut rng, cfg.n_discs);
    for _ in 0..discs {
        let cy = rng.gen_range(margin..n - margin);
        let cx = rng.gen_range(margin..n - margin);
        let r = uniform(&mut rng, cfg.disc_radius_px);
        let value = uniform(&mut rng, cfg.intensity) as f32;
        stamp_disc(&mut img, cy, cx, r, value);
    }

    if img.data.iter().all(|&v| v == 0.0) {
        let r = uniform(&mut rng, cfg.disc_radius_px);
        let value = uniform(&mut rng, cfg.intensity) as f32;
        stamp_disc(&mut img, n / 2.0, n / 2.0, r, value);
    }
    img
}

/// Sampled transducer impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub samples: Vec<f64>,
    /// Index of `t = 0` within `samples`.
    pub center_index: usize,
}

impl Wavelet {
    pub fn half_support(&self) -> usize {
        self.center_index
    }

    /// Linear interpolation at a fractional sample offset from `t = 0`,
    /// tapering to zero one sample beyond each end of the support so the
    /// response is continuous in the offset.
    #[inline]
    pub fn eval(&self, offset: f64) -> f64 {
        let pos = offset + self.center_index as f64 + 1.0;
        if pos <= 0.0 {
            return 0.0;
        }
        // index i of the zero-extended sequence is samples[i - 1]
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let at = |k: usize| {
            if k == 0 {
                0.0
            } else {
                self.samples.get(k - 1).copied().unwrap_or(0.0)
            }
        };
        at(i) * (1.0 - frac) + at(i + 1) * frac
    }
}

/// Gaussian-derivative pulse `w(t) = −t·exp(−t²/(2σ²))` whose spectral FWHM
/// equals `frac_bandwidth · f_c`; truncated at `|t| ≤ 4σ`, peak magnitude 1.
pub fn transducer_wavelet(geom: &ArrayGeometry) -> Wavelet {
    let sigma_f = geom.frac_bandwidth * geom.center_freq_hz / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let sigma_t = 1.0 / (2.0 * PI * sigma_f);
    let half = (4.0 * sigma_t * geom.fs_hz).floor() as usize;
    let raw: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let t = (k as f64 - half as f64) / geom.fs_hz;
            -t * (-t * t / (2.0 * sigma_t * sigma_t)).exp()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let samples = if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        raw
    };
    Wavelet {
        samples,
        center_index: half,
    }
}

/// Smallest record length that holds every pixel's pulse at every element.
pub fn min_record_length(geom: &ArrayGeometry, wavelet: &Wavelet) -> usize {
    let n = geom.n_grid;
    let mut max_d = 0.0f64;
    for &(row, col) in &[(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
        let (x, y) = geom.pixel_position(row, col);
        for j in 0..geom.n_elements {
            let (ex, ey) = geom.element_position(j);
            max_d = max_d.max((x - ex).hypot(y - ey));
        }
    }
    (max_d * geom.samples_per_meter() + wavelet.half_support() as f64).floor() as usize + 2
}

pub fn forward_project(img: &ImageGrid, geom: &ArrayGeometry, m: usize) -> Result<RawSignalMatrix> {
    if img.n != geom.n_grid {
        return Err(Error::Shape(format!(
            "image side {} does not match geometry grid {}",
            img.n, geom.n_grid
        )));
    }
    let wavelet = transducer_wavelet(geom);
    let min_m = min_record_length(geom, &wavelet);
    if m < min_m {
        return Err(Error::Validation(format!(
            "record length m = {m} is too small for this geometry; need at least {min_m}"
        )));
    }
    let n = img.n;
    let pitch = geom.pixel_pitch();
    let spm = geom.samples_per_meter();
    let half = wavelet.half_support() as f64;

    let columns: Vec<Vec<f64>> = (0..geom.n_elements)
        .into_par_iter()
        .map(|j| {
            let (ex, ey) = geom.element_position(j);
            let mut trace = vec![0.0f64; m];
            for row in 0..n {
                for col in 0..n {
                    let p = img.get(row, col) as f64;
                    if p == 0.0 {
                        continue;
                    }
                    let (x, y) = geom.pixel_position(row, col);
                    let d = (x - ex).hypot(y - ey);
                    let gain = p / d.max(pitch);
                    let tau = d * spm;
                    let t0 = (tau - half - 1.0).ceil().max(0.0) as usize;
                    let t1 = ((tau + half + 1.0).floor() as usize).min(m - 1);
                    for (t, slot) in trace.iter_mut().enumerate().take(t1 + 1).skip(t0) {
                        *slot += gain * wavelet.eval(t as f64 - tau);
                    }
                }
            }
            trace
        })
        .collect();

    let mut out = RawSignalMatrix::zeros(m, geom.n_elements, geom.fs_hz);
    for (j, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            out.set(t, j, *v as f32);
        }
    }
    Ok(out)
}

/// Adds zero-mean Gaussian noise with standard deviation `rel_std · max|s|`.
pub fn add_noise(sig: &mut RawSignalMatrix, rel_std: f64, seed: u64, stream: u64) {
    if rel_std <= 0.0 {
        return;
    }
    let scale = sig.max_abs() as f64 * rel_std;
    if scale == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500_0000);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, scale).expect("positive std");
    for v in sig.data.iter_mut() {
        *v += normal.sample(&mut rng) as f32;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub phantom: PhantomConfig,
    pub geometry: ArrayGeometry,
    /// Time samples per signal.
    pub m: usize,
    pub n_samples: usize,
    pub split: Split,
    /// Element count of the dense array used for the training targets;
    /// `None` skips target generation.
    pub dense_elements: Option<usize>,
    /// Relative noise level; 0 disables noise.
    pub noise_std: f64,
}

/// Generates phantoms, projects them to sparse signals and writes the dataset,
/// plus one min-max normalized dense-array DAS target per sample.
pub fn simulate_dataset(cfg: &SimulationConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.phantom.validate()?;
    let geom = &cfg.geometry;
    let manifest = DatasetManifest::new(
        geom.clone(),
        cfg.m,
        cfg.n_samples,
        cfg.phantom.seed,
        cfg.split,
    );
    let dense_geom = cfg
        .dense_elements
        .map(|k| geom.with_elements(k))
        .transpose()?;
    let writer = DatasetWriter::create(out_dir, &manifest)?;
    for i in 0..cfg.n_samples {
        let phantom = gen_phantom(&cfg.phantom, geom.n_grid, geom.fov_m, i as u64);
        let mut sig = forward_project(&phantom, geom, cfg.m)?;
        add_noise(&mut sig, cfg.noise_std, cfg.phantom.seed, i as u64);
        writer.write_sample(i, &sig, &phantom)?;
        if let Some(dense) = &dense_geom {
            let dense_sig = forward_project(&phantom, dense, cfg.m)?;
            let target = das_reconstruct(&dense_sig, dense)?.normalized();
            writer.write_extra(DENSE_PREFIX, i, &target)?;
        }
    }
    Ok(manifest)
}
