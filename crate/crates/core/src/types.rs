//! Domain types shared by the simulator, the folding transform, the
//! beamformer and the network.
//!
//! Pixel convention (used everywhere): for an `N × N` grid over a square
//! field of view of side `fov`, pixel `(row, col)` sits at
//! `x = (col − N/2)·pitch`, `y = (N/2 − row)·pitch` with `pitch = fov / N`.
//! Row 0 is the top (largest `y`), column 0 the left (smallest `x`), and
//! pixel `(N/2, N/2)` is exactly the ring center.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ring-array acquisition geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_elements: usize,
    pub radius_m: f64,
    pub speed_mps: f64,
    pub fs_hz: f64,
    pub fov_m: f64,
    pub n_grid: usize,
    pub center_freq_hz: f64,
    pub frac_bandwidth: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    n_elements: usize,
    radius_m: f64,
    speed_mps: f64,
    fs_hz: f64,
    fov_m: f64,
    n_grid: usize,
    center_freq_hz: f64,
    frac_bandwidth: f64,
}

impl TryFrom<RawGeometry> for ArrayGeometry {
    type Error = Error;

    fn try_from(r: RawGeometry) -> Result<Self> {
        ArrayGeometry::new(
            r.n_elements,
            r.radius_m,
            r.fov_m,
            r.n_grid,
            r.speed_mps,
            r.fs_hz,
            r.center_freq_hz,
            r.frac_bandwidth,
        )
    }
}

impl ArrayGeometry {
    /// Builds a geometry, checking every invariant. Errors name the violated
    /// constraint.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_elements: usize,
        radius_m: f64,
        fov_m: f64,
        n_grid: usize,
        speed_mps: f64,
        fs_hz: f64,
        center_freq_hz: f64,
        frac_bandwidth: f64,
    ) -> Result<Self> {
        let all_finite = [
            radius_m,
            fov_m,
            speed_mps,
            fs_hz,
            center_freq_hz,
            frac_bandwidth,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Geometry(
                "all physical parameters must be finite".into(),
            ));
        }
        if n_elements == 0 {
            return Err(Error::Geometry("n_elements must be at least 1".into()));
        }
        if n_grid == 0 {
            return Err(Error::Geometry("n_grid must be at least 1".into()));
        }
        if radius_m <= 0.0 || fov_m <= 0.0 || speed_mps <= 0.0 || center_freq_hz <= 0.0 {
            return Err(Error::Geometry(
                "radius_m, fov_m, speed_mps and center_freq_hz must be positive".into(),
            ));
        }
        if !(frac_bandwidth > 0.0 && frac_bandwidth < 2.0) {
            return Err(Error::Geometry(format!(
                "frac_bandwidth must lie in (0, 2), got {frac_bandwidth}"
            )));
        }
        if fov_m / 2f64.sqrt() >= radius_m {
            return Err(Error::Geometry(format!(
                "imaging square must fit inside the ring: fov_m/sqrt(2) = {:.6} >= radius_m = {radius_m}",
                fov_m / 2f64.sqrt()
            )));
        }
        let band_edge = 2.0 * center_freq_hz * (1.0 + frac_bandwidth / 2.0);
        if fs_hz <= band_edge {
            return Err(Error::Geometry(format!(
                "fs_hz = {fs_hz} must exceed twice the upper band edge ({band_edge})"
            )));
        }
        Ok(Self {
            n_elements,
            radius_m,
            speed_mps,
            fs_hz,
            fov_m,
            n_grid,
            center_freq_hz,
            frac_bandwidth,
        })
    }

    /// Same ring and grid with a different element count.
    pub fn with_elements(&self, n_elements: usize) -> Result<Self> {
        Self::new(
            n_elements,
            self.radius_m,
            self.fov_m,
            self.n_grid,
            self.speed_mps,
            self.fs_hz,
            self.center_freq_hz,
            self.frac_bandwidth,
        )
    }

    /// Same physics on a different pixel grid.
    pub fn with_grid(&self, n_grid: usize) -> Result<Self> {
        Self::new(
            self.n_elements,
            self.radius_m,
            self.fov_m,
            n_grid,
            self.speed_mps,
            self.fs_hz,
            self.center_freq_hz,
            self.frac_bandwidth,
        )
    }

    pub fn element_angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_elements as f64
    }

    /// Element `k` position in meters; element 0 on the +x axis, counterclockwise.
    pub fn element_position(&self, k: usize) -> (f64, f64) {
        let theta = self.element_angle(k);
        (self.radius_m * theta.cos(), self.radius_m * theta.sin())
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.fov_m / self.n_grid as f64
    }

    /// Physical center of pixel `(row, col)`.
    pub fn pixel_position(&self, row: usize, col: usize) -> (f64, f64) {
        let pitch = self.pixel_pitch();
        let half = self.n_grid as f64 / 2.0;
        ((col as f64 - half) * pitch, (half - row as f64) * pitch)
    }

    /// Samples per meter of travel.
    pub fn samples_per_meter(&self) -> f64 {
        self.fs_hz / self.speed_mps
    }
}

/// Time × sensor signal, row-major with time as the slow axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignalMatrix {
    pub m: usize,
    pub n: usize,
    pub fs_hz: f64,
    pub data: Vec<f32>,
}

impl RawSignalMatrix {
    pub fn zeros(m: usize, n: usize, fs_hz: f64) -> Self {
        Self {
            m,
            n,
            fs_hz,
            data: vec![0.0; m * n],
        }
    }

    pub fn from_vec(m: usize, n: usize, fs_hz: f64, data: Vec<f32>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "signal must be non-empty, got {m}x{n}"
            )));
        }
        if data.len() != m * n {
            return Err(Error::Shape(format!(
                "signal {m}x{n} needs {} values, got {}",
                m * n,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "signal value at flat index {i} is not finite"
            )));
        }
        Ok(Self { m, n, fs_hz, data })
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> f32 {
        self.data[t * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, t: usize, j: usize, v: f32) {
        self.data[t * self.n + j] = v;
    }

    /// One sensor trace as a contiguous vector.
    pub fn channel(&self, j: usize) -> Vec<f32> {
        (0..self.m).map(|t| self.get(t, j)).collect()
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |a, v| a.max(v.abs()))
    }
}

/// Output of the folding transform: `q` channels of `side × side`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedTensor {
    pub q: usize,
    pub side: usize,
    pub pad_time: usize,
    pub pad_sensors: usize,
    /// Layout `[channel][time_row][sensor_col]`.
    pub data: Vec<f32>,
}

impl FoldedTensor {
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f32 {
        self.data[(k * self.side + i) * self.side + j]
    }
}

/// Square single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub n: usize,
    pub fov_m: f64,
    pub data: Vec<f32>,
}

impl ImageGrid {
    pub fn zeros(n: usize, fov_m: f64) -> Self {
        Self {
            n,
            fov_m,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_vec(n: usize, fov_m: f64, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "image {n}x{n} needs {} values, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, fov_m, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.n + col] = v;
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Min-max rescale to [0, 1]; a constant image becomes all zeros.
    pub fn normalized(&self) -> ImageGrid {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let data = if range > 0.0 && range.is_finite() {
            self.data.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        ImageGrid {
            n: self.n,
            fov_m: self.fov_m,
            data,
        }
    }

    /// Position of the largest `|value|`, first occurrence in row-major order.
    pub fn argmax_abs(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if v.abs() > self.data[best].abs() {
                best = i;
            }
        }
        (best / self.n, best % self.n)
    }

    /// Rotates by +90° about the grid center `(N/2, N/2)`:
    /// `(row, col) → (N − col, row)`. Pixels that would leave the grid
    /// (column 0) are dropped and vacated pixels are zero.
    pub fn rotated_quarter(&self) -> ImageGrid {
        let n = self.n;
        let mut out = ImageGrid::zeros(n, self.fov_m);
        for row in 0..n {
            for col in 1..n {
                out.set(n - col, row, self.get(row, col));
            }
        }
        out
    }
}
