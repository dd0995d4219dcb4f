//! Folding transform: a long `m × n` signal becomes `q` stride-`q`
//! decimations of shape `N × N`, with `q = ⌈m / N⌉`.
//!
//! Channel `k` holds time samples `k, k + q, k + 2q, …`, so
//! `out[k, i, j] = s_padded[i·q + k, j]`. Time is zero-filled at the end to
//! `q·N` samples and sensors are zero-padded on the right to `N` columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FoldedTensor, RawSignalMatrix};

/// Number of folded channels for `m` time samples and side `n`.
pub fn q_of(m: usize, n: usize) -> usize {
    m.div_ceil(n)
}

/// Shape record written next to a folded cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSidecar {
    pub q: usize,
    pub side: usize,
    pub pad_time: usize,
    pub pad_sensors: usize,
    pub m_original: usize,
    pub n_original: usize,
}

impl FoldSidecar {
    pub fn of(f: &FoldedTensor, m_original: usize, n_original: usize) -> Self {
        Self {
            q: f.q,
            side: f.side,
            pad_time: f.pad_time,
            pad_sensors: f.pad_sensors,
            m_original,
            n_original,
        }
    }
}

pub fn fold(s: &RawSignalMatrix, side: usize, pad_sensors_to_side: bool) -> Result<FoldedTensor> {
    if side == 0 {
        return Err(Error::Shape("fold side must be at least 1".into()));
    }
    if s.n > side {
        return Err(Error::Shape(format!(
            "signal has {} sensors, more than the fold side {side}",
            s.n
        )));
    }
    if !pad_sensors_to_side && s.n != side {
        return Err(Error::Shape(format!(
            "signal has {} sensors but padding is disabled and side is {side}",
            s.n
        )));
    }
    let q = q_of(s.m, side);
    let mut data = vec![0.0f32; q * side * side];
    for t in 0..s.m {
        let (i, k) = (t / q, t % q);
        let dst = (k * side + i) * side;
        data[dst..dst + s.n].copy_from_slice(&s.data[t * s.n..(t + 1) * s.n]);
    }
    Ok(FoldedTensor {
        q,
        side,
        pad_time: q * side - s.m,
        pad_sensors: side - s.n,
        data,
    })
}

/// Exact inverse of [`fold`]. The declared pad regions must be all zero.
pub fn unfold(
    f: &FoldedTensor,
    m_original: usize,
    n_original: usize,
    fs_hz: f64,
) -> Result<RawSignalMatrix> {
    let side = f.side;
    if f.data.len() != f.q * side * side {
        return Err(Error::Shape(format!(
            "folded data has {} values, expected {}",
            f.data.len(),
            f.q * side * side
        )));
    }
    if m_original == 0 || n_original == 0 || q_of(m_original, side) != f.q {
        return Err(Error::Shape(format!(
            "{m_original}x{n_original} signal does not fold to q = {} at side {side}",
            f.q
        )));
    }
    if n_original + f.pad_sensors != side || m_original + f.pad_time != f.q * side {
        return Err(Error::Shape(format!(
            "pads (time {}, sensors {}) inconsistent with {m_original}x{n_original} at side {side}",
            f.pad_time, f.pad_sensors
        )));
    }
    let q = f.q;
    for t in 0..q * side {
        let (i, k) = (t / q, t % q);
        let row = &f.data[(k * side + i) * side..(k * side + i + 1) * side];
        let start = if t < m_original { n_original } else { 0 };
        if let Some(j) = row[start..].iter().position(|&v| v != 0.0) {
            return Err(Error::Validation(format!(
                "nonzero value in pad region at time {t}, sensor {}",
                start + j
            )));
        }
    }
    let mut data = Vec::with_capacity(m_original * n_original);
    for t in 0..m_original {
        let (i, k) = (t / q, t % q);
        let dst = (k * side + i) * side;
        data.extend_from_slice(&f.data[dst..dst + n_original]);
    }
    RawSignalMatrix::from_vec(m_original, n_original, fs_hz, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(m: usize, n: usize) -> RawSignalMatrix {
        let data = (0..m * n).map(|v| v as f32 + 1.0).collect();
        RawSignalMatrix::from_vec(m, n, 40e6, data).unwrap()
    }

    #[test]
    fn q_values() {
        assert_eq!(q_of(1500, 128), 12);
        assert_eq!(q_of(2560, 128), 20);
        assert_eq!(q_of(128, 128), 1);
        assert_eq!(q_of(1, 128), 1);
    }

    #[test]
    fn fish_shape_and_pads() {
        let f = fold(&ramp(1500, 32), 128, true).unwrap();
        assert_eq!((f.q, f.side, f.pad_time, f.pad_sensors), (12, 128, 36, 96));
        assert_eq!(f.data.len(), 12 * 128 * 128);
    }

    #[test]
    fn hand_decimation_m6_n2() {
        // rows r_t = [10t, 10t + 1]
        let data: Vec<f32> = (0..6)
            .flat_map(|t| [10.0 * t as f32, 10.0 * t as f32 + 1.0])
            .collect();
        let s = RawSignalMatrix::from_vec(6, 2, 1.0, data).unwrap();
        let f = fold(&s, 2, false).unwrap();
        assert_eq!(f.q, 3);
        assert_eq!(&f.data[0..4], &[0.0, 1.0, 30.0, 31.0]);
        assert_eq!(&f.data[4..8], &[10.0, 11.0, 40.0, 41.0]);
        assert_eq!(&f.data[8..12], &[20.0, 21.0, 50.0, 51.0]);
    }

    #[test]
    fn square_input_is_identity() {
        let s = ramp(16, 16);
        let f = fold(&s, 16, false).unwrap();
        assert_eq!(f.q, 1);
        assert_eq!(f.data, s.data);
    }

    #[test]
    fn rejects_too_many_sensors() {
        assert!(matches!(fold(&ramp(10, 5), 4, true), Err(Error::Shape(_))));
        assert!(matches!(fold(&ramp(10, 3), 4, false), Err(Error::Shape(_))));
    }

    #[test]
    fn roundtrip_with_padding() {
        let s = ramp(1500, 32);
        let f = fold(&s, 128, true).unwrap();
        assert_eq!(unfold(&f, 1500, 32, 40e6).unwrap(), s);
    }

    #[test]
    fn unfold_rejects_dirty_padding() {
        let s = ramp(10, 3);
        let mut f = fold(&s, 4, true).unwrap();
        // last column of channel 0 row 0 is a padded sensor
        f.data[3] = 1.0;
        assert!(matches!(unfold(&f, 10, 3, 1.0), Err(Error::Validation(_))));
        let mut g = fold(&s, 4, true).unwrap();
        // t = 11 (k = 2, i = 3) is zero-filled time
        g.data[(2 * 4 + 3) * 4] = 1.0;
        assert!(matches!(unfold(&g, 10, 3, 1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn unfold_rejects_inconsistent_shapes() {
        let f = fold(&ramp(10, 3), 4, true).unwrap();
        assert!(matches!(unfold(&f, 20, 3, 1.0), Err(Error::Shape(_))));
        assert!(matches!(unfold(&f, 10, 2, 1.0), Err(Error::Shape(_))));
    }
}
