//! Global SSIM, PSNR, and the smooth-L1 penalty.

use crate::error::{Error, Result};
use crate::types::ImageGrid;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b} elements")));
    }
    Ok(())
}

/// Single-window SSIM over the whole image, population (co)variances.
pub fn ssim(y: &ImageGrid, g: &ImageGrid) -> Result<f64> {
    if y.n != g.n {
        return Err(Error::Shape(format!("ssim: {0}x{0} vs {1}x{1}", y.n, g.n)));
    }
    ssim_slices(&y.data, &g.data)
}

pub fn ssim_slices(y: &[f32], g: &[f32]) -> Result<f64> {
    check_same(y.len(), g.len(), "ssim")?;
    if y.is_empty() {
        return Err(Error::Shape("ssim of empty images".into()));
    }
    let n = y.len() as f64;
    let mu_y = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mu_g = g.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut var_y, mut var_g, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(g) {
        let da = a as f64 - mu_y;
        let db = b as f64 - mu_g;
        var_y += da * da;
        var_g += db * db;
        cov += da * db;
    }
    var_y /= n;
    var_g /= n;
    cov /= n;
    Ok(((2.0 * mu_y * mu_g + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_y * mu_y + mu_g * mu_g + SSIM_C1) * (var_y + var_g + SSIM_C2)))
}

/// PSNR in dB with the peak taken over both images; `+∞` when they are equal.
pub fn psnr(y: &ImageGrid, g: &ImageGrid) -> Result<f64> {
    if y.n != g.n {
        return Err(Error::Shape(format!("psnr: {0}x{0} vs {1}x{1}", y.n, g.n)));
    }
    psnr_slices(&y.data, &g.data)
}

pub fn psnr_slices(y: &[f32], g: &[f32]) -> Result<f64> {
    check_same(y.len(), g.len(), "psnr")?;
    if y.is_empty() {
        return Err(Error::Shape("psnr of empty images".into()));
    }
    let mse = y
        .iter()
        .zip(g)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = y
        .iter()
        .chain(g)
        .fold(f64::NEG_INFINITY, |p, &v| p.max(v as f64));
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `0.5·x²` for `|x| < 1`, else `|x| − 0.5`.
#[inline]
pub fn smooth_l1_value(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1_value`].
#[inline]
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Mean smooth-L1 of `a − b`.
pub fn smooth_l1<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    check_same(a.len(), b.len(), "smooth_l1")?;
    if a.is_empty() {
        return Err(Error::Shape("smooth_l1 of empty arrays".into()));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| smooth_l1_value(x.into() - y.into()))
        .sum();
    Ok(total / a.len() as f64)
}

/// Mean and population standard deviation; infinite values propagate.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
