use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::ImageGrid;

/// Binary PGM (P5, maxval 255) with min-max scaling; a constant image is all zeros.
pub fn pgm_bytes(img: &ImageGrid) -> Vec<u8> {
    let (lo, hi) = img.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", img.n, img.n).into_bytes();
    out.extend(img.data.iter().map(|&v| {
        if range > 0.0 && range.is_finite() {
            let unit = ((v as f64 - lo) / range).clamp(0.0, 1.0);
            (255.0 * unit).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn render_pgm(img: &ImageGrid, path: &Path) -> Result<()> {
    fs::write(path, pgm_bytes(img)).map_err(|e| Error::io(path, e))
}
