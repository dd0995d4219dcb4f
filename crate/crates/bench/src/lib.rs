//! Fixtures shared by the benchmarks.

use asnet_core::simulate::{forward_project, gen_phantom, make_geometry, PhantomConfig};
use asnet_core::{ArrayGeometry, ImageGrid, RawSignalMatrix};

/// Ring of `n_elements` at 18 mm around a 12.7 mm field of view.
pub fn ring(n_elements: usize, n_grid: usize) -> ArrayGeometry {
    make_geometry(n_elements, 0.018, 0.0127, n_grid, 1500.0, 40e6, 5e6, 0.8).unwrap()
}

pub fn phantom(n_grid: usize) -> ImageGrid {
    gen_phantom(&PhantomConfig::for_grid(n_grid, 1), n_grid, 0.0127, 0)
}

/// Simulated sparse-view record of a vessel phantom.
pub fn record(n_elements: usize, n_grid: usize, m: usize) -> (RawSignalMatrix, ArrayGeometry) {
    let geom = ring(n_elements, n_grid);
    let sig = forward_project(&phantom(n_grid), &geom, m).unwrap();
    (sig, geom)
}
