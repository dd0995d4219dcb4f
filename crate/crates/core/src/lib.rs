//! Sparse-view photoacoustic reconstruction toolkit: ring-array simulation,
//! folded signal layout, delay-and-sum beamforming, image metrics, and a
//! trainable attention-steered reconstruction network.

pub mod beamform;
pub mod dataset;
pub mod error;
pub mod fold;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod simulate;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{ArrayGeometry, FoldedTensor, ImageGrid, RawSignalMatrix};
