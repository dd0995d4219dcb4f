//! Tensors, reverse-mode differentiation, and the reconstruction network.

pub mod config;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod params;
pub mod tensor;

pub use config::{Branches, NetConfig};
pub use graph::{Gradients, Graph, Var};
pub use kernels::ConvGeom;
pub use model::{
    asnet_forward, infer, trace, Backend, GraphBackend, LayerCost, NetOutputs, ShapeTracer,
};
pub use params::{count_params, init_params, load_checkpoint, save_checkpoint, ParamStore};
pub use tensor::{Scalar, Tensor};
