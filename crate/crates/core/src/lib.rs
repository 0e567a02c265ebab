pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod seeds;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, OpKind, Var};
pub use model::{Model, ModelConfig, ModelInput, ModelKind, ModelSpec};
pub use params::ParamSet;
pub use tensor::Tensor;
