//! Chebyshev spectral graph convolutions, classic network blocks built from
//! them, and the data handling and training loop for graph classification.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod sparse;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use graph::Graph;
pub use model::{Architecture, Model, ModelSpec};
pub use scalar::Real;
pub use sparse::CsrMatrix;
pub use tensor::{Mode, ParamId, ParamStore, Tape, Tensor, Var};
