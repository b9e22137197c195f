//! Gumbel-Softmax feature selection for visual-token pruning.
//!
//! A selector network scores every token of a feature set and samples a
//! binary keep mask; dropped tokens are replaced by a shared learned
//! embedding and a reconstructor network restores the full set. Training
//! minimises reconstruction error plus a clamped retention penalty, after
//! which the selector's logits rank tokens for top-k pruning.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the `f32` working precision used by the file formats
//! and the command-line tool.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod grad_check;
pub mod gumbel;
pub mod networks;
pub mod objective;
pub mod optim;
pub mod oracle;
pub mod scalar;
pub mod seed;
pub mod select;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gumbel::{GumbelMask, MaskPath};
pub use networks::{NetworkConfig, Parameters};
pub use scalar::Scalar;
pub use tape::{Graph, Var};

pub type Tensor = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type SelectorNetwork = networks::SelectorNetwork<f32>;
pub type ReconstructorNetwork = networks::ReconstructorNetwork<f32>;
pub type FeatureSet = data::FeatureSet<f32>;
pub type SelectionResult = select::SelectionResult<f32>;

pub use checkpoint::Checkpoint;
pub use eval::{Policy, PolicyReport};
pub use train::{TrainConfig, Trainer};
