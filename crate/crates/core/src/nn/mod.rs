//! Forward-only CNN engine: random frozen weights, cell execution and
//! feature extraction, plus the affine classifier head.

mod forward;
mod kernels;
mod linear;
mod tensor;
mod weights;

pub use forward::{
    apply_op, batch_norm, extract_features, forward_cell, forward_features, forward_traced, preprocess, ForwardOptions,
    NORM_EPS,
};
pub use linear::{linear_forward, LinearClassifier};
pub use tensor::{Matrix, Tensor};
pub use weights::{fan_in_bound, fan_in_uniform, init_weights, CellWeights, OpWeights, PreWeights, WeightBank};
