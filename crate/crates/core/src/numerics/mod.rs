//! Dense network primitives: forward/backward passes, path products and the
//! Adam optimizer.

mod adam;
mod mlp;
mod paths;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, ForwardTrace, Layer, MlpParams};
pub use paths::{
    lambda_from_paths, masked_path_norm, masked_path_ratio, path_dependency, path_dependency_layers,
    structure_penalty_eval, NormKind, PenaltyEval,
};
