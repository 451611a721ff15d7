//! The small differentiable model standing in for a CNN backbone.

mod checkpoint;
mod grid;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use grid::PatchGrid;
pub use optim::{lr_at, sgd_step, LrSchedule, Sgd};
pub use params::{
    argmax, cross_entropy, cross_entropy_logit_grad, softmax, Classifier, Dense, EmbedCache, ModelDims,
    ModelParams, CE_CLAMP,
};
