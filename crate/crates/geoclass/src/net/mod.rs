//! From-scratch feed-forward network with a radius learning layer.
//!
//! Layers are plain functions over `f64` slices ([`layers`]), composed into
//! the concat architecture by [`model::Network`] and trained with momentum
//! SGD in [`train`]. Double precision throughout: every layer is verified
//! against central finite differences.

pub mod check;
pub mod layers;
pub mod matrix;
pub mod model;
pub mod train;

pub use layers::{
    concat_backward, concat_forward, dropout_backward, dropout_forward, dropout_mask, fc_backward,
    fc_forward, radius_backward, radius_forward, relu_backward, relu_forward, softmax, softmax_ce,
    Fc,
};
pub use matrix::Matrix;
pub use model::{Network, NetworkConfig, Params, PartData, PartKind, PartSpec, Sample};
pub use train::{
    load_checkpoint, save_checkpoint, sgd_step, train, write_loss_curve, EpochStats, TrainConfig,
    TrainedModel,
};
