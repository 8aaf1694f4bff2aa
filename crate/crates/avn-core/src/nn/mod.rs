//! Minimal differentiable-computation substrate: parameters and AdamW,
//! layer builders, losses, and a finite-difference gradient oracle.

pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod params;

pub use gradcheck::gradient_check;
pub use layers::{
    birnn_forward, copy_mha, init_birnn, init_mha, linear_forward, multihead_attention, param,
    scaled_dot_attention, AttentionOut, MHAConfig, MhaOut,
};
pub use losses::{bce_loss, combined_loss, dice_loss, BCE_EPS};
pub use params::{AdamWConfig, ParamStore, CHECKPOINT_VERSION};
