//! Ask-for-help navigation on synthetic graph worlds.
//!
//! The crate trains a small attention navigator on generated
//! graph-world episodes, estimates per-step instruction vagueness with
//! an instruction-to-path attention module, and evaluates several
//! uncertainty gates under oracle intervention.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod iv;
pub mod lang;
pub mod navigator;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod tape;
pub mod tensor;
pub mod world;

pub use error::{AvnError, Result};
