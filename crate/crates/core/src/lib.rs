//! Predictive coding networks with temporal amortization (PCN-TA).
//!
//! Three learners share one tensor core and one layered graph:
//!
//! - [`engine`]: fixed-prediction predictive coding. With `amortize = true`
//!   the converged hidden states of frame `t−1` seed inference on frame `t`
//!   (PCN-TA); with `amortize = false` every frame starts cold from its own
//!   predictions (baseline PCN).
//! - [`backprop`]: plain backpropagation over the same parameters, used as a
//!   baseline and as the gradient oracle for predictive-coding updates.
//!
//! [`experiment`] drives streaming runs and the four-way comparison and
//! writes per-epoch CSV through [`metrics`]; [`checkpoint`] persists graphs.

pub mod backprop;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Activation, Architecture, LayerGraph, LayerSpec, StateSnapshot};
pub use tensor::Tensor;
