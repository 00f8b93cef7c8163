//! Numerical kernels for an edge-guided detection neck.
//!
//! The crate provides dense NCHW tensors with a reverse-mode tape, and on
//! top of them the four neck blocks: edge-guided attention with deep Sobel
//! convolution and channel attention ([`ega`]), multi-level feature
//! aggregation ([`fa`]), the wide asymmetric receptive-field block
//! ([`warfb`]) and top-down pyramid fusion ([`fpn`]). A seeded stub
//! [`backbone`] feeds the whole [`pipeline`].

pub mod autodiff;
pub mod backbone;
pub mod ega;
pub mod element;
pub mod error;
pub mod exec;
pub mod fa;
pub mod fpn;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod pipeline;
pub mod suite;
pub mod tensor;
pub mod warfb;

pub use autodiff::{Bound, Gradients, OpKind, ParamStore, Parameter, Tape, Var};
pub use element::{DType, Element};
pub use error::{Error, Result};
pub use exec::Exec;
pub use kernels::{ConvSpec, PoolKind, Resample};
pub use tensor::{Shape, Tensor, TensorStats};
pub use fa::{FaMode, PyramidSet};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use init::Initializer;
pub use pipeline::{Pipeline, PipelineConfig, PipelineOutput};
