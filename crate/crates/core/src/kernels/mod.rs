//! Raw tensor kernels, independent of the tape.

pub mod conv;
pub mod linear;
pub mod pool;

pub use conv::{conv2d, conv2d_with, ConvSpec};
pub use linear::linear;
pub use pool::{global_pool, resample, PoolKind, Resample};
