//! Rotation-invariant coordinate convolution (RIC-C).
//!
//! Each output pixel of a RIC convolution samples its input on concentric
//! circles whose first point lies on the ray from the image center through
//! that pixel. The sample positions are constant offsets from the regular
//! kernel grid, so the layer has exactly the parameters of a standard
//! convolution while commuting with rotations about the image center.
//!
//! The crate is generic over the element type ([`Scalar`]: `f32` or `f64`);
//! the aliases below fix the common choices.

pub mod conv;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod sampler;
pub mod scalar;
pub mod tensor;

pub use conv::{ConvMode, ConvSpec};
pub use error::{Error, Result};
pub use geometry::{GridConfig, OffsetField};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
