//! Convolutional inertial odometry: a hierarchical depthwise-convolution
//! backbone that regresses window-average velocity from raw IMU samples,
//! together with a synthetic data generator, a training loop, and trajectory
//! reconstruction and error metrics.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below name the two
//! concrete instantiations used in practice.

pub mod datahub;
pub mod error;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod trajeval;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{FeatureBatch, Tensor};

/// Single-precision backbone used for training and inference.
pub type IoNextF32 = nn::IoNext<f32>;
/// Double-precision backbone used for gradient checking.
pub type IoNextF64 = nn::IoNext<f64>;
pub type ParameterSetF32 = nn::ParameterSet<f32>;
pub type ParameterSetF64 = nn::ParameterSet<f64>;
pub type GradientsF32 = nn::Gradients<f32>;
pub type GradientsF64 = nn::Gradients<f64>;
