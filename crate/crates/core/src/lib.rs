//! Estimation of a jump curve in a noisy image by rotated difference kernels,
//! with point-wise confidence intervals and multiplier-bootstrap uniform bands
//! for the curve location, its slope and its height.

pub mod confidence;
pub mod contrast;
pub mod error;
pub mod estimator;
pub mod image;
pub mod kernels;
pub mod multiedge;
pub mod quadrature;
pub mod scalar;
pub mod simulation;
pub mod variance;

pub use error::{EdgeError, Result};
pub use scalar::Scalar;

pub use confidence::{BandConfig, BandResult, Target, TnPolicy};
pub use estimator::{EdgeEstimate, EstimationConfig};
pub use image::ImageGrid;
pub use kernels::KernelPair;

pub type Grid = image::ImageGrid<f64>;
pub type Grid32 = image::ImageGrid<f32>;
pub type Estimate = estimator::EdgeEstimate<f64>;
pub type Estimate32 = estimator::EdgeEstimate<f32>;
pub type Kernels = kernels::KernelPair<f64>;
pub type Kernels32 = kernels::KernelPair<f32>;
pub type Config = estimator::EstimationConfig<f64>;
pub type Config32 = estimator::EstimationConfig<f32>;
