//! Dense trajectory forecasting from a static scene with a conditional
//! variational autoencoder.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below pin the common concrete types. Training and gradient checks are
//! intended to run at `f64`.

pub mod codec;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TrajectoryField64 = codec::TrajectoryField<f64>;
pub type TrajectoryField32 = codec::TrajectoryField<f32>;
pub type SpectralField64 = codec::SpectralField<f64>;
pub type SpectralField32 = codec::SpectralField<f32>;
pub type NormalizedSpectral64 = codec::NormalizedSpectral<f64>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type GaussianPosterior64 = model::GaussianPosterior<f64>;
pub type Prediction64 = model::Prediction<f64>;
