//! Digital network twin simulator: per-cell traffic twins synchronized by
//! federated learning, poisoning attacks and robust aggregation, and an
//! edge-caching sandbox with a load-balancing safety shield.
//!
//! Numeric kernels are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the pipelines run in `f64`. The aliases below name the common concrete
//! types.

// NaN must fail every validity check, hence `!(x > 0.0)` style guards.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod caching;
pub mod cluster;
pub mod config;
pub mod error;
pub mod fedsync;
pub mod forecast;
pub mod metrics;
pub mod network;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod threat;
pub mod traffic;

pub use error::{Error, Result};

pub type ForecastModel = forecast::LinearForecaster<f64>;
pub type ForecastModelF32 = forecast::LinearForecaster<f32>;
pub type ParameterVector = params::ParamVec<f64>;
pub type ParameterVectorF32 = params::ParamVec<f32>;
pub type Scaler = forecast::MinMaxScaler<f64>;
pub type Update = fedsync::ClientUpdate<f64>;
pub type UpdateF32 = fedsync::ClientUpdate<f32>;
