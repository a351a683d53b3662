//! Forecasting of multiple short time series with block Hankel tensors.
//!
//! The pipeline embeds the series along time with a delay embedding, compresses
//! each embedded slice into a small core tensor with jointly learned Tucker
//! factors, and trains a tensor ARIMA model directly on the core sequence.
//! Forecasts are mapped back through the factors, the differencing and the
//! inverse embedding.
//!
//! ```no_run
//! use bht_arima::{eval, model::{self, ModelConfig}};
//!
//! let x = eval::synth_dataset(eval::SynthKind::SinusoidMixture, 20, 40, 0.05, 7).unwrap();
//! let fitted = model::fit(&x, &ModelConfig::default()).unwrap();
//! let result = model::forecast(&fitted, 3).unwrap();
//! assert_eq!(result.forecasts.len(), 3);
//! ```

pub mod cli;
pub mod coeffs;
pub mod diff;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mdt;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{FittedModel, ForecastResult, ModelConfig, OrthoMode};
pub use tensor::DenseTensor;
