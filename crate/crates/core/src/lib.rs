//! Palette-guided video colorization with a small diffusion denoiser.
//!
//! The pipeline reads gray frame sequences, obtains a five-color palette
//! (K-means of a reference image, a Gaussian mixture over training pixels, or a
//! language model), and samples color frames window by window. Numeric code is
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the common
//! choices.

pub mod diffusion;
pub mod error;
pub mod gmm;
pub mod llm;
pub mod metrics;
pub mod palette;
pub mod sampler;
mod scalar;
pub mod vidio;

pub use diffusion::{Checkpoint, LatentWindow, NetworkConfig, NoiseSchedule, Params, TrainOptions};
pub use error::{Error, Result};
pub use gmm::GmmModel;
pub use palette::Palette;
pub use sampler::{plan_windows, progressive_colorize, sample_window, WindowPlan};
pub use scalar::Scalar;
pub use vidio::{Frame, Video};

pub type Frame32 = Frame<f32>;
pub type Frame64 = Frame<f64>;
pub type Video32 = Video<f32>;
pub type Video64 = Video<f64>;
pub type LatentWindow32 = LatentWindow<f32>;
pub type LatentWindow64 = LatentWindow<f64>;
pub type Params32 = Params<f32>;
pub type Params64 = Params<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
