//! Textual inversion for diffusion models at desk scale.
//!
//! Learn a multi-vector concept embedding against a frozen denoiser, then use
//! it for guided sampling, weighted concept composition, interpolation,
//! inpainting, FID evaluation and classifier augmentation studies.

pub mod classifier;
pub mod composition;
pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod tensor;
pub mod textual_inversion;
pub mod toy;

pub use error::{Error, FormatError, Result};
pub use tensor::{LatentTensor, Shape};
