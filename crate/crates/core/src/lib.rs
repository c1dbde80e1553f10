//! Per-pair deformable 2D registration: an untrained U-Net optimized on a
//! single image pair, with its own autodiff tape, warp, losses and analysis.

pub mod analyze;
pub mod data;
pub mod engine;
pub mod error;
pub mod real;
pub mod regularize;
pub mod similarity;
pub mod tensor;
pub mod unet;
pub mod warp;

pub use engine::{register, RegistrationConfig, RegistrationResult};
pub use error::{Error, Result};
pub use real::Real;
pub use regularize::RegularizerKind;
pub use similarity::SimilarityKind;
pub use warp::{DisplacementField, Image, LabelMap};
