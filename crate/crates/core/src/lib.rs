//! Jointly trained part-based car detector.
//!
//! The pipeline takes a grayscale window, builds a three-channel normalized
//! input, runs a 9×9 convolution with boxcar pooling, convolves the pooled
//! features with eight part filters, scores each part through a deformation
//! layer (quadratic displacement cost + global max pooling) and feeds the part
//! scores to a visibility-reasoning network that outputs the car probability.
//!
//! All layers are trained with plain SGD + momentum in stages and every
//! analytic gradient can be checked against central finite differences.

pub mod config;
pub mod dataset;
pub mod deformation;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod network;
pub mod nn;
pub mod real;
pub mod trainer;
pub mod visibility;

pub use error::{Error, Result};
pub use real::Real;
