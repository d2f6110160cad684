//! Barlow Twins pre-training of U-Net encoders and supervised fine-tuning for
//! binary segmentation, on a small reverse-mode autodiff over NHWC tensors.

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod selfsup;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor, Tensor4D};
