//! Reconstruction of Cartesian images from irregularly sampled fiber-bundle
//! signals: synthetic data simulation, classical baselines, a trainable
//! Nadaraya-Watson layer inside small super-resolution networks, training
//! with population based search, and PSNR/SSIM evaluation.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod imaging;
pub mod io;
pub mod iqa;
pub mod network;
pub mod nw;
pub mod pipeline;
pub mod simulate;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use imaging::{CartesianImage, FiberLayout, Mask, NormStats, SparseImage};
