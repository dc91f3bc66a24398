//! Gaussian-splatting scene stylization: differentiable rasterizer, view
//! grouping, a toy multi-view denoiser, style losses, finetuning, metrics
//! and file formats.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod fixture;
pub mod grouping;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod scene;

pub use error::{Error, Result};
pub use scene::{Camera, Gaussian3D, GaussianScene, ImageRGB};
