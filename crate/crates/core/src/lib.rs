//! Depth reconstruction for single-photon LiDAR.
//!
//! The crate covers the whole chain from a ground-truth scene to a depth map:
//!
//! - [`scene`]: acquisition parameters, the Poisson rate model and procedural scenes
//! - [`simulator`]: reproducible per-pixel timestamp generation
//! - [`rom`], [`mode`], [`consensus`]: signal-extraction filters
//! - [`pml`]: constrained and TV-penalised maximum-likelihood depth
//! - [`theory`]: the predictor that separates success from failure of the
//!   rank-ordered mean filter, and the matching error law
//! - [`evaluation`]: RMSE and SBR / photon-count sweeps
//! - [`io`]: timestamp containers, scene ingestion and image export

pub mod consensus;
pub mod cube;
mod error;
pub mod evaluation;
pub mod io;
pub mod mode;
pub mod pml;
pub mod rom;
pub mod scene;
pub mod simulator;
pub mod theory;

pub use cube::{CensoredCube, TimestampCube};
pub use error::{Error, Result};
pub use evaluation::{FilterKind, FilterOptions};
pub use pml::{DepthImage, PmlConfig};
pub use scene::{AcquisitionParams, Sbr, Scene};
pub use simulator::RngSeed;
