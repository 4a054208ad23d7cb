//! Language-grounded camera trajectory optimization over Gaussian splat
//! scenes.
//!
//! Queried objects are grounded to per-Gaussian binary channels, rendered as
//! soft masks under a camera pose, scored for framing (centering, on-screen
//! ratio, uprightness, proximity prior), and the camera trajectory is
//! optimized by differentiating through the renderer.

pub mod benchmark;
pub mod costs;
pub mod error;
pub mod metrics;
pub mod optimize;
pub mod renderer;
pub mod scene;
pub mod semantics;
pub mod trajectory;

mod io_util;

pub use error::{Error, Result};
pub use io_util::write_atomic;
