//! Differentiable splat renderer: projection, compositing of color, feature
//! and mask channels, and exact pose gradients of mask functionals.

mod camera;
mod image;
mod project;
mod raster;

pub use camera::{rotvec_jacobians, rotvec_to_matrix, wrap_rotvec, CameraPose, ViewDistribution};
pub use image::{Channel, RenderedImage};
pub use project::{project_gaussian, Projected2D, COV2D_DILATION, FRUSTUM_GUARD, NEAR_PLANE};
pub use raster::{
    render_channel, render_channel_with, render_mask_with_pose_gradient,
    render_mask_with_pose_gradient_with, MaskFunctional, MaskGradient, RenderSettings,
};
