//! Cameras, rays, the patching operator and differentiable volume rendering.

pub mod camera;
pub mod neural;
pub mod patch;
pub mod volume;

pub use camera::{generate_rays, sample_camera, CameraConfig, CameraPose, Ray};
pub use neural::{render_rays, render_rays_backward, RenderTape};
pub use patch::{extract_patch, sample_patch_spec, Image, Patch, PatchConfig, PatchSpec};
pub use volume::{
    composite, composite_backward, midpoint_samples, render_patch, render_ray, stratified_samples,
    AlphaMode, RaySampleBatch, RenderConfig,
};
