use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Camera distribution: on a sphere of `radius` around the origin, looking at
/// the origin with world-z up. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub radius: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    /// Horizontal field of view.
    pub fov: f64,
    pub image_size: usize,
    /// Radius of the bounding sphere that rays are clipped to.
    pub scene_radius: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            radius: 2.5,
            elevation_min: 0.0,
            elevation_max: 45.0,
            fov: 40.0,
            image_size: 64,
            scene_radius: 1.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(
            self.elevation_min <= self.elevation_max,
            "empty elevation range [{}, {}]",
            self.elevation_min,
            self.elevation_max
        );
        contract!(
            self.elevation_min >= -90.0 && self.elevation_max <= 90.0,
            "elevation must lie in [-90, 90] degrees"
        );
        contract!(
            self.fov > 0.0 && self.fov < 180.0,
            "field of view must be in (0, 180) degrees"
        );
        contract!(self.image_size >= 1, "image size must be positive");
        contract!(
            self.scene_radius > 0.0 && self.radius > self.scene_radius,
            "camera radius {} must exceed scene radius {}",
            self.radius,
            self.scene_radius
        );
        Ok(())
    }

    /// Focal length in pixels for the configured field of view.
    pub fn focal(&self) -> f64 {
        0.5 * self.image_size as f64 / (0.5 * self.fov.to_radians()).tan()
    }
}

/// Pinhole camera. `orientation` maps camera coordinates (x right, y down,
/// z forward) to world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    /// Camera at `position` looking at the origin with world-z up.
    pub fn look_at_origin(position: Vector3<f64>, focal: f64, width: usize, height: usize) -> Result<Self> {
        let dist = position.norm();
        contract!(dist > 0.0, "camera cannot sit at the origin");
        let forward = -position / dist;
        let up = Vector3::z();
        let right = forward.cross(&up);
        contract!(
            right.norm() > 1e-9,
            "camera looks straight along the up axis"
        );
        let right = right.normalize();
        let down = forward.cross(&right);
        Ok(Self {
            position,
            orientation: Matrix3::from_columns(&[right, down, forward]),
            focal,
            principal: [0.5 * width as f64, 0.5 * height as f64],
            width,
            height,
        })
    }

    /// Pose at the given spherical angles (degrees).
    pub fn orbit(config: &CameraConfig, azimuth: f64, elevation: f64) -> Result<Self> {
        let (az, el) = (azimuth.to_radians(), elevation.to_radians());
        let position = config.radius * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        Self::look_at_origin(position, config.focal(), config.image_size, config.image_size)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.orientation.column(2).into()
    }

    /// Unit world-space direction through a continuous pixel coordinate.
    pub fn direction(&self, pixel: [f64; 2]) -> Vector3<f64> {
        let c = Vector3::new(
            (pixel[0] - self.principal[0]) / self.focal,
            (pixel[1] - self.principal[1]) / self.focal,
            1.0,
        );
        (self.orientation * c).normalize()
    }
}

/// Draws a pose: azimuth uniform on `[0, 360)`, elevation uniform on the
/// configured range.
pub fn sample_camera<R: Rng + ?Sized>(rng: &mut R, config: &CameraConfig) -> Result<CameraPose> {
    config.validate()?;
    let azimuth = rng.random::<f64>() * TAU;
    let elevation = if config.elevation_min == config.elevation_max {
        config.elevation_min
    } else {
        rng.random_range(config.elevation_min..config.elevation_max)
    };
    CameraPose::orbit(config, azimuth.to_degrees(), elevation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: [f64; 3], direction: [f64; 3], t_near: f64, t_far: f64) -> Result<Self> {
        let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        contract!((n - 1.0).abs() <= 1e-6, "ray direction has norm {n}");
        contract!(
            0.0 <= t_near && t_near < t_far,
            "invalid ray bounds [{t_near}, {t_far}]"
        );
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|j| self.origin[j] + t * self.direction[j])
    }
}

/// One ray per pixel coordinate, bounded to `[‖o‖ − R, ‖o‖ + R]` so that the
/// whole scene sphere of radius `R` lies inside every ray's range.
pub fn generate_rays(pose: &CameraPose, pixels: &[[f64; 2]], scene_radius: f64) -> Result<Vec<Ray>> {
    let dist = pose.position.norm();
    let t_near = (dist - scene_radius).max(0.0);
    let t_far = dist + scene_radius;
    let origin = [pose.position.x, pose.position.y, pose.position.z];
    pixels
        .iter()
        .map(|&px| {
            let d = pose.direction(px);
            Ray::new(origin, [d.x, d.y, d.z], t_near, t_far)
        })
        .collect()
}
