//! Analytic ray-caster for solid primitives with Lambert shading.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rendering::{CameraPose, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectFamily {
    Sphere,
    Ellipsoid,
    Box,
    /// Uniform over sphere, ellipsoid and box.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Semi-axes in the local frame; `rotation` maps local to world.
    Ellipsoid { axes: Vector3<f64>, rotation: Matrix3<f64> },
    Box { half: Vector3<f64>, rotation: Matrix3<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyObject {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let tilt = (rng.random::<f64>() - 0.5) * 0.6;
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
    let roll = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0)), tilt);
    (yaw * roll).into_inner()
}

impl ToyObject {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, family: ObjectFamily, palette: &[[f64; 3]]) -> Self {
        let family = match family {
            ObjectFamily::Mixed => {
                [ObjectFamily::Sphere, ObjectFamily::Ellipsoid, ObjectFamily::Box][rng.random_range(0..3)]
            }
            f => f,
        };
        let shape = match family {
            ObjectFamily::Sphere | ObjectFamily::Mixed => Shape::Sphere {
                radius: rng.random_range(0.35..0.55),
            },
            ObjectFamily::Ellipsoid => Shape::Ellipsoid {
                axes: Vector3::from_fn(|_, _| rng.random_range(0.3..0.6)),
                rotation: random_rotation(rng),
            },
            ObjectFamily::Box => Shape::Box {
                half: Vector3::from_fn(|_, _| rng.random_range(0.2..0.4)),
                rotation: random_rotation(rng),
            },
        };
        let albedo = palette[rng.random_range(0..palette.len())];
        Self { shape, albedo }
    }

    /// Nearest hit distance and outward unit normal.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match &self.shape {
            Shape::Sphere { radius } => {
                let t = unit_sphere_hit(&(o / *radius), &(d / *radius))?;
                Some((t, (o + t * d).normalize()))
            }
            Shape::Ellipsoid { axes, rotation } => {
                let ol = rotation.transpose() * o;
                let dl = rotation.transpose() * d;
                let t = unit_sphere_hit(&ol.component_div(axes), &dl.component_div(axes))?;
                let x = ol + t * dl;
                let n = x.component_div(&axes.component_mul(axes));
                Some((t, (rotation * n).normalize()))
            }
            Shape::Box { half, rotation } => {
                let ol = rotation.transpose() * o;
                let dl = rotation.transpose() * d;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for k in 0..3 {
                    if dl[k].abs() < 1e-15 {
                        if ol[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[k] - ol[k]) / dl[k];
                    let b = (half[k] - ol[k]) / dl[k];
                    let (lo, hi) = (a.min(b), a.max(b));
                    if lo > t0 {
                        t0 = lo;
                        axis = k;
                    }
                    t1 = t1.min(hi);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = -dl[axis].signum();
                Some((t0, rotation * n))
            }
        }
    }

    /// Whether `x` is inside the solid.
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match &self.shape {
            Shape::Sphere { radius } => x.norm() < *radius,
            Shape::Ellipsoid { axes, rotation } => {
                (rotation.transpose() * x).component_div(axes).norm() < 1.0
            }
            Shape::Box { half, rotation } => {
                let l = rotation.transpose() * x;
                (0..3).all(|k| l[k].abs() < half[k])
            }
        }
    }
}

/// Entry distance of the ray into the unit sphere, in the ray's own
/// parameterization.
fn unit_sphere_hit(o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t > 0.0).then_some(t)
}

/// Shading constants.
pub const AMBIENT: f64 = 0.3;

pub fn light_direction() -> Vector3<f64> {
    Vector3::new(0.4, 0.3, 1.0).normalize()
}

/// Anti-aliased render with `supersample²` jittered-grid rays per pixel
/// (regular sub-pixel grid), white background.
pub fn render_object(object: &ToyObject, pose: &CameraPose, supersample: usize) -> Image {
    let s = supersample.max(1);
    let light = light_direction();
    let (w, h) = (pose.width, pose.height);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for sy in 0..s {
                for sx in 0..s {
                    let px = [
                        x as f64 + (sx as f64 + 0.5) / s as f64,
                        y as f64 + (sy as f64 + 0.5) / s as f64,
                    ];
                    let d = pose.direction(px);
                    let c = match object.intersect(&pose.position, &d) {
                        Some((_, n)) => {
                            let shade = AMBIENT + (1.0 - AMBIENT) * n.dot(&light).max(0.0);
                            object.albedo.map(|a| a * shade)
                        }
                        None => [1.0; 3],
                    };
                    for j in 0..3 {
                        acc[j] += c[j];
                    }
                }
            }
            let n = (s * s) as f64;
            data.extend(acc.map(|v| (v / n) as f32));
        }
    }
    Image {
        width: w,
        height: h,
        data,
    }
}

/// Foreground mask from a single center ray per pixel.
pub fn silhouette(object: &ToyObject, pose: &CameraPose) -> Vec<bool> {
    let mut out = Vec::with_capacity(pose.width * pose.height);
    for y in 0..pose.height {
        for x in 0..pose.width {
            let d = pose.direction([x as f64 + 0.5, y as f64 + 0.5]);
            out.push(object.intersect(&pose.position, &d).is_some());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::rendering::CameraConfig;

    #[test]
    fn sphere_disc_radius() {
        let cam = CameraConfig::default();
        let pose = CameraPose::orbit(&cam, 0.0, 0.0).unwrap();
        let r = 0.5;
        let obj = ToyObject {
            shape: Shape::Sphere { radius: r },
            albedo: [0.5; 3],
        };
        let mask = silhouette(&obj, &pose);
        let expect = cam.focal() * r / cam.radius;
        let c = 0.5 * cam.image_size as f64;
        for y in 0..cam.image_size {
            for x in 0..cam.image_size {
                let dist = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
                let inside = mask[y * cam.image_size + x];
                if dist < expect - 1.0 {
                    assert!(inside, "({x}, {y})");
                }
                if dist > expect + 1.0 {
                    assert!(!inside, "({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn intersections_are_on_the_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pal = [[0.8, 0.2, 0.2]];
        for fam in [ObjectFamily::Sphere, ObjectFamily::Ellipsoid, ObjectFamily::Box] {
            let obj = ToyObject::sample(&mut rng, fam, &pal);
            let o = Vector3::new(-2.0, 0.05, 0.02);
            let d = Vector3::new(1.0, 0.0, 0.0);
            let (t, n) = obj.intersect(&o, &d).expect("central ray hits");
            let x = o + t * d;
            assert!(obj.contains(&(x - 1e-6 * n)), "{fam:?} inside behind the hit");
            assert!(!obj.contains(&(x + 1e-6 * n)), "{fam:?} outside in front");
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_are_white_and_render_is_deterministic() {
        let cam = CameraConfig::default();
        let pose = CameraPose::orbit(&cam, 33.0, 20.0).unwrap();
        let obj = ToyObject::sample(&mut ChaCha8Rng::seed_from_u64(1), ObjectFamily::Box, &[[0.1, 0.6, 0.3]]);
        let a = render_object(&obj, &pose, 3);
        let b = render_object(&obj, &pose, 3);
        assert_eq!(a, b);
        let n = cam.image_size - 1;
        for (x, y) in [(0, 0), (n, 0), (0, n), (n, n)] {
            assert_eq!(a.pixel(x, y), [1.0; 3]);
        }
    }
}
