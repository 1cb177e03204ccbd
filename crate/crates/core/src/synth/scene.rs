use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use super::SynthError;
use crate::geometry::{CameraIntrinsics, DepthMap, Image, RigidPose};

const MIN_HIT_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test; nearest hit with `t > MIN_HIT_DISTANCE` (the exit point
    /// when the ray starts inside).
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - origin[i]) / dir[i];
            let b = (self.max[i] - origin[i]) / dir[i];
            t_near = t_near.max(a.min(b));
            t_far = t_far.min(a.max(b));
        }
        if t_near > t_far {
            return None;
        }
        if t_near > MIN_HIT_DISTANCE {
            Some(t_near)
        } else if t_far > MIN_HIT_DISTANCE {
            Some(t_far)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Rectangle centered at `origin`, spanning `±half_extent` along `u_axis`
    /// and `normal × u_axis`.
    Plane {
        origin: Vector3<f64>,
        normal: Vector3<f64>,
        u_axis: Vector3<f64>,
        half_extent: [f64; 2],
        #[serde(default)]
        texture: Texture,
    },
    /// Axis-aligned box; seen from inside, its walls enclose the camera.
    Cuboid {
        min: Vector3<f64>,
        max: Vector3<f64>,
        #[serde(default)]
        texture: Texture,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
        #[serde(default)]
        texture: Texture,
    },
}

impl Primitive {
    pub fn texture(&self) -> &Texture {
        match self {
            Primitive::Plane { texture, .. }
            | Primitive::Cuboid { texture, .. }
            | Primitive::Sphere { texture, .. } => texture,
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        match self {
            Primitive::Plane {
                origin,
                normal,
                u_axis,
                half_extent,
                ..
            } => {
                let (u, v) = plane_axes(normal, u_axis);
                let mut min = *origin;
                let mut max = *origin;
                for su in [-1.0, 1.0] {
                    for sv in [-1.0, 1.0] {
                        let c = origin + u * (su * half_extent[0]) + v * (sv * half_extent[1]);
                        min = min.inf(&c);
                        max = max.sup(&c);
                    }
                }
                Aabb::new(min, max)
            }
            Primitive::Cuboid { min, max, .. } => Aabb::new(*min, *max),
            Primitive::Sphere { center, radius, .. } => {
                let r = Vector3::repeat(*radius);
                Aabb::new(center - r, center + r)
            }
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let ok = match self {
            Primitive::Plane {
                normal,
                u_axis,
                half_extent,
                ..
            } => {
                normal.norm() > 1e-12
                    && normal.cross(u_axis).norm() > 1e-12
                    && half_extent.iter().all(|e| *e > 0.0)
            }
            Primitive::Cuboid { min, max, .. } => (0..3).all(|i| max[i] > min[i]),
            Primitive::Sphere { radius, .. } => *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidScene(format!("degenerate primitive {self:?}")))
        }
    }

    /// Ray parameter of the nearest forward hit along `origin + t * dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane {
                origin: p0,
                normal,
                u_axis,
                half_extent,
                ..
            } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(p0 - origin)) / denom;
                if !(t > MIN_HIT_DISTANCE) {
                    return None;
                }
                let q = origin + dir * t - p0;
                let (u, v) = plane_axes(normal, u_axis);
                (q.dot(&u).abs() <= half_extent[0] && q.dot(&v).abs() <= half_extent[1]).then_some(t)
            }
            Primitive::Cuboid { min, max, .. } => Aabb::new(*min, *max).intersect(origin, dir),
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let half_b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // stable pair of roots
                let q = if half_b > 0.0 { -half_b - sq } else { -half_b + sq };
                let (mut t0, mut t1) = (q / a, c / q);
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > MIN_HIT_DISTANCE {
                    Some(t0)
                } else if t1 > MIN_HIT_DISTANCE {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

fn plane_axes(normal: &Vector3<f64>, u_axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let u = (u_axis - n * n.dot(u_axis)).normalize();
    (u, n.cross(&u))
}

/// Where the orbit trajectory places the camera around the bounds center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitSpec {
    pub radius: f64,
    /// Camera offset along world `y` (down) relative to the center.
    pub height: f64,
    /// Angle of the first frame, radians.
    pub start_angle: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            radius: 2.0,
            height: 0.0,
            start_angle: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bounds: Aabb,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub orbit: OrbitSpec,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SynthError> {
        for p in &self.primitives {
            p.validate()?;
            if !p.bounding_box().overlaps(&self.bounds) {
                return Err(SynthError::InvalidScene("primitive lies outside the scene bounds".into()));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.bounds.center()
    }

    /// Textured plane facing the origin at `z = distance`.
    pub fn fronto_plane(distance: f64, texture: Texture) -> Self {
        Self {
            bounds: Aabb::new(
                Vector3::new(-50.0, -50.0, distance - 1.0),
                Vector3::new(50.0, 50.0, distance + 1.0),
            ),
            primitives: vec![Primitive::Plane {
                origin: Vector3::new(0.0, 0.0, distance),
                normal: Vector3::new(0.0, 0.0, -1.0),
                u_axis: Vector3::x(),
                half_extent: [50.0, 50.0],
                texture,
            }],
            orbit: OrbitSpec {
                radius: distance,
                height: 0.0,
                start_angle: 0.0,
            },
        }
    }

    /// A 6 x 3 x 6 m textured room with a few objects near its center.
    pub fn room() -> Self {
        let v = Vector3::new;
        Self {
            bounds: Aabb::new(v(-3.0, -1.5, -3.0), v(3.0, 1.5, 3.0)),
            primitives: vec![
                Primitive::Cuboid {
                    min: v(-3.0, -1.5, -3.0),
                    max: v(3.0, 1.5, 3.0),
                    texture: Texture::Smooth { seed: 1 },
                },
                Primitive::Sphere {
                    center: v(0.3, 0.6, 0.2),
                    radius: 0.45,
                    texture: Texture::Smooth { seed: 2 },
                },
                Primitive::Cuboid {
                    min: v(-0.9, 0.3, -0.6),
                    max: v(-0.3, 1.5, 0.2),
                    texture: Texture::Smooth { seed: 3 },
                },
                Primitive::Cuboid {
                    min: v(0.5, 0.9, -0.9),
                    max: v(0.9, 1.5, -0.5),
                    texture: Texture::Smooth { seed: 4 },
                },
            ],
            orbit: OrbitSpec {
                radius: 1.6,
                height: -0.2,
                start_angle: 0.0,
            },
        }
    }

    /// Nearest hit along `origin + t * dir`: ray parameter and primitive index.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Depth (camera `z`) and hit primitive seen through `pixel`.
    pub fn cast_pixel(
        &self,
        pose: &RigidPose,
        intr: &CameraIntrinsics,
        pixel: &Vector2<f64>,
    ) -> Option<(f64, usize)> {
        let dir = pose.rotation * intr.ray(pixel);
        self.cast(&pose.translation, &dir)
    }
}

/// Exact ray-cast render: intensity from the nearest primitive's texture and
/// its camera-frame depth. Pixels that hit nothing are invalid and black.
pub fn render(scene: &Scene, pose: &RigidPose, intr: &CameraIntrinsics) -> (Image, DepthMap) {
    let (w, h) = (intr.width, intr.height);
    let mut pixels = vec![0.0f32; w * h];
    let mut depth = DepthMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64, y as f64);
            let dir = pose.rotation * intr.ray(&px);
            if let Some((t, i)) = scene.cast(&pose.translation, &dir) {
                // unit-z ray: the ray parameter is the depth
                depth.set(x, y, t);
                let hit = pose.translation + dir * t;
                pixels[y * w + x] = scene.primitives[i].texture().intensity(&hit);
            }
        }
    }
    let image = Image::new(w, h, pixels).expect("textures stay within [0, 1]");
    (image, depth)
}
