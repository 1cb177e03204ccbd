//! Pinhole cameras, rigid transforms and the raster types shared by every stage.
//!
//! Conventions used throughout the crate:
//! - pixel `(u, v)` addresses the center of column `u`, row `v`;
//! - depth is the camera-frame `z` coordinate, not the ray length;
//! - poses are world-from-camera (`p_world = R * p_cam + t`).

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer than this to the camera plane do not project.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("rotation block is not a proper orthonormal matrix")]
    InvalidRotation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("raster size mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx = {} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy = {} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics for a `width` x `height` image with the principal point at the center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    /// Whether `pixel` can be bilinearly sampled.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }

    /// Camera-frame direction with unit `z` through `pixel`.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from a (not necessarily normalized) `x y z w` quaternion.
    pub fn from_quaternion(
        qx: f64,
        qy: f64,
        qz: f64,
        qw: f64,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let q = Quaternion::new(qw, qx, qy, qz);
        if !q.coords.iter().all(|c| c.is_finite()) || q.norm() < 1e-12 {
            return Err(GeometryError::InvalidRotation);
        }
        let unit = UnitQuaternion::from_quaternion(q);
        Self::new(unit.to_rotation_matrix().into_inner(), translation)
    }

    /// Returns the rotation as an `x y z w` unit quaternion.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        [q.i, q.j, q.k, q.w]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = &self.rotation;
        if !r.iter().all(|v| v.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation);
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        if ortho > ROTATION_TOLERANCE || (r.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.translation
    }
}

/// Projects a camera-frame point; returns the pixel and its depth.
pub fn project(
    point_cam: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let z = point_cam.z;
    if !(z > MIN_PROJECTION_DEPTH) {
        return Err(GeometryError::BehindCamera(z));
    }
    let pixel = Vector2::new(
        intr.fx * point_cam.x / z + intr.cx,
        intr.fy * point_cam.y / z + intr.cy,
    );
    Ok((pixel, z))
}

pub fn unproject(
    pixel: &Vector2<f64>,
    depth: f64,
    intr: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(intr.ray(pixel) * depth)
}

/// Transform taking points in the `reference` camera frame to the `source` camera frame.
pub fn relative_pose(reference: &RigidPose, source: &RigidPose) -> Result<RigidPose, GeometryError> {
    reference.validate()?;
    source.validate()?;
    Ok(source.inverse().compose(reference))
}

/// Plane-sweep correspondence: where `pixel`, seen at `depth` in the reference
/// view, lands in the source view. `None` when it leaves the source image or
/// falls behind the source camera.
pub fn warp_pixel(
    pixel: &Vector2<f64>,
    depth: f64,
    intr: &CameraIntrinsics,
    rel: &RigidPose,
) -> Option<Vector2<f64>> {
    let point = unproject(pixel, depth, intr).ok()?;
    let (warped, _) = project(&rel.transform_point(&point), intr).ok()?;
    intr.contains(&warped).then_some(warped)
}

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, GeometryError> {
        if pixels.len() != width * height {
            return Err(GeometryError::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(GeometryError::InvalidImage(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Collapses interleaved RGB to luma (Rec. 601 weights).
    pub fn from_rgb(width: usize, height: usize, rgb: &[f32]) -> Result<Self, GeometryError> {
        if rgb.len() != 3 * width * height {
            return Err(GeometryError::InvalidImage("RGB buffer size mismatch".into()));
        }
        let gray = rgb
            .chunks_exact(3)
            .map(|c| (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).clamp(0.0, 1.0))
            .collect();
        Self::new(width, height, gray)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        Some(bilinear(&self.pixels, self.width, self.height, x as f32, y as f32))
    }
}

/// Bilinear interpolation for coordinates already known to be in range.
#[inline]
pub(crate) fn bilinear(data: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = x - x0 as f32;
    let ay = y - y0 as f32;
    let top = data[y0 * width + x0] * (1.0 - ax) + data[y0 * width + x1] * ax;
    let bottom = data[y1 * width + x0] * (1.0 - ax) + data[y1 * width + x1] * ax;
    top * (1.0 - ay) + bottom * ay
}

/// Per-pixel depth in meters. Invalid pixels hold `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depths: Vec<f64>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depths: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        let mut map = Self::invalid(width, height);
        map.depths.iter_mut().for_each(|d| *d = sanitize(depth));
        map
    }

    /// Non-finite and non-positive entries become invalid.
    pub fn from_vec(width: usize, height: usize, mut depths: Vec<f64>) -> Result<Self, GeometryError> {
        if depths.len() != width * height {
            return Err(GeometryError::DimensionMismatch {
                expected: (width, height),
                actual: (depths.len(), 1),
            });
        }
        depths.iter_mut().for_each(|d| *d = sanitize(*d));
        Ok(Self {
            width,
            height,
            depths,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Raw values, `0.0` where invalid.
    pub fn as_slice(&self) -> &[f64] {
        &self.depths
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.depths[y * self.width + x];
        (d > 0.0).then_some(d)
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> Option<f64> {
        let d = self.depths[idx];
        (d > 0.0).then_some(d)
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        self.depths[y * self.width + x] = sanitize(depth);
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.depths[y * self.width + x] = 0.0;
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| **d > 0.0).count()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width;
        self.depths
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0.0)
            .map(move |(i, d)| (i % w, i / w, *d))
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<(), GeometryError> {
        if (self.width, self.height) != (width, height) {
            return Err(GeometryError::DimensionMismatch {
                expected: (width, height),
                actual: (self.width, self.height),
            });
        }
        Ok(())
    }
}

#[inline]
fn sanitize(d: f64) -> f64 {
    if d.is_finite() && d > 0.0 {
        d
    } else {
        0.0
    }
}
