use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::landmarks::{pixel_cell, SparseDepthMap};
use super::PriorError;
use crate::geometry::{project, unproject, CameraIntrinsics, DepthMap, Image, RigidPose};

/// Depth at which the depth noise reaches its configured sigma.
const DEPTH_NOISE_REFERENCE: f64 = 5.0;
const CORNER_WINDOW_RADIUS: usize = 2;
const CORNER_BORDER: usize = 3;
/// A peak is only suppressed by peaks whose response exceeds its own by this factor.
const ANMS_ROBUSTNESS: f32 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Focal-length noise, pixels.
    pub sigma_f: f64,
    /// Principal-point noise, pixels.
    pub sigma_c: f64,
    /// Rotation noise per axis, degrees.
    pub sigma_r: f64,
    /// Translation noise per axis, meters.
    pub sigma_t: f64,
    /// Depth noise at 5 m, meters. Scales linearly with depth.
    pub sigma_d: f64,
    /// Pixel-coordinate noise, pixels.
    pub sigma_uv: f64,
    pub point_count: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_f: 0.1,
            sigma_c: 0.1,
            sigma_r: 0.01,
            sigma_t: 0.005,
            sigma_d: 0.45,
            sigma_uv: 3.0,
            point_count: 250,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless(point_count: usize) -> Self {
        Self {
            sigma_f: 0.0,
            sigma_c: 0.0,
            sigma_r: 0.0,
            sigma_t: 0.0,
            sigma_d: 0.0,
            sigma_uv: 0.0,
            point_count,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let sigmas = [
            self.sigma_f,
            self.sigma_c,
            self.sigma_r,
            self.sigma_t,
            self.sigma_d,
            self.sigma_uv,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(PriorError::InvalidConfig("noise sigmas must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn has_geometric_noise(&self) -> bool {
        self.sigma_f > 0.0 || self.sigma_c > 0.0 || self.sigma_r > 0.0 || self.sigma_t > 0.0
    }

    /// Draws one point's perturbation. The number of normal draws does not
    /// depend on the sigmas, so zeroing one channel leaves the others unchanged.
    pub fn draw<R: Rng>(&self, rng: &mut R, depth: f64) -> PointPerturbation {
        let mut n = || -> f64 { rng.sample(StandardNormal) };
        let d_fx = self.sigma_f * n();
        let d_fy = self.sigma_f * n();
        let d_cx = self.sigma_c * n();
        let d_cy = self.sigma_c * n();
        let rot_deg = Vector3::new(n(), n(), n()) * self.sigma_r;
        let translation = Vector3::new(n(), n(), n()) * self.sigma_t;
        let depth = self.sigma_d * depth / DEPTH_NOISE_REFERENCE * n();
        let pixel = Vector2::new(n(), n()) * self.sigma_uv;
        PointPerturbation {
            d_fx,
            d_fy,
            d_cx,
            d_cy,
            rotation: rot_deg.map(f64::to_radians),
            translation,
            depth,
            pixel,
        }
    }
}

/// Noise added to one simulated landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPerturbation {
    pub d_fx: f64,
    pub d_fy: f64,
    pub d_cx: f64,
    pub d_cy: f64,
    /// Axis-angle, radians, world frame.
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub depth: f64,
    pub pixel: Vector2<f64>,
}

/// Shi-Tomasi corner response (smaller structure-tensor eigenvalue) per pixel.
pub fn corner_response(image: &Image) -> Vec<f32> {
    let (w, h) = (image.width(), image.height());
    let mut gxx = vec![0.0f32; w * h];
    let mut gyy = vec![0.0f32; w * h];
    let mut gxy = vec![0.0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = 0.5 * (image.get(x + 1, y) - image.get(x - 1, y));
            let gy = 0.5 * (image.get(x, y + 1) - image.get(x, y - 1));
            let i = y * w + x;
            gxx[i] = gx * gx;
            gyy[i] = gy * gy;
            gxy[i] = gx * gy;
        }
    }
    let r = CORNER_WINDOW_RADIUS;
    let mut response = vec![0.0f32; w * h];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    let i = yy * w + xx;
                    a += gxx[i];
                    b += gxy[i];
                    c += gyy[i];
                }
            }
            let half_trace = 0.5 * (a + c);
            let det_term = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            response[y * w + x] = half_trace - det_term;
        }
    }
    response
}

/// Local maxima of the corner response with a valid ground-truth depth,
/// strongest first (ties by raster order).
fn ranked_keypoints(image: &Image, gt: &DepthMap) -> Vec<(usize, usize)> {
    let (w, h) = (image.width(), image.height());
    let response = corner_response(image);
    let mut peaks = Vec::new();
    for y in CORNER_BORDER..h.saturating_sub(CORNER_BORDER) {
        for x in CORNER_BORDER..w.saturating_sub(CORNER_BORDER) {
            let r = response[y * w + x];
            if !(r > 1e-9) || gt.get(x, y).is_none() {
                continue;
            }
            let mut is_max = true;
            'nms: for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    let other = response[yy * w + xx];
                    let earlier = (yy, xx) < (y, x);
                    if other > r || (other == r && earlier) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                peaks.push((r, x, y));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    suppression_order(&peaks)
}

/// Adaptive non-maximal suppression: each peak's radius is its squared
/// distance to the nearest clearly stronger peak, and peaks are ranked by
/// radius so the kept set is both strong and spread out. `peaks` must be
/// sorted strongest first.
fn suppression_order(peaks: &[(f32, usize, usize)]) -> Vec<(usize, usize)> {
    let mut radii: Vec<(u64, usize)> = Vec::with_capacity(peaks.len());
    for (i, &(r, x, y)) in peaks.iter().enumerate() {
        let mut best = u64::MAX;
        for &(other, ox, oy) in &peaks[..i] {
            if r >= ANMS_ROBUSTNESS * other {
                continue;
            }
            let (dx, dy) = (x.abs_diff(ox) as u64, y.abs_diff(oy) as u64);
            best = best.min(dx * dx + dy * dy);
        }
        radii.push((best, i));
    }
    radii.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    radii.into_iter().map(|(_, i)| (peaks[i].1, peaks[i].2)).collect()
}

/// Samples the strongest corners with ground-truth depth and corrupts them the
/// way a visual-inertial tracker's landmarks are corrupted: noisy depth and
/// pixel position, triangulated through perturbed intrinsics and pose, then
/// re-projected with the nominal camera.
pub fn simulate_noisy_sparse(
    gt_depth: &DepthMap,
    image: &Image,
    cfg: &NoiseConfig,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
) -> Result<SparseDepthMap, PriorError> {
    cfg.validate()?;
    gt_depth.check_dims(image.width(), image.height())?;
    let keypoints = ranked_keypoints(image, gt_depth);
    if keypoints.is_empty() {
        return Err(PriorError::NoValidKeypoints);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (image.width(), image.height());
    let mut sparse = SparseDepthMap::new(w, h);
    let cam_from_world = pose.inverse();
    for &(x, y) in keypoints.iter().take(cfg.point_count) {
        let gt = gt_depth.get(x, y).expect("keypoints carry valid depth");
        let noise = cfg.draw(&mut rng, gt);
        let depth = gt + noise.depth;
        let pixel = Vector2::new(x as f64, y as f64) + noise.pixel;
        if !(depth > 0.0) {
            continue;
        }
        let (pixel, depth) = if cfg.has_geometric_noise() {
            let noisy_intr = CameraIntrinsics {
                fx: intr.fx + noise.d_fx,
                fy: intr.fy + noise.d_fy,
                cx: intr.cx + noise.d_cx,
                cy: intr.cy + noise.d_cy,
                ..*intr
            };
            let noisy_pose = RigidPose {
                rotation: Rotation3::new(noise.rotation).matrix() * pose.rotation,
                translation: pose.translation + noise.translation,
            };
            let Ok(point) = unproject(&pixel, depth, &noisy_intr) else {
                continue;
            };
            let world = noisy_pose.transform_point(&point);
            match project(&cam_from_world.transform_point(&world), intr) {
                Ok(p) => p,
                Err(_) => continue,
            }
        } else {
            (pixel, depth)
        };
        if let Some((px, py)) = pixel_cell(&pixel, w, h) {
            sparse.insert_nearest(px, py, depth);
        }
    }
    Ok(sparse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker_image(w: usize, h: usize, cell: usize) -> Image {
        let px = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if ((x / cell) + (y / cell)) % 2 == 0 {
                    0.2
                } else {
                    0.8
                }
            })
            .collect();
        Image::new(w, h, px).unwrap()
    }

    fn intr(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::centered(200.0, w, h)
    }

    #[test]
    fn zero_noise_reproduces_ground_truth() {
        let (w, h) = (120, 90);
        let gt = DepthMap::from_vec(w, h, (0..w * h).map(|i| 1.0 + (i % w) as f64 * 0.01).collect()).unwrap();
        let sparse = simulate_noisy_sparse(
            &gt,
            &checker_image(w, h, 6),
            &NoiseConfig::noiseless(40),
            &intr(w, h),
            &RigidPose::identity(),
        )
        .unwrap();
        assert_eq!(sparse.valid_count(), 40);
        for (x, y, d) in sparse.depth_map().iter_valid() {
            assert_eq!(d.to_bits(), gt.get(x, y).unwrap().to_bits());
        }
    }

    #[test]
    fn default_config_yields_requested_count() {
        let (w, h) = (320, 240);
        let gt = DepthMap::constant(w, h, 2.0);
        let sparse = simulate_noisy_sparse(
            &gt,
            &checker_image(w, h, 8),
            &NoiseConfig::default(),
            &intr(w, h),
            &RigidPose::identity(),
        )
        .unwrap();
        // corners are 8 px apart, so 3 px pixel noise rarely collides
        assert!(sparse.valid_count() >= 240 && sparse.valid_count() <= 250);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (w, h) = (100, 80);
        let gt = DepthMap::constant(w, h, 3.0);
        let img = checker_image(w, h, 5);
        let run = || {
            simulate_noisy_sparse(&gt, &img, &NoiseConfig::default(), &intr(w, h), &RigidPose::identity())
                .unwrap()
        };
        let a = run();
        let b = run();
        let bits = |m: &SparseDepthMap| m.depth_map().as_slice().iter().map(|d| d.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn no_keypoints_without_depth() {
        let (w, h) = (50, 40);
        let err = simulate_noisy_sparse(
            &DepthMap::invalid(w, h),
            &checker_image(w, h, 5),
            &NoiseConfig::default(),
            &intr(w, h),
            &RigidPose::identity(),
        )
        .unwrap_err();
        assert_eq!(err, PriorError::NoValidKeypoints);
    }

    #[test]
    fn flat_image_has_no_corners() {
        let img = Image::constant(30, 30, 0.5);
        assert!(corner_response(&img).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn pixel_noise_std_matches_sigma() {
        let cfg = NoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let du = cfg.draw(&mut rng, 1.0).pixel.x;
            s += du;
            s2 += du * du;
        }
        let mean = s / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!((std - cfg.sigma_uv).abs() < 0.05 * cfg.sigma_uv);
    }
}
