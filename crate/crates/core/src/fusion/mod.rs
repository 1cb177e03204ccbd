//! Voxel-hashed TSDF fusion, marching-cubes extraction and ray-cast depth.
//!
//! Voxels sit on the grid points `index * voxel_size`; a block owns
//! `block_size³` consecutive voxels and is addressed by its integer block
//! coordinate. Stored sdf values are normalized by the truncation distance.

mod marching;
mod mesh;
mod raycast;

pub use marching::{case_triangles, extract_mesh};
pub use mesh::{read_ply, write_ply, PlyError, TriangleMesh};
pub use raycast::render_depth;

use nalgebra::Vector3;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthMap, GeometryError, RigidPose, MIN_PROJECTION_DEPTH};
use crate::mvs::ConfidenceMap;

/// Bits per axis in a packed block key.
pub const KEY_BITS: u32 = 21;
const KEY_OFFSET: i64 = 1 << (KEY_BITS - 1);
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

pub type BlockCoord = [i32; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_weight: f32,
    pub block_size: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            truncation: 0.08,
            max_weight: 100.0,
            block_size: 8,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(FusionError::InvalidConfig("voxel_size must be positive".into()));
        }
        if !(self.truncation >= 2.0 * self.voxel_size) || !self.truncation.is_finite() {
            return Err(FusionError::InvalidConfig(
                "truncation must be at least twice the voxel size".into(),
            ));
        }
        if !(self.max_weight > 0.0) {
            return Err(FusionError::InvalidConfig("max_weight must be positive".into()));
        }
        if !(2..=64).contains(&self.block_size) {
            return Err(FusionError::InvalidConfig("block_size must be in 2..=64".into()));
        }
        Ok(())
    }
}

/// Packs a block coordinate into 63 bits; `None` outside the addressable range.
pub fn pack_block_key(coord: BlockCoord) -> Option<u64> {
    let mut key = 0u64;
    for c in coord {
        let shifted = c as i64 + KEY_OFFSET;
        if !(0..(1 << KEY_BITS)).contains(&shifted) {
            return None;
        }
        key = (key << KEY_BITS) | shifted as u64;
    }
    Some(key)
}

pub fn unpack_block_key(key: u64) -> BlockCoord {
    let axis = |shift: u32| (((key >> shift) & KEY_MASK) as i64 - KEY_OFFSET) as i32;
    [axis(2 * KEY_BITS), axis(KEY_BITS), axis(0)]
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    sdf: Vec<f32>,
    weight: Vec<f32>,
}

impl Block {
    fn new(voxels: usize) -> Self {
        Self {
            sdf: vec![1.0; voxels],
            weight: vec![0.0; voxels],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsdfVolume {
    cfg: FusionConfig,
    blocks: FxHashMap<u64, Block>,
}

impl TsdfVolume {
    pub fn new(cfg: FusionConfig) -> Result<Self, FusionError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            blocks: FxHashMap::default(),
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Allocated block coordinates in ascending order.
    pub fn block_coords(&self) -> Vec<BlockCoord> {
        let mut keys: Vec<u64> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter().map(unpack_block_key).collect()
    }

    pub fn contains_block(&self, coord: BlockCoord) -> bool {
        pack_block_key(coord).is_some_and(|k| self.blocks.contains_key(&k))
    }

    fn block_len(&self) -> usize {
        self.cfg.block_size.pow(3)
    }

    fn local_index(&self, local: [usize; 3]) -> usize {
        let b = self.cfg.block_size;
        (local[2] * b + local[1]) * b + local[0]
    }

    fn split(&self, voxel: [i64; 3]) -> (BlockCoord, [usize; 3]) {
        let b = self.cfg.block_size as i64;
        let block = voxel.map(|v| v.div_euclid(b) as i32);
        let local = voxel.map(|v| v.rem_euclid(b) as usize);
        (block, local)
    }

    /// Normalized sdf and weight of a grid voxel; `None` when its block is unallocated.
    pub fn voxel(&self, voxel: [i64; 3]) -> Option<(f32, f32)> {
        let (block, local) = self.split(voxel);
        let data = self.blocks.get(&pack_block_key(block)?)?;
        let i = self.local_index(local);
        Some((data.sdf[i], data.weight[i]))
    }

    pub fn voxel_position(&self, voxel: [i64; 3]) -> Vector3<f64> {
        Vector3::new(voxel[0] as f64, voxel[1] as f64, voxel[2] as f64) * self.cfg.voxel_size
    }

    pub fn block_of_point(&self, p: &Vector3<f64>) -> BlockCoord {
        let extent = self.cfg.voxel_size * self.cfg.block_size as f64;
        [p.x, p.y, p.z].map(|v| (v / extent).floor() as i32)
    }

    /// World-space corners spanned by a block's voxels, `[min, min + extent]`.
    pub fn block_bounds(&self, coord: BlockCoord) -> (Vector3<f64>, Vector3<f64>) {
        let extent = self.cfg.voxel_size * self.cfg.block_size as f64;
        let min = Vector3::new(coord[0] as f64, coord[1] as f64, coord[2] as f64) * extent;
        (min, min + Vector3::repeat(extent))
    }

    /// Trilinear normalized sdf at `p`; `None` unless all eight neighbors are observed.
    pub fn sample(&self, p: &Vector3<f64>) -> Option<f64> {
        let g = p / self.cfg.voxel_size;
        let base = [g.x.floor(), g.y.floor(), g.z.floor()];
        let f = [g.x - base[0], g.y - base[1], g.z - base[2]];
        let base = base.map(|v| v as i64);
        let b = self.cfg.block_size;
        let (block, local) = self.split(base);
        let same_block = local.iter().all(|l| l + 1 < b);
        let home = if same_block {
            Some(self.blocks.get(&pack_block_key(block)?)?)
        } else {
            None
        };
        let mut acc = 0.0;
        for corner in 0..8usize {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let (s, w) = match home {
                Some(data) => {
                    let i = self.local_index([local[0] + d[0], local[1] + d[1], local[2] + d[2]]);
                    (data.sdf[i], data.weight[i])
                }
                None => self.voxel([base[0] + d[0] as i64, base[1] + d[1] as i64, base[2] + d[2] as i64])?,
            };
            if w <= 0.0 {
                return None;
            }
            let mut t = 1.0;
            for axis in 0..3 {
                t *= if d[axis] == 1 { f[axis] } else { 1.0 - f[axis] };
            }
            acc += t * s as f64;
        }
        Some(acc)
    }

    /// Fuses one depth map. Blocks holding a voxel inside the truncation band
    /// of a valid pixel are allocated and updated; returns them in ascending order.
    pub fn integrate(
        &mut self,
        depth: &DepthMap,
        confidence: Option<&ConfidenceMap>,
        pose: &RigidPose,
        intr: &CameraIntrinsics,
    ) -> Result<Vec<BlockCoord>, FusionError> {
        pose.validate()?;
        depth.check_dims(intr.width, intr.height)?;
        if let Some(c) = confidence {
            if (c.width(), c.height()) != (intr.width, intr.height) {
                return Err(GeometryError::DimensionMismatch {
                    expected: (intr.width, intr.height),
                    actual: (c.width(), c.height()),
                }
                .into());
            }
        }
        let candidates = self.candidate_blocks(depth, pose, intr);
        let cam_from_world = pose.inverse();
        let tau = self.cfg.truncation;
        let b = self.cfg.block_size;
        let mut updates: Vec<(usize, f32, f32)> = Vec::with_capacity(self.block_len());
        let mut touched = Vec::new();
        for coord in candidates {
            let Some(key) = pack_block_key(coord) else { continue };
            let origin = coord.map(|c| c as i64 * b as i64);
            updates.clear();
            let mut in_band = false;
            for z in 0..b {
                for y in 0..b {
                    for x in 0..b {
                        let g = [origin[0] + x as i64, origin[1] + y as i64, origin[2] + z as i64];
                        let c = cam_from_world.transform_point(&self.voxel_position(g));
                        if !(c.z > MIN_PROJECTION_DEPTH) {
                            continue;
                        }
                        let u = (intr.fx * c.x / c.z + intr.cx).round();
                        let v = (intr.fy * c.y / c.z + intr.cy).round();
                        if !(u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64) {
                            continue;
                        }
                        let (u, v) = (u as usize, v as usize);
                        let Some(d) = depth.get(u, v) else { continue };
                        let sdf = d - c.z;
                        if sdf <= -tau {
                            continue;
                        }
                        let w = confidence.map_or(1.0, |conf| conf.get(u, v));
                        if !(w > 0.0) {
                            continue;
                        }
                        in_band |= sdf <= tau;
                        updates.push(((z * b + y) * b + x, (sdf / tau).clamp(-1.0, 1.0) as f32, w));
                    }
                }
            }
            if !in_band {
                continue;
            }
            let len = self.block_len();
            let max_weight = self.cfg.max_weight;
            let block = self.blocks.entry(key).or_insert_with(|| Block::new(len));
            for &(i, tsdf, w) in &updates {
                let old = block.weight[i];
                let total = old + w;
                block.sdf[i] = ((block.sdf[i] * old + tsdf * w) / total).clamp(-1.0, 1.0);
                block.weight[i] = total.min(max_weight);
            }
            touched.push(coord);
        }
        Ok(touched)
    }

    /// Blocks that can hold a voxel projecting onto a valid pixel within its
    /// truncation band: the block range spanned by the pixel's band segment,
    /// padded by the half-pixel footprint at each end.
    fn candidate_blocks(&self, depth: &DepthMap, pose: &RigidPose, intr: &CameraIntrinsics) -> Vec<BlockCoord> {
        let tau = self.cfg.truncation;
        let inv_f = 1.0 / intr.fx.min(intr.fy);
        let mut out: FxHashSet<BlockCoord> = FxHashSet::default();
        let mut last = None;
        for (u, v, d) in depth.iter_valid() {
            let ray = pose.rotation * intr.ray(&nalgebra::Vector2::new(u as f64, v as f64));
            let len = ray.norm();
            let (z0, z1) = ((d - tau).max(MIN_PROJECTION_DEPTH), d + tau);
            let (p0, p1) = (pose.translation + ray * z0, pose.translation + ray * z1);
            let pad = Vector3::repeat(0.75 * z1 * inv_f * len);
            let lo = self.block_of_point(&(p0.inf(&p1) - pad));
            let hi = self.block_of_point(&(p0.sup(&p1) + pad));
            if last == Some((lo, hi)) {
                continue;
            }
            last = Some((lo, hi));
            for bz in lo[2]..=hi[2] {
                for by in lo[1]..=hi[1] {
                    for bx in lo[0]..=hi[0] {
                        out.insert([bx, by, bz]);
                    }
                }
            }
        }
        let mut out: Vec<BlockCoord> = out.into_iter().collect();
        out.sort_unstable();
        out
    }

    /// Allocates every block overlapping `[min, max]` and sets each of its
    /// voxels from a signed distance function, with weight 1.
    pub fn fill_analytic(&mut self, min: &Vector3<f64>, max: &Vector3<f64>, sdf: impl Fn(&Vector3<f64>) -> f64) {
        let lo = self.block_of_point(min);
        let hi = self.block_of_point(max);
        let b = self.cfg.block_size as i64;
        let len = self.block_len();
        let tau = self.cfg.truncation;
        for bz in lo[2]..=hi[2] {
            for by in lo[1]..=hi[1] {
                for bx in lo[0]..=hi[0] {
                    let Some(key) = pack_block_key([bx, by, bz]) else { continue };
                    let mut block = Block::new(len);
                    for i in 0..len {
                        let local = [i as i64 % b, (i as i64 / b) % b, i as i64 / (b * b)];
                        let g = [bx as i64 * b + local[0], by as i64 * b + local[1], bz as i64 * b + local[2]];
                        let d = sdf(&self.voxel_position(g));
                        block.sdf[i] = (d / tau).clamp(-1.0, 1.0) as f32;
                        block.weight[i] = 1.0;
                    }
                    self.blocks.insert(key, block);
                }
            }
        }
    }

    /// World-space box enclosing every allocated block.
    pub fn allocated_bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut bounds: Option<(Vector3<f64>, Vector3<f64>)> = None;
        for key in self.blocks.keys() {
            let (lo, hi) = self.block_bounds(unpack_block_key(*key));
            bounds = Some(match bounds {
                None => (lo, hi),
                Some((a, b)) => (a.inf(&lo), b.sup(&hi)),
            });
        }
        bounds
    }
}
