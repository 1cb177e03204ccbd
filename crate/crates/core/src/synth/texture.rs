use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Procedural solid textures, evaluated at world-space surface points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// Band-limited multi-octave value noise.
    Smooth { seed: u32 },
    /// Independent value per 1 cm cell; aliases under plane sweep.
    Noise { seed: u32 },
    /// Constant intensity; degenerate for matching.
    Uniform { value: f32 },
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Smooth { seed: 0 }
    }
}

/// (cell size in meters, amplitude)
const OCTAVES: [(f64, f64); 4] = [(0.20, 0.20), (0.10, 0.25), (0.05, 0.30), (0.025, 0.25)];
const NOISE_CELL: f64 = 0.01;

fn hash(x: i64, y: i64, z: i64, seed: u32) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
        ^ (seed as u64).wrapping_mul(0x27D4_EB2F_1656_67C5);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Trilinear value noise in `[0, 1]` with quintic fade.
fn value_noise(p: Vector3<f64>, seed: u32) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let corner = |dx: i64, dy: i64, dz: i64| hash(ix + dx, iy + dy, iz + dz, seed);
    let x00 = lerp(corner(0, 0, 0), corner(1, 0, 0), tx);
    let x10 = lerp(corner(0, 1, 0), corner(1, 1, 0), tx);
    let x01 = lerp(corner(0, 0, 1), corner(1, 0, 1), tx);
    let x11 = lerp(corner(0, 1, 1), corner(1, 1, 1), tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

impl Texture {
    /// Intensity in `[0, 1]` at a world point.
    pub fn intensity(&self, p: &Vector3<f64>) -> f32 {
        match *self {
            Texture::Smooth { seed } => {
                let mut v = 0.0;
                for (i, (cell, amp)) in OCTAVES.iter().enumerate() {
                    v += amp * value_noise(p / *cell, seed.wrapping_add(i as u32 * 7919));
                }
                (0.1 + 0.8 * v) as f32
            }
            Texture::Noise { seed } => {
                let c = (p / NOISE_CELL).map(f64::floor);
                (0.1 + 0.8 * hash(c.x as i64, c.y as i64, c.z as i64, seed)) as f32
            }
            Texture::Uniform { value } => value.clamp(0.0, 1.0),
        }
    }
}
