use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::landmarks::SparseDepthMap;
use super::PriorError;
use crate::geometry::{DepthMap, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Copy the closest filled pixel (4-connected distance).
    #[default]
    NearestValid,
    /// Median of the sparse input.
    GlobalMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifierConfig {
    /// Pooling window sizes, applied in order.
    pub kernels: Vec<usize>,
    pub smoothing_passes: usize,
    pub fallback: Fallback,
}

impl Default for DensifierConfig {
    fn default() -> Self {
        Self {
            kernels: vec![3, 5, 9, 17],
            smoothing_passes: 200,
            fallback: Fallback::NearestValid,
        }
    }
}

impl DensifierConfig {
    pub fn validate(&self) -> Result<(), PriorError> {
        if let Some(k) = self.kernels.iter().find(|k| **k < 3 || **k % 2 == 0) {
            return Err(PriorError::InvalidConfig(format!(
                "pooling kernel {k} must be odd and >= 3"
            )));
        }
        Ok(())
    }
}

/// Fills empty pixels with the midpoint of the min- and max-pooled valid
/// depths inside a `kernel` x `kernel` window.
fn pool_fill(depths: &[f64], w: usize, h: usize, kernel: usize) -> Vec<f64> {
    let r = kernel / 2;
    // horizontal extrema of valid depths, then vertical over those
    let mut row_lo = vec![f64::INFINITY; w * h];
    let mut row_hi = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &depths[y * w..(y + 1) * w];
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            for &d in &row[x0..=x1] {
                if d > 0.0 {
                    row_lo[y * w + x] = row_lo[y * w + x].min(d);
                    row_hi[y * w + x] = row_hi[y * w + x].max(d);
                }
            }
        }
    }
    let mut out = depths.to_vec();
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            if depths[y * w + x] > 0.0 {
                continue;
            }
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for yy in y0..=y1 {
                lo = lo.min(row_lo[yy * w + x]);
                hi = hi.max(row_hi[yy * w + x]);
            }
            if hi > 0.0 {
                out[y * w + x] = 0.5 * (lo + hi);
            }
        }
    }
    out
}

fn fill_nearest(depths: &mut [f64], w: usize, h: usize) {
    let mut queue: VecDeque<usize> = (0..w * h).filter(|i| depths[*i] > 0.0).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let d = depths[i];
        let mut visit = |j: usize| {
            if depths[j] <= 0.0 {
                depths[j] = d;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Intensity-weighted averaging over the 4-neighborhood, each neighbor
/// weighted by `exp(-|dI|)` across the edge joining it to the center.
fn smooth(depths: Vec<f64>, image: &Image, w: usize, h: usize, passes: usize) -> Vec<f64> {
    if passes == 0 {
        return depths;
    }
    let n = w * h;
    let px = image.pixels();
    let edge = |a: usize, b: usize| (-(px[a] - px[b]).abs() as f64).exp();
    // buffers padded by w + 1 on both sides; zero weights stand in for borders
    let o = w + 1;
    let mut right = vec![0.0; n + 2 * o];
    let mut down = vec![0.0; n + 2 * o];
    for i in 0..n {
        if i % w + 1 < w {
            right[o + i] = edge(i, i + 1);
        }
        if i + w < n {
            down[o + i] = edge(i, i + w);
        }
    }
    let mut cur = vec![0.0; n + 2 * o];
    cur[o..o + n].copy_from_slice(&depths);
    let mut next = cur.clone();
    for _ in 0..passes {
        for j in o..o + n {
            let (l, r, u, d) = (right[j - 1], right[j], down[j - w], down[j]);
            let acc = cur[j] + l * cur[j - 1] + r * cur[j + 1] + u * cur[j - w] + d * cur[j + w];
            next[j] = acc / (1.0 + l + r + u + d);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur[o..o + n].to_vec()
}

/// Classical sparse-to-dense completion: a min/max pooling ladder, a fallback
/// fill for what the ladder cannot reach, then edge-aware smoothing.
pub fn densify(
    sparse: &SparseDepthMap,
    image: &Image,
    cfg: &DensifierConfig,
) -> Result<DepthMap, PriorError> {
    cfg.validate()?;
    let map = sparse.depth_map();
    let (w, h) = map.dims();
    map.check_dims(image.width(), image.height())?;
    if map.valid_count() == 0 {
        return Err(PriorError::EmptyPrior);
    }
    let mut depths = map.as_slice().to_vec();
    for &k in &cfg.kernels {
        if depths.iter().all(|d| *d > 0.0) {
            break;
        }
        depths = pool_fill(&depths, w, h, k);
    }
    match cfg.fallback {
        Fallback::NearestValid => fill_nearest(&mut depths, w, h),
        Fallback::GlobalMedian => {
            let mut values: Vec<f64> = map.iter_valid().map(|(_, _, d)| d).collect();
            let m = median(&mut values);
            depths.iter_mut().filter(|d| **d <= 0.0).for_each(|d| *d = m);
        }
    }
    Ok(DepthMap::from_vec(w, h, smooth(depths, image, w, h, cfg.smoothing_passes))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Image {
        Image::new(
            w,
            h,
            (0..w * h).map(|i| ((i * 37) % 101) as f32 / 100.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_point_fills_constant() {
        let mut sparse = SparseDepthMap::new(40, 30);
        sparse.insert_nearest(3, 25, 1.7);
        let dense = densify(&sparse, &textured(40, 30), &DensifierConfig::default()).unwrap();
        assert!(dense.as_slice().iter().all(|d| (*d - 1.7).abs() < 1e-12));
    }

    #[test]
    fn plane_points_stay_on_plane() {
        let (w, h) = (160, 120);
        let mut sparse = SparseDepthMap::new(w, h);
        for i in 0..250usize {
            sparse.insert_nearest((i * 61) % w, (i * 17) % h, 2.0);
        }
        let dense = densify(&sparse, &textured(w, h), &DensifierConfig::default()).unwrap();
        assert_eq!(dense.valid_count(), w * h);
        assert!(dense.as_slice().iter().all(|d| (*d - 2.0).abs() < 1e-6));
    }

    #[test]
    fn empty_sparse_is_an_error() {
        let err = densify(&SparseDepthMap::new(4, 4), &textured(4, 4), &DensifierConfig::default());
        assert_eq!(err.unwrap_err(), PriorError::EmptyPrior);
    }

    #[test]
    fn dense_constant_is_fixed_point() {
        let dense = SparseDepthMap::from_depth_map(DepthMap::constant(30, 20, 3.25));
        let out = densify(&dense, &textured(30, 20), &DensifierConfig::default()).unwrap();
        assert!(out.as_slice().iter().all(|d| (*d - 3.25).abs() < 1e-9));
    }

    #[test]
    fn median_fallback_without_ladder() {
        let mut sparse = SparseDepthMap::new(50, 50);
        sparse.insert_nearest(0, 0, 1.0);
        sparse.insert_nearest(49, 49, 3.0);
        sparse.insert_nearest(25, 0, 2.0);
        let cfg = DensifierConfig {
            kernels: vec![],
            smoothing_passes: 0,
            fallback: Fallback::GlobalMedian,
        };
        let out = densify(&sparse, &textured(50, 50), &cfg).unwrap();
        assert_eq!(out.get(10, 30), Some(2.0));
        assert_eq!(out.get(0, 0), Some(1.0));
    }

    #[test]
    fn rejects_even_kernels() {
        let cfg = DensifierConfig {
            kernels: vec![3, 4],
            ..Default::default()
        };
        let mut sparse = SparseDepthMap::new(4, 4);
        sparse.insert_nearest(0, 0, 1.0);
        assert!(matches!(
            densify(&sparse, &textured(4, 4), &cfg),
            Err(PriorError::InvalidConfig(_))
        ));
    }

    #[test]
    fn smoothing_stays_within_neighbor_range() {
        let (w, h) = (60, 40);
        let mut sparse = SparseDepthMap::new(w, h);
        for i in 0..80usize {
            sparse.insert_nearest((i * 13) % w, (i * 7) % h, 1.0 + (i % 5) as f64 * 0.3);
        }
        let out = densify(&sparse, &textured(w, h), &DensifierConfig::default()).unwrap();
        assert!(out.as_slice().iter().all(|d| *d >= 1.0 - 1e-12 && *d <= 2.2 + 1e-12));
    }
}
