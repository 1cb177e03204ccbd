use super::sweep::CostVolume;
use crate::geometry::DepthMap;

/// Profiles whose cost range is below this are treated as flat.
const FLAT_PROFILE: f32 = 1e-7;

/// Per-pixel confidence in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![1.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Result of the winner-take-all search at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEstimate {
    pub depth: f64,
    pub confidence: f32,
    pub best_index: usize,
}

/// Three-point parabola vertex offset in `[-0.5, 0.5]` plane units.
fn parabola_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Winner-take-all over valid cells with sub-plane parabolic refinement.
///
/// Confidence is the gap between the best cost and the best cost outside
/// the winning basin (the run of cells rising monotonically away from the
/// minimum), normalized by the profile's cost range. A unimodal profile
/// therefore scores 1 and a flat one is rejected.
pub fn estimate_pixel(vol: &CostVolume, pixel: usize, costs: &mut Vec<Option<f32>>) -> Option<PixelEstimate> {
    let count = vol.count();
    costs.clear();
    costs.extend((0..count).map(|k| vol.cost(k, pixel)));
    let mut best = None::<(usize, f32)>;
    let mut worst = f32::NEG_INFINITY;
    for (k, c) in costs.iter().enumerate() {
        let Some(c) = *c else { continue };
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((k, c));
        }
        worst = worst.max(c);
    }
    let (k, best_cost) = best?;
    if worst - best_cost <= FLAT_PROFILE {
        return None;
    }
    // A winner bordering an unobserved cell may be the edge of a truncated
    // profile rather than a true minimum.
    let truncated = |i: Option<usize>| i.is_some_and(|i| i < count && costs[i].is_none());
    if truncated(k.checked_sub(1)) || truncated(Some(k + 1)) {
        return None;
    }

    let mut lo = k;
    while lo > 0 {
        match (costs[lo - 1], costs[lo]) {
            (Some(a), Some(b)) if a >= b => lo -= 1,
            _ => break,
        }
    }
    let mut hi = k;
    while hi + 1 < count {
        match (costs[hi + 1], costs[hi]) {
            (Some(a), Some(b)) if a >= b => hi += 1,
            _ => break,
        }
    }
    let second = costs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < lo || *i > hi)
        .filter_map(|(_, c)| *c)
        .fold(worst, f32::min);
    let confidence = ((second - best_cost) / (worst - best_cost)).clamp(0.0, 1.0);

    let hyp = vol.hypotheses();
    let center = hyp.depth(k, pixel);
    let mut depth = center;
    if k > 0 && k + 1 < count {
        if let (Some(l), Some(r)) = (costs[k - 1], costs[k + 1]) {
            let offset = parabola_offset(l as f64, best_cost as f64, r as f64);
            depth = if offset >= 0.0 {
                center + offset * (hyp.depth(k + 1, pixel) - center)
            } else {
                center + offset * (center - hyp.depth(k - 1, pixel))
            };
        }
    }
    Some(PixelEstimate {
        depth,
        confidence,
        best_index: k,
    })
}

pub fn extract_depth(vol: &CostVolume) -> (DepthMap, ConfidenceMap) {
    let (w, h) = (vol.width(), vol.height());
    let mut depth = DepthMap::invalid(w, h);
    let mut conf = vec![0.0f32; w * h];
    let mut scratch = Vec::with_capacity(vol.count());
    for pixel in 0..w * h {
        if let Some(est) = estimate_pixel(vol, pixel, &mut scratch) {
            depth.set(pixel % w, pixel / w, est.depth);
            conf[pixel] = est.confidence;
        }
    }
    (depth, ConfidenceMap::new(w, h, conf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvs::hypotheses::Hypotheses;

    fn volume(depths: Vec<f64>, costs: Vec<f32>) -> CostVolume {
        let n = depths.len();
        let valid = vec![1u8; n];
        CostVolume::from_parts(
            Hypotheses::Planes {
                width: 1,
                height: 1,
                depths,
            },
            costs,
            valid,
            1,
        )
        .unwrap()
    }

    fn planes(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|k| 1.0 + k as f64 * step).collect()
    }

    #[test]
    fn flat_profile_is_invalid() {
        let (d, c) = extract_depth(&volume(planes(8, 0.1), vec![0.4; 8]));
        assert_eq!(d.get(0, 0), None);
        assert_eq!(c.get(0, 0), 0.0);
    }

    #[test]
    fn quadratic_dip_between_planes() {
        let step = 0.04;
        let depths = planes(16, step);
        let truth = depths[6] + 0.5 * step;
        let costs = depths.iter().map(|d| ((d - truth) * (d - truth)) as f32).collect();
        let (d, c) = extract_depth(&volume(depths, costs));
        assert!((d.get(0, 0).unwrap() - truth).abs() < 1e-6 * step);
        assert_eq!(c.get(0, 0), 1.0);
    }

    #[test]
    fn boundary_minimum_is_not_refined() {
        let depths = planes(6, 0.1);
        let (d, _) = extract_depth(&volume(depths.clone(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        assert_eq!(d.get(0, 0), Some(depths[0]));
        let (d, _) = extract_depth(&volume(depths.clone(), vec![0.6, 0.5, 0.4, 0.3, 0.2, 0.1]));
        assert_eq!(d.get(0, 0), Some(depths[5]));
    }

    #[test]
    fn competing_basin_lowers_confidence() {
        let (_, c) = extract_depth(&volume(planes(7, 0.1), vec![0.9, 0.2, 0.9, 0.9, 0.25, 0.9, 0.9]));
        let conf = c.get(0, 0);
        assert!((conf - 0.05 / 0.7).abs() < 1e-6, "{conf}");
    }

    #[test]
    fn winner_next_to_invalid_cell_is_rejected() {
        let vol = CostVolume::from_parts(
            Hypotheses::Planes {
                width: 1,
                height: 1,
                depths: planes(5, 0.1),
            },
            vec![0.9, 0.5, 0.1, 0.6, 0.8],
            vec![1, 1, 1, 0, 1],
            1,
        )
        .unwrap();
        assert_eq!(extract_depth(&vol).0.get(0, 0), None);
    }

    #[test]
    fn no_valid_cells_is_invalid() {
        let vol = CostVolume::from_parts(
            Hypotheses::Planes {
                width: 1,
                height: 1,
                depths: planes(3, 0.1),
            },
            vec![0.1, 0.2, 0.3],
            vec![0, 0, 0],
            1,
        )
        .unwrap();
        assert_eq!(extract_depth(&vol).0.get(0, 0), None);
    }

    #[test]
    fn refinement_stays_within_hypothesis_span() {
        let depths = planes(5, 0.1);
        for costs in [
            vec![0.5, 0.1, 0.1, 0.5, 0.9],
            vec![0.9, 0.3, 0.0, 0.29, 0.8],
            vec![0.2, 0.15, 0.9, 0.1, 0.11],
        ] {
            let (d, _) = extract_depth(&volume(depths.clone(), costs));
            let v = d.get(0, 0).unwrap();
            assert!(v >= depths[0] && v <= depths[4]);
        }
    }
}
