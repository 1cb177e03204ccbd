use super::PriorError;
use crate::geometry::{DepthMap, Image};

/// Mean absolute depth error over pixels valid in both maps.
pub fn reconstruction_loss(pred: &DepthMap, gt: &DepthMap) -> Result<f64, PriorError> {
    pred.check_dims(gt.width(), gt.height())?;
    let (sum, count) = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .filter(|(p, g)| **p > 0.0 && **g > 0.0)
        .fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g).abs(), n + 1));
    if count == 0 {
        return Err(PriorError::NoOverlap);
    }
    Ok(sum / count as f64)
}

/// Edge-aware L1 penalty on forward depth differences, weighted by
/// `exp(-|dI|)` along the same axis.
///
/// Averaged over pixels whose right and lower neighbors exist and carry valid
/// depth; zero when there are none.
pub fn smoothness_loss(pred: &DepthMap, image: &Image) -> Result<f64, PriorError> {
    let (w, h) = pred.dims();
    pred.check_dims(image.width(), image.height())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let (Some(d), Some(du), Some(dv)) = (pred.get(x, y), pred.get(x + 1, y), pred.get(x, y + 1)) else {
                continue;
            };
            let i = image.get(x, y) as f64;
            let weight_u = (-(image.get(x + 1, y) as f64 - i).abs()).exp();
            let weight_v = (-(image.get(x, y + 1) as f64 - i).abs()).exp();
            sum += weight_u * (du - d).abs() + weight_v * (dv - d).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub fn combined_loss(
    pred: &DepthMap,
    gt: &DepthMap,
    image: &Image,
    w_rec: f64,
    w_sm: f64,
) -> Result<f64, PriorError> {
    Ok(w_rec * reconstruction_loss(pred, gt)? + w_sm * smoothness_loss(pred, image)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize, slope: f64) -> DepthMap {
        DepthMap::from_vec(w, h, (0..w * h).map(|i| 1.0 + slope * (i % w) as f64).collect()).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let gt = ramp(10, 8, 0.05);
        assert_eq!(reconstruction_loss(&gt, &gt).unwrap(), 0.0);
        let shifted = DepthMap::from_vec(10, 8, gt.as_slice().iter().map(|d| d + 0.1).collect()).unwrap();
        assert!((reconstruction_loss(&shifted, &gt).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(
            reconstruction_loss(&gt, &DepthMap::invalid(10, 8)).unwrap_err(),
            PriorError::NoOverlap
        );
    }

    #[test]
    fn smoothness_examples() {
        let flat = Image::constant(12, 9, 0.4);
        assert_eq!(smoothness_loss(&DepthMap::constant(12, 9, 2.0), &flat).unwrap(), 0.0);
        assert!((smoothness_loss(&ramp(12, 9, 0.01), &flat).unwrap() - 0.01).abs() < 1e-12);
        let stripes = Image::new(12, 9, (0..108).map(|i| (i % 12 % 2) as f32).collect()).unwrap();
        let expected = 0.01 * (-1.0f64).exp();
        assert!((smoothness_loss(&ramp(12, 9, 0.01), &stripes).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn combined_examples() {
        let img = Image::constant(12, 9, 0.4);
        let gt = DepthMap::constant(12, 9, 2.0);
        assert_eq!(combined_loss(&gt, &gt, &img, 1.0, 1.0).unwrap(), 0.0);
        let pred = DepthMap::from_vec(12, 9, ramp(12, 9, 0.01).as_slice().iter().map(|d| d + 1.0).collect()).unwrap();
        let gt = DepthMap::from_vec(12, 9, pred.as_slice().iter().map(|d| d - 0.1).collect()).unwrap();
        assert!((combined_loss(&pred, &gt, &img, 1.0, 1.0).unwrap() - 0.11).abs() < 1e-12);
        assert_eq!(
            combined_loss(&pred, &gt, &img, 0.0, 1.0).unwrap(),
            smoothness_loss(&pred, &img).unwrap()
        );
    }

    proptest! {
        #[test]
        fn reconstruction_is_symmetric(a in prop::collection::vec(0.0..5.0f64, 24), b in prop::collection::vec(0.0..5.0f64, 24)) {
            let a = DepthMap::from_vec(6, 4, a).unwrap();
            let b = DepthMap::from_vec(6, 4, b).unwrap();
            match (reconstruction_loss(&a, &b), reconstruction_loss(&b, &a)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
