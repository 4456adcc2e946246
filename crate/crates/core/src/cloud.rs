use nalgebra::Point3;
use rand::seq::index;
use rand::Rng;

use crate::geom::FrameId;

/// Points in a named frame, meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub frame: Option<FrameId>,
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(frame: FrameId, points: Vec<Point3<f64>>) -> Self {
        Self {
            frame: Some(frame),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Random subset of `round(proportion · n)` points (at least one when the
/// input is non-empty), in original order.
pub fn downsample<R: Rng + ?Sized>(points: &[Point3<f64>], proportion: f64, rng: &mut R) -> Vec<Point3<f64>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let k = ((proportion.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n);
    if k == n {
        return points.to_vec();
    }
    let mut idx = index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn downsample_sizes() {
        let pts: Vec<Point3<f64>> = (0..200).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(downsample(&pts, 1.0, &mut rng), pts);
        let half = downsample(&pts, 0.5, &mut rng);
        assert_eq!(half.len(), 100);
        assert!(half.windows(2).all(|w| w[0].x < w[1].x));
        assert_eq!(downsample(&pts, 0.0001, &mut rng).len(), 1);
        assert!(downsample(&[], 0.5, &mut rng).is_empty());
    }
}
