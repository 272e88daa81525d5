//! Range- and height-aware Gaussian jitter.
//!
//! Every displacement component is clamped to `±clamp`. Draws are made for
//! all three axes of every point even when an axis is masked, so masking one
//! axis never shifts the noise seen by another point.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Parameters of the distance-aware jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceJitter {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub epsilon: f64,
    pub clamp: f64,
}

impl DistanceJitter {
    /// `σ_min + (σ_max − σ_min)·sqrt(d̃)·ξ`.
    pub fn sigma(&self, d_norm: f64, xi: f64) -> f64 {
        self.sigma_min + (self.sigma_max - self.sigma_min) * d_norm.sqrt() * xi
    }
}

/// Parameters of the height-aware jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightJitter {
    pub sigma: f64,
    pub h_low: f64,
    pub h_high: f64,
    pub epsilon: f64,
    pub clamp: f64,
}

impl HeightJitter {
    /// Axis weights `(wx, wy, wz)`: x/y jitter strictly below `h_high`, z
    /// strictly above `h_low`.
    pub fn weights(&self, z_norm: f64) -> [bool; 3] {
        let xy = z_norm < self.h_high;
        [xy, xy, z_norm > self.h_low]
    }
}

fn check_len(cloud: &PointCloud, values: &[f64]) -> Result<()> {
    if values.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: values.len(),
        });
    }
    Ok(())
}

fn check_unit(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("{what} must lie in [0, 1]")));
    }
    Ok(())
}

/// Adds isotropic noise whose std grows with the square root of normalised
/// range; ξ is drawn per point.
pub fn distance_aware_jitter(
    cloud: &PointCloud,
    d_norm: &[f64],
    params: &DistanceJitter,
    rng: &mut RandomStream,
) -> Result<PointCloud> {
    check_len(cloud, d_norm)?;
    check_unit(d_norm, "normalised distance")?;
    let mut out = cloud.clone();
    for (p, &d) in out.positions_mut().iter_mut().zip(d_norm) {
        let xi = rng.uniform(1.0 - params.epsilon, 1.0 + params.epsilon);
        let sigma = params.sigma(d, xi);
        for c in p.iter_mut() {
            *c += (sigma * rng.normal()).clamp(-params.clamp, params.clamp);
        }
    }
    Ok(out)
}

/// Adds axis-masked noise `N(0, (σ·w·ξ)²)`; masked axes are left bit-identical.
pub fn height_aware_jitter(
    cloud: &PointCloud,
    z_norm: &[f64],
    params: &HeightJitter,
    rng: &mut RandomStream,
) -> Result<PointCloud> {
    check_len(cloud, z_norm)?;
    check_unit(z_norm, "normalised height")?;
    let mut out = cloud.clone();
    for (p, &z) in out.positions_mut().iter_mut().zip(z_norm) {
        let xi = rng.uniform(1.0 - params.epsilon, 1.0 + params.epsilon);
        let w = params.weights(z);
        for (c, &on) in p.iter_mut().zip(&w) {
            let n = rng.normal();
            if on {
                *c += (params.sigma * xi * n).clamp(-params.clamp, params.clamp);
            }
        }
    }
    Ok(out)
}

/// Constant-σ isotropic jitter.
pub fn uniform_jitter(
    cloud: &PointCloud,
    sigma: f64,
    clamp: f64,
    rng: &mut RandomStream,
) -> PointCloud {
    let mut out = cloud.clone();
    for p in out.positions_mut() {
        for c in p.iter_mut() {
            *c += (sigma * rng.normal()).clamp(-clamp, clamp);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stage;

    fn daj() -> DistanceJitter {
        DistanceJitter {
            sigma_min: 0.005,
            sigma_max: 0.05,
            epsilon: 0.1,
            clamp: 0.1,
        }
    }

    fn haj() -> HeightJitter {
        HeightJitter {
            sigma: 0.002,
            h_low: 0.2,
            h_high: 0.8,
            epsilon: 0.1,
            clamp: 0.1,
        }
    }

    #[test]
    fn sigma_endpoints() {
        assert_eq!(daj().sigma(0.0, 1.0), 0.005);
        assert!((daj().sigma(1.0, 1.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sigma_nondecreasing_in_distance() {
        let p = daj();
        let mut prev = 0.0;
        for i in 0..=1000 {
            let s = p.sigma(i as f64 / 1000.0, 0.9);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn height_weights() {
        assert_eq!(haj().weights(0.1), [true, true, false]);
        assert_eq!(haj().weights(0.9), [false, false, true]);
        assert_eq!(haj().weights(0.5), [true, true, true]);
        // strict inequalities at the edges
        assert_eq!(haj().weights(0.2), [true, true, false]);
        assert_eq!(haj().weights(0.8), [false, false, true]);
    }

    #[test]
    fn haj_masks_axes_exactly() {
        let cloud = PointCloud::from_positions(vec![[1.0, 2.0, -1.5], [3.0, -4.0, 4.0], [5.0, 5.0, 1.0]])
            .unwrap();
        let z = [0.1, 0.9, 0.5];
        let mut rng = RandomStream::for_stage(1, Stage::Haj, 0);
        let out = height_aware_jitter(&cloud, &z, &haj(), &mut rng).unwrap();
        let (a, b) = (cloud.positions(), out.positions());
        assert_eq!(a[0][2].to_bits(), b[0][2].to_bits());
        assert_ne!(a[0][0], b[0][0]);
        assert_eq!(a[1][0].to_bits(), b[1][0].to_bits());
        assert_eq!(a[1][1].to_bits(), b[1][1].to_bits());
        assert_ne!(a[1][2], b[1][2]);
        assert!((0..3).all(|k| a[2][k] != b[2][k]));
    }

    #[test]
    fn displacements_clamped() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3]; 2000]).unwrap();
        let mut rng = RandomStream::for_stage(1, Stage::Daj, 0);
        let big = DistanceJitter {
            sigma_min: 1.0,
            sigma_max: 2.0,
            ..daj()
        };
        let out = distance_aware_jitter(&cloud, &[1.0; 2000], &big, &mut rng).unwrap();
        assert!(out.positions().iter().flatten().all(|c| c.abs() <= 0.1));
        let out = uniform_jitter(&cloud, 5.0, 0.1, &mut rng);
        assert!(out.positions().iter().flatten().all(|c| c.abs() <= 0.1));
    }

    #[test]
    fn input_validation() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3]]).unwrap();
        let mut rng = RandomStream::for_stage(1, Stage::Daj, 0);
        assert!(distance_aware_jitter(&cloud, &[], &daj(), &mut rng).is_err());
        assert!(distance_aware_jitter(&cloud, &[1.5], &daj(), &mut rng).is_err());
        assert!(height_aware_jitter(&cloud, &[-0.1], &haj(), &mut rng).is_err());
    }
}
