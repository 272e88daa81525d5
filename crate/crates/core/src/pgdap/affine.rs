//! Local (per-region) and global affine transforms.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Rotation about the vertical axis through a region's centroid followed by
/// uniform scaling about the same centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTransform {
    pub yaw: f64,
    pub scale: f64,
}

impl LocalTransform {
    pub const IDENTITY: Self = Self { yaw: 0.0, scale: 1.0 };

    pub fn draw(max_yaw: f64, scale: (f64, f64), rng: &mut RandomStream) -> Self {
        Self {
            yaw: rng.uniform(-max_yaw, max_yaw),
            scale: rng.uniform(scale.0, scale.1),
        }
    }
}

/// Rotation about x, then y, then z; per-axis scaling; translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalTransform {
    pub rotation: [f64; 3],
    pub scale: [f64; 3],
    pub translation: [f64; 3],
}

impl GlobalTransform {
    pub const IDENTITY: Self = Self {
        rotation: [0.0; 3],
        scale: [1.0; 3],
        translation: [0.0; 3],
    };

    pub fn draw(
        max_rotation: [f64; 3],
        scale: (f64, f64),
        max_translation: [f64; 3],
        rng: &mut RandomStream,
    ) -> Self {
        let rotation = max_rotation.map(|m| rng.uniform(-m, m));
        let scale = [(); 3].map(|_| rng.uniform(scale.0, scale.1));
        let translation = max_translation.map(|m| rng.uniform(-m, m));
        Self {
            rotation,
            scale,
            translation,
        }
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        let r = matmul(&rz, &matmul(&ry, &rx));
        let mut m = r;
        for row in m.iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= self.scale[k];
            }
        }
        m
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Applies one [`LocalTransform`] per region. `regions[j]` indexes
/// `transforms`. The identity transform leaves points bit-identical.
pub fn apply_local(
    cloud: &PointCloud,
    regions: &[usize],
    transforms: &[LocalTransform],
) -> Result<PointCloud> {
    if regions.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: regions.len(),
        });
    }
    if let Some(&r) = regions.iter().find(|&&r| r >= transforms.len()) {
        return Err(Error::invalid(format!("region {r} has no transform")));
    }
    let mut sums = vec![[0.0f64; 3]; transforms.len()];
    let mut counts = vec![0usize; transforms.len()];
    for (p, &r) in cloud.positions().iter().zip(regions) {
        for k in 0..3 {
            sums[r][k] += p[k];
        }
        counts[r] += 1;
    }
    let centroids: Vec<[f64; 3]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.map(|v| v / n.max(1) as f64))
        .collect();
    let mut out = cloud.clone();
    for (p, &r) in out.positions_mut().iter_mut().zip(regions) {
        let t = transforms[r];
        if t == LocalTransform::IDENTITY {
            continue;
        }
        let c = centroids[r];
        let (s, co) = t.yaw.sin_cos();
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        let dz = p[2] - c[2];
        p[0] = c[0] + t.scale * (co * dx - s * dy);
        p[1] = c[1] + t.scale * (s * dx + co * dy);
        p[2] = c[2] + t.scale * dz;
    }
    Ok(out)
}

/// Draws and applies one transform per region.
pub fn local_affine(
    cloud: &PointCloud,
    regions: &[usize],
    region_count: usize,
    max_yaw: f64,
    scale: (f64, f64),
    rng: &mut RandomStream,
) -> Result<PointCloud> {
    let transforms: Vec<LocalTransform> = (0..region_count)
        .map(|_| LocalTransform::draw(max_yaw, scale, rng))
        .collect();
    apply_local(cloud, regions, &transforms)
}

pub fn apply_global(cloud: &PointCloud, t: &GlobalTransform) -> PointCloud {
    let mut out = cloud.clone();
    if *t == GlobalTransform::IDENTITY {
        return out;
    }
    let m = t.matrix();
    for p in out.positions_mut() {
        let q = *p;
        for i in 0..3 {
            p[i] = m[i][0] * q[0] + m[i][1] * q[1] + m[i][2] * q[2] + t.translation[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stage;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_positions(
            (0..n)
                .map(|_| std::array::from_fn(|_| rng.random_range(-30.0..30.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_draws_leave_cloud_unchanged() {
        let c = random_cloud(50, 1);
        let regions = vec![0; 50];
        assert_eq!(apply_local(&c, &regions, &[LocalTransform::IDENTITY]).unwrap(), c);
        assert_eq!(apply_global(&c, &GlobalTransform::IDENTITY), c);
    }

    #[test]
    fn yaw_preserves_height_and_planar_range() {
        let c = random_cloud(200, 2);
        let t = GlobalTransform {
            rotation: [0.0, 0.0, 1.1],
            ..GlobalTransform::IDENTITY
        };
        let out = apply_global(&c, &t);
        for (p, q) in c.positions().iter().zip(out.positions()) {
            assert_eq!(p[2], q[2]);
            assert!((p[0].hypot(p[1]) - q[0].hypot(q[1])).abs() < 1e-9);
        }
    }

    #[test]
    fn local_rotation_preserves_pairwise_distances() {
        let c = random_cloud(60, 3);
        let regions: Vec<usize> = (0..60).map(|j| j % 3).collect();
        let mut rng = RandomStream::for_stage(3, Stage::Affine, 0);
        let ts: Vec<LocalTransform> = (0..3)
            .map(|_| LocalTransform::draw(std::f64::consts::FRAC_PI_2, (1.0, 1.0), &mut rng))
            .collect();
        let out = apply_local(&c, &regions, &ts).unwrap();
        let d = |a: [f64; 3], b: [f64; 3]| {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        };
        for i in 0..60 {
            for j in 0..60 {
                if regions[i] == regions[j] {
                    let before = d(c.positions()[i], c.positions()[j]);
                    let after = d(out.positions()[i], out.positions()[j]);
                    assert!((before - after).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn local_scale_about_centroid() {
        let c = PointCloud::from_positions(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let out = apply_local(&c, &[0, 0], &[LocalTransform { yaw: 0.0, scale: 2.0 }]).unwrap();
        assert_eq!(out.positions(), &[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
    }

    #[test]
    fn global_scale_and_translation() {
        let c = PointCloud::from_positions(vec![[1.0, 2.0, 3.0]]).unwrap();
        let t = GlobalTransform {
            rotation: [0.0; 3],
            scale: [2.0, 3.0, 0.5],
            translation: [1.0, -1.0, 0.25],
        };
        assert_eq!(apply_global(&c, &t).positions(), &[[3.0, 5.0, 1.75]]);
    }

    #[test]
    fn region_without_transform_rejected() {
        let c = random_cloud(3, 4);
        assert!(apply_local(&c, &[0, 1, 2], &[LocalTransform::IDENTITY; 2]).is_err());
    }
}
