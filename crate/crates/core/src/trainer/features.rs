//! Per-point handcrafted features, every entry in `[0, 1]`.
//!
//! Column order: normalised range, normalised height, local density,
//! planarity, intensity.

use serde::{Deserialize, Serialize};

use crate::cloud::{Normalization, PointCloud};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const NUM_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Neighbourhood radius ρ, metres.
    pub radius: f64,
    /// Neighbour count mapped to density 1.
    pub density_cap: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            density_cap: 40.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.density_cap > 0.0) {
            return Err(Error::invalid("feature radius and density cap must be positive"));
        }
        Ok(())
    }
}

type Cell = (i64, i64, i64);

fn cell_of(p: &[f64; 3], size: f64) -> Cell {
    (
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    )
}

/// Points sorted by voxel cell of side `radius`. The 3×3×3 block around a
/// point is nine contiguous runs of the sorted order.
struct Grid<'a> {
    pts: &'a [[f64; 3]],
    radius: f64,
    cells: Vec<Cell>,
    order: Vec<usize>,
}

impl<'a> Grid<'a> {
    fn new(pts: &'a [[f64; 3]], radius: f64) -> Self {
        let mut keyed: Vec<(Cell, usize)> = pts.iter().enumerate().map(|(j, p)| (cell_of(p, radius), j)).collect();
        keyed.sort_unstable();
        let (cells, order) = keyed.into_iter().unzip();
        Self {
            pts,
            radius,
            cells,
            order,
        }
    }

    /// Calls `f` on every point within `radius` of point `j`, itself
    /// included, in a fixed order.
    fn for_each_neighbour(&self, j: usize, mut f: impl FnMut(usize)) {
        let p = self.pts[j];
        let (cx, cy, cz) = cell_of(&p, self.radius);
        let r2 = self.radius * self.radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let lo = self.cells.partition_point(|c| *c < (cx + dx, cy + dy, cz - 1));
                let hi = self.cells.partition_point(|c| *c <= (cx + dx, cy + dy, cz + 1));
                for &k in &self.order[lo..hi] {
                    let q = self.pts[k];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d2 <= r2 {
                        f(k);
                    }
                }
            }
        }
    }
}

/// Indices of the points within `radius` of each point, itself included,
/// in ascending order.
pub fn neighbourhoods(cloud: &PointCloud, radius: f64) -> Vec<Vec<usize>> {
    let grid = Grid::new(cloud.positions(), radius);
    (0..cloud.len())
        .map(|j| {
            let mut out = Vec::new();
            grid.for_each_neighbour(j, |k| out.push(k));
            out.sort_unstable();
            out
        })
        .collect()
}

/// N×5 feature matrix.
pub fn compute_features(
    cloud: &PointCloud,
    norm: &Normalization,
    cfg: &FeatureConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    let d = norm.distance(cloud)?;
    let z = norm.height(cloud)?;
    let pts = cloud.positions();
    let grid = Grid::new(pts, cfg.radius);
    let mut data = Vec::with_capacity(cloud.len() * NUM_FEATURES);
    for j in 0..cloud.len() {
        // Heights are taken relative to the centre point to keep the
        // one-pass variance well conditioned.
        let (mut n, mut s1, mut s2) = (0usize, 0.0, 0.0);
        grid.for_each_neighbour(j, |k| {
            let dz = pts[k][2] - pts[j][2];
            n += 1;
            s1 += dz;
            s2 += dz * dz;
        });
        let nf = n as f64;
        let var_z = (s2 / nf - (s1 / nf).powi(2)).max(0.0);
        let density = ((n - 1) as f64 / cfg.density_cap).min(1.0);
        let planarity = 1.0 - (2.0 * var_z.sqrt() / cfg.radius).min(1.0);
        data.extend_from_slice(&[d[j], z[j], density, planarity, cloud.intensity_at(j).clamp(0.0, 1.0)]);
    }
    Matrix::from_vec(cloud.len(), NUM_FEATURES, data)
}
