//! Range binning and density-aware sampling.

use rand::seq::index;

use crate::cloud::{ranges, PointCloud};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Assignment of every point to a 1-based range bin of width `step`:
/// point with range r lies in bin u iff `(u-1)·step <= r < u·step`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinPartition {
    bins: Vec<usize>,
    count: usize,
}

impl BinPartition {
    pub fn bin_of(&self, j: usize) -> usize {
        self.bins[j]
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    /// Highest occupied bin index; 0 for an empty cloud.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Point indices in bin `u`, ascending.
    pub fn members(&self, u: usize) -> Vec<usize> {
        (0..self.bins.len()).filter(|&j| self.bins[j] == u).collect()
    }

    /// Occupancy of bins `1..=count`; entry `u-1` holds bin `u`.
    pub fn occupancy(&self) -> Vec<usize> {
        let mut occ = vec![0; self.count];
        for &b in &self.bins {
            occ[b - 1] += 1;
        }
        occ
    }
}

pub fn bin_by_range(cloud: &PointCloud, step: f64) -> Result<BinPartition> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("bin step must be positive, got {step}")));
    }
    let bins: Vec<usize> = ranges(cloud)
        .iter()
        .map(|r| (r / step).floor() as usize + 1)
        .collect();
    let count = bins.iter().copied().max().unwrap_or(0);
    Ok(BinPartition { bins, count })
}

/// Audit record of one paired bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSample {
    pub bin: usize,
    pub xi: f64,
    pub target_count: usize,
    pub source_before: usize,
    pub target_before: usize,
    pub source_after: usize,
    pub target_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySample {
    pub keep_source: Vec<bool>,
    pub keep_target: Vec<bool>,
    pub bins: Vec<BinSample>,
}

/// `round(x)` with halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

fn subsample(members: &[usize], n: usize, keep: &mut [bool], rng: &mut RandomStream) {
    if members.len() <= n {
        return;
    }
    for &j in members {
        keep[j] = false;
    }
    for i in index::sample(rng, members.len(), n).iter() {
        keep[members[i]] = true;
    }
}

/// Aligns per-bin point counts of two scans.
///
/// For every paired bin k up to `min(n, m)`, one soft factor
/// `ξ ~ U[1-ε, 1+ε]` gives `N̂_k = round(min(N_k^s, N_k^t) · ξ)`; whichever
/// side holds more than `N̂_k` points is subsampled uniformly without
/// replacement down to `N̂_k`. Bins beyond the shorter scan are untouched.
pub fn density_aware_sample(
    source: &PointCloud,
    target: &PointCloud,
    step: f64,
    epsilon: f64,
    rng: &mut RandomStream,
) -> Result<DensitySample> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("soft factor epsilon {epsilon} outside (0, 1)")));
    }
    sample_bins(source, target, step, rng, |r| r.uniform(1.0 - epsilon, 1.0 + epsilon))
}

/// Same as [`density_aware_sample`] with the soft factor pinned to `xi`.
pub fn density_aware_sample_with_factor(
    source: &PointCloud,
    target: &PointCloud,
    step: f64,
    xi: f64,
    rng: &mut RandomStream,
) -> Result<DensitySample> {
    sample_bins(source, target, step, rng, |_| xi)
}

fn sample_bins(
    source: &PointCloud,
    target: &PointCloud,
    step: f64,
    rng: &mut RandomStream,
    mut draw_xi: impl FnMut(&mut RandomStream) -> f64,
) -> Result<DensitySample> {
    let sb = bin_by_range(source, step)?;
    let tb = bin_by_range(target, step)?;
    let mut keep_source = vec![true; source.len()];
    let mut keep_target = vec![true; target.len()];
    let mut log = Vec::new();
    for k in 1..=sb.count().min(tb.count()) {
        let xi = draw_xi(rng);
        let sm = sb.members(k);
        let tm = tb.members(k);
        let target_count = round_half_up(sm.len().min(tm.len()) as f64 * xi);
        subsample(&sm, target_count, &mut keep_source, rng);
        subsample(&tm, target_count, &mut keep_target, rng);
        log.push(BinSample {
            bin: k,
            xi,
            target_count,
            source_before: sm.len(),
            target_before: tm.len(),
            source_after: sm.len().min(target_count),
            target_after: tm.len().min(target_count),
        });
    }
    Ok(DensitySample {
        keep_source,
        keep_target,
        bins: log,
    })
}
