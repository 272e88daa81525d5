//! Pitch-angle partitioning and bidirectional LaserMix-style scan mixing.
//!
//! Both scans of a pair are cut into the same `R` equal-width pitch bands.
//! The source-to-target mix takes even bands from the target and odd bands
//! from the source; the target-to-source mix takes the complement, so the
//! two mixes together use every band of every scan exactly once.

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelSet, PointCloud};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Elevation of every point above the sensor's horizontal plane, radians.
/// A point at the origin gets pitch 0.
pub fn pitch_angles(cloud: &PointCloud) -> Vec<f64> {
    cloud
        .positions()
        .iter()
        .map(|p| p[2].atan2(p[0].hypot(p[1])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    /// Candidate region counts; one is drawn uniformly per pair.
    pub region_counts: Vec<usize>,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            region_counts: vec![3, 4, 5, 6],
            pitch_min_deg: -25.0,
            pitch_max_deg: 3.0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.region_counts.is_empty() || self.region_counts.iter().any(|&r| r < 2) {
            return Err(Error::invalid("region counts must be a non-empty list of values >= 2"));
        }
        if !(self.pitch_min_deg < self.pitch_max_deg) {
            return Err(Error::invalid("pitch bounds are empty"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.pitch_min_deg.to_radians(), self.pitch_max_deg.to_radians())
    }

    pub fn draw_region_count(&self, rng: &mut RandomStream) -> usize {
        self.region_counts[rng.below(self.region_counts.len())]
    }
}

/// Pitch band of every point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    regions: Vec<usize>,
    count: usize,
    boundaries: Vec<f64>,
}

impl RegionPartition {
    pub fn regions(&self) -> &[usize] {
        &self.regions
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `count + 1` band edges in radians.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Keeps the entries whose mask value is true.
    pub fn retain_mask(&self, keep: &[bool]) -> Self {
        Self {
            regions: self
                .regions
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&r, _)| r)
                .collect(),
            count: self.count,
            boundaries: self.boundaries.clone(),
        }
    }
}

/// Splits `[bounds.0, bounds.1]` into `count` equal pitch bands; points
/// outside the bounds fall into the nearest end band.
pub fn partition(cloud: &PointCloud, count: usize, bounds: (f64, f64)) -> Result<RegionPartition> {
    if count < 2 {
        return Err(Error::invalid(format!("need at least 2 regions, got {count}")));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(Error::invalid("pitch bounds are empty"));
    }
    let width = (hi - lo) / count as f64;
    let regions = pitch_angles(cloud)
        .iter()
        .map(|&p| (((p - lo) / width).floor().max(0.0) as usize).min(count - 1))
        .collect();
    let boundaries = (0..=count).map(|k| lo + width * k as f64).collect();
    Ok(RegionPartition {
        regions,
        count,
        boundaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixDirection {
    /// Upper branch: even bands from the source, odd from the target.
    TargetToSource,
    /// Lower branch: even bands from the target, odd from the source.
    SourceToTarget,
}

impl MixDirection {
    pub const BOTH: [MixDirection; 2] = [MixDirection::TargetToSource, MixDirection::SourceToTarget];

    /// Whether band `r` is taken from the target scan.
    pub fn takes_target(self, r: usize) -> bool {
        match self {
            MixDirection::SourceToTarget => r % 2 == 0,
            MixDirection::TargetToSource => r % 2 == 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            MixDirection::TargetToSource => "t2s",
            MixDirection::SourceToTarget => "s2t",
        }
    }
}

/// One mixed scan. Source-provenance points come first, each group in
/// ascending input order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedScan {
    pub cloud: PointCloud,
    pub labels: LabelSet,
    /// True where the point came from the target scan.
    pub from_target: Vec<bool>,
    /// Index of each point in the scan it came from.
    pub origin: Vec<usize>,
    pub direction: MixDirection,
}

impl MixedScan {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// A scan together with its labels and pitch partition.
#[derive(Debug, Clone, Copy)]
pub struct PartitionedScan<'a> {
    pub cloud: &'a PointCloud,
    pub labels: &'a LabelSet,
    pub partition: &'a RegionPartition,
}

impl PartitionedScan<'_> {
    fn check(&self) -> Result<()> {
        self.labels.check_len(self.cloud.len())?;
        if self.partition.len() != self.cloud.len() {
            return Err(Error::LengthMismatch {
                expected: self.cloud.len(),
                actual: self.partition.len(),
            });
        }
        Ok(())
    }
}

pub fn lasermix(
    source: PartitionedScan<'_>,
    target: PartitionedScan<'_>,
    direction: MixDirection,
) -> Result<MixedScan> {
    source.check()?;
    target.check()?;
    if source.partition.count() != target.partition.count() {
        return Err(Error::invalid("source and target partitions differ in region count"));
    }
    let src_idx: Vec<usize> = (0..source.cloud.len())
        .filter(|&j| !direction.takes_target(source.partition.regions()[j]))
        .collect();
    let tgt_idx: Vec<usize> = (0..target.cloud.len())
        .filter(|&j| direction.takes_target(target.partition.regions()[j]))
        .collect();
    let cloud = source.cloud.select(&src_idx).concat(&target.cloud.select(&tgt_idx));
    let labels = source.labels.select(&src_idx).concat(&target.labels.select(&tgt_idx));
    let mut from_target = vec![false; src_idx.len()];
    from_target.resize(src_idx.len() + tgt_idx.len(), true);
    let mut origin = src_idx;
    origin.extend(tgt_idx);
    Ok(MixedScan {
        cloud,
        labels,
        from_target,
        origin,
        direction,
    })
}

/// Both mixing directions, `[t→s, s→t]`.
pub fn mix_pair(
    source: PartitionedScan<'_>,
    target: PartitionedScan<'_>,
) -> Result<[MixedScan; 2]> {
    Ok([
        lasermix(source, target, MixDirection::TargetToSource)?,
        lasermix(source, target, MixDirection::SourceToTarget)?,
    ])
}
