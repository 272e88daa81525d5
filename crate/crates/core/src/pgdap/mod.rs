//! Prior-guided augmentation of a (source, target) scan pair.
//!
//! Stage order is fixed: density-aware sampling, distance-aware jitter on the
//! source, height-aware jitter on both scans, pitch partitioning, per-region
//! local affine, global affine. Each stage can be switched off on its own and
//! draws from its own random stream, so toggling one never changes another.

pub mod affine;
pub mod jitter;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelSet, Normalization, PointCloud};
use crate::error::{Error, Result};
use crate::mixing::{partition, MixConfig, RegionPartition};
use crate::rng::{RandomStream, Stage};

pub use affine::{apply_global, apply_local, local_affine, GlobalTransform, LocalTransform};
pub use jitter::{
    distance_aware_jitter, height_aware_jitter, uniform_jitter, DistanceJitter, HeightJitter,
};
pub use sampling::{
    bin_by_range, density_aware_sample, density_aware_sample_with_factor, round_half_up,
    BinPartition, BinSample, DensitySample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub das: bool,
    pub daj: bool,
    pub haj: bool,
    pub local_affine: bool,
    pub global_affine: bool,
    /// Constant-σ jitter on both scans, used in place of DAJ/HAJ by the
    /// fixed-threshold baseline. Runs after HAJ.
    pub uniform_jitter: bool,

    pub bin_step: f64,
    pub epsilon: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_haj: f64,
    pub h_low: f64,
    pub h_high: f64,
    pub clamp: f64,
    pub uniform_sigma: f64,

    pub local_max_yaw: f64,
    pub local_scale: [f64; 2],
    /// Half-widths of the rotation about x, y, z, radians.
    pub global_max_rotation: [f64; 3],
    pub global_scale: [f64; 2],
    pub global_max_translation: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            das: true,
            daj: true,
            haj: true,
            local_affine: true,
            global_affine: true,
            uniform_jitter: false,
            bin_step: 5.0,
            epsilon: 0.1,
            sigma_min: 0.005,
            sigma_max: 0.05,
            sigma_haj: 0.002,
            h_low: 0.2,
            h_high: 0.8,
            clamp: 0.1,
            uniform_sigma: 0.01,
            local_max_yaw: std::f64::consts::FRAC_PI_2,
            local_scale: [0.95, 1.05],
            global_max_rotation: [0.02, 0.02, std::f64::consts::PI],
            global_scale: [0.95, 1.05],
            global_max_translation: [0.2, 0.2, 0.1],
        }
    }
}

impl AugmentConfig {
    /// Fixed-threshold baseline: affine transforms and uniform jitter only.
    pub fn baseline() -> Self {
        Self {
            das: false,
            daj: false,
            haj: false,
            uniform_jitter: true,
            ..Self::default()
        }
    }

    /// Every stage off.
    pub fn disabled() -> Self {
        Self {
            das: false,
            daj: false,
            haj: false,
            local_affine: false,
            global_affine: false,
            uniform_jitter: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("augment: {msg}")));
        if !(self.bin_step > 0.0) {
            return bad("bin_step must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(0.0 <= self.sigma_min && self.sigma_min <= self.sigma_max) {
            return bad("need 0 <= sigma_min <= sigma_max");
        }
        if !(self.sigma_haj >= 0.0 && self.uniform_sigma >= 0.0) {
            return bad("jitter sigmas must be non-negative");
        }
        if !(0.0 <= self.h_low && self.h_low < self.h_high && self.h_high <= 1.0) {
            return bad("need 0 <= h_low < h_high <= 1");
        }
        if !(self.clamp > 0.0) {
            return bad("clamp must be positive");
        }
        if !(self.local_max_yaw >= 0.0) || self.global_max_rotation.iter().any(|r| !(*r >= 0.0)) {
            return bad("rotation half-widths must be non-negative");
        }
        if self.global_max_translation.iter().any(|t| !(*t >= 0.0)) {
            return bad("translation half-widths must be non-negative");
        }
        for s in [self.local_scale, self.global_scale] {
            if !(0.0 < s[0] && s[0] <= s[1]) {
                return bad("scale ranges must satisfy 0 < lo <= hi");
            }
        }
        Ok(())
    }

    pub fn distance_jitter(&self) -> DistanceJitter {
        DistanceJitter {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            epsilon: self.epsilon,
            clamp: self.clamp,
        }
    }

    pub fn height_jitter(&self) -> HeightJitter {
        HeightJitter {
            sigma: self.sigma_haj,
            h_low: self.h_low,
            h_high: self.h_high,
            epsilon: self.epsilon,
            clamp: self.clamp,
        }
    }
}

/// A scan with its labels and, for every point, its index in the input scan.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedScan {
    pub cloud: PointCloud,
    pub labels: LabelSet,
    pub origin: Vec<usize>,
}

impl TrackedScan {
    pub fn new(cloud: PointCloud, labels: LabelSet) -> Result<Self> {
        labels.check_len(cloud.len())?;
        let origin = (0..cloud.len()).collect();
        Ok(Self {
            cloud,
            labels,
            origin,
        })
    }

    fn retain_mask(&mut self, keep: &[bool]) {
        self.cloud = self.cloud.retain_mask(keep);
        self.labels = self.labels.retain_mask(keep);
        self.origin = self
            .origin
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&o, _)| o)
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub source: TrackedScan,
    pub target: TrackedScan,
    pub source_regions: RegionPartition,
    pub target_regions: RegionPartition,
    /// Per-bin audit of the sampling stage; empty when it is disabled.
    pub bins: Vec<BinSample>,
}

// Sub-stream ids within one stage, kept clear of the iteration/slot bits.
const SOURCE: u64 = 0;
const TARGET: u64 = 1 << 48;
const GLOBAL: u64 = 2 << 48;

/// Runs the augmentation stages on one pair. `index` selects the pair's
/// random streams under `seed`; the same arguments always give the same
/// output.
pub fn run_pipeline(
    source: TrackedScan,
    target: TrackedScan,
    cfg: &AugmentConfig,
    mix: &MixConfig,
    norm: &Normalization,
    seed: u64,
    index: u64,
) -> Result<AugmentedPair> {
    cfg.validate()?;
    mix.validate()?;
    let stream = |stage, sub| RandomStream::for_stage(seed, stage, index | sub);
    let (mut source, mut target) = (source, target);
    source.labels.check_len(source.cloud.len())?;
    target.labels.check_len(target.cloud.len())?;

    let mut bins = Vec::new();
    if cfg.das {
        let mut rng = stream(Stage::Das, SOURCE);
        let s = density_aware_sample(&source.cloud, &target.cloud, cfg.bin_step, cfg.epsilon, &mut rng)?;
        source.retain_mask(&s.keep_source);
        target.retain_mask(&s.keep_target);
        bins = s.bins;
    }
    if cfg.daj {
        let d = norm.distance(&source.cloud)?;
        let mut rng = stream(Stage::Daj, SOURCE);
        source.cloud = distance_aware_jitter(&source.cloud, &d, &cfg.distance_jitter(), &mut rng)?;
    }
    if cfg.haj {
        for (scan, sub) in [(&mut source, SOURCE), (&mut target, TARGET)] {
            let z = norm.height(&scan.cloud)?;
            let mut rng = stream(Stage::Haj, sub);
            scan.cloud = height_aware_jitter(&scan.cloud, &z, &cfg.height_jitter(), &mut rng)?;
        }
    }
    if cfg.uniform_jitter {
        for (scan, sub) in [(&mut source, SOURCE), (&mut target, TARGET)] {
            let mut rng = stream(Stage::UniformJitter, sub);
            scan.cloud = uniform_jitter(&scan.cloud, cfg.uniform_sigma, cfg.clamp, &mut rng);
        }
    }

    let count = mix.draw_region_count(&mut stream(Stage::Mix, SOURCE));
    let source_regions = partition(&source.cloud, count, mix.bounds())?;
    let target_regions = partition(&target.cloud, count, mix.bounds())?;

    if cfg.local_affine {
        let scale = (cfg.local_scale[0], cfg.local_scale[1]);
        for (scan, regions, sub) in [
            (&mut source, &source_regions, SOURCE),
            (&mut target, &target_regions, TARGET),
        ] {
            let mut rng = stream(Stage::Affine, sub);
            scan.cloud = local_affine(&scan.cloud, regions.regions(), count, cfg.local_max_yaw, scale, &mut rng)?;
        }
    }
    if cfg.global_affine {
        let scale = (cfg.global_scale[0], cfg.global_scale[1]);
        for (scan, sub) in [(&mut source, SOURCE), (&mut target, TARGET)] {
            let mut rng = stream(Stage::Affine, GLOBAL | sub);
            let t = GlobalTransform::draw(cfg.global_max_rotation, scale, cfg.global_max_translation, &mut rng);
            scan.cloud = apply_global(&scan.cloud, &t);
        }
    }

    Ok(AugmentedPair {
        source,
        target,
        source_regions,
        target_regions,
        bins,
    })
}
