//! Synthetic street scenes seen by a ray-cast spinning LiDAR.
//!
//! Scenes are built from a ground plane, box buildings, pole cylinders, box
//! vehicles and trees (trunk cylinder + crown sphere). A source-like scene is
//! clean; a target-like scene adds isotropic Gaussian noise whose standard
//! deviation grows with range, and drops points with a probability that grows
//! with range. Layout, dropout and noise use separate random streams, so a
//! noisy scene and its clean twin (same seed, `noise_sigma = 0`) are
//! point-aligned.

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelSet, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{RandomStream, Stage};

pub const GROUND: i32 = 0;
pub const BUILDING: i32 = 1;
pub const POLE: i32 = 2;
pub const VEHICLE: i32 = 3;
pub const VEGETATION: i32 = 4;
pub const TRUNK: i32 = 5;
pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["ground", "building", "pole", "vehicle", "vegetation", "trunk"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    SourceLike,
    TargetLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub domain: DomainKind,
    /// Maximum sensing range in meters; objects are placed inside it.
    pub extent: f64,
    pub beams: usize,
    pub azimuth_steps: usize,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
    pub sensor_height: f64,
    pub ground: bool,
    pub buildings: usize,
    pub poles: usize,
    pub vehicles: usize,
    pub trees: usize,
    /// Noise standard deviation at the sensor, meters.
    pub noise_sigma: f64,
    /// Noise std at range r is `noise_sigma * (1 + noise_growth * r / extent)`.
    pub noise_growth: f64,
    /// Keep probability at range r is `exp(-density_decay * r / extent)`.
    pub density_decay: f64,
    /// Multiplies every reflectance value (sensor calibration gap).
    pub intensity_gain: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::source()
    }
}

impl SceneSpec {
    /// Clean synthetic-style scene.
    pub fn source() -> Self {
        Self {
            domain: DomainKind::SourceLike,
            extent: 80.0,
            beams: 32,
            azimuth_steps: 200,
            pitch_min_deg: -25.0,
            pitch_max_deg: 3.0,
            sensor_height: 1.73,
            ground: true,
            buildings: 8,
            poles: 10,
            vehicles: 6,
            trees: 8,
            noise_sigma: 0.0,
            noise_growth: 0.0,
            density_decay: 0.0,
            intensity_gain: 1.0,
        }
    }

    /// Noisy, far-field-sparse real-style scene.
    pub fn target() -> Self {
        Self {
            domain: DomainKind::TargetLike,
            noise_sigma: 0.04,
            noise_growth: 6.0,
            density_decay: 4.0,
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("scene spec: {m}")));
        if !(self.extent > 0.0) {
            return bad("extent must be positive");
        }
        if self.beams == 0 || self.azimuth_steps == 0 {
            return bad("beam and azimuth counts must be positive");
        }
        if !(self.pitch_min_deg < self.pitch_max_deg) {
            return bad("pitch range is empty");
        }
        if !(self.noise_sigma >= 0.0) || !(self.noise_growth >= 0.0) || !(self.density_decay >= 0.0)
        {
            return bad("noise and density parameters must be non-negative");
        }
        match self.domain {
            DomainKind::SourceLike if self.noise_sigma != 0.0 || self.density_decay != 0.0 => {
                bad("source-like scenes are noise-free with no range dropout")
            }
            DomainKind::TargetLike if self.noise_sigma <= 0.0 => {
                bad("target-like scenes need noise_sigma > 0")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Cylinder { center: [f64; 2], radius: f64, z0: f64, z1: f64 },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Primitive {
    shape: Shape,
    class: i32,
}

fn ray_box(d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if 0.0 < min[k] || 0.0 > max[k] {
                return None;
            }
        } else {
            let a = min[k] / d[k];
            let b = max[k] / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn ray_cylinder(d: [f64; 3], c: [f64; 2], r: f64, z0: f64, z1: f64) -> Option<f64> {
    let a = d[0] * d[0] + d[1] * d[1];
    if a < 1e-12 {
        return None;
    }
    let b = -2.0 * (d[0] * c[0] + d[1] * c[1]);
    let cc = c[0] * c[0] + c[1] * c[1] - r * r;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    let z = t * d[2];
    (t > 0.0 && z >= z0 && z <= z1).then_some(t)
}

fn ray_sphere(d: [f64; 3], c: [f64; 3], r: f64) -> Option<f64> {
    let b = -2.0 * (d[0] * c[0] + d[1] * c[1] + d[2] * c[2]);
    let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] - r * r;
    let disc = b * b - 4.0 * cc;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / 2.0;
    (t > 0.0).then_some(t)
}

impl Primitive {
    fn hit(&self, d: [f64; 3]) -> Option<f64> {
        match self.shape {
            Shape::Box { min, max } => ray_box(d, min, max),
            Shape::Cylinder {
                center,
                radius,
                z0,
                z1,
            } => ray_cylinder(d, center, radius, z0, z1),
            Shape::Sphere { center, radius } => ray_sphere(d, center, radius),
        }
    }
}

/// Draws an x position away from the sensor, and a lateral offset on a random
/// side of the street.
fn street_slot(rng: &mut RandomStream, extent: f64, lateral: (f64, f64)) -> (f64, f64) {
    let reach = 0.75 * extent;
    let x = loop {
        let x = rng.uniform(-reach, reach);
        if x.abs() > 4.0 {
            break x;
        }
    };
    let side = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    (x, side * rng.uniform(lateral.0, lateral.1))
}

fn layout(spec: &SceneSpec, rng: &mut RandomStream) -> Vec<Primitive> {
    let g = -spec.sensor_height;
    let mut out = Vec::new();
    for _ in 0..spec.buildings {
        let (x, y) = street_slot(rng, spec.extent, (14.0, 22.0));
        let hx = rng.uniform(4.0, 10.0);
        let hy = rng.uniform(3.0, 6.0);
        let h = rng.uniform(5.0, 15.0);
        let y = y + y.signum() * hy;
        out.push(Primitive {
            shape: Shape::Box {
                min: [x - hx, y - hy, g],
                max: [x + hx, y + hy, g + h],
            },
            class: BUILDING,
        });
    }
    for _ in 0..spec.vehicles {
        let (x, y) = street_slot(rng, spec.extent, (1.0, 3.0));
        out.push(Primitive {
            shape: Shape::Box {
                min: [x - 2.25, y - 0.9, g + 0.2],
                max: [x + 2.25, y + 0.9, g + 1.6],
            },
            class: VEHICLE,
        });
    }
    for _ in 0..spec.poles {
        let (x, y) = street_slot(rng, spec.extent, (5.0, 7.0));
        out.push(Primitive {
            shape: Shape::Cylinder {
                center: [x, y],
                radius: rng.uniform(0.08, 0.15),
                z0: g,
                z1: g + rng.uniform(5.0, 8.0),
            },
            class: POLE,
        });
    }
    for _ in 0..spec.trees {
        let (x, y) = street_slot(rng, spec.extent, (8.0, 12.0));
        let trunk_h = rng.uniform(1.8, 2.6);
        let crown_r = rng.uniform(1.5, 2.5);
        out.push(Primitive {
            shape: Shape::Cylinder {
                center: [x, y],
                radius: rng.uniform(0.15, 0.3),
                z0: g,
                z1: g + trunk_h,
            },
            class: TRUNK,
        });
        out.push(Primitive {
            shape: Shape::Sphere {
                center: [x, y, g + trunk_h + 0.8 * crown_r],
                radius: crown_r,
            },
            class: VEGETATION,
        });
    }
    out
}

/// Mean and half-spread of per-class reflectance.
fn reflectance(class: i32) -> (f64, f64) {
    match class {
        GROUND => (0.25, 0.1),
        BUILDING => (0.45, 0.15),
        POLE => (0.6, 0.15),
        VEHICLE => (0.7, 0.2),
        VEGETATION => (0.35, 0.15),
        _ => (0.3, 0.1),
    }
}

/// Ray-casts one scene. Deterministic in `(spec, seed, index)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64, index: u64) -> Result<(PointCloud, LabelSet)> {
    spec.validate()?;
    cast(spec, seed, index)
}

fn cast(spec: &SceneSpec, seed: u64, index: u64) -> Result<(PointCloud, LabelSet)> {
    let mut layout_rng = RandomStream::for_stage(seed, Stage::SceneLayout, index);
    let mut dropout_rng = RandomStream::for_stage(seed, Stage::SceneDropout, index);
    let mut noise_rng = RandomStream::for_stage(seed, Stage::SceneNoise, index);

    let prims = layout(spec, &mut layout_rng);
    let ground_z = -spec.sensor_height;
    let mut positions = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();

    let pitch0 = spec.pitch_min_deg.to_radians();
    let pitch1 = spec.pitch_max_deg.to_radians();
    for b in 0..spec.beams {
        let frac = if spec.beams == 1 {
            0.5
        } else {
            b as f64 / (spec.beams - 1) as f64
        };
        let pitch = pitch0 + frac * (pitch1 - pitch0);
        for a in 0..spec.azimuth_steps {
            let yaw = std::f64::consts::TAU * a as f64 / spec.azimuth_steps as f64;
            let d = [pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin()];
            let mut best: Option<(f64, i32)> = None;
            if spec.ground && d[2] < 0.0 {
                best = Some((ground_z / d[2], GROUND));
            }
            for p in &prims {
                if let Some(t) = p.hit(d) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, p.class));
                    }
                }
            }
            // One reflectance and one dropout draw per ray keeps streams aligned
            // across specs that differ only in noise.
            let refl_u = layout_rng.uniform(-1.0, 1.0);
            let keep_u = dropout_rng.uniform(0.0, 1.0);
            let Some((t, class)) = best else { continue };
            if t > spec.extent {
                continue;
            }
            let rel = t / spec.extent;
            if keep_u >= (-spec.density_decay * rel).exp() {
                continue;
            }
            let (mean, spread) = reflectance(class);
            intensity.push(((mean + spread * refl_u) * spec.intensity_gain).clamp(0.0, 1.0));
            positions.push([t * d[0], t * d[1], t * d[2]]);
            labels.push(class);
        }
    }

    if spec.noise_sigma > 0.0 {
        for p in positions.iter_mut() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let sigma = spec.noise_sigma * (1.0 + spec.noise_growth * (r / spec.extent).min(1.0));
            for c in p.iter_mut() {
                *c += sigma * noise_rng.normal();
            }
        }
    }

    Ok((
        PointCloud::new(positions, Some(intensity))?,
        LabelSet::new(labels, NUM_CLASSES)?,
    ))
}
