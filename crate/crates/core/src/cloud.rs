//! Point clouds, per-point label sets and the range/height normalisations
//! shared by filtering, augmentation and feature extraction.
//!
//! The sensor is assumed to sit at the origin of every scan's frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value marking a point as unknown or ignored.
pub const UNKNOWN: i32 = -1;

/// N points in meters with optional per-point reflectance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(index) = positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        if let Some(i) = &intensity {
            if i.len() != positions.len() {
                return Err(Error::LengthMismatch {
                    expected: positions.len(),
                    actual: i.len(),
                });
            }
        }
        Ok(Self {
            positions,
            intensity,
        })
    }

    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(positions, None)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    /// Intensity of point `j`, 0 when the cloud carries none.
    pub fn intensity_at(&self, j: usize) -> f64 {
        self.intensity.as_ref().map_or(0.0, |i| i[j])
    }

    /// Replaces positions in place. Callers must keep them finite.
    pub(crate) fn positions_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.positions
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Keeps the points whose mask entry is true.
    pub fn retain_mask(&self, keep: &[bool]) -> Self {
        let indices: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        self.select(&indices)
    }

    /// Concatenates two clouds. Intensity survives only if both carry it,
    /// otherwise missing values are filled with zero.
    pub fn concat(&self, other: &Self) -> Self {
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let intensity = match (&self.intensity, &other.intensity) {
            (None, None) => None,
            _ => {
                let mut v: Vec<f64> = (0..self.len()).map(|j| self.intensity_at(j)).collect();
                v.extend((0..other.len()).map(|j| other.intensity_at(j)));
                Some(v)
            }
        };
        Self {
            positions,
            intensity,
        }
    }
}

/// Per-point class ids; [`UNKNOWN`] marks ignored points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<i32>,
    num_classes: usize,
}

impl LabelSet {
    pub fn new(labels: Vec<i32>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l < UNKNOWN || l >= num_classes as i32)
        {
            return Err(Error::ClassOutOfRange {
                class: bad as i64,
                num_classes,
            });
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn unknown(len: usize, num_classes: usize) -> Self {
        Self {
            labels: vec![UNKNOWN; len],
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.labels
    }

    pub fn get(&self, j: usize) -> Option<usize> {
        let l = self.labels[j];
        (l >= 0).then_some(l as usize)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn retain_mask(&self, keep: &[bool]) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&l, _)| l)
                .collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self {
            labels,
            num_classes: self.num_classes.max(other.num_classes),
        }
    }

    /// Ensures the set pairs with a cloud of `n` points.
    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

/// Euclidean distance of every point from the sensor origin.
pub fn ranges(cloud: &PointCloud) -> Vec<f64> {
    cloud
        .positions()
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .collect()
}

/// Divides by `max_value` and clamps into `[0, 1]`.
pub fn normalize_unit(values: &[f64], max_value: f64) -> Result<Vec<f64>> {
    if !(max_value > 0.0) {
        return Err(Error::invalid(format!(
            "normalisation maximum must be positive, got {max_value}"
        )));
    }
    Ok(values
        .iter()
        .map(|v| (v / max_value).clamp(0.0, 1.0))
        .collect())
}

/// Fixed windows used to map ranges and heights into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Normalization {
    pub max_range: f64,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            max_range: 80.0,
            min_height: -3.0,
            max_height: 5.0,
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) || !(self.max_height > self.min_height) {
            return Err(Error::invalid(format!("bad normalisation window {self:?}")));
        }
        Ok(())
    }

    /// Normalised range d̃ of every point.
    pub fn distance(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        normalize_unit(&ranges(cloud), self.max_range)
    }

    /// Normalised height z̃ of every point: shifted by the window floor, then
    /// scaled and clamped.
    pub fn height(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let shifted: Vec<f64> = cloud
            .positions()
            .iter()
            .map(|p| p[2] - self.min_height)
            .collect();
        normalize_unit(&shifted, self.max_height - self.min_height)
    }
}
