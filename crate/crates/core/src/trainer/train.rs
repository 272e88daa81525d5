//! Supervised pretraining and the mean-teacher adaptation loop.
//!
//! Batches are scheduled deterministically: slot `p` of iteration `t` pairs
//! source scene `(t·B + p) mod n_s` with target scene `(t·B + p) mod n_t`,
//! and all random draws of that slot come from streams indexed by `(t, p)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelSet, Normalization, PointCloud};
use crate::dplf::{filter_batch, infer_pseudo_labels, ConfidenceSet, FilterMode, FilteredBatch, ThresholdState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mixing::{mix_pair, MixConfig, MixedScan, PartitionedScan};
use crate::pgdap::{run_pipeline, AugmentConfig, TrackedScan};
use crate::rng::{iteration_slot, RandomStream, Stage};

use super::ema::teacher_ema_update;
use super::features::{compute_features, FeatureConfig, NUM_FEATURES};
use super::loss::{overall_loss, LossWeights};
use super::metrics::{ConfusionMatrix, IouReport};
use super::model::{MlpShape, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    /// Teacher momentum λᴺ.
    pub teacher_momentum: f64,
    /// Teacher update period β, in iterations.
    pub teacher_period: u64,
    pub weights: LossWeights,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 8e-4,
            batch_size: 8,
            iterations: 1000,
            teacher_momentum: 0.9,
            teacher_period: 500,
            weights: LossWeights::default(),
            pretrain_epochs: 200,
            pretrain_learning_rate: 0.5,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Batch size 2, lr 1.4e-4, λᴺ = 0.99, β = 1.
    pub fn small_batch() -> Self {
        Self {
            learning_rate: 1.4e-4,
            batch_size: 2,
            teacher_momentum: 0.99,
            teacher_period: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hidden width and batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.pretrain_learning_rate >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.teacher_momentum) || self.teacher_period == 0 {
            return Err(Error::invalid("teacher momentum must lie in [0, 1] and period be positive"));
        }
        self.weights.validate()?;
        self.features.validate()
    }

    pub fn shape(&self, num_classes: usize) -> Result<MlpShape> {
        MlpShape::new(NUM_FEATURES, self.hidden, num_classes)
    }
}

/// Everything the adaptation loop needs besides data and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptSettings {
    pub filter: FilterMode,
    pub augment: AugmentConfig,
    pub mix: MixConfig,
    pub norm: Normalization,
    pub train: TrainConfig,
    pub seed: u64,
}

fn sgd_step(params: &mut ModelParams, grad: &[f64], lr: f64) {
    for (p, g) in params.as_mut_slice().iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

fn features_of(clouds: &[&PointCloud], norm: &Normalization, cfg: &FeatureConfig) -> Result<Vec<Matrix>> {
    clouds.par_iter().map(|c| compute_features(c, norm, cfg)).collect()
}

/// Per-epoch mean Soft Dice over the source scans, recorded before each
/// update, plus the final parameters.
#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub params: ModelParams,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on the mean Soft Dice loss of the labelled
/// scans. Initial weights come from the `Init` stream of `seed`.
pub fn pretrain(
    source: &[(PointCloud, LabelSet)],
    norm: &Normalization,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PretrainResult> {
    cfg.validate()?;
    let first = source.first().ok_or(Error::Empty("no source scans to pretrain on"))?;
    let shape = cfg.shape(first.1.num_classes())?;
    let params = ModelParams::init(shape, &mut RandomStream::for_stage(seed, Stage::Init, 0));
    pretrain_from(params, source, norm, cfg)
}

/// [`pretrain`] from given initial parameters.
pub fn pretrain_from(
    mut params: ModelParams,
    source: &[(PointCloud, LabelSet)],
    norm: &Normalization,
    cfg: &TrainConfig,
) -> Result<PretrainResult> {
    if source.is_empty() {
        return Err(Error::Empty("no source scans to pretrain on"));
    }
    let clouds: Vec<&PointCloud> = source.iter().map(|(c, _)| c).collect();
    let feats = features_of(&clouds, norm, &cfg.features)?;
    let scans: Vec<(&Matrix, &LabelSet)> = feats.iter().zip(source.iter().map(|(_, l)| l)).collect();
    let seg_only = LossWeights { seg: 1.0, dmc: 0.0 };
    let n = scans.len() as f64;
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        let obj = overall_loss(&scans, &params, &seg_only)?;
        losses.push(obj.total / n);
        sgd_step(&mut params, &obj.grad, cfg.pretrain_learning_rate / n);
    }
    Ok(PretrainResult { params, losses })
}

/// Teacher confidences for one batch of target scans, filtered with `mode`.
pub fn pseudo_label_batch(
    teacher: &ModelParams,
    features: &[&Matrix],
    d_norms: &[Vec<f64>],
    state: &mut ThresholdState,
    mode: FilterMode,
) -> Result<(Vec<ConfidenceSet>, FilteredBatch)> {
    let classes = teacher.shape().outputs;
    let mut confs = features
        .par_iter()
        .map(|f| infer_pseudo_labels(&teacher.forward(f)?, classes))
        .collect::<Result<Vec<_>>>()?;
    let filtered = filter_batch(&mut confs, d_norms, state, mode)?;
    Ok((confs, filtered))
}

/// Augments and mixes one (source, filtered target) pair for slot `p` of
/// iteration `t`. Returns `[t→s, s→t]`.
pub fn mix_slot(
    source: (&PointCloud, &LabelSet),
    target: (&PointCloud, &LabelSet),
    settings: &AdaptSettings,
    t: u64,
    p: u64,
) -> Result<[MixedScan; 2]> {
    let aug = run_pipeline(
        TrackedScan::new(source.0.clone(), source.1.clone())?,
        TrackedScan::new(target.0.clone(), target.1.clone())?,
        &settings.augment,
        &settings.mix,
        &settings.norm,
        settings.seed,
        iteration_slot(t, p),
    )?;
    mix_pair(
        PartitionedScan {
            cloud: &aug.source.cloud,
            labels: &aug.source.labels,
            partition: &aug.source_regions,
        },
        PartitionedScan {
            cloud: &aug.target.cloud,
            labels: &aug.target.labels,
            partition: &aug.target_regions,
        },
    )
}

/// Source and target scene indices of slot `p` at iteration `t`.
pub fn slot_scenes(t: u64, p: u64, batch: usize, n_source: usize, n_target: usize) -> (usize, usize) {
    let k = t * batch as u64 + p;
    ((k % n_source as u64) as usize, (k % n_target as u64) as usize)
}

/// Student, teacher and filter state carried across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    pub iteration: u64,
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub thresholds: ThresholdState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: f64,
    pub seg: f64,
    pub dmc: f64,
    pub tau_global: f64,
    /// `τcs(c)` per class, infinite for classes not yet seen.
    pub tau_class: Vec<f64>,
    pub retained: Vec<f64>,
    pub teacher_updated: bool,
}

/// One target point's confidence as seen by the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSample {
    pub class: usize,
    pub raw: f64,
    pub weighted: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Telemetry {
    pub iterations: Vec<IterationRecord>,
    /// Confidences of the final iteration's target batch.
    pub samples: Vec<ConfidenceSample>,
}

/// Optional observer of every iteration's mixed scans, indexed by slot.
pub type MixObserver<'a> = dyn FnMut(u64, &[[MixedScan; 2]]) -> Result<()> + 'a;

/// Runs `settings.train.iterations` adaptation iterations starting at
/// `state.iteration`.
pub fn adapt(
    mut state: AdaptState,
    source: &[(PointCloud, LabelSet)],
    target: &[PointCloud],
    settings: &AdaptSettings,
    mut observer: Option<&mut MixObserver<'_>>,
) -> Result<(AdaptState, Telemetry)> {
    let cfg = &settings.train;
    cfg.validate()?;
    state.student.check_same_shape(&state.teacher)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("adaptation needs source and target scans"));
    }
    let target_refs: Vec<&PointCloud> = target.iter().collect();
    let target_feats = features_of(&target_refs, &settings.norm, &cfg.features)?;
    let target_d = target
        .iter()
        .map(|c| settings.norm.distance(c))
        .collect::<Result<Vec<_>>>()?;

    let b = cfg.batch_size;
    let mut telemetry = Telemetry::default();
    let end = state.iteration + cfg.iterations;
    for t in state.iteration..end {
        let slots: Vec<(usize, usize)> = (0..b as u64)
            .map(|p| slot_scenes(t, p, b, source.len(), target.len()))
            .collect();
        let feats: Vec<&Matrix> = slots.iter().map(|&(_, ti)| &target_feats[ti]).collect();
        let d: Vec<Vec<f64>> = slots.iter().map(|&(_, ti)| target_d[ti].clone()).collect();
        let (confs, filtered) =
            pseudo_label_batch(&state.teacher, &feats, &d, &mut state.thresholds, settings.filter)?;

        let mixed = slots
            .par_iter()
            .zip(&filtered.labels)
            .enumerate()
            .map(|(p, (&(si, ti), labels))| {
                mix_slot(
                    (&source[si].0, &source[si].1),
                    (&target[ti], labels),
                    settings,
                    t,
                    p as u64,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(obs) = observer.as_mut() {
            obs(t, &mixed)?;
        }
        let clouds: Vec<&PointCloud> = mixed.iter().flatten().map(|m| &m.cloud).collect();
        let mixed_feats = features_of(&clouds, &settings.norm, &cfg.features)?;
        let scans: Vec<(&Matrix, &LabelSet)> = mixed_feats
            .iter()
            .zip(mixed.iter().flatten().map(|m| &m.labels))
            .collect();
        let obj = overall_loss(&scans, &state.student, &cfg.weights)?;
        sgd_step(&mut state.student, &obj.grad, cfg.learning_rate / b as f64);
        let teacher_updated = teacher_ema_update(
            &mut state.teacher,
            &state.student,
            cfg.teacher_momentum,
            cfg.teacher_period,
            t,
        )?;

        let classes = state.thresholds.num_classes();
        telemetry.iterations.push(IterationRecord {
            iteration: t,
            loss: obj.total / b as f64,
            seg: obj.seg / b as f64,
            dmc: obj.dmc / b as f64,
            tau_global: state.thresholds.global_threshold(),
            tau_class: (0..classes).map(|c| state.thresholds.class_threshold(c)).collect(),
            retained: (0..classes).map(|c| filtered.retention.fraction(c)).collect(),
            teacher_updated,
        });
        if t + 1 == end {
            telemetry.samples = confs
                .iter()
                .zip(&filtered.rejected)
                .flat_map(|(c, r)| {
                    (0..c.len()).map(move |j| ConfidenceSample {
                        class: c.pseudo_labels()[j],
                        raw: c.raw()[j],
                        weighted: c.weighted()[j],
                        rejected: r[j],
                    })
                })
                .collect();
        }
    }
    state.iteration = end;
    Ok((state, telemetry))
}

/// Arg-max predictions; ties go to the lowest class index.
pub fn predict_labels(params: &ModelParams, features: &Matrix) -> Result<LabelSet> {
    let logits = params.forward(features)?;
    let labels = logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as i32
        })
        .collect();
    LabelSet::new(labels, params.shape().outputs)
}

/// IoU over a set of labelled scans, accumulated into one confusion matrix.
pub fn evaluate(
    params: &ModelParams,
    scans: &[(PointCloud, LabelSet)],
    norm: &Normalization,
    features: &FeatureConfig,
) -> Result<IouReport> {
    let clouds: Vec<&PointCloud> = scans.iter().map(|(c, _)| c).collect();
    let feats = features_of(&clouds, norm, features)?;
    let preds = feats
        .par_iter()
        .map(|f| predict_labels(params, f))
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(params.shape().outputs);
    for (pred, (_, truth)) in preds.iter().zip(scans) {
        cm.add(pred, truth)?;
    }
    Ok(cm.report())
}
