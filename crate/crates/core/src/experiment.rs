//! Desk-scale ablation: source-only versus a fixed-threshold baseline versus
//! the full method, on synthetic two-domain scenes.
//!
//! The settings are scaled to the small per-point classifier and a few
//! hundred iterations: a larger learning rate than the full-size recipe, a
//! teacher averaged every iteration, and a short filter warmup.

use crate::cloud::{LabelSet, Normalization, PointCloud};
use crate::dplf::{DplfConfig, EmaSchedule, FilterMode, ThresholdState};
use crate::error::Result;
use crate::mixing::MixConfig;
use crate::pgdap::AugmentConfig;
use crate::scene::{generate_scene, SceneSpec};
use crate::trainer::{adapt, evaluate, pretrain, AdaptSettings, AdaptState, LossWeights, TrainConfig};

/// Scene index of the first target scene; validation scenes follow the
/// training ones.
const TARGET_BASE: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSetup {
    pub source_scenes: usize,
    /// Unlabelled target scenes used for adaptation.
    pub target_scenes: usize,
    /// Held-out labelled target scenes used for scoring.
    pub val_scenes: usize,
    pub source: SceneSpec,
    pub target: SceneSpec,
    pub norm: Normalization,
    pub train: TrainConfig,
    pub schedule: EmaSchedule,
    pub fixed_threshold: f64,
}

impl Default for AblationSetup {
    fn default() -> Self {
        Self {
            source_scenes: 10,
            target_scenes: 10,
            val_scenes: 10,
            source: SceneSpec::source(),
            target: SceneSpec::target(),
            norm: Normalization::default(),
            train: TrainConfig {
                hidden: 16,
                pretrain_epochs: 600,
                pretrain_learning_rate: 2.0,
                learning_rate: 0.5,
                batch_size: 8,
                iterations: 200,
                teacher_momentum: 0.99,
                teacher_period: 1,
                ..TrainConfig::default()
            },
            schedule: EmaSchedule {
                warmup: 20,
                period: 10,
                ..EmaSchedule::default()
            },
            fixed_threshold: 0.85,
        }
    }
}

/// Target-validation mIoU of the three arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationResult {
    pub source_only: f64,
    pub baseline: f64,
    pub full: f64,
}

/// Adaptation settings of one arm. The baseline uses a fixed confidence
/// cut, constant-σ jitter instead of the prior-guided stages, and the
/// segmentation loss alone.
pub fn arm_settings(setup: &AblationSetup, full: bool, seed: u64) -> AdaptSettings {
    let (filter, augment, weights) = if full {
        (
            FilterMode::Dynamic(DplfConfig {
                schedule: setup.schedule,
                ..DplfConfig::default()
            }),
            AugmentConfig::default(),
            LossWeights::default(),
        )
    } else {
        (
            FilterMode::Fixed(setup.fixed_threshold),
            AugmentConfig::baseline(),
            LossWeights { seg: 1.0, dmc: 0.0 },
        )
    };
    AdaptSettings {
        filter,
        augment,
        mix: MixConfig::default(),
        norm: setup.norm,
        train: TrainConfig {
            weights,
            ..setup.train.clone()
        },
        seed,
    }
}

pub type Scenes = Vec<(PointCloud, LabelSet)>;

/// Source, target-train and target-validation scenes for `seed`.
pub fn ablation_scenes(setup: &AblationSetup, seed: u64) -> Result<(Scenes, Scenes, Scenes)> {
    let source = (0..setup.source_scenes as u64)
        .map(|i| generate_scene(&setup.source, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut target = (0..(setup.target_scenes + setup.val_scenes) as u64)
        .map(|i| generate_scene(&setup.target, seed, TARGET_BASE + i))
        .collect::<Result<Vec<_>>>()?;
    let val = target.split_off(setup.target_scenes);
    Ok((source, target, val))
}

/// Pretrains once on the source scenes, then adapts the baseline and the
/// full arm from the same weights. Scores are the student's.
pub fn run_ablation(setup: &AblationSetup, seed: u64) -> Result<AblationResult> {
    let (source, target, val) = ablation_scenes(setup, seed)?;
    let target: Vec<PointCloud> = target.into_iter().map(|(c, _)| c).collect();
    let features = &setup.train.features;
    let pre = pretrain(&source, &setup.norm, &setup.train, seed)?;
    let source_only = evaluate(&pre.params, &val, &setup.norm, features)?.miou;
    let classes = pre.params.shape().outputs;
    let arm = |full: bool| -> Result<f64> {
        let state = AdaptState {
            iteration: 0,
            student: pre.params.clone(),
            teacher: pre.params.clone(),
            thresholds: ThresholdState::new(classes, setup.schedule),
        };
        let (state, _) = adapt(state, &source, &target, &arm_settings(setup, full, seed), None)?;
        Ok(evaluate(&state.student, &val, &setup.norm, features)?.miou)
    };
    Ok(AblationResult {
        source_only,
        baseline: arm(false)?,
        full: arm(true)?,
    })
}
