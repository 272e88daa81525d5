//! Per-point classifier, losses, mean-teacher updates, metrics and the
//! training loops.

pub mod checkpoint;
pub mod ema;
pub mod features;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use ema::teacher_ema_update;
pub use features::{compute_features, FeatureConfig, NUM_FEATURES};
pub use loss::{cross_entropy_loss, overall_loss, soft_dice_loss, softmax_backward, LossWeights, Objective};
pub use metrics::{iou, ConfusionMatrix, IouReport};
pub use model::{MlpShape, ModelParams};
pub use train::{
    adapt, evaluate, mix_slot, predict_labels, pretrain, pretrain_from, pseudo_label_batch,
    slot_scenes, AdaptSettings, AdaptState, ConfidenceSample, IterationRecord, PretrainResult, Telemetry,
    TrainConfig,
};
