//! Pretrains on labelled source scenes, then runs a short mean-teacher
//! adaptation on unlabelled target scenes and compares target mIoU.
//!
//!     cargo run --release --example adapt

use dpgla::dplf::{DplfConfig, FilterMode, ThresholdState};
use dpgla::experiment::{ablation_scenes, AblationSetup};
use dpgla::mixing::MixConfig;
use dpgla::pgdap::AugmentConfig;
use dpgla::trainer::{adapt, evaluate, pretrain, AdaptSettings, AdaptState, TrainConfig};
use dpgla::PointCloud;

fn main() -> dpgla::Result<()> {
    let setup = AblationSetup {
        source_scenes: 4,
        target_scenes: 4,
        val_scenes: 4,
        train: TrainConfig {
            iterations: 60,
            batch_size: 4,
            ..AblationSetup::default().train
        },
        ..AblationSetup::default()
    };
    let seed = 2;
    let (source, target, val) = ablation_scenes(&setup, seed)?;
    let target: Vec<PointCloud> = target.into_iter().map(|(c, _)| c).collect();
    let features = &setup.train.features;

    let pre = pretrain(&source, &setup.norm, &setup.train, seed)?;
    println!(
        "pretrain loss {:.4} -> {:.4}",
        pre.losses.first().copied().unwrap_or(0.0),
        pre.losses.last().copied().unwrap_or(0.0)
    );
    println!("source-only target mIoU {:.2}", evaluate(&pre.params, &val, &setup.norm, features)?.miou);

    let classes = pre.params.shape().outputs;
    let state = AdaptState {
        iteration: 0,
        student: pre.params.clone(),
        teacher: pre.params,
        thresholds: ThresholdState::new(classes, setup.schedule),
    };
    let settings = AdaptSettings {
        filter: FilterMode::Dynamic(DplfConfig { schedule: setup.schedule, ..DplfConfig::default() }),
        augment: AugmentConfig::default(),
        mix: MixConfig::default(),
        norm: setup.norm,
        train: setup.train.clone(),
        seed,
    };
    let (state, tel) = adapt(state, &source, &target, &settings, None)?;
    for r in tel.iterations.iter().step_by(10) {
        println!("iter {:>3} loss {:.4} tau_global {:.4}", r.iteration, r.loss, r.tau_global);
    }
    println!("adapted target mIoU {:.2}", evaluate(&state.student, &val, &setup.norm, features)?.miou);
    Ok(())
}
