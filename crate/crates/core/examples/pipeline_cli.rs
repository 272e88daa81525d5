//! The full command sequence on a small config, driven through the same
//! functions the `dpgla` binary calls: generate, pretrain, adapt, evaluate
//! and report.
//!
//!     cargo run --release --example pipeline_cli -- /tmp/dpgla-run

use std::path::PathBuf;

use dpgla::cli::{cmd_adapt, cmd_eval, cmd_gen_scenes, cmd_pretrain, cmd_report, format_iou_table, AdaptOptions, EvalOptions, Run};
use dpgla::config::RunConfig;

const CONFIG: &str = "seed = 4
[scenes]
source_count = 4
target_count = 4
val_count = 3
[train]
batch_size = 4
iterations = 40
learning_rate = 0.5
pretrain_epochs = 200
pretrain_learning_rate = 2.0
teacher_period = 1
teacher_momentum = 0.99
[filter.schedule]
warmup = 10
period = 10
";

fn main() -> dpgla::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dpgla-run"));
    let mut config = RunConfig::from_toml(CONFIG)?;
    config.out = out.clone();
    let run = Run { config, config_text: Some(CONFIG.to_string()) };

    cmd_gen_scenes(&run)?;
    cmd_pretrain(&run)?;
    let pre = cmd_eval(&run, &EvalOptions { checkpoint: Some(out.join("checkpoints/pretrain.ckpt")), ..EvalOptions::default() })?;
    print!("{}", format_iou_table("pretrained", &pre));
    cmd_adapt(&run, &AdaptOptions::default())?;
    let post = cmd_eval(&run, &EvalOptions::default())?;
    print!("{}", format_iou_table("adapted", &post));

    let rep = cmd_report(&run, None)?;
    println!("{:>5} {:>8} {:>8} {:>8}", "class", "points", "fix 0.9", "dynamic");
    for c in 0..rep.totals.len() {
        println!("{c:>5} {:>8} {:>8.3} {:>8.3}", rep.totals[c], rep.fixed_retained[c][1], rep.dynamic_retained[c]);
    }
    println!("outputs under {}", out.display());
    Ok(())
}
