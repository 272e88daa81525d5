//! Source-only vs fixed-threshold baseline vs full method on synthetic
//! scenes. Pass seeds as arguments (default 1 2 3); prints target mIoU per
//! seed and the median of each arm.
//!
//!     cargo run --release --example ablation -- 1 2 3

use std::time::Instant;

use dpgla::experiment::{run_ablation, AblationSetup};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> dpgla::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3] } else { seeds };
    let setup = AblationSetup::default();
    let mut rows = Vec::new();
    println!("{:>6} {:>12} {:>10} {:>8} {:>8}", "seed", "source-only", "baseline", "full", "secs");
    for &seed in &seeds {
        let t0 = Instant::now();
        let r = run_ablation(&setup, seed)?;
        println!(
            "{seed:>6} {:>12.2} {:>10.2} {:>8.2} {:>8.1}",
            r.source_only,
            r.baseline,
            r.full,
            t0.elapsed().as_secs_f64()
        );
        rows.push(r);
    }
    println!(
        "{:>6} {:>12.2} {:>10.2} {:>8.2}",
        "median",
        median(rows.iter().map(|r| r.source_only).collect()),
        median(rows.iter().map(|r| r.baseline).collect()),
        median(rows.iter().map(|r| r.full).collect())
    );
    Ok(())
}
