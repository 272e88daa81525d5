//! Pitch-band mixing of a labelled source scan with a target scan in both
//! directions, with the per-region composition of each output.
//!
//!     cargo run --example mix -- 4

use dpgla::mixing::{mix_pair, partition, MixConfig, PartitionedScan};
use dpgla::scene::{generate_scene, SceneSpec};

fn main() -> dpgla::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let (sc, sl) = generate_scene(&SceneSpec::source(), 5, 0)?;
    let (tc, tl) = generate_scene(&SceneSpec::target(), 5, 1)?;
    let bounds = MixConfig::default().bounds();
    let sp = partition(&sc, count, bounds)?;
    let tp = partition(&tc, count, bounds)?;
    let mixed = mix_pair(
        PartitionedScan { cloud: &sc, labels: &sl, partition: &sp },
        PartitionedScan { cloud: &tc, labels: &tl, partition: &tp },
    )?;
    println!("source {} points, target {} points, {count} regions", sc.len(), tc.len());
    for m in &mixed {
        let mut per_region = vec![(0usize, 0usize); count];
        for j in 0..m.len() {
            if m.from_target[j] {
                per_region[tp.regions()[m.origin[j]]].1 += 1;
            } else {
                per_region[sp.regions()[m.origin[j]]].0 += 1;
            }
        }
        println!("{}: {} points", m.direction.tag(), m.len());
        for (r, (s, t)) in per_region.iter().enumerate() {
            println!("  region {r}: {s:>6} source {t:>6} target");
        }
    }
    Ok(())
}
