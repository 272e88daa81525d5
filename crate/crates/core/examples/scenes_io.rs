//! Generates one source and one target scene, writes them in the
//! velodyne/labels layout and reads them back.
//!
//!     cargo run --example scenes_io -- /tmp/scenes

use std::path::PathBuf;

use dpgla::cli::commands::{label_path, scan_path};
use dpgla::io::{load_labels_for, load_scan, save_labels, save_scan, ClassMap};
use dpgla::scene::{generate_scene, SceneSpec, CLASS_NAMES};

fn main() -> dpgla::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dpgla-scenes"));
    let map = ClassMap::identity(CLASS_NAMES.len());
    for (i, (name, spec)) in [("source", SceneSpec::source()), ("target", SceneSpec::target())].iter().enumerate() {
        let (cloud, labels) = generate_scene(spec, 7, i as u64)?;
        save_scan(scan_path(&dir, i), &cloud)?;
        save_labels(label_path(&dir, i), &labels, &map)?;

        let back = load_scan(scan_path(&dir, i))?;
        let back_labels = load_labels_for(label_path(&dir, i), &map, back.len())?;
        let mut counts = vec![0usize; CLASS_NAMES.len()];
        for c in back_labels.as_slice().iter().filter(|&&c| c >= 0) {
            counts[*c as usize] += 1;
        }
        println!("{name}: {} points", back.len());
        for (c, n) in counts.iter().enumerate() {
            println!("  {:<11} {n:>6}", CLASS_NAMES[c]);
        }
    }
    println!("written under {}", dir.display());
    Ok(())
}
