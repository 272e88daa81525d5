//! Dynamic pseudo-label filtering on simulated teacher confidences. One
//! class is systematically less confident than the others; a fixed cut
//! discards it while the per-class thresholds keep a share of it.
//!
//!     cargo run --example dplf_filter

use dpgla::dplf::{filter_batch, ConfidenceSet, DplfConfig, EmaSchedule, FilterMode, Retention, ThresholdState};
use dpgla::RandomStream;

const CLASSES: usize = 4;
const WEAK: usize = 3;

fn scan(rng: &mut RandomStream, n: usize) -> dpgla::Result<(ConfidenceSet, Vec<f64>)> {
    let labels: Vec<usize> = (0..n).map(|j| j % CLASSES).collect();
    let raw = labels
        .iter()
        .map(|&c| if c == WEAK { rng.uniform(0.45, 0.85) } else { rng.uniform(0.9, 0.995) })
        .collect();
    let d_norm = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
    Ok((ConfidenceSet::new(raw, labels, CLASSES)?, d_norm))
}

fn run(mode: FilterMode, schedule: EmaSchedule) -> dpgla::Result<(Retention, ThresholdState)> {
    let mut rng = RandomStream::new(11, 0);
    let mut state = ThresholdState::new(CLASSES, schedule);
    let mut total = Retention::new(CLASSES);
    for _ in 0..300 {
        let (mut confs, mut d) = (Vec::new(), Vec::new());
        for _ in 0..2 {
            let (c, dn) = scan(&mut rng, 400)?;
            confs.push(c);
            d.push(dn);
        }
        let out = filter_batch(&mut confs, &d, &mut state, mode)?;
        for c in 0..CLASSES {
            total.total[c] += out.retention.total[c];
            total.retained[c] += out.retention.retained[c];
        }
    }
    Ok((total, state))
}

fn main() -> dpgla::Result<()> {
    let schedule = EmaSchedule::short();
    let (fixed, _) = run(FilterMode::Fixed(0.9), schedule)?;
    let (dynamic, state) = run(FilterMode::Dynamic(DplfConfig { schedule, ..DplfConfig::default() }), schedule)?;
    println!("{:>5} {:>9} {:>9} {:>9}", "class", "fixed", "dynamic", "tau");
    for c in 0..CLASSES {
        println!(
            "{c:>5} {:>8.1}% {:>8.1}% {:>9.4}",
            100.0 * fixed.fraction(c),
            100.0 * dynamic.fraction(c),
            state.effective_threshold(c)
        );
    }
    println!("global threshold {:.4} after {} iterations", state.global_threshold(), state.iteration());
    Ok(())
}
