//! Dynamic pseudo-label filtering.
//!
//! Teacher logits become a class-balanced set of reliable pseudo-labels in
//! four steps:
//!
//! 1. softmax → argmax pseudo-label and max-probability confidence;
//! 2. confidence is scaled by `exp(-alpha * d̃)` so near, dense points win;
//! 3. the lowest `bottom_fraction` of weighted confidences in each scan are
//!    marked unknown;
//! 4. a point of class `c` survives iff its weighted confidence is at least
//!    `min(τg, τcs(c))`, with `τg = μg + σg` over all points and
//!    `τcs(c) = max(μcs(c) − σcs(c), 0)` over points of class `c`.
//!
//! The means and standard deviations are exponential moving averages of
//! per-batch statistics. During warmup (`t <= warmup`) the momentum is
//! `1 / (t + 1)` and the update period is 1, which turns the average into a
//! running mean of the batches seen so far. Afterwards the configured momenta
//! and period apply.
//!
//! Statistics are taken over weighted confidences of points that survived
//! the bottom-fraction rejection. A class that has never been observed has
//! an infinite class threshold, so only `τg` applies to it.

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelSet, UNKNOWN};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-point teacher output for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    raw: Vec<f64>,
    weighted: Vec<f64>,
    pseudo_labels: Vec<usize>,
    num_classes: usize,
}

impl ConfidenceSet {
    /// Builds a set from explicit values; weighted starts equal to raw.
    pub fn new(raw: Vec<f64>, pseudo_labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if raw.len() != pseudo_labels.len() {
            return Err(Error::LengthMismatch {
                expected: raw.len(),
                actual: pseudo_labels.len(),
            });
        }
        if let Some(&c) = pseudo_labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::ClassOutOfRange {
                class: c as i64,
                num_classes,
            });
        }
        if raw.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::invalid("confidences must lie in (0, 1]"));
        }
        Ok(Self {
            weighted: raw.clone(),
            raw,
            pseudo_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn weighted(&self) -> &[f64] {
        &self.weighted
    }

    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    /// Sets `weighted = raw * exp(-alpha * d_norm)` pointwise.
    pub fn apply_distance_weights(&mut self, d_norm: &[f64], alpha: f64) -> Result<()> {
        if d_norm.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: d_norm.len(),
            });
        }
        for ((w, r), &d) in self.weighted.iter_mut().zip(&self.raw).zip(d_norm) {
            *w = r * distance_weight(d, alpha)?;
        }
        Ok(())
    }
}

/// Softmax per point; label is the argmax (lowest index on ties) and raw
/// confidence its probability.
pub fn infer_pseudo_labels(logits: &Matrix, num_classes: usize) -> Result<ConfidenceSet> {
    if logits.cols() != num_classes {
        return Err(Error::LengthMismatch {
            expected: num_classes,
            actual: logits.cols(),
        });
    }
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let probs = logits.softmax_rows();
    let mut raw = Vec::with_capacity(probs.rows());
    let mut labels = Vec::with_capacity(probs.rows());
    for row in probs.iter_rows() {
        let (arg, &p) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
        raw.push(p);
        labels.push(arg);
    }
    Ok(ConfidenceSet {
        weighted: raw.clone(),
        raw,
        pseudo_labels: labels,
        num_classes,
    })
}

/// `exp(-alpha * d_norm)`.
pub fn distance_weight(d_norm: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&d_norm) {
        return Err(Error::invalid(format!("normalised distance {d_norm} outside [0, 1]")));
    }
    Ok((-alpha * d_norm).exp())
}

/// Number of points rejected from a scan of `n` points.
pub fn bottom_count(n: usize, fraction: f64) -> usize {
    // Relative slack absorbs products such as 0.29 * 100 = 28.999999999999996.
    ((fraction * n as f64) * (1.0 + 1e-12)).floor() as usize
}

/// Marks the `floor(fraction * N)` lowest weighted confidences. Ties at the
/// cut reject the lower point index first.
pub fn reject_bottom_percentile(conf: &ConfidenceSet, fraction: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("bottom fraction {fraction} outside [0, 1)")));
    }
    let n = conf.len();
    let k = bottom_count(n, fraction);
    let mut rejected = vec![false; n];
    if k == 0 {
        return Ok(rejected);
    }
    let w = conf.weighted();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |&a: &usize, &b: &usize| w[a].total_cmp(&w[b]).then(a.cmp(&b));
    order.select_nth_unstable_by(k - 1, key);
    for &j in &order[..k] {
        rejected[j] = true;
    }
    Ok(rejected)
}

/// Mean and (population) standard deviation of a set of confidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }

    fn blend(self, prev: Option<Self>, lambda: f64) -> Self {
        match prev {
            None => self,
            Some(p) => Self {
                mean: lambda * self.mean + (1.0 - lambda) * p.mean,
                std: lambda * self.std + (1.0 - lambda) * p.std,
            },
        }
    }
}

/// Statistics of one iteration's batch. `None` marks a class with no points.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub global: Moments,
    pub class: Vec<Option<Moments>>,
}

/// Global and per-class moments over the non-rejected weighted confidences
/// of every scan in the batch.
pub fn batch_stats(batch: &[(&ConfidenceSet, &[bool])], num_classes: usize) -> Result<BatchStats> {
    let mut all = Vec::new();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    for (conf, rejected) in batch {
        if rejected.len() != conf.len() {
            return Err(Error::LengthMismatch {
                expected: conf.len(),
                actual: rejected.len(),
            });
        }
        for j in 0..conf.len() {
            if rejected[j] {
                continue;
            }
            let c = conf.pseudo_labels[j];
            if c >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: c as i64,
                    num_classes,
                });
            }
            all.push(conf.weighted[j]);
            per_class[c].push(conf.weighted[j]);
        }
    }
    let global = Moments::of(&all).ok_or(Error::Empty("batch has no confidences"))?;
    Ok(BatchStats {
        global,
        class: per_class.iter().map(|v| Moments::of(v)).collect(),
    })
}

/// Momentum and cadence of the two threshold averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaSchedule {
    pub lambda_global: f64,
    pub lambda_class: f64,
    /// Update period γ after warmup, in iterations.
    pub period: u64,
    /// Iterations `t <= warmup` use momentum `1/(t+1)` and period 1.
    pub warmup: u64,
}

impl Default for EmaSchedule {
    fn default() -> Self {
        Self {
            lambda_global: 0.1,
            lambda_class: 0.01,
            period: 500,
            warmup: 500,
        }
    }
}

impl EmaSchedule {
    /// SemanticPOSS-style schedule (shorter warmup, γ = 10).
    pub fn short() -> Self {
        Self {
            period: 10,
            warmup: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda_global) || !(0.0..1.0).contains(&self.lambda_class) {
            return Err(Error::invalid("EMA momenta must lie in [0, 1)"));
        }
        if self.period == 0 {
            return Err(Error::invalid("EMA period must be positive"));
        }
        Ok(())
    }

    /// `(λg, λcs, γ)` in effect at iteration `t`.
    pub fn at(&self, t: u64) -> (f64, f64, u64) {
        if t <= self.warmup {
            let l = 1.0 / (t as f64 + 1.0);
            (l, l, 1)
        } else {
            (self.lambda_global, self.lambda_class, self.period)
        }
    }
}

/// The moving statistics behind the global and class thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    global: Option<Moments>,
    class: Vec<Option<Moments>>,
    schedule: EmaSchedule,
    t: u64,
}

impl ThresholdState {
    pub fn new(num_classes: usize, schedule: EmaSchedule) -> Self {
        Self {
            global: None,
            class: vec![None; num_classes],
            schedule,
            t: 0,
        }
    }

    pub fn from_parts(
        global: Option<Moments>,
        class: Vec<Option<Moments>>,
        schedule: EmaSchedule,
        t: u64,
    ) -> Self {
        Self {
            global,
            class,
            schedule,
            t,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class.len()
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn schedule(&self) -> &EmaSchedule {
        &self.schedule
    }

    pub fn global(&self) -> Option<Moments> {
        self.global
    }

    pub fn class(&self, c: usize) -> Option<Moments> {
        self.class.get(c).copied().flatten()
    }

    /// `τg = μg + σg`; infinite before the first update.
    pub fn global_threshold(&self) -> f64 {
        self.global.map_or(f64::INFINITY, |m| m.mean + m.std)
    }

    /// `τcs(c) = max(μcs(c) − σcs(c), 0)`; infinite for unseen classes.
    pub fn class_threshold(&self, c: usize) -> f64 {
        self.class(c)
            .map_or(f64::INFINITY, |m| (m.mean - m.std).max(0.0))
    }

    /// Threshold actually applied to class `c`.
    pub fn effective_threshold(&self, c: usize) -> f64 {
        self.global_threshold().min(self.class_threshold(c))
    }

    /// Advances one iteration, folding `batch` in when `t` is a multiple of
    /// the period in effect. Classes absent from the batch keep their values.
    /// The first observation of any statistic replaces it outright.
    pub fn ema_update(&mut self, batch: &BatchStats) {
        let (lg, lcs, period) = self.schedule.at(self.t);
        if self.t % period == 0 {
            self.global = Some(batch.global.blend(self.global, lg));
            for (slot, b) in self.class.iter_mut().zip(&batch.class) {
                if let Some(b) = b {
                    *slot = Some(b.blend(*slot, lcs));
                }
            }
        }
        self.t += 1;
    }

    /// Advances the iteration counter without new statistics.
    pub fn skip(&mut self) {
        self.t += 1;
    }
}

/// Applies the min-threshold rule. Rejected points, and points below
/// `min(τg, τcs(c))`, become unknown.
pub fn filter(conf: &ConfidenceSet, rejected: &[bool], state: &ThresholdState) -> Result<LabelSet> {
    if rejected.len() != conf.len() {
        return Err(Error::LengthMismatch {
            expected: conf.len(),
            actual: rejected.len(),
        });
    }
    let k = state.num_classes();
    let mut out = Vec::with_capacity(conf.len());
    for j in 0..conf.len() {
        let c = conf.pseudo_labels[j];
        if c >= k {
            return Err(Error::ClassOutOfRange {
                class: c as i64,
                num_classes: k,
            });
        }
        let keep = !rejected[j] && conf.weighted[j] >= state.effective_threshold(c);
        out.push(if keep { c as i32 } else { UNKNOWN });
    }
    LabelSet::new(out, k)
}

/// Knobs of the dynamic filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DplfConfig {
    pub alpha: f64,
    pub bottom_fraction: f64,
    pub schedule: EmaSchedule,
}

impl Default for DplfConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            bottom_fraction: 0.01,
            schedule: EmaSchedule::default(),
        }
    }
}

/// Pseudo-label filtering strategy used by the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterMode {
    Dynamic(DplfConfig),
    /// Keep raw confidence `>= threshold`, no weighting or rejection.
    Fixed(f64),
}

/// Per-class point counts of one filtering pass, keyed by pseudo-label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Retention {
    pub total: Vec<u64>,
    pub retained: Vec<u64>,
    pub bottom_rejected: Vec<u64>,
}

impl Retention {
    pub fn new(num_classes: usize) -> Self {
        Self {
            total: vec![0; num_classes],
            retained: vec![0; num_classes],
            bottom_rejected: vec![0; num_classes],
        }
    }

    pub fn record(&mut self, conf: &ConfidenceSet, rejected: &[bool], kept: &LabelSet) {
        for j in 0..conf.len() {
            let c = conf.pseudo_labels[j];
            self.total[c] += 1;
            if rejected[j] {
                self.bottom_rejected[c] += 1;
            }
            if kept.as_slice()[j] >= 0 {
                self.retained[c] += 1;
            }
        }
    }

    pub fn fraction(&self, c: usize) -> f64 {
        if self.total[c] == 0 {
            0.0
        } else {
            self.retained[c] as f64 / self.total[c] as f64
        }
    }
}

/// Result of filtering one batch of scans.
#[derive(Debug, Clone)]
pub struct FilteredBatch {
    pub labels: Vec<LabelSet>,
    pub rejected: Vec<Vec<bool>>,
    pub retention: Retention,
}

/// One iteration of filtering over a batch.
///
/// For the dynamic mode the confidences are distance-weighted in place, the
/// bottom fraction rejected per scan, the state advanced with this batch's
/// statistics, and every scan then filtered against the updated state.
pub fn filter_batch(
    confs: &mut [ConfidenceSet],
    d_norms: &[Vec<f64>],
    state: &mut ThresholdState,
    mode: FilterMode,
) -> Result<FilteredBatch> {
    let k = state.num_classes();
    let mut retention = Retention::new(k);
    let mut labels = Vec::with_capacity(confs.len());
    let mut rejected_all = Vec::with_capacity(confs.len());
    match mode {
        FilterMode::Fixed(threshold) => {
            for conf in confs.iter() {
                let out: Vec<i32> = conf
                    .raw
                    .iter()
                    .zip(&conf.pseudo_labels)
                    .map(|(&s, &c)| if s >= threshold { c as i32 } else { UNKNOWN })
                    .collect();
                let out = LabelSet::new(out, k)?;
                let rejected = vec![false; conf.len()];
                retention.record(conf, &rejected, &out);
                labels.push(out);
                rejected_all.push(rejected);
            }
        }
        FilterMode::Dynamic(cfg) => {
            if d_norms.len() != confs.len() {
                return Err(Error::LengthMismatch {
                    expected: confs.len(),
                    actual: d_norms.len(),
                });
            }
            for (conf, d) in confs.iter_mut().zip(d_norms) {
                conf.apply_distance_weights(d, cfg.alpha)?;
                rejected_all.push(reject_bottom_percentile(conf, cfg.bottom_fraction)?);
            }
            let pairs: Vec<(&ConfidenceSet, &[bool])> = confs
                .iter()
                .zip(&rejected_all)
                .map(|(c, r)| (c, r.as_slice()))
                .collect();
            // An all-empty batch carries no statistics; the clock still advances.
            match batch_stats(&pairs, k) {
                Ok(stats) => state.ema_update(&stats),
                Err(Error::Empty(_)) => state.skip(),
                Err(e) => return Err(e),
            }
            for (conf, rejected) in confs.iter().zip(&rejected_all) {
                let out = filter(conf, rejected, state)?;
                retention.record(conf, rejected, &out);
                labels.push(out);
            }
        }
    }
    Ok(FilteredBatch {
        labels,
        rejected: rejected_all,
        retention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn conf(raw: &[f64], labels: &[usize], k: usize) -> ConfidenceSet {
        ConfidenceSet::new(raw.to_vec(), labels.to_vec(), k).unwrap()
    }

    #[test]
    fn uniform_logits_tie_to_lowest_index() {
        let c = infer_pseudo_labels(&Matrix::zeros(1, 3), 3).unwrap();
        assert_eq!(c.pseudo_labels(), &[0]);
        assert!((c.raw()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.weighted(), c.raw());
    }

    #[test]
    fn peaked_logits() {
        let c = infer_pseudo_labels(&Matrix::from_vec(1, 3, vec![10.0, 0.0, 0.0]).unwrap(), 3)
            .unwrap();
        // 1 / (1 + 2 e^-10)
        let expect = 1.0 / (1.0 + 2.0 * (-10.0f64).exp());
        assert_eq!(c.pseudo_labels(), &[0]);
        assert!((c.raw()[0] - expect).abs() < 1e-15);
        assert!((c.raw()[0] - 0.99991).abs() < 1e-5);
    }

    #[test]
    fn class_count_mismatch() {
        assert!(infer_pseudo_labels(&Matrix::zeros(2, 4), 3).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(
            row in prop::collection::vec(-20.0f64..20.0, 4),
            shift in -50.0f64..50.0,
        ) {
            let a = infer_pseudo_labels(&Matrix::from_vec(1, 4, row.clone()).unwrap(), 4).unwrap();
            let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
            let b = infer_pseudo_labels(&Matrix::from_vec(1, 4, shifted).unwrap(), 4).unwrap();
            prop_assert_eq!(a.pseudo_labels(), b.pseudo_labels());
            prop_assert!((a.raw()[0] - b.raw()[0]).abs() < 1e-12);
        }

        #[test]
        fn weight_monotone(d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0, alpha in 0.01f64..5.0) {
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assume!(lo < hi);
            prop_assert!(distance_weight(lo, alpha).unwrap() > distance_weight(hi, alpha).unwrap());
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(distance_weight(0.0, 3.0).unwrap(), 1.0);
        assert_eq!(distance_weight(0.7, 0.0).unwrap(), 1.0);
        assert!((distance_weight(1.0, 0.5).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!(distance_weight(0.5, -0.1).is_err());
        assert!(distance_weight(1.5, 0.5).is_err());
    }

    #[test]
    fn weighted_never_exceeds_raw() {
        let mut c = conf(&[0.9, 0.5, 1.0], &[0, 1, 2], 3);
        c.apply_distance_weights(&[0.0, 0.5, 1.0], 0.5).unwrap();
        for (w, r) in c.weighted().iter().zip(c.raw()) {
            assert!(w <= r && *w > 0.0);
        }
    }

    #[test]
    fn bottom_one_percent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let raw: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..1.0)).collect();
        let c = conf(&raw, &vec![0; 100], 1);
        let r = reject_bottom_percentile(&c, 0.01).unwrap();
        let min_idx = (0..100).min_by(|&a, &b| raw[a].total_cmp(&raw[b])).unwrap();
        assert_eq!(r.iter().filter(|&&x| x).count(), 1);
        assert!(r[min_idx]);

        let c50 = conf(&raw[..50], &vec![0; 50], 1);
        assert!(reject_bottom_percentile(&c50, 0.01).unwrap().iter().all(|&x| !x));
        assert!(reject_bottom_percentile(&c50, 1.0).is_err());
    }

    #[test]
    fn bottom_ties_reject_lower_index() {
        let c = conf(&[0.5, 0.2, 0.2, 0.2, 0.9], &[0; 5], 1);
        let r = reject_bottom_percentile(&c, 0.4).unwrap();
        assert_eq!(r, vec![false, true, true, false, false]);
    }

    #[test]
    fn bottom_matches_sort_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            // quantised values force ties
            let raw: Vec<f64> = (0..1000)
                .map(|_| (rng.random_range(1..200) as f64) / 200.0)
                .collect();
            let c = conf(&raw, &vec![0; 1000], 1);
            let frac = rng.random_range(0.0..0.2);
            let got = reject_bottom_percentile(&c, frac).unwrap();
            let mut idx: Vec<usize> = (0..1000).collect();
            idx.sort_by(|&a, &b| raw[a].partial_cmp(&raw[b]).unwrap().then(a.cmp(&b)));
            let k = (frac * 1000.0).floor() as usize;
            let mut expect = vec![false; 1000];
            for &i in &idx[..k] {
                expect[i] = true;
            }
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn bottom_count_floor() {
        assert_eq!(bottom_count(100, 0.29), 29);
        assert_eq!(bottom_count(50, 0.01), 0);
        assert_eq!(bottom_count(199, 0.01), 1);
    }

    fn state_with(g: (f64, f64), cls: Vec<Option<(f64, f64)>>) -> ThresholdState {
        ThresholdState::from_parts(
            Some(Moments { mean: g.0, std: g.1 }),
            cls.into_iter()
                .map(|c| c.map(|(mean, std)| Moments { mean, std }))
                .collect(),
            EmaSchedule::default(),
            1000,
        )
    }

    #[test]
    fn filter_takes_smaller_threshold() {
        // τg = 0.9, τcs = 0.6
        let s = state_with((0.8, 0.1), vec![Some((0.7, 0.1))]);
        let c = conf(&[0.7, 0.59], &[0, 0], 1);
        let out = filter(&c, &[false, false], &s).unwrap();
        assert_eq!(out.as_slice(), &[0, UNKNOWN]);
    }

    #[test]
    fn filter_boundary_inclusive_and_rejection() {
        let s = state_with((0.5, 0.25), vec![None, Some((0.5, 0.0))]);
        let c = conf(&[0.75, 0.74, 0.5, 0.99], &[0, 0, 1, 1], 2);
        let out = filter(&c, &[false, false, false, true], &s).unwrap();
        assert_eq!(out.as_slice(), &[0, UNKNOWN, 1, UNKNOWN]);
    }

    #[test]
    fn filter_class_out_of_range() {
        let s = ThresholdState::new(2, EmaSchedule::default());
        let c = conf(&[0.5], &[2], 3);
        assert!(matches!(filter(&c, &[false], &s), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn class_threshold_clamped_at_zero() {
        let s = state_with((0.5, 0.1), vec![Some((0.2, 0.3))]);
        assert_eq!(s.class_threshold(0), 0.0);
    }

    #[test]
    fn stats_examples() {
        let c = conf(&[0.5, 0.5, 0.5], &[0, 0, 0], 2);
        let none = [false; 3];
        let b = batch_stats(&[(&c, &none)], 2).unwrap();
        assert_eq!(b.global, Moments { mean: 0.5, std: 0.0 });
        assert_eq!(b.class[1], None);

        let c = conf(&[0.4, 0.8], &[0, 0], 1);
        let b = batch_stats(&[(&c, &[false, false])], 1).unwrap();
        assert!((b.global.mean - 0.6).abs() < 1e-15);
        assert!((b.global.std - 0.2).abs() < 1e-15);

        let c = conf(&[0.4, 0.8], &[0, 0], 1);
        let b = batch_stats(&[(&c, &[true, false])], 1).unwrap();
        assert_eq!(b.global.mean, 0.8);

        let empty = conf(&[], &[], 1);
        assert!(batch_stats(&[(&empty, &[])], 1).is_err());
    }

    #[test]
    fn ema_examples() {
        let batch = BatchStats {
            global: Moments { mean: 0.7, std: 0.3 },
            class: vec![None, Some(Moments { mean: 0.9, std: 0.1 })],
        };
        let sched = EmaSchedule {
            lambda_global: 0.1,
            lambda_class: 0.01,
            period: 1,
            warmup: 5,
        };
        let prev = Some(Moments { mean: 0.5, std: 0.1 });
        let mut s = ThresholdState::from_parts(prev, vec![prev, prev], sched, 10);
        s.ema_update(&batch);
        let g = s.global().unwrap();
        assert!((g.mean - 0.52).abs() < 1e-15);
        assert!((g.std - 0.12).abs() < 1e-15);
        assert_eq!(s.class(0), prev);
        assert!((s.class(1).unwrap().mean - (0.01 * 0.9 + 0.99 * 0.5)).abs() < 1e-15);
        assert_eq!(s.iteration(), 11);

        let frozen = EmaSchedule {
            lambda_global: 0.0,
            lambda_class: 0.0,
            ..sched
        };
        let mut s = ThresholdState::from_parts(prev, vec![prev, prev], frozen, 10);
        let before = s.clone();
        s.ema_update(&batch);
        assert_eq!(s.global(), before.global());
        assert_eq!(s.class(1), before.class(1));

        let mut s = ThresholdState::new(2, sched);
        s.ema_update(&batch);
        assert_eq!(s.global(), Some(batch.global));
        assert_eq!(s.class(1), batch.class[1]);
        assert_eq!(s.class(0), None);
    }

    #[test]
    fn warmup_is_running_mean() {
        let mut s = ThresholdState::new(1, EmaSchedule::default());
        let means = [0.2, 0.4, 0.9, 0.5];
        for m in means {
            s.ema_update(&BatchStats {
                global: Moments { mean: m, std: 0.0 },
                class: vec![Some(Moments { mean: m, std: 0.0 })],
            });
        }
        let expect = means.iter().sum::<f64>() / 4.0;
        assert!((s.global().unwrap().mean - expect).abs() < 1e-15);
    }

    #[test]
    fn period_gates_updates() {
        let sched = EmaSchedule {
            lambda_global: 0.5,
            lambda_class: 0.5,
            period: 3,
            warmup: 0,
        };
        let first = Moments { mean: 0.2, std: 0.0 };
        let mut s = ThresholdState::from_parts(Some(first), vec![None], sched, 1);
        let b = BatchStats {
            global: Moments { mean: 1.0, std: 0.0 },
            class: vec![None],
        };
        s.ema_update(&b); // t = 1
        s.ema_update(&b); // t = 2
        assert_eq!(s.global(), Some(first));
        s.ema_update(&b); // t = 3
        assert!((s.global().unwrap().mean - 0.6).abs() < 1e-15);
    }

    #[test]
    fn class_relief_and_global_strictness() {
        let a = state_with((0.5, 0.1), vec![Some((0.7, 0.05)), Some((0.7, 0.2))]);
        assert!(a.class_threshold(1) < a.class_threshold(0));
        let b = state_with((0.6, 0.1), vec![]);
        assert!(b.global_threshold() > a.global_threshold());
    }

    proptest! {
        #[test]
        fn raising_thresholds_never_grows_retained_set(
            vals in prop::collection::vec((0.01f64..1.0, 0usize..3), 1..100),
            g in (0.0f64..1.0, 0.0f64..0.3),
            cls in prop::collection::vec((0.0f64..1.0, 0.0f64..0.3), 3),
            bump in 0.0f64..0.5,
        ) {
            let raw: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let lab: Vec<usize> = vals.iter().map(|v| v.1).collect();
            let c = conf(&raw, &lab, 3);
            let rej = vec![false; raw.len()];
            let lo = state_with(g, cls.iter().map(|&x| Some(x)).collect());
            let hi = state_with(
                (g.0 + bump, g.1),
                cls.iter().map(|&(m, s)| Some((m + bump, s))).collect(),
            );
            let a = filter(&c, &rej, &lo).unwrap();
            let b = filter(&c, &rej, &hi).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!(!(*x == UNKNOWN && *y != UNKNOWN));
            }
        }
    }

    #[test]
    fn fixed_mode_uses_raw() {
        let mut confs = vec![conf(&[0.9, 0.84, 0.86], &[0, 1, 1], 2)];
        let mut s = ThresholdState::new(2, EmaSchedule::default());
        let out = filter_batch(&mut confs, &[], &mut s, FilterMode::Fixed(0.85)).unwrap();
        assert_eq!(out.labels[0].as_slice(), &[0, UNKNOWN, 1]);
        assert_eq!(s.iteration(), 0);
        assert_eq!(out.retention.total, vec![1, 2]);
        assert_eq!(out.retention.retained, vec![1, 1]);
    }

    #[test]
    fn dynamic_batch_first_iteration_uses_batch_stats() {
        let mut confs = vec![conf(&[0.9, 0.8, 0.3, 0.6], &[0, 0, 1, 1], 2)];
        let d = vec![vec![0.0; 4]];
        let mut s = ThresholdState::new(2, EmaSchedule::default());
        let cfg = DplfConfig::default();
        let out = filter_batch(&mut confs, &d, &mut s, FilterMode::Dynamic(cfg)).unwrap();
        assert_eq!(s.iteration(), 1);
        let g = Moments::of(&[0.9, 0.8, 0.3, 0.6]).unwrap();
        assert_eq!(s.global(), Some(g));
        // class 1: mean .45, std .15 -> τcs .3; class 0: mean .85, std .05 -> .8
        assert_eq!(out.labels[0].as_slice(), &[0, 0, 1, 1]);
    }
}
