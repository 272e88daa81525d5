//! Confusion-matrix IoU and mIoU, in percent.

use crate::cloud::LabelSet;
use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions. Points with truth −1 are
/// skipped; a prediction of −1 counts as a miss for the true class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    unpredicted: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// IoU per class in percent; `None` for classes absent from the truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in the truth; 0 when none is.
    pub miou: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            unpredicted: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, pred: &LabelSet, truth: &LabelSet) -> Result<()> {
        truth.check_len(pred.len())?;
        if pred.num_classes() != self.classes || truth.num_classes() != self.classes {
            return Err(Error::invalid("label sets disagree on the class count"));
        }
        for j in 0..truth.len() {
            let Some(t) = truth.get(j) else { continue };
            match pred.get(j) {
                Some(p) => self.counts[t * self.classes + p] += 1,
                None => self.unpredicted[t] += 1,
            }
        }
        Ok(())
    }

    pub fn report(&self) -> IouReport {
        let c = self.classes;
        let mut per_class = vec![None; c];
        let mut sum = 0.0;
        let mut present = 0usize;
        for k in 0..c {
            let row: u64 = (0..c).map(|p| self.get(k, p)).sum::<u64>() + self.unpredicted[k];
            if row == 0 {
                continue;
            }
            let tp = self.get(k, k);
            let fp: u64 = (0..c).filter(|&t| t != k).map(|t| self.get(t, k)).sum();
            let fn_ = row - tp;
            let iou = 100.0 * tp as f64 / (tp + fp + fn_) as f64;
            per_class[k] = Some(iou);
            sum += iou;
            present += 1;
        }
        IouReport {
            per_class,
            miou: if present == 0 { 0.0 } else { sum / present as f64 },
        }
    }
}

pub fn iou(pred: &LabelSet, truth: &LabelSet) -> Result<IouReport> {
    let mut cm = ConfusionMatrix::new(truth.num_classes());
    cm.add(pred, truth)?;
    Ok(cm.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::UNKNOWN;

    #[test]
    fn perfect_prediction() {
        let y = LabelSet::new(vec![0, 1, 2, 1], 3).unwrap();
        let r = iou(&y, &y).unwrap();
        assert_eq!(r.miou, 100.0);
        assert_eq!(r.per_class, vec![Some(100.0); 3]);
    }

    #[test]
    fn disjoint_prediction() {
        let t = LabelSet::new(vec![0, 0], 2).unwrap();
        let p = LabelSet::new(vec![1, 1], 2).unwrap();
        let r = iou(&p, &t).unwrap();
        assert_eq!(r.per_class, vec![Some(0.0), None]);
        assert_eq!(r.miou, 0.0);
    }

    #[test]
    fn masking_and_hand_example() {
        let t = LabelSet::new(vec![0, 0, 1, 1, UNKNOWN], 3).unwrap();
        let p = LabelSet::new(vec![0, 1, 1, UNKNOWN, 2], 3).unwrap();
        let r = iou(&p, &t).unwrap();
        // class 0: tp 1, fn 1 → 50; class 1: tp 1, fp 1, fn 1 → 33.3
        assert_eq!(r.per_class[0], Some(50.0));
        assert!((r.per_class[1].unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[2], None);
    }

    #[test]
    fn length_mismatch() {
        let t = LabelSet::new(vec![0], 2).unwrap();
        let p = LabelSet::new(vec![0, 1], 2).unwrap();
        assert!(iou(&p, &t).is_err());
    }

    proptest::proptest! {
        #[test]
        fn iou_matches_set_definition(
            pairs in proptest::collection::vec((-1i32..4, -1i32..4), 1..200),
        ) {
            let (p, t): (Vec<i32>, Vec<i32>) = pairs.into_iter().unzip();
            let rep = iou(&LabelSet::new(p.clone(), 4).unwrap(), &LabelSet::new(t.clone(), 4).unwrap()).unwrap();
            let mut present = Vec::new();
            for k in 0..4i32 {
                let valid = |j: &usize| t[*j] >= 0;
                let inter = (0..t.len()).filter(valid).filter(|&j| p[j] == k && t[j] == k).count();
                let union = (0..t.len()).filter(valid).filter(|&j| p[j] == k || t[j] == k).count();
                if !t.contains(&k) {
                    proptest::prop_assert_eq!(rep.per_class[k as usize], None);
                    continue;
                }
                let expect = 100.0 * inter as f64 / union as f64;
                proptest::prop_assert!((rep.per_class[k as usize].unwrap() - expect).abs() < 1e-12);
                present.push(expect);
            }
            let mean = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
            proptest::prop_assert!((rep.miou - mean).abs() < 1e-12);
            proptest::prop_assert!((0.0..=100.0).contains(&rep.miou));
        }
    }
}
