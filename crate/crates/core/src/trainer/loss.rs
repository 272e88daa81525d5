//! Soft Dice and masked cross-entropy with analytic gradients, and the
//! weighted objective over a set of mixed scans.
//!
//! Points labelled −1 contribute to no sum. A scan with no labelled point
//! has loss 0 and zero gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::LabelSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::model::ModelParams;

fn check(probs: &Matrix, labels: &LabelSet) -> Result<()> {
    labels.check_len(probs.rows())?;
    if labels.num_classes() != probs.cols() {
        return Err(Error::LengthMismatch {
            expected: probs.cols(),
            actual: labels.num_classes(),
        });
    }
    Ok(())
}

/// `1 − mean_c 2·Σp·y / (Σp² + Σy²)` over classes present in `labels`, and
/// its gradient with respect to `probs`.
pub fn soft_dice_loss(probs: &Matrix, labels: &LabelSet) -> Result<(f64, Matrix)> {
    check(probs, labels)?;
    let c = probs.cols();
    let mut inter = vec![0.0; c];
    let mut p_sq = vec![0.0; c];
    let mut y_sum = vec![0.0; c];
    for (j, row) in probs.iter_rows().enumerate() {
        let Some(y) = labels.get(j) else { continue };
        for k in 0..c {
            p_sq[k] += row[k] * row[k];
        }
        inter[y] += row[y];
        y_sum[y] += 1.0;
    }
    let present: Vec<usize> = (0..c).filter(|&k| y_sum[k] > 0.0).collect();
    let mut grad = Matrix::zeros(probs.rows(), c);
    if present.is_empty() {
        return Ok((0.0, grad));
    }
    let m = present.len() as f64;
    let mut dice_sum = 0.0;
    for &k in &present {
        dice_sum += 2.0 * inter[k] / (p_sq[k] + y_sum[k]);
    }
    for j in 0..probs.rows() {
        let Some(y) = labels.get(j) else { continue };
        for &k in &present {
            let den = p_sq[k] + y_sum[k];
            let p = probs.get(j, k);
            let yk = if y == k { 1.0 } else { 0.0 };
            let d = 2.0 * yk / den - 4.0 * inter[k] * p / (den * den);
            grad.set(j, k, -d / m);
        }
    }
    Ok((1.0 - dice_sum / m, grad))
}

/// Mean over labelled points of `−ln p_{j,y_j}`, and its gradient.
pub fn cross_entropy_loss(probs: &Matrix, labels: &LabelSet) -> Result<(f64, Matrix)> {
    check(probs, labels)?;
    let n = labels.as_slice().iter().filter(|&&l| l >= 0).count();
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let n = n as f64;
    let mut loss = 0.0;
    for j in 0..probs.rows() {
        let Some(y) = labels.get(j) else { continue };
        let p = probs.get(j, y).max(f64::MIN_POSITIVE);
        loss -= p.ln();
        grad.set(j, y, -1.0 / (n * p));
    }
    Ok((loss / n, grad))
}

/// Pulls a gradient with respect to softmax outputs back to the logits.
pub fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for j in 0..probs.rows() {
        let p = probs.row(j);
        let g = dprobs.row(j);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (k, o) in out.row_mut(j).iter_mut().enumerate() {
            *o = p[k] * (g[k] - dot);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub seg: f64,
    pub dmc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { seg: 1.0, dmc: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.seg >= 0.0 && self.dmc >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Loss terms and parameter gradient of [`overall_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub seg: f64,
    pub dmc: f64,
    pub grad: Vec<f64>,
}

fn scan_objective(
    features: &Matrix,
    labels: &LabelSet,
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<(f64, f64, Vec<f64>)> {
    let (logits, cache) = params.forward_cached(features)?;
    let probs = logits.softmax_rows();
    let mut dprobs = Matrix::zeros(probs.rows(), probs.cols());
    let (mut seg, mut dmc) = (0.0, 0.0);
    if weights.seg != 0.0 {
        let (l, g) = soft_dice_loss(&probs, labels)?;
        seg = l;
        for (d, gv) in dprobs.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *d += weights.seg * gv;
        }
    }
    if weights.dmc != 0.0 {
        let (l, g) = cross_entropy_loss(&probs, labels)?;
        dmc = l;
        for (d, gv) in dprobs.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *d += weights.dmc * gv;
        }
    }
    let dlogits = softmax_backward(&probs, &dprobs);
    Ok((seg, dmc, params.backward(features, &cache, &dlogits)?))
}

/// `Σ_m w_seg·L_SD + w_dmc·L_CE` over the given scans, with the gradient
/// back-propagated through the classifier. A zero weight skips its term.
pub fn overall_loss(
    scans: &[(&Matrix, &LabelSet)],
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<Objective> {
    weights.validate()?;
    // Scans are evaluated in parallel and reduced in input order, so the
    // result does not depend on the thread count.
    let parts = scans
        .par_iter()
        .map(|&(features, labels)| scan_objective(features, labels, params, weights))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Objective {
        total: 0.0,
        seg: 0.0,
        dmc: 0.0,
        grad: vec![0.0; params.len()],
    };
    for (seg, dmc, grad) in parts {
        out.seg += seg;
        out.dmc += dmc;
        for (o, g) in out.grad.iter_mut().zip(grad) {
            *o += g;
        }
    }
    out.total = weights.seg * out.seg + weights.dmc * out.dmc;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::UNKNOWN;

    fn m<R: AsRef<[f64]>>(rows: &[R]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.as_ref().to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = LabelSet::new(vec![0, 1], 2).unwrap();
        assert_eq!(soft_dice_loss(&p, &y).unwrap().0, 0.0);
        assert_eq!(cross_entropy_loss(&p, &y).unwrap().0, 0.0);
    }

    #[test]
    fn uniform_two_class_dice_is_one_third() {
        let p = m(&[[0.5, 0.5]; 4]);
        let y = LabelSet::new(vec![0, 0, 1, 1], 2).unwrap();
        let (l, _) = soft_dice_loss(&p, &y).unwrap();
        assert!((l - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_cross_entropy_is_ln_c() {
        let p = m(&[[0.25; 4]; 3]);
        let y = LabelSet::new(vec![0, 3, 2], 4).unwrap();
        assert!((cross_entropy_loss(&p, &y).unwrap().0 - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fully_masked_is_zero() {
        let p = m(&[&[0.3, 0.7]]);
        let y = LabelSet::unknown(1, 2);
        for f in [soft_dice_loss, cross_entropy_loss] {
            let (l, g) = f(&p, &y).unwrap();
            assert_eq!(l, 0.0);
            assert!(g.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn masked_points_change_nothing() {
        let p = m(&[&[0.2, 0.8], &[0.6, 0.4]]);
        let y = LabelSet::new(vec![1, 0], 2).unwrap();
        let p2 = m(&[&[0.2, 0.8], &[0.6, 0.4], &[0.9, 0.1], &[0.5, 0.5]]);
        let y2 = LabelSet::new(vec![1, 0, UNKNOWN, UNKNOWN], 2).unwrap();
        for f in [soft_dice_loss, cross_entropy_loss] {
            assert_eq!(f(&p, &y).unwrap().0, f(&p2, &y2).unwrap().0);
        }
    }

    #[test]
    fn softmax_backward_matches_jacobian() {
        let p = m(&[&[0.2, 0.3, 0.5]]);
        let g = m(&[&[1.0, -2.0, 0.5]]);
        let out = softmax_backward(&p, &g);
        for k in 0..3 {
            let expect: f64 = (0..3)
                .map(|i| {
                    let jac = if i == k { p.get(0, i) * (1.0 - p.get(0, k)) } else { -p.get(0, i) * p.get(0, k) };
                    g.get(0, i) * jac
                })
                .sum();
            assert!((out.get(0, k) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = m(&[&[0.5, 0.5]]);
        assert!(soft_dice_loss(&p, &LabelSet::new(vec![0, 1], 2).unwrap()).is_err());
        assert!(cross_entropy_loss(&p, &LabelSet::new(vec![0], 3).unwrap()).is_err());
    }

    fn small_problem() -> (Matrix, LabelSet, ModelParams) {
        use crate::rng::RandomStream;
        use crate::trainer::model::MlpShape;
        let mut rng = RandomStream::new(3, 0);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let labels = LabelSet::new((0..12).map(|i| if i == 5 { UNKNOWN } else { i % 3 }).collect(), 3).unwrap();
        let params = ModelParams::init(MlpShape::new(4, 5, 3).unwrap(), &mut rng);
        (Matrix::from_rows(&rows).unwrap(), labels, params)
    }

    #[test]
    fn zero_weight_drops_its_term() {
        let (x, y, params) = small_problem();
        let scans = [(&x, &y)];
        let both = overall_loss(&scans, &params, &LossWeights::default()).unwrap();
        let seg = overall_loss(&scans, &params, &LossWeights { seg: 1.0, dmc: 0.0 }).unwrap();
        let dmc = overall_loss(&scans, &params, &LossWeights { seg: 0.0, dmc: 1.0 }).unwrap();
        assert_eq!(seg.total, both.seg);
        assert_eq!(dmc.total, both.dmc);
        assert_eq!(seg.dmc, 0.0);
        for ((b, s), d) in both.grad.iter().zip(&seg.grad).zip(&dmc.grad) {
            assert!((b - s - d).abs() < 1e-14);
        }
        let none = overall_loss(&scans, &params, &LossWeights { seg: 0.0, dmc: 0.0 }).unwrap();
        assert_eq!(none.total, 0.0);
        assert!(none.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubled_weights_double_loss_and_gradient() {
        let (x, y, params) = small_problem();
        let scans = [(&x, &y), (&x, &y)];
        let one = overall_loss(&scans, &params, &LossWeights { seg: 0.7, dmc: 1.3 }).unwrap();
        let two = overall_loss(&scans, &params, &LossWeights { seg: 1.4, dmc: 2.6 }).unwrap();
        assert!((two.total - 2.0 * one.total).abs() < 1e-12);
        for (a, b) in one.grad.iter().zip(&two.grad) {
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
        assert!(overall_loss(&scans, &params, &LossWeights { seg: -1.0, dmc: 1.0 }).is_err());
    }
}
