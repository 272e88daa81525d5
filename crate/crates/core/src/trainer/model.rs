//! One-hidden-layer tanh classifier applied independently to every point.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl MlpShape {
    pub fn new(inputs: usize, hidden: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || outputs == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(Self {
            inputs,
            hidden,
            outputs,
        })
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.outputs * self.hidden + self.outputs
    }

    // Offsets of W1, b1, W2, b2 in the flat vector.
    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        [w1, b1, w2, b2]
    }
}

/// Flat parameter vector laid out as `W1 (hidden×inputs, row-major), b1,
/// W2 (outputs×hidden, row-major), b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: MlpShape,
    values: Vec<f64>,
}

/// Hidden activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Matrix,
}

impl ModelParams {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_values(shape: MlpShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::LengthMismatch {
                expected: shape.param_count(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, values })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: MlpShape, rng: &mut RandomStream) -> Self {
        let mut p = Self::zeros(shape);
        let [w1, b1, w2, b2] = shape.offsets();
        let a1 = (6.0 / (shape.inputs + shape.hidden) as f64).sqrt();
        let a2 = (6.0 / (shape.hidden + shape.outputs) as f64).sqrt();
        for v in &mut p.values[w1..b1] {
            *v = rng.uniform(-a1, a1);
        }
        for v in &mut p.values[w2..b2] {
            *v = rng.uniform(-a2, a2);
        }
        p
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.shape.inputs {
            return Err(Error::LengthMismatch {
                expected: self.shape.inputs,
                actual: features.cols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(features)?.0)
    }

    /// Class probabilities per point.
    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward(features)?.softmax_rows())
    }

    pub fn forward_cached(&self, features: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_features(features)?;
        let s = self.shape;
        let [w1, b1, w2, b2] = s.offsets();
        let v = &self.values;
        let n = features.rows();
        let mut hidden = Matrix::zeros(n, s.hidden);
        let mut logits = Matrix::zeros(n, s.outputs);
        for j in 0..n {
            let x = features.row(j);
            let h = hidden.row_mut(j);
            for (i, hi) in h.iter_mut().enumerate() {
                let w = &v[w1 + i * s.inputs..w1 + (i + 1) * s.inputs];
                let a: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + v[b1 + i];
                *hi = a.tanh();
            }
            let h = hidden.row(j);
            for (c, z) in logits.row_mut(j).iter_mut().enumerate() {
                let w = &v[w2 + c * s.hidden..w2 + (c + 1) * s.hidden];
                *z = w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + v[b2 + c];
            }
        }
        Ok((logits, ForwardCache { hidden }))
    }

    /// Gradient of a scalar loss with respect to the parameters, given its
    /// gradient with respect to the logits.
    pub fn backward(&self, features: &Matrix, cache: &ForwardCache, dlogits: &Matrix) -> Result<Vec<f64>> {
        self.check_features(features)?;
        let s = self.shape;
        if dlogits.rows() != features.rows() || dlogits.cols() != s.outputs {
            return Err(Error::invalid("logit gradient shape mismatch"));
        }
        let [w1, b1, w2, b2] = s.offsets();
        let v = &self.values;
        let mut g = vec![0.0; v.len()];
        let mut dh = vec![0.0; s.hidden];
        for j in 0..features.rows() {
            let x = features.row(j);
            let h = cache.hidden.row(j);
            let dz = dlogits.row(j);
            dh.iter_mut().for_each(|d| *d = 0.0);
            for c in 0..s.outputs {
                g[b2 + c] += dz[c];
                let row = w2 + c * s.hidden;
                for i in 0..s.hidden {
                    g[row + i] += dz[c] * h[i];
                    dh[i] += dz[c] * v[row + i];
                }
            }
            for i in 0..s.hidden {
                let da = dh[i] * (1.0 - h[i] * h[i]);
                g[b1 + i] += da;
                let row = w1 + i * s.inputs;
                for k in 0..s.inputs {
                    g[row + k] += da * x[k];
                }
            }
        }
        Ok(g)
    }
}
