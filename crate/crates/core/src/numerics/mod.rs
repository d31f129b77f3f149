//! Dense tensors, reverse-mode gradients, and the SGD optimizer.
//!
//! Only the operations the network needs are provided. Values are stored
//! row-major in [`Real`], which is `f64` unless the `single-precision`
//! feature is enabled.

mod gradcheck;
mod optim;
mod tape;

pub use gradcheck::{central_differences, finite_diff_check, GradCheckReport};
pub use optim::{clip_gradients, sgd_step, OptimizerState, SgdConfig};
pub use tape::{AdjointFault, Gradients, Tape, Var};

use crate::error::{Error, Result};

#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
    grad: Option<Vec<Real>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::domain("tensor", format!("zero extent in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn vector(data: Vec<Real>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor::vector(vec![value])
    }

    /// Build a matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", &[cols], &[bad.len()]));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    /// Turn on gradient tracking; the gradient buffer starts at zero.
    pub fn with_requires_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[Real]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [Real]> {
        self.grad.as_deref_mut()
    }

    /// Replace the gradient buffer. The tensor must track gradients.
    pub fn set_grad(&mut self, grad: &[Real]) -> Result<()> {
        match self.grad.as_mut() {
            Some(g) if g.len() == grad.len() => {
                g.copy_from_slice(grad);
                Ok(())
            }
            Some(g) => Err(Error::dim("set_grad", &[g.len()], &[grad.len()])),
            None => Err(Error::State("tensor does not require grad".into())),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Numerically stable softmax. Empty input is a domain error.
pub fn softmax(scores: &[Real]) -> Result<Vec<Real>> {
    if scores.is_empty() {
        return Err(Error::domain("softmax", "empty vector"));
    }
    Ok(softmax_unchecked(scores))
}

pub(crate) fn softmax_unchecked(scores: &[Real]) -> Vec<Real> {
    let max = scores.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Non-affine layer normalization with population variance.
pub fn layer_norm(v: &[Real], eps: Real) -> Result<Vec<Real>> {
    if v.len() < 2 {
        return Err(Error::domain(
            "layer_norm",
            format!("need at least 2 elements, got {}", v.len()),
        ));
    }
    Ok(layer_norm_unchecked(v, eps).0)
}

/// Returns the normalized vector and `1 / sqrt(var + eps)`.
pub(crate) fn layer_norm_unchecked(v: &[Real], eps: Real) -> (Vec<Real>, Real) {
    let m = v.len() as Real;
    let mean = v.iter().sum::<Real>() / m;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / m;
    let denom = (var + eps).sqrt();
    // Constant input at eps = 0: every centered entry is exactly zero.
    let inv_std = if denom > 0.0 { 1.0 / denom } else { 0.0 };
    (v.iter().map(|x| (x - mean) * inv_std).collect(), inv_std)
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: &[Real], label: usize) -> Result<Real> {
    if label >= logits.len() {
        return Err(Error::Index {
            op: "cross_entropy",
            index: label,
            size: logits.len(),
        });
    }
    let (top, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, Real::NEG_INFINITY), |acc, (i, l)| if l > acc.1 { (i, l) } else { acc });
    // log Σ exp(l − max) = log1p(Σ_{i≠top} exp(l_i − max)), exact for a dominant logit.
    let rest: Real = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &l)| (l - max).exp())
        .sum();
    Ok((max - logits[label]) + rest.ln_1p())
}
