//! The view n-gram network head.
//!
//! Per branch, an n-gram learning unit turns the `|V| × D` view matrix into
//! `|V| − n + 1` gram features of width `D′` (a window-flatten followed by a
//! dense projection, identical to a `D′ × D × n × 1` convolution). The grams
//! are pooled by a parameter-free attention step: columnwise max `g_p`,
//! scores `G_j · g_p / √D′`, softmax weights, weighted sum `g_a`, then
//! `layer_norm(g_a + g_p)`. Branch outputs are concatenated and passed through
//! two fully connected layers; the first layer's (post-ReLU) output is the
//! shape descriptor.

mod forward;
mod params;

pub use forward::{
    attention_aggregate, attention_scores, branch_forward, extract_descriptor, forward_on_tape,
    multi_scale_forward, nglu_forward, row_max_pool, ForwardOutput,
};
pub use params::{init_parameters, Model, ModelParameters};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Width of the shape descriptor (the first head layer's output).
pub const DESCRIPTOR_DIM: usize = 512;

/// Layer-norm epsilon used by the attention aggregator.
pub const LAYER_NORM_EPS: Real = 1e-5;

/// Per-shape view features, one row per view in rendering order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEmbeddingMatrix {
    views: usize,
    dim: usize,
    data: Vec<Real>,
}

impl ViewEmbeddingMatrix {
    pub fn new(views: usize, dim: usize, data: Vec<Real>) -> Result<Self> {
        if views == 0 || dim == 0 {
            return Err(Error::Data(format!(
                "view matrix needs at least one view and one feature, got {views} x {dim}"
            )));
        }
        if data.len() != views * dim {
            return Err(Error::dim("view matrix", &[views, dim], &[data.len()]));
        }
        Ok(ViewEmbeddingMatrix { views, dim, data })
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::dim("view matrix", &[dim], &[bad.len()]));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i` of the result is row `order[i]` of `self`.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.views];
        if order.len() != self.views
            || order.iter().any(|&i| i >= self.views || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::domain("permute_rows", format!("{order:?} is not a permutation")));
        }
        let data = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(self.views, self.dim, data)
    }

    /// Row `i` of the result is row `(i + shift) mod |V|` of `self`.
    pub fn cyclic_shift(&self, shift: usize) -> Self {
        let order: Vec<usize> = (0..self.views).map(|i| (i + shift) % self.views).collect();
        self.permute_rows(&order).expect("rotation is a permutation")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.views, self.dim], self.data.clone()).expect("non-empty matrix")
    }
}

/// One n-gram branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub n: usize,
    pub d_prime: usize,
    /// Wrap windows around the end of the view sequence, giving `|V|` grams.
    #[serde(default)]
    pub circular: bool,
    /// ReLU after the n-gram projection.
    #[serde(default = "default_true")]
    pub post_conv_activation: bool,
}

fn default_true() -> bool {
    true
}

impl BranchConfig {
    pub fn new(n: usize, d_prime: usize) -> Self {
        BranchConfig {
            n,
            d_prime,
            circular: false,
            post_conv_activation: true,
        }
    }

    pub fn circular(mut self, circular: bool) -> Self {
        self.circular = circular;
        self
    }

    pub fn post_conv_activation(mut self, on: bool) -> Self {
        self.post_conv_activation = on;
        self
    }

    /// Number of gram rows produced for `views` input views.
    pub fn gram_count(&self, views: usize) -> Result<usize> {
        if self.circular {
            return Ok(views);
        }
        if views < self.n {
            return Err(Error::Config(format!(
                "{views} views cannot hold an n-gram of size {}",
                self.n
            )));
        }
        Ok(views - self.n + 1)
    }
}

/// How a branch pools its gram features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Max pool, attention-weighted sum, residual, layer norm.
    #[default]
    Attention,
    /// Columnwise max only (`g_p`), the ablation baseline.
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-view feature width `D`.
    pub input_dim: usize,
    pub num_classes: usize,
    pub branches: Vec<BranchConfig>,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// ReLU between the two head layers.
    #[serde(default = "default_true")]
    pub head_activation: bool,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize, branches: Vec<BranchConfig>) -> Self {
        ModelConfig {
            input_dim,
            num_classes,
            branches,
            aggregation: Aggregation::Attention,
            head_activation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Config("at least one n-gram branch is required".into()));
        }
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "input dim and class count must be positive, got D={} C={}",
                self.input_dim, self.num_classes
            )));
        }
        for b in &self.branches {
            if b.n == 0 || b.d_prime == 0 {
                return Err(Error::Config(format!(
                    "branch needs n >= 1 and d_prime >= 1, got n={} d_prime={}",
                    b.n, b.d_prime
                )));
            }
            if self.aggregation == Aggregation::Attention && b.d_prime < 2 {
                return Err(Error::Config(format!(
                    "attention layer norm needs d_prime >= 2, got {}",
                    b.d_prime
                )));
            }
        }
        Ok(())
    }

    /// Total width of the concatenated branch outputs.
    pub fn fused_dim(&self) -> usize {
        self.branches.iter().map(|b| b.d_prime).sum()
    }

    /// Smallest `|V|` every branch accepts.
    pub fn min_views(&self) -> usize {
        self.branches
            .iter()
            .map(|b| if b.circular { 1 } else { b.n })
            .max()
            .unwrap_or(1)
    }

    /// Learnable scalar count. The aggregator contributes nothing.
    pub fn parameter_count(&self) -> usize {
        let conv: usize = self
            .branches
            .iter()
            .map(|b| b.d_prime * b.n * self.input_dim + b.d_prime)
            .sum();
        conv + DESCRIPTOR_DIM * self.fused_dim()
            + DESCRIPTOR_DIM
            + self.num_classes * DESCRIPTOR_DIM
            + self.num_classes
    }
}

/// Gram features `G`, one row per n-gram.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl GramFeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("gram matrix", &[rows, cols], &[data.len()]));
        }
        Ok(GramFeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("gram matrix", &[cols], &[bad.len()]));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn row(&self, j: usize) -> &[Real] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }
}

/// The retrieval embedding of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDescriptor(pub Vec<Real>);

impl ShapeDescriptor {
    pub fn as_slice(&self) -> &[Real] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_count_follows_window_rule() {
        for v in 1..15 {
            for n in 1..=v {
                assert_eq!(BranchConfig::new(n, 4).gram_count(v).unwrap(), v - n + 1);
                assert_eq!(BranchConfig::new(n, 4).circular(true).gram_count(v).unwrap(), v);
            }
            assert!(matches!(
                BranchConfig::new(v + 1, 4).gram_count(v),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn parameter_count_formula() {
        let cfg = ModelConfig::new(
            32,
            4,
            vec![BranchConfig::new(3, 8), BranchConfig::new(5, 8)],
        );
        let expected = (8 * 3 * 32 + 8) + (8 * 5 * 32 + 8) + 512 * 16 + 512 + 4 * 512 + 4;
        assert_eq!(cfg.parameter_count(), expected);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(8, 3, vec![]).validate().is_err());
        assert!(ModelConfig::new(8, 3, vec![BranchConfig::new(0, 4)]).validate().is_err());
        assert!(ModelConfig::new(8, 3, vec![BranchConfig::new(2, 1)]).validate().is_err());
        let mut maxpool = ModelConfig::new(8, 3, vec![BranchConfig::new(2, 1)]);
        maxpool.aggregation = Aggregation::MaxPool;
        assert!(maxpool.validate().is_ok());
    }

    #[test]
    fn permutation_helpers() {
        let f = ViewEmbeddingMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(f.cyclic_shift(1).data(), &[2.0, 3.0, 1.0]);
        assert_eq!(f.permute_rows(&[2, 0, 1]).unwrap().data(), &[3.0, 1.0, 2.0]);
        assert!(f.permute_rows(&[0, 0, 1]).is_err());
    }
}
