//! Synthetic view sequences whose classes can differ only in view order.
//!
//! Each prototype group owns `|V|` distinct random unit vectors. A solo class
//! uses its group's vectors in generated order. A confusable pair shares one
//! group: class `a` keeps the generated order, class `b` swaps two
//! non-adjacent positions, so both classes hold the same rows but different
//! ordered 2-grams. Every sample is a uniformly random cyclic rotation of its
//! class sequence plus Gaussian noise, stored in single precision.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::rng::{set_seed, Generator};
use crate::vnn::ViewEmbeddingMatrix;

use super::manifest::{Manifest, ManifestRecord, Split};
use super::write_view_features;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub confusable_pairs: usize,
    pub views: usize,
    pub dim: usize,
    /// Samples generated per class; splits are assigned afterwards.
    pub per_class: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes == 0 || self.per_class == 0 {
            return bad(format!(
                "need at least one class and one sample per class, got {} x {}",
                self.classes, self.per_class
            ));
        }
        if self.views == 0 {
            return bad("need at least one view".into());
        }
        if self.dim < 2 {
            return bad(format!("feature width must be at least 2, got {}", self.dim));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("noise sigma must be finite and non-negative, got {}", self.sigma));
        }
        if self.confusable_pairs > 0 {
            if !self.classes.is_multiple_of(2) {
                return bad(format!("confusable pairs need an even class count, got {}", self.classes));
            }
            if 2 * self.confusable_pairs > self.classes {
                return bad(format!(
                    "{} confusable pairs need {} classes, have {}",
                    self.confusable_pairs,
                    2 * self.confusable_pairs,
                    self.classes
                ));
            }
            if self.views < 3 {
                return bad(format!(
                    "confusable pairs need at least 3 views to differ in order, got {}",
                    self.views
                ));
            }
        }
        Ok(())
    }

    fn class_label(&self, class: usize) -> String {
        if class < 2 * self.confusable_pairs {
            let side = if class.is_multiple_of(2) { 'a' } else { 'b' };
            format!("pair{}{side}", class / 2)
        } else {
            format!("solo{}", class - 2 * self.confusable_pairs)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub class_label: String,
    pub class_index: usize,
    pub views: ViewEmbeddingMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    /// Noise-free class sequences, indexed by class.
    pub class_sequences: Vec<ViewEmbeddingMatrix>,
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    /// Manifest with every sample tagged `train` and paths `<id>.vnf`.
    pub fn manifest(&self) -> Manifest {
        Manifest {
            records: self
                .samples
                .iter()
                .map(|s| ManifestRecord {
                    id: s.id.clone(),
                    class_label: s.class_label.clone(),
                    class_index: s.class_index,
                    path: format!("{}.vnf", s.id),
                    split: Split::Train,
                })
                .collect(),
        }
    }

    /// Write one view-feature file per sample into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        for s in &self.samples {
            write_view_features(dir.join(format!("{}.vnf", s.id)), &s.views)?;
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = set_seed(spec.seed);
    let v = spec.views;

    let mut class_sequences = Vec::with_capacity(spec.classes);
    for _ in 0..spec.confusable_pairs {
        let protos = distinct_unit_vectors(&mut rng, v, spec.dim);
        let order_b = swapped_order(v);
        debug_assert!(two_gram_multisets_differ(&order_b));
        let a = ViewEmbeddingMatrix::from_rows(&protos)?;
        let b = a.permute_rows(&order_b)?;
        class_sequences.push(a);
        class_sequences.push(b);
    }
    for _ in 2 * spec.confusable_pairs..spec.classes {
        let protos = distinct_unit_vectors(&mut rng, v, spec.dim);
        class_sequences.push(ViewEmbeddingMatrix::from_rows(&protos)?);
    }

    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, seq) in class_sequences.iter().enumerate() {
        let label = spec.class_label(class);
        for s in 0..spec.per_class {
            let shifted = seq.cyclic_shift(rng.below(v));
            let data = shifted
                .data()
                .iter()
                .map(|&x| {
                    let noisy = x as f64 + spec.sigma * rng.standard_normal();
                    noisy as f32 as Real
                })
                .collect();
            samples.push(SyntheticSample {
                id: format!("{label}-{s:04}"),
                class_label: label.clone(),
                class_index: class,
                views: ViewEmbeddingMatrix::new(v, spec.dim, data)?,
            });
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        class_sequences,
        samples,
    })
}

/// `count` normalized Gaussian vectors, redrawn until pairwise distinct.
fn distinct_unit_vectors(rng: &mut Generator, count: usize, dim: usize) -> Vec<Vec<Real>> {
    loop {
        let rows: Vec<Vec<f64>> = (0..count).map(|_| unit_vector(rng, dim)).collect();
        let distinct = (0..count).all(|i| {
            (i + 1..count).all(|j| {
                rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > 1e-6
            })
        });
        if distinct {
            return rows.into_iter().map(|r| r.into_iter().map(|x| x as Real).collect()).collect();
        }
    }
}

fn unit_vector(rng: &mut Generator, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Identity order with positions 0 and `|V|/2` swapped (0 and 1 when `|V| = 3`,
/// where every pair of positions is cyclically adjacent).
fn swapped_order(views: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..views).collect();
    let j = if views == 3 { 1 } else { views / 2 };
    order.swap(0, j);
    order
}

/// Whether the cyclic ordered 2-grams of `order` differ from those of the
/// identity order, as multisets of index pairs.
fn two_gram_multisets_differ(order: &[usize]) -> bool {
    let grams = |seq: &[usize]| {
        let mut g: Vec<(usize, usize)> =
            (0..seq.len()).map(|i| (seq[i], seq[(i + 1) % seq.len()])).collect();
        g.sort_unstable();
        g
    };
    let identity: Vec<usize> = (0..order.len()).collect();
    grams(order) != grams(&identity)
}
