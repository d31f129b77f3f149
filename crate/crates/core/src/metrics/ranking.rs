//! Descriptor sets and gallery ranking.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Cosine,
    /// Ranked by ascending Euclidean distance; scores are negated distances.
    Euclidean,
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "euclidean" => Ok(Similarity::Euclidean),
            other => Err(Error::Config(format!("unknown similarity {other:?}"))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Similarity::Cosine => "cosine",
            Similarity::Euclidean => "euclidean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorEntry {
    pub id: String,
    pub class: String,
    /// Finer label used only by graded relevance.
    pub subclass: Option<String>,
    pub descriptor: Vec<Real>,
}

impl DescriptorEntry {
    pub fn new(id: impl Into<String>, class: impl Into<String>, descriptor: Vec<Real>) -> Self {
        DescriptorEntry {
            id: id.into(),
            class: class.into(),
            subclass: None,
            descriptor,
        }
    }
}

/// Labelled descriptors with unique ids and one shared width.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    entries: Vec<DescriptorEntry>,
    dim: usize,
}

impl DescriptorSet {
    pub fn new(entries: Vec<DescriptorEntry>) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.descriptor.len());
        let mut ids = HashSet::new();
        for e in &entries {
            if e.descriptor.len() != dim {
                return Err(Error::dim("descriptor set", &[dim], &[e.descriptor.len()]));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate descriptor id {}", e.id)));
            }
        }
        Ok(DescriptorSet { entries, dim })
    }

    pub fn entries(&self) -> &[DescriptorEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A query's gallery ordering, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    /// Positions into the gallery's entries.
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub scores: Vec<Real>,
}

/// Scale to unit Euclidean norm; a zero vector is a numeric error naming `id`.
pub fn normalize_l2(id: &str, v: &[Real]) -> Result<Vec<Real>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Numeric(format!("descriptor {id} has norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn norm(v: &[Real]) -> Real {
    v.iter().map(|x| x * x).sum::<Real>().sqrt()
}

/// Order `gallery` by similarity to `query`, dropping the entry whose id is
/// `query_id`. Ties go to the smaller id.
pub fn rank_gallery(
    query_id: &str,
    query: &[Real],
    gallery: &DescriptorSet,
    similarity: Similarity,
) -> Result<RankedList> {
    if gallery.is_empty() {
        return Err(Error::Data("gallery is empty".into()));
    }
    if query.len() != gallery.dim() {
        return Err(Error::dim("rank_gallery", &[query.len()], &[gallery.dim()]));
    }
    let query_norm = norm(query);
    if similarity == Similarity::Cosine && query_norm == 0.0 {
        return Err(Error::Numeric(format!("query {query_id} is a zero vector under cosine similarity")));
    }
    let mut scored = Vec::with_capacity(gallery.len());
    for (i, e) in gallery.entries().iter().enumerate() {
        if e.id == query_id {
            continue;
        }
        let score = match similarity {
            Similarity::Cosine => {
                let n = norm(&e.descriptor);
                if n == 0.0 {
                    return Err(Error::Numeric(format!(
                        "gallery item {} is a zero vector under cosine similarity",
                        e.id
                    )));
                }
                dot(query, &e.descriptor) / (query_norm * n)
            }
            Similarity::Euclidean => {
                -query
                    .iter()
                    .zip(&e.descriptor)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<Real>()
                    .sqrt()
            }
        };
        if score.is_nan() {
            return Err(Error::Numeric(format!("similarity to {} is NaN", e.id)));
        }
        scored.push((i, score));
    }
    let entries = gallery.entries();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| entries[a.0].id.cmp(&entries[b.0].id))
    });
    Ok(RankedList {
        query_id: query_id.to_string(),
        ids: scored.iter().map(|&(i, _)| entries[i].id.clone()).collect(),
        indices: scored.iter().map(|&(i, _)| i).collect(),
        scores: scored.iter().map(|&(_, s)| s).collect(),
    })
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[(&str, Vec<Real>)]) -> DescriptorSet {
        DescriptorSet::new(
            items
                .iter()
                .map(|(id, d)| DescriptorEntry::new(*id, "c", d.clone()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_example() {
        let g = set(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![0.6, 0.8])]);
        let r = rank_gallery("q", &[1.0, 0.0], &g, Similarity::Cosine).unwrap();
        assert_eq!(r.ids, ["a", "c", "b"]);
        assert!((r.scores[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ties_by_ascending_id_and_self_excluded() {
        let g = set(&[("z", vec![1.0, 1.0]), ("m", vec![2.0, 2.0]), ("q", vec![1.0, 1.0])]);
        let r = rank_gallery("q", &[1.0, 1.0], &g, Similarity::Cosine).unwrap();
        assert_eq!(r.ids, ["m", "z"]);
    }

    #[test]
    fn euclidean_orders_by_distance() {
        let g = set(&[("far", vec![5.0, 0.0]), ("near", vec![1.1, 0.0]), ("mid", vec![2.0, 0.0])]);
        let r = rank_gallery("q", &[1.0, 0.0], &g, Similarity::Euclidean).unwrap();
        assert_eq!(r.ids, ["near", "mid", "far"]);
    }

    #[test]
    fn errors() {
        let g = set(&[("a", vec![1.0, 0.0]), ("zero", vec![0.0, 0.0])]);
        match rank_gallery("q", &[1.0, 0.0], &g, Similarity::Cosine) {
            Err(Error::Numeric(m)) => assert!(m.contains("zero")),
            other => panic!("{other:?}"),
        }
        assert!(rank_gallery("q", &[1.0, 0.0], &g, Similarity::Euclidean).is_ok());
        assert!(matches!(
            rank_gallery("q", &[1.0], &g, Similarity::Euclidean),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            rank_gallery("q", &[0.0, 0.0], &g, Similarity::Cosine),
            Err(Error::Numeric(_))
        ));
        assert!(DescriptorSet::new(vec![
            DescriptorEntry::new("a", "c", vec![1.0]),
            DescriptorEntry::new("a", "c", vec![2.0]),
        ])
        .is_err());
    }

    fn gallery_strategy() -> impl Strategy<Value = Vec<Vec<Real>>> {
        // small integer coordinates make exact ties common
        prop::collection::vec(prop::collection::vec(-3i32..4, 3), 2..12)
            .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(|x| x as Real).collect()).collect())
    }

    proptest! {
        #[test]
        fn ordering_ignores_input_order(rows in gallery_strategy(), seed in 0u64..1000) {
            let entries: Vec<DescriptorEntry> = rows
                .iter()
                .enumerate()
                .map(|(i, d)| DescriptorEntry::new(format!("g{i:02}"), "c", d.clone()))
                .collect();
            let mut shuffled = entries.clone();
            crate::rng::set_seed(seed).shuffle(&mut shuffled);
            let a = DescriptorSet::new(entries).unwrap();
            let b = DescriptorSet::new(shuffled).unwrap();
            let q = [1.0, -2.0, 0.5];
            let ra = rank_gallery("q", &q, &a, Similarity::Euclidean).unwrap();
            let rb = rank_gallery("q", &q, &b, Similarity::Euclidean).unwrap();
            prop_assert_eq!(ra.ids, rb.ids);
        }

        #[test]
        fn monotone_transform_keeps_order(scores in prop::collection::vec(-50i32..50, 1..20)) {
            // one-dimensional galleries: euclidean distance to 0 is |x|, so
            // x -> 3x + (shift) on positive inputs is strictly monotone in score
            let pos: Vec<Real> = scores.iter().map(|&s| (s.abs() + 1) as Real).collect();
            let make = |f: &dyn Fn(Real) -> Real| {
                DescriptorSet::new(
                    pos.iter()
                        .enumerate()
                        .map(|(i, &x)| DescriptorEntry::new(format!("g{i:02}"), "c", vec![f(x)]))
                        .collect(),
                )
                .unwrap()
            };
            let a = rank_gallery("q", &[0.0], &make(&|x| x), Similarity::Euclidean).unwrap();
            let b = rank_gallery("q", &[0.0], &make(&|x| 3.0 * x + 7.0), Similarity::Euclidean).unwrap();
            prop_assert_eq!(a.ids, b.ids);
        }
    }
}
