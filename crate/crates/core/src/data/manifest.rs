//! JSON manifests and stratified splits.
//!
//! A manifest is a JSON array of records:
//!
//! ```json
//! [{"id": "pair0a-0000", "class_label": "pair0a", "class_index": 0,
//!   "path": "pair0a-0000.vnf", "split": "train"}]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::set_seed;
use crate::vnn::ViewEmbeddingMatrix;

use super::{read_file, read_view_features, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Gallery,
    Query,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "gallery" => Ok(Split::Gallery),
            "query" => Ok(Split::Query),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub class_label: String,
    pub class_index: usize,
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Check id uniqueness, dense class indices, and a consistent
    /// label-to-index mapping.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut labels: BTreeMap<usize, &str> = BTreeMap::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate id {}", r.id)));
            }
            match labels.insert(r.class_index, &r.class_label) {
                Some(prev) if prev != r.class_label => {
                    return Err(Error::Data(format!(
                        "class index {} labelled both {prev:?} and {:?}",
                        r.class_index, r.class_label
                    )));
                }
                _ => {}
            }
        }
        let distinct: HashSet<&str> = labels.values().copied().collect();
        if distinct.len() != labels.len() {
            return Err(Error::Data("one class label maps to several indices".into()));
        }
        if let Some((&max, _)) = labels.iter().next_back() {
            if max + 1 != labels.len() {
                return Err(Error::Data(format!(
                    "class indices are not dense: {} classes but max index {max}",
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.records.iter().map(|r| r.class_index + 1).max().unwrap_or(0)
    }

    pub fn select(&self, splits: &[Split]) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| splits.contains(&r.split)).collect()
    }

    pub fn find(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    write_file(path.as_ref(), manifest.to_json().as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// One labelled shape, loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub views: ViewEmbeddingMatrix,
}

/// Load every record in `splits`, checking that all share one feature width.
pub fn load_samples(manifest: &Manifest, base_dir: &Path, splits: &[Split]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut dim = None;
    for r in manifest.select(splits) {
        let path = resolve(base_dir, &r.path);
        let views = read_view_features(&path)?;
        match dim {
            None => dim = Some(views.dim()),
            Some(d) if d != views.dim() => {
                return Err(Error::Data(format!(
                    "{} has feature width {}, expected {d}",
                    r.id,
                    views.dim()
                )));
            }
            _ => {}
        }
        out.push(Sample {
            id: r.id.clone(),
            label: r.class_index,
            views,
        });
    }
    Ok(out)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reassign splits per class: shuffle each class's records with the seeded
/// generator, then cut by `fractions` using largest remainders so per-class
/// counts sum exactly. Returns the new manifest and any warnings.
pub fn split_dataset(
    manifest: &Manifest,
    fractions: &[(Split, f64)],
    seed: u64,
) -> Result<(Manifest, Vec<String>)> {
    if fractions.is_empty() {
        return Err(Error::Config("no split fractions given".into()));
    }
    if fractions.iter().any(|(_, f)| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::Config(format!("invalid split fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().map(|(_, f)| f).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
    }

    let mut rng = set_seed(seed);
    let mut out = manifest.clone();
    let mut warnings = Vec::new();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.class_index).or_default().push(i);
    }
    let buckets = fractions.iter().filter(|(_, f)| *f > 0.0).count();
    for (class, mut members) in by_class {
        if members.len() < buckets {
            warnings.push(format!(
                "class {class} has {} samples for {buckets} splits",
                members.len()
            ));
        }
        rng.shuffle(&mut members);
        let counts = largest_remainder(members.len(), fractions);
        let mut idx = members.into_iter();
        for ((split, _), count) in fractions.iter().zip(counts) {
            for i in idx.by_ref().take(count) {
                out.records[i].split = *split;
            }
        }
    }
    Ok((out, warnings))
}

fn largest_remainder(n: usize, fractions: &[(Split, f64)]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|(_, f)| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
