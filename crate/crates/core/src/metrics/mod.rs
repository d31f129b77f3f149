//! Retrieval evaluation.
//!
//! Every query is ranked against the gallery (self-match removed), its
//! ranked list is turned into relevance bits by class label, and per-query
//! AP, PR-AUC, F1@k and NDCG@k are averaged two ways: micro (over queries)
//! and macro (over classes of per-class means).
//!
//! AP is the mean of precision-at-rank over the relevant ranks.

mod ranking;
mod report;

pub use ranking::{normalize_l2, rank_gallery, DescriptorEntry, DescriptorSet, RankedList, Similarity};
pub use report::{
    evaluate_retrieval, EvalOptions, MetricSummary, QueryResult, Relevance, RetrievalReport,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One `(recall, precision)` point per rank position.
pub fn precision_recall_curve(relevant: &[bool]) -> Result<Vec<(f64, f64)>> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::UndefinedMetric("PR curve of a list with no relevant items".into()));
    }
    let mut hits = 0usize;
    Ok(relevant
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            hits += r as usize;
            (hits as f64 / total as f64, hits as f64 / (i + 1) as f64)
        })
        .collect())
}

pub fn average_precision(relevant: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedMetric("AP of a list with no relevant items".into()));
    }
    Ok(sum / hits as f64)
}

/// Trapezoidal area under `(recall, precision)` points. The curve is
/// extended to recall 0 at the first point's precision.
pub fn pr_auc(points: &[(f64, f64)]) -> Result<f64> {
    let Some(&(_, p0)) = points.first() else {
        return Err(Error::domain("pr_auc", "empty curve"));
    };
    let mut area = 0.0;
    let mut prev = (0.0, p0);
    for &(r, p) in points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    Ok(area)
}

/// F-measure over the first `k` items when `total_relevant` items exist.
pub fn f_measure_at(relevant: &[bool], k: usize, total_relevant: usize) -> Result<f64> {
    if k == 0 || total_relevant == 0 {
        return Err(Error::domain(
            "f_measure_at",
            format!("cutoff and relevant count must be positive, got k={k} R={total_relevant}"),
        ));
    }
    let hits = relevant.iter().take(k).filter(|&&r| r).count() as f64;
    let precision = hits / k as f64;
    let recall = hits / total_relevant as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// NDCG over the first `k` gains with a `log2(i + 1)` discount.
pub fn ndcg_at(gains: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("ndcg_at", "cutoff must be positive"));
    }
    if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::domain("ndcg_at", "gains must be finite and non-negative"));
    }
    let dcg = |g: &[f64]| -> f64 {
        g.iter()
            .take(k)
            .enumerate()
            .map(|(i, &x)| x / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return Err(Error::UndefinedMetric("NDCG with no positive gain".into()));
    }
    Ok(dcg(gains) / idcg)
}

/// `(micro, macro)`: the plain mean, and the mean over classes of per-class
/// means.
pub fn micro_macro_aggregate<C: Ord>(values: &[f64], classes: &[C]) -> Result<(f64, f64)> {
    if values.is_empty() || values.len() != classes.len() {
        return Err(Error::dim("micro_macro_aggregate", &[values.len()], &[classes.len()]));
    }
    let micro = values.iter().sum::<f64>() / values.len() as f64;
    let mut per_class: BTreeMap<&C, (f64, usize)> = BTreeMap::new();
    for (v, c) in values.iter().zip(classes) {
        let e = per_class.entry(c).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let macro_ = per_class.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_class.len() as f64;
    Ok((micro, macro_))
}

/// The combined figure reported next to micro and macro scores: their
/// arithmetic mean.
pub fn micro_macro_mean(micro: f64, macro_: f64) -> f64 {
    (micro + macro_) / 2.0
}
