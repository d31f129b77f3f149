//! Full retrieval evaluation and the JSON report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

use super::ranking::{normalize_l2, rank_gallery, DescriptorEntry, DescriptorSet, Similarity};
use super::{average_precision, f_measure_at, micro_macro_aggregate, micro_macro_mean, ndcg_at, pr_auc, precision_recall_curve};

/// How gallery items are scored against a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    /// Gain 1 for the query's class, 0 otherwise.
    #[default]
    Binary,
    /// Gain 2 when class and subclass match, 1 for class only. Ranking
    /// metrics other than NDCG treat any positive gain as relevant.
    Graded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub similarity: Similarity,
    pub f1_cutoff: usize,
    /// 0 means the whole ranked list.
    pub ndcg_cutoff: usize,
    /// L2-normalize descriptors before ranking.
    pub normalize: bool,
    pub relevance: Relevance,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            similarity: Similarity::Cosine,
            f1_cutoff: 32,
            ndcg_cutoff: 0,
            normalize: false,
            relevance: Relevance::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSummary {
    pub map: f64,
    pub auc: f64,
    pub f1: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub id: String,
    pub class: String,
    pub ap: f64,
    pub auc: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub micro: MetricSummary,
    pub macro_: MetricSummary,
    pub per_class: BTreeMap<String, MetricSummary>,
    /// Defined queries, ordered by id.
    pub per_query: Vec<QueryResult>,
    pub options: EvalOptions,
    /// Queries without any relevant gallery item, ordered by id.
    pub undefined: Vec<String>,
}

impl RetrievalReport {
    /// Mean of the micro and macro figures, metric by metric.
    pub fn micro_macro_mean(&self) -> MetricSummary {
        MetricSummary {
            map: micro_macro_mean(self.micro.map, self.macro_.map),
            auc: micro_macro_mean(self.micro.auc, self.macro_.auc),
            f1: micro_macro_mean(self.micro.f1, self.macro_.f1),
            ndcg: micro_macro_mean(self.micro.ndcg, self.macro_.ndcg),
        }
    }

    /// Mean interpolated precision at recall `0, 1/levels, ..., 1`.
    /// Interpolated precision at `r` is the best precision at recall `≥ r`.
    pub fn mean_pr_curve(&self, levels: usize) -> Vec<(f64, f64)> {
        let levels = levels.max(1);
        (0..=levels)
            .map(|l| {
                let r = l as f64 / levels as f64;
                let sum: f64 = self
                    .per_query
                    .iter()
                    .map(|q| {
                        q.pr_curve
                            .iter()
                            .filter(|(rec, _)| *rec >= r - 1e-12)
                            .map(|&(_, p)| p)
                            .fold(0.0, f64::max)
                    })
                    .sum();
                (r, sum / self.per_query.len() as f64)
            })
            .collect()
    }

    /// UTF-8 JSON with a fixed key order and six-decimal values.
    pub fn to_json(&self) -> String {
        let summary = |m: &MetricSummary| JsonSummary {
            map: fixed(m.map),
            auc: fixed(m.auc),
            f1: fixed(m.f1),
            ndcg: fixed(m.ndcg),
        };
        let doc = JsonReport {
            micro: summary(&self.micro),
            macro_: summary(&self.macro_),
            per_query: self
                .per_query
                .iter()
                .map(|q| JsonQuery {
                    id: &q.id,
                    class: &q.class,
                    ap: fixed(q.ap),
                    f1: fixed(q.f1),
                    ndcg: fixed(q.ndcg),
                })
                .collect(),
            options: &self.options,
            undefined_queries: self.undefined.len(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }
}

fn fixed(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.6}")).expect("fixed-point literal is valid JSON")
}

#[derive(Serialize)]
struct JsonSummary {
    map: Box<RawValue>,
    auc: Box<RawValue>,
    f1: Box<RawValue>,
    ndcg: Box<RawValue>,
}

#[derive(Serialize)]
struct JsonQuery<'a> {
    id: &'a str,
    class: &'a str,
    ap: Box<RawValue>,
    f1: Box<RawValue>,
    ndcg: Box<RawValue>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    micro: JsonSummary,
    #[serde(rename = "macro")]
    macro_: JsonSummary,
    per_query: Vec<JsonQuery<'a>>,
    options: &'a EvalOptions,
    undefined_queries: usize,
}

/// Rank every query against `gallery` and compute the metric suite.
///
/// Queries run in parallel; results are merged in id order so the report
/// does not depend on scheduling. A query with no relevant gallery item is
/// counted in `undefined` and left out of every aggregate.
pub fn evaluate_retrieval(
    queries: &DescriptorSet,
    gallery: &DescriptorSet,
    options: &EvalOptions,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::Data("no queries".into()));
    }
    if options.f1_cutoff == 0 {
        return Err(Error::Config("F1 cutoff must be positive".into()));
    }
    let (queries, gallery) = if options.normalize {
        (normalized(queries)?, normalized(gallery)?)
    } else {
        (queries.clone(), gallery.clone())
    };

    let outcomes: Vec<Result<Option<QueryResult>>> = queries
        .entries()
        .par_iter()
        .map(|q| evaluate_query(q, &gallery, options))
        .collect();

    let mut per_query = Vec::new();
    let mut undefined = Vec::new();
    for (q, outcome) in queries.entries().iter().zip(outcomes) {
        match outcome? {
            Some(r) => per_query.push(r),
            None => undefined.push(q.id.clone()),
        }
    }
    per_query.sort_by(|a, b| a.id.cmp(&b.id));
    undefined.sort();
    if per_query.is_empty() {
        return Err(Error::UndefinedMetric(
            "no query has a relevant item in the gallery".into(),
        ));
    }

    let classes: Vec<&str> = per_query.iter().map(|q| q.class.as_str()).collect();
    let column = |f: fn(&QueryResult) -> f64| -> Result<(f64, f64)> {
        let values: Vec<f64> = per_query.iter().map(f).collect();
        micro_macro_aggregate(&values, &classes)
    };
    let (ap, auc, f1, ndcg) = (
        column(|q| q.ap)?,
        column(|q| q.auc)?,
        column(|q| q.f1)?,
        column(|q| q.ndcg)?,
    );

    let mut per_class: BTreeMap<String, (MetricSummary, usize)> = BTreeMap::new();
    for q in &per_query {
        let (m, n) = per_class.entry(q.class.clone()).or_default();
        m.map += q.ap;
        m.auc += q.auc;
        m.f1 += q.f1;
        m.ndcg += q.ndcg;
        *n += 1;
    }
    let per_class = per_class
        .into_iter()
        .map(|(c, (m, n))| {
            let n = n as f64;
            let mean = MetricSummary {
                map: m.map / n,
                auc: m.auc / n,
                f1: m.f1 / n,
                ndcg: m.ndcg / n,
            };
            (c, mean)
        })
        .collect();

    Ok(RetrievalReport {
        micro: MetricSummary {
            map: ap.0,
            auc: auc.0,
            f1: f1.0,
            ndcg: ndcg.0,
        },
        macro_: MetricSummary {
            map: ap.1,
            auc: auc.1,
            f1: f1.1,
            ndcg: ndcg.1,
        },
        per_class,
        per_query,
        options: *options,
        undefined,
    })
}

fn normalized(set: &DescriptorSet) -> Result<DescriptorSet> {
    let entries = set
        .entries()
        .iter()
        .map(|e| {
            Ok(DescriptorEntry {
                descriptor: normalize_l2(&e.id, &e.descriptor)?,
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DescriptorSet::new(entries)
}

fn gain(query: &DescriptorEntry, item: &DescriptorEntry, relevance: Relevance) -> f64 {
    if query.class != item.class {
        return 0.0;
    }
    match relevance {
        Relevance::Binary => 1.0,
        Relevance::Graded => {
            if query.subclass.is_some() && query.subclass == item.subclass {
                2.0
            } else {
                1.0
            }
        }
    }
}

fn evaluate_query(
    query: &DescriptorEntry,
    gallery: &DescriptorSet,
    options: &EvalOptions,
) -> Result<Option<QueryResult>> {
    let ranked = rank_gallery(&query.id, &query.descriptor, gallery, options.similarity)?;
    let gains: Vec<f64> = ranked
        .indices
        .iter()
        .map(|&i| gain(query, &gallery.entries()[i], options.relevance))
        .collect();
    let relevant: Vec<bool> = gains.iter().map(|&g| g > 0.0).collect();
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(None);
    }
    let n = relevant.len();
    let curve = precision_recall_curve(&relevant)?;
    let ndcg_k = if options.ndcg_cutoff == 0 { n } else { options.ndcg_cutoff };
    Ok(Some(QueryResult {
        id: query.id.clone(),
        class: query.class.clone(),
        ap: average_precision(&relevant)?,
        auc: pr_auc(&curve)?,
        f1: f_measure_at(&relevant, options.f1_cutoff.min(n), total)?,
        ndcg: ndcg_at(&gains, ndcg_k)?,
        pr_curve: curve,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Real;
    use crate::rng::set_seed;

    fn one_hot_set(classes: usize, per_class: usize) -> DescriptorSet {
        let mut entries = Vec::new();
        for c in 0..classes {
            for s in 0..per_class {
                let mut d = vec![0.0; classes];
                d[c] = 1.0;
                entries.push(DescriptorEntry::new(format!("c{c}-{s}"), format!("class{c}"), d));
            }
        }
        DescriptorSet::new(entries).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let s = one_hot_set(3, 4);
        let r = evaluate_retrieval(&s, &s, &EvalOptions::default()).unwrap();
        assert_eq!(r.micro.map, 1.0);
        assert_eq!(r.micro.auc, 1.0);
        assert_eq!(r.micro.ndcg, 1.0);
        assert_eq!(r.macro_.map, 1.0);
        assert_eq!(r.per_query.len(), 12);
        assert!(r.undefined.is_empty());
        // 3 relevant in a list of 11 with F1@11
        assert!((r.micro.f1 - 2.0 * (3.0 / 11.0) / (3.0 / 11.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn null_model_map_near_half() {
        let mut rng = set_seed(17);
        let entries: Vec<DescriptorEntry> = (0..1000)
            .map(|i| {
                let d: Vec<Real> = (0..16).map(|_| rng.standard_normal() as Real).collect();
                DescriptorEntry::new(format!("s{i:04}"), if i % 2 == 0 { "a" } else { "b" }, d)
            })
            .collect();
        let s = DescriptorSet::new(entries).unwrap();
        let r = evaluate_retrieval(&s, &s, &EvalOptions::default()).unwrap();
        assert!((r.micro.map - 0.5).abs() < 0.05, "{}", r.micro.map);
    }

    #[test]
    fn missing_class_counts_as_undefined() {
        let gallery = one_hot_set(2, 3);
        let queries = DescriptorSet::new(vec![
            DescriptorEntry::new("qa", "class0", vec![1.0, 0.0]),
            DescriptorEntry::new("qz", "nowhere", vec![0.0, 1.0]),
        ])
        .unwrap();
        let r = evaluate_retrieval(&queries, &gallery, &EvalOptions::default()).unwrap();
        assert_eq!(r.undefined, ["qz"]);
        assert_eq!(r.per_query.len(), 1);
        assert!(r.to_json().contains("\"undefined_queries\": 1"));
    }

    #[test]
    fn all_undefined_is_an_error() {
        let s = one_hot_set(2, 1);
        assert!(matches!(
            evaluate_retrieval(&s, &s, &EvalOptions::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn json_schema_and_format() {
        let s = one_hot_set(2, 2);
        let json = evaluate_retrieval(&s, &s, &EvalOptions::default()).unwrap().to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["macro", "micro", "options", "per_query", "undefined_queries"]);
        let q = &v["per_query"][0];
        let qkeys: Vec<&String> = q.as_object().unwrap().keys().collect();
        assert_eq!(qkeys, ["ap", "class", "f1", "id", "ndcg"]);
        // key order in the text itself is fixed
        let order: Vec<usize> = ["\"micro\"", "\"macro\"", "\"per_query\"", "\"options\"", "\"undefined_queries\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(json.contains("\"map\": 1.000000"));
        assert!(json.contains("\"similarity\": \"cosine\""));
    }

    #[test]
    fn graded_gains_reward_subclass_matches() {
        let mk = |id: &str, sub: &str, d: Vec<Real>| DescriptorEntry {
            subclass: Some(sub.into()),
            ..DescriptorEntry::new(id, "c", d)
        };
        let g = DescriptorSet::new(vec![
            mk("q", "x", vec![1.0, 0.0]),
            mk("a", "y", vec![1.0, 0.1]),
            mk("b", "x", vec![1.0, 0.5]),
        ])
        .unwrap();
        let q = DescriptorSet::new(vec![g.entries()[0].clone()]).unwrap();
        let graded = EvalOptions {
            relevance: Relevance::Graded,
            ..EvalOptions::default()
        };
        let r = evaluate_retrieval(&q, &g, &graded).unwrap();
        // ranking a (gain 1) before b (gain 2)
        let expected = (1.0 + 2.0 / 3f64.log2()) / (2.0 + 1.0 / 3f64.log2());
        assert!((r.micro.ndcg - expected).abs() < 1e-12);
        assert_eq!(r.micro.map, 1.0);
        let binary = evaluate_retrieval(&q, &g, &EvalOptions::default()).unwrap();
        assert_eq!(binary.micro.ndcg, 1.0);
    }

    #[test]
    fn normalization_and_pr_curve() {
        let g = DescriptorSet::new(vec![
            DescriptorEntry::new("a", "p", vec![10.0, 0.0]),
            DescriptorEntry::new("b", "p", vec![0.0, 1.0]),
            DescriptorEntry::new("c", "q", vec![0.9, 0.1]),
        ])
        .unwrap();
        let q = DescriptorSet::new(vec![DescriptorEntry::new("x", "p", vec![1.0, 0.0])]).unwrap();
        let euclid = EvalOptions {
            similarity: Similarity::Euclidean,
            ..EvalOptions::default()
        };
        let raw = evaluate_retrieval(&q, &g, &euclid).unwrap();
        let normed = evaluate_retrieval(&q, &g, &EvalOptions { normalize: true, ..euclid }).unwrap();
        // raw: c, b, a -> [0,1,1]; normalized: a, c, b -> [1,0,1]
        assert!((raw.micro.map - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((normed.micro.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let curve = normed.mean_pr_curve(2);
        assert_eq!(curve[0], (0.0, 1.0));
        assert_eq!(curve[1], (0.5, 1.0));
        assert!((curve[2].1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn combined_is_mean_of_micro_and_macro() {
        let s = DescriptorSet::new(vec![
            DescriptorEntry::new("a1", "a", vec![1.0, 0.0]),
            DescriptorEntry::new("a2", "a", vec![1.0, 0.1]),
            DescriptorEntry::new("a3", "a", vec![0.0, 1.0]),
            DescriptorEntry::new("b1", "b", vec![1.0, 0.05]),
            DescriptorEntry::new("b2", "b", vec![0.1, 1.0]),
        ])
        .unwrap();
        let r = evaluate_retrieval(&s, &s, &EvalOptions::default()).unwrap();
        let c = r.micro_macro_mean();
        assert!((c.map - (r.micro.map + r.macro_.map) / 2.0).abs() < 1e-15);
        for q in &r.per_query {
            for v in [q.ap, q.auc, q.f1, q.ndcg] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
