//! Ranking metrics and score correlation.
//!
//! * Recall@k is the hit rate: the fraction of queries with at least one
//!   relevant reference in the top k.
//! * Precision@k is the per-query fraction of the top k that is relevant,
//!   averaged over queries.
//! * mAP@k averages precision at each relevant rank within the top k and
//!   divides by `min(#relevant, k)`.
//!
//! Queries without relevant references, or whose results are unanswerable,
//! still count in every denominator. Ranks flagged unanswerable hold a place
//! in the list but never count as hits: nothing was known about them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::RelevanceMap;
use crate::error::{Error, Result};
use crate::io::{to_json_bytes, write_atomic};
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub answerable_queries: usize,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub precision_at_k: BTreeMap<usize, f64>,
    pub map_at_k: BTreeMap<usize, f64>,
}

impl MetricsReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at_k[&k]
    }

    pub fn precision(&self, k: usize) -> f64 {
        self.precision_at_k[&k]
    }

    pub fn map(&self, k: usize) -> f64 {
        self.map_at_k[&k]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &to_json_bytes(self)?)
    }
}

pub fn ranking_metrics(results: &[RetrievalResult], relevance: &RelevanceMap, ks: &[usize]) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("ks must be non-empty and positive".into()));
    }
    let n_refs = relevance.n_references();
    for res in results {
        if res.query >= relevance.n_queries() {
            return Err(Error::IndexOutOfRange(format!(
                "result for query {} but relevance covers {}",
                res.query,
                relevance.n_queries()
            )));
        }
        let need = ks.iter().max().unwrap().min(&n_refs);
        if res.ranked.len() < *need {
            return Err(Error::InvalidArgument(format!(
                "query {} has {} ranks, need {need}",
                res.query,
                res.ranked.len()
            )));
        }
    }

    let n = results.len();
    let answerable = results
        .iter()
        .filter(|r| r.ranked.first().is_some_and(|x| !x.unanswerable))
        .count();
    let mut report = MetricsReport {
        queries: n,
        answerable_queries: answerable,
        recall_at_k: BTreeMap::new(),
        precision_at_k: BTreeMap::new(),
        map_at_k: BTreeMap::new(),
    };
    for &k in ks {
        let (mut hits, mut precision, mut ap) = (0usize, 0.0, 0.0);
        for res in results {
            let relevant = relevance.relevant(res.query);
            if relevant.is_empty() {
                continue;
            }
            let mut found = 0usize;
            let mut ap_sum = 0.0;
            for (i, r) in res.ranked.iter().take(k).enumerate() {
                if !r.unanswerable && relevant.contains(&r.reference) {
                    found += 1;
                    ap_sum += found as f64 / (i + 1) as f64;
                }
            }
            if found > 0 {
                hits += 1;
            }
            precision += found as f64 / k as f64;
            ap += ap_sum / relevant.len().min(k) as f64;
        }
        let denom = n.max(1) as f64;
        report.recall_at_k.insert(k, hits as f64 / denom);
        report.precision_at_k.insert(k, precision / denom);
        report.map_at_k.insert(k, ap / denom);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties replaced by their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn score_correlation(xs: &[f64], ys: &[f64], kind: CorrelationKind) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }
    match kind {
        CorrelationKind::Pearson => pearson(xs, ys),
        CorrelationKind::Spearman => pearson(&average_ranks(xs), &average_ranks(ys)),
    }
}
