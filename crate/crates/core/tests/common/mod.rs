#![allow(dead_code)]

use std::collections::BTreeMap;

use conformal_retrieval::dataset::PresenceMask;
use conformal_retrieval::{ModalityPair, ModalitySchema, RelevanceMap, ScoreSource, SharedSpace};

/// Score source backed by explicit per-pair tables, one private space per
/// modality pair. Lets tests pin exact raw scores.
pub struct TableSource {
    pub schema: ModalitySchema,
    pub n_queries: usize,
    pub n_references: usize,
    pub scores: BTreeMap<ModalityPair, Vec<f64>>,
    pub query_mask: PresenceMask,
    pub reference_mask: PresenceMask,
    pub relevance: RelevanceMap,
}

impl TableSource {
    /// `scores[pair][q * n_references + r]`.
    pub fn new(
        query_modalities: &[&str],
        reference_modalities: &[&str],
        scores: BTreeMap<ModalityPair, Vec<f64>>,
        relevance: RelevanceMap,
    ) -> Self {
        let spaces = scores
            .keys()
            .map(|p| SharedSpace {
                name: format!("s{}_{}", p.query, p.reference),
                dim: 1,
                query_coverage: vec![query_modalities[p.query].to_string()],
                reference_coverage: vec![reference_modalities[p.reference].to_string()],
            })
            .collect();
        let schema = ModalitySchema::new(
            query_modalities.iter().map(|s| s.to_string()).collect(),
            reference_modalities.iter().map(|s| s.to_string()).collect(),
            spaces,
            &BTreeMap::new(),
        )
        .unwrap();
        let (nq, nr) = (relevance.n_queries(), relevance.n_references());
        for v in scores.values() {
            assert_eq!(v.len(), nq * nr);
        }
        Self {
            schema,
            n_queries: nq,
            n_references: nr,
            scores,
            query_mask: PresenceMask::all_present(nq, query_modalities.len()),
            reference_mask: PresenceMask::all_present(nr, reference_modalities.len()),
            relevance,
        }
    }
}

impl ScoreSource for TableSource {
    fn schema(&self) -> &ModalitySchema {
        &self.schema
    }
    fn n_queries(&self) -> usize {
        self.n_queries
    }
    fn n_references(&self) -> usize {
        self.n_references
    }
    fn relevance(&self) -> &RelevanceMap {
        &self.relevance
    }
    fn query_has(&self, q: usize, m: usize) -> bool {
        self.query_mask.get(q, m)
    }
    fn reference_has(&self, r: usize, m: usize) -> bool {
        self.reference_mask.get(r, m)
    }
    fn pair_score(&self, pair: ModalityPair, q: usize, r: usize) -> Option<f64> {
        if !self.query_has(q, pair.query) || !self.reference_has(r, pair.reference) {
            return None;
        }
        self.scores.get(&pair).map(|t| t[q * self.n_references + r])
    }
}

pub fn temp_dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}
