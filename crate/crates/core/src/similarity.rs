//! Cross-modal cosine scores and the per-instance-pair similarity matrix.

use crate::dataset::{ModalityPair, ModalitySchema, MultimodalDataset, RelevanceMap};
use crate::error::{Error, Result};

/// Value stored in unobserved matrix cells.
pub const MISSING_SENTINEL: f64 = -1.0;

/// A cosine score with a flag for zero-norm inputs (scored as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub score: f64,
    pub degenerate: bool,
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn squared_norm(u: &[f64]) -> f64 {
    dot(u, u)
}

pub(crate) fn cosine_from_parts(u: &[f64], u_sq: f64, v: &[f64], v_sq: f64) -> Cosine {
    if u_sq == 0.0 || v_sq == 0.0 {
        return Cosine {
            score: 0.0,
            degenerate: true,
        };
    }
    let score = (dot(u, v) / (u_sq.sqrt() * v_sq.sqrt())).clamp(-1.0, 1.0);
    Cosine {
        score,
        degenerate: false,
    }
}

/// `<u, v> / (|u| |v|)` clamped to `[-1, 1]`.
///
/// Panics if the lengths differ.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Cosine {
    assert_eq!(u.len(), v.len(), "cosine_similarity: dimension mismatch");
    cosine_from_parts(u, squared_norm(u), v, squared_norm(v))
}

/// Anything that can produce raw cross-modal scores for (query, reference)
/// instance pairs. [`MultimodalDataset`] scores by cosine similarity; tests
/// wrap it to apply score transforms.
pub trait ScoreSource: Sync {
    fn schema(&self) -> &ModalitySchema;
    fn n_queries(&self) -> usize;
    fn n_references(&self) -> usize;
    fn relevance(&self) -> &RelevanceMap;
    fn query_has(&self, query: usize, modality: usize) -> bool;
    fn reference_has(&self, reference: usize, modality: usize) -> bool;
    /// Raw score for `pair`, or `None` when either modality is missing or no
    /// space covers the pair.
    fn pair_score(&self, pair: ModalityPair, query: usize, reference: usize) -> Option<f64>;
}

impl ScoreSource for MultimodalDataset {
    fn schema(&self) -> &ModalitySchema {
        MultimodalDataset::schema(self)
    }

    fn n_queries(&self) -> usize {
        MultimodalDataset::n_queries(self)
    }

    fn n_references(&self) -> usize {
        MultimodalDataset::n_references(self)
    }

    fn relevance(&self) -> &RelevanceMap {
        MultimodalDataset::relevance(self)
    }

    fn query_has(&self, query: usize, modality: usize) -> bool {
        self.query_mask().get(query, modality)
    }

    fn reference_has(&self, reference: usize, modality: usize) -> bool {
        self.reference_mask().get(reference, modality)
    }

    fn pair_score(&self, pair: ModalityPair, query: usize, reference: usize) -> Option<f64> {
        let (u, u_sq, v, v_sq) = self.pair_vectors(pair, query, reference)?;
        Some(cosine_from_parts(u, u_sq, v, v_sq).score)
    }
}

/// Dense grid over (query modality, reference modality) with an explicit
/// observed flag per cell. Unobserved cells hold [`MISSING_SENTINEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn unobserved(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![MISSING_SENTINEL; rows * cols],
            observed: vec![false; rows * cols],
        }
    }

    /// Builds a matrix from optional cell values in row-major order.
    pub fn from_cells(rows: usize, cols: usize, cells: &[Option<f64>]) -> Self {
        assert_eq!(cells.len(), rows * cols);
        let mut m = Self::unobserved(rows, cols);
        for (i, c) in cells.iter().enumerate() {
            if let Some(v) = c {
                m.values[i] = *v;
                m.observed[i] = true;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, query_modality: usize, reference_modality: usize) -> Option<f64> {
        let i = query_modality * self.cols + reference_modality;
        self.observed[i].then_some(self.values[i])
    }

    /// Raw cell value, including the sentinel.
    pub fn value(&self, query_modality: usize, reference_modality: usize) -> f64 {
        self.values[query_modality * self.cols + reference_modality]
    }

    pub fn is_observed(&self, query_modality: usize, reference_modality: usize) -> bool {
        self.observed[query_modality * self.cols + reference_modality]
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Observed cells as `(pair, score)` in row-major order.
    pub fn observed_entries(&self) -> impl Iterator<Item = (ModalityPair, f64)> + '_ {
        (0..self.values.len())
            .filter(|&i| self.observed[i])
            .map(|i| (ModalityPair::new(i / self.cols, i % self.cols), self.values[i]))
    }
}

fn check_indices<S: ScoreSource + ?Sized>(source: &S, query: usize, reference: usize) -> Result<()> {
    if query >= source.n_queries() {
        return Err(Error::IndexOutOfRange(format!(
            "query {query} of {}",
            source.n_queries()
        )));
    }
    if reference >= source.n_references() {
        return Err(Error::IndexOutOfRange(format!(
            "reference {reference} of {}",
            source.n_references()
        )));
    }
    Ok(())
}

/// Similarity matrix between one query and one reference instance.
pub fn similarity_matrix<S: ScoreSource + ?Sized>(
    source: &S,
    query: usize,
    reference: usize,
) -> Result<SimilarityMatrix> {
    check_indices(source, query, reference)?;
    Ok(similarity_matrix_unchecked(source, query, reference))
}

pub(crate) fn similarity_matrix_unchecked<S: ScoreSource + ?Sized>(
    source: &S,
    query: usize,
    reference: usize,
) -> SimilarityMatrix {
    let schema = source.schema();
    let (rows, cols) = (schema.query_modality_count(), schema.reference_modality_count());
    let mut m = SimilarityMatrix::unobserved(rows, cols);
    for pair in schema.scoreable_pairs() {
        if let Some(score) = source.pair_score(pair, query, reference) {
            let i = pair.query * cols + pair.reference;
            m.values[i] = score;
            m.observed[i] = true;
        }
    }
    m
}

/// Scores of a single modality pair over a block of queries and references.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl ScoreTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.cols + col;
        self.observed[i].then_some(self.values[i])
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (row * self.cols..(row + 1) * self.cols).map(|i| self.observed[i].then_some(self.values[i]))
    }
}

/// Bulk scores for `pair` between `query_ids` (rows) and `reference_ids`
/// (columns). Entries agree bit-for-bit with [`similarity_matrix`].
pub fn pairwise_score_table<S: ScoreSource + ?Sized>(
    source: &S,
    pair: ModalityPair,
    query_ids: &[usize],
    reference_ids: &[usize],
) -> Result<ScoreTable> {
    if source.schema().space_for(pair).is_none() {
        return Err(Error::InvalidArgument(format!(
            "modality pair ({}, {}) is not scoreable",
            pair.query, pair.reference
        )));
    }
    if let Some(&q) = query_ids.iter().find(|&&q| q >= source.n_queries()) {
        return Err(Error::IndexOutOfRange(format!("query {q} of {}", source.n_queries())));
    }
    if let Some(&r) = reference_ids.iter().find(|&&r| r >= source.n_references()) {
        return Err(Error::IndexOutOfRange(format!(
            "reference {r} of {}",
            source.n_references()
        )));
    }
    let (rows, cols) = (query_ids.len(), reference_ids.len());
    let mut values = vec![MISSING_SENTINEL; rows * cols];
    let mut observed = vec![false; rows * cols];
    for (a, &q) in query_ids.iter().enumerate() {
        for (b, &r) in reference_ids.iter().enumerate() {
            if let Some(s) = source.pair_score(pair, q, r) {
                values[a * cols + b] = s;
                observed[a * cols + b] = true;
            }
        }
    }
    Ok(ScoreTable {
        rows,
        cols,
        values,
        observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_orthogonal_diagonal() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).score, 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).score, 0.0);
        let d = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).score;
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_scores_zero_with_flag() {
        let c = cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]);
        assert_eq!(c.score, 0.0);
        assert!(c.degenerate);
        assert!(!cosine_similarity(&[1.0, 0.0], &[1.0, 2.0]).degenerate);
    }

    #[test]
    fn matrix_sentinels() {
        let m = SimilarityMatrix::from_cells(2, 2, &[None, Some(0.7), None, None]);
        assert_eq!(m.observed_count(), 1);
        assert_eq!(m.value(0, 0), -1.0);
        assert_eq!(m.get(0, 1), Some(0.7));
        assert_eq!(m.get(1, 1), None);
        // a genuine -1 stays distinguishable from a missing cell
        let g = SimilarityMatrix::from_cells(1, 1, &[Some(-1.0)]);
        assert_eq!(g.get(0, 0), Some(-1.0));
    }

    fn vecs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..16).prop_flat_map(|d| {
            (
                proptest::collection::vec(-10.0f64..10.0, d),
                proptest::collection::vec(-10.0f64..10.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric((u, v) in vecs()) {
            let a = cosine_similarity(&u, &v).score;
            let b = cosine_similarity(&v, &u).score;
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn scale_invariant((u, v) in vecs(), c in 0.01f64..100.0) {
            let cu: Vec<f64> = u.iter().map(|x| x * c).collect();
            let a = cosine_similarity(&u, &v);
            let b = cosine_similarity(&cu, &v);
            prop_assert_eq!(a.degenerate, b.degenerate);
            prop_assert!((a.score - b.score).abs() < 1e-12);
        }
    }
}
