//! Multimodal data model: schema, embeddings, presence masks, relevance, and
//! the manifest that ties the on-disk files together.

mod binary;
mod manifest;
mod relevance;
mod sampling;
mod schema;

use std::collections::BTreeMap;

pub use binary::{
    read_embedding_file, read_mask_file, write_embedding_file, write_mask_file, EmbeddingMatrix,
    PresenceMask, EMBEDDING_MAGIC, HEADER_LEN, MASK_MAGIC,
};
pub use manifest::{load_dataset, save_dataset, MANIFEST_FILE};
pub use relevance::{
    read_positions, read_relevance_pairs, relevance_from_positions, write_positions,
    write_relevance_pairs, Position, RelevanceMap,
};
pub use sampling::{apply_modality_dropout, split_queries};
pub use schema::{ModalityPair, ModalitySchema, SharedSpace};

use crate::error::{Error, Result};
use crate::similarity::squared_norm;

/// Which side of the retrieval problem an embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Query,
    Reference,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Query => "query",
            Side::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    matrix: EmbeddingMatrix,
    sq_norms: Vec<f64>,
}

impl Slot {
    fn new(matrix: EmbeddingMatrix) -> Self {
        let sq_norms = (0..matrix.rows()).map(|i| squared_norm(matrix.row(i))).collect();
        Self { matrix, sq_norms }
    }
}

/// Query and reference sets with per-(modality, space) embeddings.
///
/// Immutable once built; every cross-file invariant is checked in
/// [`MultimodalDataset::new`].
#[derive(Debug, Clone)]
pub struct MultimodalDataset {
    schema: ModalitySchema,
    n_queries: usize,
    n_references: usize,
    query: BTreeMap<(usize, usize), Slot>,
    reference: BTreeMap<(usize, usize), Slot>,
    query_mask: PresenceMask,
    reference_mask: PresenceMask,
    relevance: RelevanceMap,
}

impl MultimodalDataset {
    /// Embedding maps are keyed by `(modality index, space index)`.
    pub fn new(
        schema: ModalitySchema,
        query_embeddings: BTreeMap<(usize, usize), EmbeddingMatrix>,
        reference_embeddings: BTreeMap<(usize, usize), EmbeddingMatrix>,
        query_mask: PresenceMask,
        reference_mask: PresenceMask,
        relevance: RelevanceMap,
    ) -> Result<Self> {
        let n_queries = check_side(&schema, Side::Query, &query_embeddings)?;
        let n_references = check_side(&schema, Side::Reference, &reference_embeddings)?;

        for (side, mask, rows, mods) in [
            (Side::Query, &query_mask, n_queries, schema.query_modality_count()),
            (Side::Reference, &reference_mask, n_references, schema.reference_modality_count()),
        ] {
            if mask.rows() != rows || mask.modalities() != mods {
                return Err(Error::DimensionMismatch {
                    location: format!("{}_mask", side.as_str()),
                    detail: format!(
                        "mask is {}x{}, expected {rows} instances x {mods} modalities",
                        mask.rows(),
                        mask.modalities()
                    ),
                });
            }
        }
        if relevance.n_queries() != n_queries || relevance.n_references() != n_references {
            return Err(Error::DimensionMismatch {
                location: "relevance".into(),
                detail: format!(
                    "relevance covers {}x{}, dataset is {n_queries}x{n_references}",
                    relevance.n_queries(),
                    relevance.n_references()
                ),
            });
        }

        Ok(Self {
            schema,
            n_queries,
            n_references,
            query: query_embeddings.into_iter().map(|(k, m)| (k, Slot::new(m))).collect(),
            reference: reference_embeddings.into_iter().map(|(k, m)| (k, Slot::new(m))).collect(),
            query_mask,
            reference_mask,
            relevance,
        })
    }

    pub fn schema(&self) -> &ModalitySchema {
        &self.schema
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_references(&self) -> usize {
        self.n_references
    }

    pub fn query_mask(&self) -> &PresenceMask {
        &self.query_mask
    }

    pub fn reference_mask(&self) -> &PresenceMask {
        &self.reference_mask
    }

    pub fn relevance(&self) -> &RelevanceMap {
        &self.relevance
    }

    pub fn embedding(&self, side: Side, modality: usize, space: usize) -> Option<&EmbeddingMatrix> {
        let map = match side {
            Side::Query => &self.query,
            Side::Reference => &self.reference,
        };
        map.get(&(modality, space)).map(|s| &s.matrix)
    }

    /// All embeddings of one side, keyed by `(modality, space)`.
    pub fn embeddings(&self, side: Side) -> impl Iterator<Item = ((usize, usize), &EmbeddingMatrix)> {
        let map = match side {
            Side::Query => &self.query,
            Side::Reference => &self.reference,
        };
        map.iter().map(|(&k, s)| (k, &s.matrix))
    }

    /// Same embeddings and relevance under different presence masks.
    pub fn with_masks(&self, query_mask: PresenceMask, reference_mask: PresenceMask) -> Result<Self> {
        Self::new(
            self.schema.clone(),
            self.embeddings(Side::Query).map(|(k, m)| (k, m.clone())).collect(),
            self.embeddings(Side::Reference).map(|(k, m)| (k, m.clone())).collect(),
            query_mask,
            reference_mask,
            self.relevance.clone(),
        )
    }

    /// Embedding rows and squared norms for `pair` when both modalities are
    /// present and some space scores the pair.
    pub(crate) fn pair_vectors(
        &self,
        pair: ModalityPair,
        query: usize,
        reference: usize,
    ) -> Option<(&[f64], f64, &[f64], f64)> {
        if !self.query_mask.get(query, pair.query) || !self.reference_mask.get(reference, pair.reference) {
            return None;
        }
        let space = self.schema.space_for(pair)?;
        let q = self.query.get(&(pair.query, space))?;
        let r = self.reference.get(&(pair.reference, space))?;
        Some((
            q.matrix.row(query),
            q.sq_norms[query],
            r.matrix.row(reference),
            r.sq_norms[reference],
        ))
    }
}

fn check_side(
    schema: &ModalitySchema,
    side: Side,
    embeddings: &BTreeMap<(usize, usize), EmbeddingMatrix>,
) -> Result<usize> {
    let modality_names = match side {
        Side::Query => schema.query_modalities(),
        Side::Reference => schema.reference_modalities(),
    };
    let mut expected = Vec::new();
    for (s, space) in schema.spaces().iter().enumerate() {
        let coverage = match side {
            Side::Query => &space.query_coverage,
            Side::Reference => &space.reference_coverage,
        };
        for name in coverage {
            let m = modality_names.iter().position(|n| n == name).unwrap();
            expected.push((m, s));
        }
    }
    let location = |m: usize, s: usize| {
        format!(
            "spaces[{}].{}_embeddings[{}]",
            schema.spaces()[s].name,
            side.as_str(),
            modality_names[m]
        )
    };
    for key in embeddings.keys() {
        if !expected.contains(key) {
            return Err(Error::format(
                format!("{} embeddings", side.as_str()),
                format!("matrix for (modality {}, space {}) is not declared by the schema", key.0, key.1),
            ));
        }
    }
    let mut rows = None;
    for &(m, s) in &expected {
        let matrix = embeddings.get(&(m, s)).ok_or_else(|| Error::format(location(m, s), "missing embedding matrix"))?;
        let dim = schema.spaces()[s].dim;
        if matrix.dims() != dim {
            return Err(Error::DimensionMismatch {
                location: location(m, s),
                detail: format!("matrix has {} dims, space declares {dim}", matrix.dims()),
            });
        }
        match rows {
            None => rows = Some(matrix.rows()),
            Some(r) if r != matrix.rows() => {
                return Err(Error::DimensionMismatch {
                    location: location(m, s),
                    detail: format!("{} rows, other {} matrices have {r}", matrix.rows(), side.as_str()),
                })
            }
            _ => {}
        }
    }
    // A side with no embeddings at all has no instances we can count; the
    // schema guarantees at least one scoreable pair, so this cannot happen
    // after schema validation.
    rows.ok_or_else(|| Error::format(format!("{} embeddings", side.as_str()), "no embedding matrices"))
}
