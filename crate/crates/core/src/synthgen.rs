//! Seeded synthetic multimodal datasets with known ground truth, plus the
//! "best available modality" heuristic used as a comparison baseline.
//!
//! Every reference gets a unit latent vector; each query copies the latent
//! of an anchor reference. Each shared space owns a fixed random map with
//! orthonormal columns, and every (instance, modality, space) embedding is
//! `normalize(map * latent + noise)`, with noise of norm about `sigma`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    apply_modality_dropout, EmbeddingMatrix, ModalityPair, ModalitySchema, MultimodalDataset, PresenceMask,
    RelevanceMap, SharedSpace,
};
use crate::error::{Error, Result};
use crate::metrics::{ranking_metrics, MetricsReport};
use crate::retrieval::{RankedReference, RetrievalResult};
use crate::similarity::ScoreSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpace {
    pub name: String,
    pub dim: usize,
    pub query_modalities: Vec<String>,
    pub reference_modalities: Vec<String>,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub n_references: usize,
    pub latent_dim: usize,
    pub query_modalities: Vec<String>,
    pub reference_modalities: Vec<String>,
    pub spaces: Vec<SynthSpace>,
    /// References per ground-truth group; every member of the anchor's group
    /// is relevant to a query.
    pub relevant_per_query: usize,
    /// Spread of group members around their group center.
    pub group_spread: f64,
    pub query_dropout: Vec<f64>,
    pub reference_dropout: Vec<f64>,
    pub keep_at_least_one: bool,
    pub seed: u64,
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl SynthConfig {
    /// Image/LiDAR/text on both sides, in the spirit of outdoor place
    /// recognition. One shared vision space, one text space, and two
    /// cross spaces for text against vision.
    pub fn trimodal(n_queries: usize, n_references: usize, seed: u64) -> Self {
        let vision = ["image", "lidar"];
        Self {
            n_queries,
            n_references,
            latent_dim: 16,
            query_modalities: names(&["image", "lidar", "text"]),
            reference_modalities: names(&["image", "lidar", "text"]),
            spaces: vec![
                SynthSpace {
                    name: "vision".into(),
                    dim: 32,
                    query_modalities: names(&vision),
                    reference_modalities: names(&vision),
                    noise_sigma: 0.8,
                },
                SynthSpace {
                    name: "text".into(),
                    dim: 32,
                    query_modalities: names(&["text"]),
                    reference_modalities: names(&["text"]),
                    noise_sigma: 1.0,
                },
                SynthSpace {
                    name: "text_to_vision".into(),
                    dim: 32,
                    query_modalities: names(&["text"]),
                    reference_modalities: names(&vision),
                    noise_sigma: 1.4,
                },
                SynthSpace {
                    name: "vision_to_text".into(),
                    dim: 32,
                    query_modalities: names(&vision),
                    reference_modalities: names(&["text"]),
                    noise_sigma: 1.4,
                },
            ],
            relevant_per_query: 1,
            group_spread: 0.5,
            query_dropout: vec![0.0; 3],
            reference_dropout: vec![0.0; 3],
            keep_at_least_one: false,
            seed,
        }
    }

    /// Text queries against image+audio references, with a strong text-image
    /// space and a weak text-audio space.
    pub fn text_to_video(n_queries: usize, n_references: usize, seed: u64) -> Self {
        Self {
            n_queries,
            n_references,
            latent_dim: 16,
            query_modalities: names(&["text"]),
            reference_modalities: names(&["image", "audio"]),
            spaces: vec![
                SynthSpace {
                    name: "text_image".into(),
                    dim: 32,
                    query_modalities: names(&["text"]),
                    reference_modalities: names(&["image"]),
                    noise_sigma: 1.0,
                },
                SynthSpace {
                    name: "text_audio".into(),
                    dim: 32,
                    query_modalities: names(&["text"]),
                    reference_modalities: names(&["audio"]),
                    noise_sigma: 1.2,
                },
            ],
            relevant_per_query: 1,
            group_spread: 0.5,
            query_dropout: vec![0.0],
            reference_dropout: vec![0.25, 0.0],
            keep_at_least_one: false,
            seed,
        }
    }

    /// Sets every space's noise level.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.spaces.iter_mut().for_each(|s| s.noise_sigma = sigma);
        self
    }

    pub fn with_dropout(mut self, query: f64, reference: f64) -> Self {
        self.query_dropout = vec![query; self.query_modalities.len()];
        self.reference_dropout = vec![reference; self.reference_modalities.len()];
        self
    }

    pub fn schema(&self) -> Result<ModalitySchema> {
        ModalitySchema::new(
            self.query_modalities.clone(),
            self.reference_modalities.clone(),
            self.spaces
                .iter()
                .map(|s| SharedSpace {
                    name: s.name.clone(),
                    dim: s.dim,
                    query_coverage: order_like(&s.query_modalities, &self.query_modalities),
                    reference_coverage: order_like(&s.reference_modalities, &self.reference_modalities),
                })
                .collect(),
            &BTreeMap::new(),
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_queries == 0 || self.n_references == 0 || self.latent_dim == 0 || self.relevant_per_query == 0 {
            return bad("counts must be at least 1".into());
        }
        if self.relevant_per_query > self.n_references {
            return bad("relevant_per_query exceeds the reference count".into());
        }
        if !(self.group_spread >= 0.0 && self.group_spread.is_finite()) {
            return bad(format!("group spread {} must be finite and >= 0", self.group_spread));
        }
        for s in &self.spaces {
            if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
                return bad(format!("space {}: sigma {} must be finite and >= 0", s.name, s.noise_sigma));
            }
            if s.dim < self.latent_dim {
                return bad(format!(
                    "space {}: dim {} is smaller than latent_dim {}",
                    s.name, s.dim, self.latent_dim
                ));
            }
        }
        if self.query_dropout.len() != self.query_modalities.len()
            || self.reference_dropout.len() != self.reference_modalities.len()
        {
            return bad("one dropout probability per modality is required".into());
        }
        Ok(())
    }
}

fn order_like(subset: &[String], order: &[String]) -> Vec<String> {
    let mut v = subset.to_vec();
    v.sort_by_key(|m| order.iter().position(|o| o == m).unwrap_or(usize::MAX));
    v
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, n);
        if v.iter().any(|&x| x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// `dim x latent` matrix with orthonormal columns (modified Gram-Schmidt on
/// Gaussian draws), stored column-major.
fn orthonormal_columns(rng: &mut ChaCha8Rng, dim: usize, latent: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(latent);
    while cols.len() < latent {
        let mut v = gaussian(rng, dim);
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }
    cols
}

fn embed(map: &[Vec<f64>], latent: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = map[0].len();
    let mut out = vec![0.0; dim];
    for (col, &z) in map.iter().zip(latent) {
        out.iter_mut().zip(col).for_each(|(o, c)| *o += c * z);
    }
    if sigma > 0.0 {
        let scale = sigma / (dim as f64).sqrt();
        for o in out.iter_mut() {
            *o += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    normalize(&mut out);
    out
}

/// Builds the dataset described by `config`. Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<MultimodalDataset> {
    config.validate()?;
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.latent_dim;
    let group = config.relevant_per_query;

    let mut ref_latents = Vec::with_capacity(config.n_references);
    let mut center = Vec::new();
    for r in 0..config.n_references {
        if r % group == 0 {
            center = unit_vector(&mut rng, d);
        }
        if group == 1 {
            ref_latents.push(center.clone());
        } else {
            let scale = config.group_spread / (d as f64).sqrt();
            let mut z: Vec<f64> = center
                .iter()
                .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            normalize(&mut z);
            ref_latents.push(z);
        }
    }

    let anchors: Vec<usize> = (0..config.n_queries)
        .map(|_| rng.random_range(0..config.n_references))
        .collect();
    let relevance = RelevanceMap::new(
        config.n_references,
        anchors
            .iter()
            .map(|&a| {
                let start = a - a % group;
                (start..(start + group).min(config.n_references)).collect::<BTreeSet<_>>()
            })
            .collect(),
    )?;

    let maps: Vec<Vec<Vec<f64>>> = config
        .spaces
        .iter()
        .map(|s| orthonormal_columns(&mut rng, s.dim, d))
        .collect();

    let mut query = BTreeMap::new();
    let mut reference = BTreeMap::new();
    for (s, space) in schema.spaces().iter().enumerate() {
        let sigma = config.spaces[s].noise_sigma;
        for name in &space.query_coverage {
            let m = schema.query_index(name).unwrap();
            let mut data = Vec::with_capacity(config.n_queries * space.dim);
            for &a in &anchors {
                data.extend(embed(&maps[s], &ref_latents[a], sigma, &mut rng));
            }
            query.insert((m, s), EmbeddingMatrix::from_f64_lossy(config.n_queries, space.dim, data)?);
        }
        for name in &space.reference_coverage {
            let m = schema.reference_index(name).unwrap();
            let mut data = Vec::with_capacity(config.n_references * space.dim);
            for z in &ref_latents {
                data.extend(embed(&maps[s], z, sigma, &mut rng));
            }
            reference.insert((m, s), EmbeddingMatrix::from_f64_lossy(config.n_references, space.dim, data)?);
        }
    }

    let query_mask = apply_modality_dropout(
        &PresenceMask::all_present(config.n_queries, schema.query_modality_count()),
        &config.query_dropout,
        config.seed.wrapping_add(1),
        config.keep_at_least_one,
    )?;
    let reference_mask = apply_modality_dropout(
        &PresenceMask::all_present(config.n_references, schema.reference_modality_count()),
        &config.reference_dropout,
        config.seed.wrapping_add(2),
        config.keep_at_least_one,
    )?;

    MultimodalDataset::new(schema, query, reference, query_mask, reference_mask, relevance)
}

/// Per query, ranks references by the raw score of the first pair in
/// `priority` whose query modality the query has. References without that
/// pair's reference modality trail as unanswerable in index order, as does
/// every reference of a query with no usable pair. The `probability` field
/// of the returned results carries the raw score.
pub fn heuristic_rankings<S: ScoreSource + ?Sized>(
    source: &S,
    priority: &[ModalityPair],
    query_ids: &[usize],
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    if priority.is_empty() {
        return Err(Error::InvalidArgument("priority list is empty".into()));
    }
    for &p in priority {
        if source.schema().space_for(p).is_none() {
            return Err(Error::InvalidArgument(format!(
                "priority pair {} is not scoreable",
                source.schema().pair_label(p)
            )));
        }
    }
    if let Some(q) = query_ids.iter().find(|&&q| q >= source.n_queries()) {
        return Err(Error::IndexOutOfRange(format!("query {q} of {}", source.n_queries())));
    }
    Ok(query_ids
        .iter()
        .map(|&q| {
            let pair = priority.iter().copied().find(|p| source.query_has(q, p.query));
            let mut scored: Vec<(usize, Option<f64>)> = (0..source.n_references())
                .map(|r| (r, pair.and_then(|p| source.pair_score(p, q, r))))
                .collect();
            scored.sort_by(|(ra, a), (rb, b)| match (a, b) {
                (Some(sa), Some(sb)) => sb.total_cmp(sa).then(ra.cmp(rb)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => ra.cmp(rb),
            });
            scored.truncate(k);
            RetrievalResult {
                query: q,
                ranked: scored
                    .into_iter()
                    .map(|(r, s)| RankedReference {
                        reference: r,
                        probability: s.unwrap_or(0.0),
                        unanswerable: s.is_none(),
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Metrics of [`heuristic_rankings`] at `ks`.
pub fn heuristic_baseline<S: ScoreSource + ?Sized>(
    source: &S,
    priority: &[ModalityPair],
    query_ids: &[usize],
    ks: &[usize],
) -> Result<MetricsReport> {
    let k = ks.iter().copied().max().unwrap_or(1);
    let rankings = heuristic_rankings(source, priority, query_ids, k)?;
    ranking_metrics(&rankings, source.relevance(), ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cols = orthonormal_columns(&mut rng, 12, 5);
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig::text_to_video(10, 10, 0);
        c.spaces[0].dim = 4;
        assert!(generate(&c).is_err());
        let mut c = SynthConfig::text_to_video(10, 10, 0);
        c.spaces[0].noise_sigma = f64::NAN;
        assert!(generate(&c).is_err());
        let mut c = SynthConfig::text_to_video(10, 10, 0);
        c.reference_dropout = vec![0.1];
        assert!(generate(&c).is_err());
    }

    #[test]
    fn groups_define_relevance() {
        let mut c = SynthConfig::trimodal(20, 30, 5);
        c.relevant_per_query = 3;
        let ds = generate(&c).unwrap();
        for q in 0..20 {
            let rel = ds.relevance().relevant(q);
            assert_eq!(rel.len(), 3);
            let first = *rel.iter().next().unwrap();
            assert_eq!(first % 3, 0);
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let ds = generate(&SynthConfig::text_to_video(5, 7, 2)).unwrap();
        for (_, m) in ds.embeddings(crate::dataset::Side::Reference) {
            for i in 0..m.rows() {
                let n: f64 = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }
}
