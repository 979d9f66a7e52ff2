use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A (query modality, reference modality) index pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModalityPair {
    pub query: usize,
    pub reference: usize,
}

impl ModalityPair {
    pub fn new(query: usize, reference: usize) -> Self {
        Self { query, reference }
    }
}

/// A bimodal (or wider) embedding space in which the covered query and
/// reference modalities are comparable by cosine similarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedSpace {
    pub name: String,
    pub dim: usize,
    pub query_coverage: Vec<String>,
    pub reference_coverage: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalitySchema {
    query_modalities: Vec<String>,
    reference_modalities: Vec<String>,
    spaces: Vec<SharedSpace>,
    // row-major over (query modality, reference modality)
    pair_space: Vec<Option<usize>>,
}

impl ModalitySchema {
    /// Builds a schema and resolves which space scores each modality pair.
    ///
    /// `overrides` maps `(query modality, reference modality)` names to the
    /// space that should score the pair when several spaces cover it.
    pub fn new(
        query_modalities: Vec<String>,
        reference_modalities: Vec<String>,
        spaces: Vec<SharedSpace>,
        overrides: &BTreeMap<(String, String), String>,
    ) -> Result<Self> {
        check_unique("query_modalities", &query_modalities)?;
        check_unique("reference_modalities", &reference_modalities)?;
        check_unique(
            "spaces",
            &spaces.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        )?;

        let nq = query_modalities.len();
        let nr = reference_modalities.len();
        let mut candidates: Vec<Vec<usize>> = vec![Vec::new(); nq * nr];
        for (s, space) in spaces.iter().enumerate() {
            if space.dim == 0 {
                return Err(Error::format(
                    format!("spaces[{}].dim", space.name),
                    "dimension must be at least 1",
                ));
            }
            let qs = resolve_names(&space.name, "query", &space.query_coverage, &query_modalities)?;
            let rs = resolve_names(
                &space.name,
                "reference",
                &space.reference_coverage,
                &reference_modalities,
            )?;
            for &j in &qs {
                for &k in &rs {
                    candidates[j * nr + k].push(s);
                }
            }
        }

        let mut pair_space = vec![None; nq * nr];
        for j in 0..nq {
            for k in 0..nr {
                let c = &candidates[j * nr + k];
                let key = (query_modalities[j].clone(), reference_modalities[k].clone());
                pair_space[j * nr + k] = match (c.len(), overrides.get(&key)) {
                    (0, None) => None,
                    (1, None) => Some(c[0]),
                    (_, Some(name)) => {
                        let chosen = c.iter().copied().find(|&s| &spaces[s].name == name);
                        match chosen {
                            Some(s) => Some(s),
                            None => {
                                return Err(Error::format(
                                    format!("pair_space[{}:{}]", key.0, key.1),
                                    format!("space {name:?} does not cover this pair"),
                                ))
                            }
                        }
                    }
                    (_, None) => {
                        return Err(Error::AmbiguousPairCoverage {
                            query: key.0,
                            reference: key.1,
                            first: spaces[c[0]].name.clone(),
                            second: spaces[c[1]].name.clone(),
                        })
                    }
                };
            }
        }

        for (q, r) in overrides.keys() {
            let j = query_modalities.iter().position(|m| m == q);
            let k = reference_modalities.iter().position(|m| m == r);
            if j.is_none() || k.is_none() {
                return Err(Error::format(
                    format!("pair_space[{q}:{r}]"),
                    "unknown modality",
                ));
            }
        }

        let schema = Self {
            query_modalities,
            reference_modalities,
            spaces,
            pair_space,
        };
        if schema.scoreable_pairs().is_empty() {
            return Err(Error::format("spaces", "no modality pair is covered by any space"));
        }
        Ok(schema)
    }

    pub fn query_modalities(&self) -> &[String] {
        &self.query_modalities
    }

    pub fn reference_modalities(&self) -> &[String] {
        &self.reference_modalities
    }

    pub fn spaces(&self) -> &[SharedSpace] {
        &self.spaces
    }

    pub fn query_modality_count(&self) -> usize {
        self.query_modalities.len()
    }

    pub fn reference_modality_count(&self) -> usize {
        self.reference_modalities.len()
    }

    pub fn query_index(&self, name: &str) -> Option<usize> {
        self.query_modalities.iter().position(|m| m == name)
    }

    pub fn reference_index(&self, name: &str) -> Option<usize> {
        self.reference_modalities.iter().position(|m| m == name)
    }

    pub fn space_index(&self, name: &str) -> Option<usize> {
        self.spaces.iter().position(|s| s.name == name)
    }

    /// Space that scores `pair`, if any.
    pub fn space_for(&self, pair: ModalityPair) -> Option<usize> {
        if pair.query >= self.query_modalities.len()
            || pair.reference >= self.reference_modalities.len()
        {
            return None;
        }
        self.pair_space[pair.query * self.reference_modalities.len() + pair.reference]
    }

    /// Every pair covered by some space, in row-major order.
    pub fn scoreable_pairs(&self) -> Vec<ModalityPair> {
        let nr = self.reference_modalities.len();
        self.pair_space
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| ModalityPair::new(i / nr, i % nr))
            .collect()
    }

    /// Pairs that resolved through the override map rather than unique
    /// coverage. Needed to re-emit a manifest.
    pub(crate) fn ambiguous_pairs(&self) -> Vec<(ModalityPair, usize)> {
        let mut out = Vec::new();
        for pair in self.scoreable_pairs() {
            let covering = self
                .spaces
                .iter()
                .filter(|s| {
                    s.query_coverage.contains(&self.query_modalities[pair.query])
                        && s.reference_coverage
                            .contains(&self.reference_modalities[pair.reference])
                })
                .count();
            if covering > 1 {
                out.push((pair, self.space_for(pair).unwrap()));
            }
        }
        out
    }

    /// Human-readable `query:reference` label.
    pub fn pair_label(&self, pair: ModalityPair) -> String {
        format!(
            "{}:{}",
            self.query_modalities[pair.query], self.reference_modalities[pair.reference]
        )
    }

    /// Parses a `query:reference` label.
    pub fn parse_pair(&self, label: &str) -> Result<ModalityPair> {
        let (q, r) = label
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("pair {label:?} is not of the form query:reference")))?;
        let j = self
            .query_index(q)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown query modality {q:?}")))?;
        let k = self
            .reference_index(r)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown reference modality {r:?}")))?;
        Ok(ModalityPair::new(j, k))
    }

    /// SHA-256 over a canonical rendering of modalities, spaces and the
    /// resolved pair map. Instance counts are not part of the fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        feed("query");
        self.query_modalities.iter().for_each(|m| feed(m));
        feed("reference");
        self.reference_modalities.iter().for_each(|m| feed(m));
        for space in &self.spaces {
            feed("space");
            feed(&space.name);
            feed(&space.dim.to_string());
        }
        feed("pairs");
        for pair in self.scoreable_pairs() {
            feed(&self.pair_label(pair));
            feed(&self.spaces[self.space_for(pair).unwrap()].name);
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_unique(field: &str, names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::format(field, format!("duplicate name {n:?}")));
        }
    }
    Ok(())
}

fn resolve_names(space: &str, side: &str, names: &[String], all: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            all.iter().position(|m| m == n).ok_or_else(|| {
                Error::format(
                    format!("spaces[{space}].{side}_embeddings"),
                    format!("unknown {side} modality {n:?}"),
                )
            })
        })
        .collect()
}
