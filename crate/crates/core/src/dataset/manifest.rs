//! JSON manifest describing a dataset directory.
//!
//! ```json
//! {
//!   "version": 1,
//!   "query_modalities": ["text"],
//!   "reference_modalities": ["image", "audio"],
//!   "spaces": [
//!     {"name": "clip", "dim": 512,
//!      "query_embeddings": {"text": "q_text_clip.a2ae"},
//!      "reference_embeddings": {"image": "r_image_clip.a2ae"}}
//!   ],
//!   "query_mask": "query_mask.a2am",
//!   "reference_mask": "reference_mask.a2am",
//!   "relevance": {"type": "pairs", "path": "relevance.csv"},
//!   "pair_space": {"text:image": "clip"}
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    read_embedding_file, read_mask_file, read_positions, read_relevance_pairs, relevance_from_positions,
    write_embedding_file, write_mask_file, write_relevance_pairs, ModalitySchema, MultimodalDataset,
    PresenceMask, SharedSpace, Side,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    query_modalities: Vec<String>,
    reference_modalities: Vec<String>,
    spaces: Vec<ManifestSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_mask: Option<String>,
    relevance: ManifestRelevance,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pair_space: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSpace {
    name: String,
    dim: usize,
    #[serde(default)]
    query_embeddings: BTreeMap<String, String>,
    #[serde(default)]
    reference_embeddings: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ManifestRelevance {
    Pairs {
        path: String,
    },
    Positions {
        query_path: String,
        reference_path: String,
        threshold_meters: f64,
    },
}

fn ordered_keys(map: &BTreeMap<String, String>, order: &[String]) -> Vec<String> {
    let mut keys: Vec<String> = map.keys().cloned().collect();
    keys.sort_by_key(|k| order.iter().position(|o| o == k).unwrap_or(usize::MAX));
    keys
}

/// Reads and validates a dataset from its manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<MultimodalDataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path.display().to_string(), e))?;
    if manifest.version != 1 {
        return Err(Error::Unsupported {
            path: manifest_path.into(),
            field: "version",
            value: manifest.version as u64,
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf { base.join(p) };

    let mut overrides = BTreeMap::new();
    for (key, space) in &manifest.pair_space {
        let (q, r) = key.split_once(':').ok_or_else(|| {
            Error::format(format!("pair_space[{key}]"), "key must have the form query:reference")
        })?;
        overrides.insert((q.to_string(), r.to_string()), space.clone());
    }
    let spaces = manifest
        .spaces
        .iter()
        .map(|s| SharedSpace {
            name: s.name.clone(),
            dim: s.dim,
            query_coverage: ordered_keys(&s.query_embeddings, &manifest.query_modalities),
            reference_coverage: ordered_keys(&s.reference_embeddings, &manifest.reference_modalities),
        })
        .collect();
    let schema = ModalitySchema::new(
        manifest.query_modalities.clone(),
        manifest.reference_modalities.clone(),
        spaces,
        &overrides,
    )?;

    let mut query = BTreeMap::new();
    let mut reference = BTreeMap::new();
    for (s, space) in manifest.spaces.iter().enumerate() {
        for (name, path) in &space.query_embeddings {
            let m = schema.query_index(name).unwrap();
            query.insert((m, s), read_embedding_file(&resolve(path))?);
        }
        for (name, path) in &space.reference_embeddings {
            let m = schema.reference_index(name).unwrap();
            reference.insert((m, s), read_embedding_file(&resolve(path))?);
        }
    }
    let n_queries = query.values().next().map_or(0, |m| m.rows());
    let n_references = reference.values().next().map_or(0, |m| m.rows());

    let query_mask = match &manifest.query_mask {
        Some(p) => read_mask_file(&resolve(p))?,
        None => PresenceMask::all_present(n_queries, schema.query_modality_count()),
    };
    let reference_mask = match &manifest.reference_mask {
        Some(p) => read_mask_file(&resolve(p))?,
        None => PresenceMask::all_present(n_references, schema.reference_modality_count()),
    };

    let relevance = match &manifest.relevance {
        ManifestRelevance::Pairs { path } => read_relevance_pairs(&resolve(path), n_queries, n_references)?,
        ManifestRelevance::Positions {
            query_path,
            reference_path,
            threshold_meters,
        } => {
            let qp = read_positions(&resolve(query_path), n_queries)?;
            let rp = read_positions(&resolve(reference_path), n_references)?;
            relevance_from_positions(&qp, &rp, *threshold_meters)?
        }
    };

    MultimodalDataset::new(schema, query, reference, query_mask, reference_mask, relevance)
}

fn file_stem(side: Side, modality: &str, space: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect()
    };
    let prefix = match side {
        Side::Query => "q",
        Side::Reference => "r",
    };
    format!("{prefix}_{}_{}.a2ae", clean(modality), clean(space))
}

/// Writes the dataset as a manifest plus binary and CSV files into `dir`,
/// returning the manifest path. Output is a deterministic function of the
/// dataset.
pub fn save_dataset(dataset: &MultimodalDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = dataset.schema();

    let mut spaces: Vec<ManifestSpace> = schema
        .spaces()
        .iter()
        .map(|s| ManifestSpace {
            name: s.name.clone(),
            dim: s.dim,
            query_embeddings: BTreeMap::new(),
            reference_embeddings: BTreeMap::new(),
        })
        .collect();
    for side in [Side::Query, Side::Reference] {
        for ((m, s), matrix) in dataset.embeddings(side) {
            let modality = match side {
                Side::Query => &schema.query_modalities()[m],
                Side::Reference => &schema.reference_modalities()[m],
            };
            let name = file_stem(side, modality, &spaces[s].name);
            write_embedding_file(&dir.join(&name), matrix)?;
            let target = match side {
                Side::Query => &mut spaces[s].query_embeddings,
                Side::Reference => &mut spaces[s].reference_embeddings,
            };
            target.insert(modality.clone(), name);
        }
    }

    write_mask_file(&dir.join("query_mask.a2am"), dataset.query_mask())?;
    write_mask_file(&dir.join("reference_mask.a2am"), dataset.reference_mask())?;
    write_relevance_pairs(&dir.join("relevance.csv"), dataset.relevance())?;

    let pair_space = schema
        .ambiguous_pairs()
        .into_iter()
        .map(|(pair, s)| (schema.pair_label(pair), schema.spaces()[s].name.clone()))
        .collect();

    let manifest = Manifest {
        version: 1,
        query_modalities: schema.query_modalities().to_vec(),
        reference_modalities: schema.reference_modalities().to_vec(),
        spaces,
        query_mask: Some("query_mask.a2am".into()),
        reference_mask: Some("reference_mask.a2am".into()),
        relevance: ManifestRelevance::Pairs {
            path: "relevance.csv".into(),
        },
        pair_space,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format("manifest", e))?;
    bytes.push(b'\n');
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, &bytes)?;
    Ok(path)
}
