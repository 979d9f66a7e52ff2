mod common;

use std::path::Path;

use conformal_retrieval::dataset::{
    load_dataset, save_dataset, write_embedding_file, write_mask_file, write_positions, write_relevance_pairs,
    EmbeddingMatrix, Position, PresenceMask,
};
use conformal_retrieval::{Error, RelevanceMap, ScoreSource, Side};

fn emb(path: &Path, rows: usize, dims: usize, seed: f64) {
    let data = (0..rows * dims).map(|i| ((i as f64 + seed) * 0.37).sin()).collect();
    write_embedding_file(path, &EmbeddingMatrix::from_f64_lossy(rows, dims, data).unwrap()).unwrap();
}

/// Two queries (text, image) and three references (image, lidar) over two
/// spaces.
fn write_fixture(dir: &Path) {
    emb(&dir.join("q_text_clip.a2ae"), 2, 2, 0.0);
    emb(&dir.join("q_image_clip.a2ae"), 2, 2, 1.0);
    emb(&dir.join("r_image_clip.a2ae"), 3, 2, 2.0);
    emb(&dir.join("q_image_loc.a2ae"), 2, 3, 3.0);
    emb(&dir.join("r_lidar_loc.a2ae"), 3, 3, 4.0);
    let mut qm = PresenceMask::all_present(2, 2);
    qm.set(1, 0, false);
    write_mask_file(&dir.join("qm.a2am"), &qm).unwrap();
    write_mask_file(&dir.join("rm.a2am"), &PresenceMask::all_present(3, 2)).unwrap();
    write_relevance_pairs(&dir.join("rel.csv"), &RelevanceMap::from_pairs(2, 3, [(0, 1), (1, 2)]).unwrap()).unwrap();
    std::fs::write(
        dir.join("manifest.json"),
        r#"{
  "version": 1,
  "query_modalities": ["text", "image"],
  "reference_modalities": ["image", "lidar"],
  "spaces": [
    {"name": "clip", "dim": 2,
     "query_embeddings": {"text": "q_text_clip.a2ae", "image": "q_image_clip.a2ae"},
     "reference_embeddings": {"image": "r_image_clip.a2ae"}},
    {"name": "loc", "dim": 3,
     "query_embeddings": {"image": "q_image_loc.a2ae"},
     "reference_embeddings": {"lidar": "r_lidar_loc.a2ae"}}
  ],
  "query_mask": "qm.a2am",
  "reference_mask": "rm.a2am",
  "relevance": {"type": "pairs", "path": "rel.csv"}
}
"#,
    )
    .unwrap();
}

#[test]
fn loads_two_by_three_fixture() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
    assert_eq!((ds.n_queries(), ds.n_references()), (2, 3));
    assert_eq!(ds.schema().scoreable_pairs().len(), 3);
    assert!(ds.relevance().is_relevant(0, 1));
    assert!(!ds.query_mask().get(1, 0));
    assert_eq!(ds.embedding(Side::Reference, 1, 1).unwrap().dims(), 3);
    let text_image = ds.schema().parse_pair("text:image").unwrap();
    assert!(ds.pair_score(text_image, 0, 0).is_some());
    assert!(ds.pair_score(text_image, 1, 0).is_none());
}

#[test]
fn mask_row_count_mismatch_is_reported() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    // 5-row query mask against 2-row query embeddings.
    write_mask_file(&dir.path().join("qm.a2am"), &PresenceMask::all_present(5, 2)).unwrap();
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(err.to_string().contains("dimension mismatch"), "{err}");
    assert!(err.is_data_format());
}

#[test]
fn embedding_row_mismatch_within_a_side() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    emb(&dir.path().join("r_lidar_loc.a2ae"), 4, 3, 0.0);
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(err.to_string().contains("dimension mismatch"), "{err}");
}

fn ambiguous_manifest(dir: &Path, override_entry: &str) {
    emb(&dir.join("qa.a2ae"), 1, 2, 0.0);
    emb(&dir.join("ra.a2ae"), 1, 2, 1.0);
    emb(&dir.join("qb.a2ae"), 1, 2, 2.0);
    emb(&dir.join("rb.a2ae"), 1, 2, 3.0);
    std::fs::write(dir.join("rel.csv"), "query_id,reference_id\n0,0\n").unwrap();
    std::fs::write(
        dir.join("manifest.json"),
        format!(
            r#"{{"version": 1, "query_modalities": ["text"], "reference_modalities": ["lidar"],
  "spaces": [
    {{"name": "a", "dim": 2, "query_embeddings": {{"text": "qa.a2ae"}}, "reference_embeddings": {{"lidar": "ra.a2ae"}}}},
    {{"name": "b", "dim": 2, "query_embeddings": {{"text": "qb.a2ae"}}, "reference_embeddings": {{"lidar": "rb.a2ae"}}}}
  ],
  "relevance": {{"type": "pairs", "path": "rel.csv"}}{override_entry}}}"#
        ),
    )
    .unwrap();
}

#[test]
fn ambiguous_coverage_needs_override() {
    let dir = common::temp_dir();
    ambiguous_manifest(dir.path(), "");
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(err.to_string().contains("ambiguous pair coverage"), "{err}");

    ambiguous_manifest(dir.path(), r#", "pair_space": {"text:lidar": "b"}"#);
    let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
    let pair = ds.schema().parse_pair("text:lidar").unwrap();
    assert_eq!(ds.schema().space_for(pair), Some(1));
}

#[test]
fn positions_relevance() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    write_positions(&dir.path().join("qp.csv"), &[Position { x: 0.0, y: 0.0 }, Position { x: 100.0, y: 0.0 }]).unwrap();
    write_positions(
        &dir.path().join("rp.csv"),
        &[Position { x: 3.0, y: 4.0 }, Position { x: 30.0, y: 0.0 }, Position { x: 95.0, y: 0.0 }],
    )
    .unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap().replace(
        r#"{"type": "pairs", "path": "rel.csv"}"#,
        r#"{"type": "positions", "query_path": "qp.csv", "reference_path": "rp.csv", "threshold_meters": 20.0}"#,
    );
    std::fs::write(dir.path().join("manifest.json"), manifest).unwrap();
    let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(ds.relevance().relevant(0).iter().copied().collect::<Vec<_>>(), vec![0]);
    assert_eq!(ds.relevance().relevant(1).iter().copied().collect::<Vec<_>>(), vec![2]);
}

#[test]
fn missing_file_names_the_path() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    std::fs::remove_file(dir.path().join("r_image_clip.a2ae")).unwrap();
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("r_image_clip.a2ae"), "{err}");
}

#[test]
fn unknown_manifest_field_is_rejected() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    let m = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap().replacen("{", r#"{"extra": 1,"#, 1);
    std::fs::write(dir.path().join("manifest.json"), m).unwrap();
    assert!(load_dataset(&dir.path().join("manifest.json")).unwrap_err().is_data_format());
}

#[test]
fn out_of_range_relevance_is_rejected() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    std::fs::write(dir.path().join("rel.csv"), "query_id,reference_id\n0,3\n").unwrap();
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(err.is_data_format(), "{err}");
}

#[test]
fn save_then_load_is_stable() {
    let dir = common::temp_dir();
    write_fixture(dir.path());
    let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
    let out1 = dir.path().join("copy1");
    let out2 = dir.path().join("copy2");
    let m1 = save_dataset(&ds, &out1).unwrap();
    let reloaded = load_dataset(&m1).unwrap();
    save_dataset(&reloaded, &out2).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(&out1).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for n in names {
        assert_eq!(std::fs::read(out1.join(&n)).unwrap(), std::fs::read(out2.join(&n)).unwrap(), "{n:?}");
    }
    assert_eq!(reloaded.schema().fingerprint(), ds.schema().fingerprint());
}
