//! Two-stage calibration.
//!
//! Stage one fits a [`PredictionBand`] per scoreable modality pair, turning
//! every raw cross-modal score into a conformal probability on a common
//! `[0, 1]` scale. Stage two fuses the observed probabilities of an instance
//! pair into one scalar and fits a second band on those fused values, using
//! the same calibration queries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{LabeledScore, PredictionBand};
use crate::dataset::{ModalityPair, ModalitySchema};
use crate::error::{Error, Result};
use crate::io::{to_json_bytes, write_atomic};
use crate::parallel::ordered_map;
use crate::similarity::{similarity_matrix_unchecked, ScoreSource, SimilarityMatrix};

pub const MODEL_VERSION: u32 = 1;

/// How a conformal matrix is collapsed to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuserKind {
    #[default]
    Mean,
    Max,
}

impl fmt::Display for FuserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FuserKind::Mean => "mean",
            FuserKind::Max => "max",
        })
    }
}

impl FromStr for FuserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FuserKind::Mean),
            "max" => Ok(FuserKind::Max),
            other => Err(Error::InvalidArgument(format!("unknown fuser {other:?}, expected mean or max"))),
        }
    }
}

/// Keeps every positive calibration pair and each negative one with
/// probability `ratio`. Coverage then holds for the reweighted pair
/// distribution rather than the test-time one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeSubsample {
    pub ratio: f64,
    pub seed: u64,
}

impl NegativeSubsample {
    fn keep_mask(&self, query: usize, n_references: usize) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(query as u64);
        (0..n_references).map(|_| rng.random::<f64>() < self.ratio).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub fuser: FuserKind,
    pub negative_subsample: Option<NegativeSubsample>,
    pub workers: usize,
}

/// First-stage conformal probabilities for one instance pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl ConformalMatrix {
    pub fn from_cells(rows: usize, cols: usize, cells: &[Option<f64>]) -> Self {
        assert_eq!(cells.len(), rows * cols);
        Self {
            rows,
            cols,
            values: cells.iter().map(|c| c.unwrap_or(0.0)).collect(),
            observed: cells.iter().map(Option::is_some).collect(),
        }
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

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.observed)
            .filter(|(_, &o)| o)
            .map(|(&v, _)| v)
    }
}

/// MEAN or MAX over observed entries; `None` when nothing is observed.
pub fn fuse(conf: &ConformalMatrix, fuser: FuserKind) -> Option<f64> {
    let mut count = 0usize;
    let mut acc = match fuser {
        FuserKind::Mean => 0.0,
        FuserKind::Max => f64::NEG_INFINITY,
    };
    for v in conf.observed_values() {
        count += 1;
        acc = match fuser {
            FuserKind::Mean => acc + v,
            FuserKind::Max => acc.max(v),
        };
    }
    match (count, fuser) {
        (0, _) => None,
        (n, FuserKind::Mean) => Some(acc / n as f64),
        (_, FuserKind::Max) => Some(acc),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedModel {
    schema_fingerprint: String,
    rows: usize,
    cols: usize,
    // row-major over modality pairs; None when the pair has no band
    bands: Vec<Option<PredictionBand>>,
    labels: Labels,
    fuser: FuserKind,
    second_stage: PredictionBand,
    calibration_queries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Labels {
    query_modalities: Vec<String>,
    reference_modalities: Vec<String>,
    pair_spaces: Vec<Option<String>>,
}

impl Labels {
    fn from_schema(schema: &ModalitySchema) -> Self {
        let cols = schema.reference_modality_count();
        let pair_spaces = (0..schema.query_modality_count() * cols)
            .map(|i| {
                schema
                    .space_for(ModalityPair::new(i / cols, i % cols))
                    .map(|s| schema.spaces()[s].name.clone())
            })
            .collect();
        Self {
            query_modalities: schema.query_modalities().to_vec(),
            reference_modalities: schema.reference_modalities().to_vec(),
            pair_spaces,
        }
    }
}

impl CalibratedModel {
    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub fn fuser(&self) -> FuserKind {
        self.fuser
    }

    pub fn band(&self, pair: ModalityPair) -> Option<&PredictionBand> {
        if pair.query >= self.rows || pair.reference >= self.cols {
            return None;
        }
        self.bands[pair.query * self.cols + pair.reference].as_ref()
    }

    /// Pairs that carry a first-stage band, row-major.
    pub fn calibrated_pairs(&self) -> Vec<ModalityPair> {
        (0..self.bands.len())
            .filter(|&i| self.bands[i].is_some())
            .map(|i| ModalityPair::new(i / self.cols, i % self.cols))
            .collect()
    }

    pub fn second_stage(&self) -> &PredictionBand {
        &self.second_stage
    }

    pub fn calibration_queries(&self) -> &[usize] {
        &self.calibration_queries
    }

    /// Fails with a model/data mismatch unless `schema` is the one the model
    /// was fitted on.
    pub fn check_schema(&self, schema: &ModalitySchema) -> Result<()> {
        let fp = schema.fingerprint();
        if fp != self.schema_fingerprint {
            return Err(Error::ModelMismatch(format!(
                "model was fitted on schema {}, dataset schema is {}",
                self.schema_fingerprint, fp
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> ModelFile {
        let first_stage = (0..self.bands.len())
            .filter_map(|i| {
                let band = self.bands[i].as_ref()?;
                Some(PairBandFile {
                    query_modality: self.labels.query_modalities[i / self.cols].clone(),
                    reference_modality: self.labels.reference_modalities[i % self.cols].clone(),
                    space: self.labels.pair_spaces[i].clone().unwrap_or_default(),
                    band: BandFile::from(band),
                })
            })
            .collect();
        ModelFile {
            version: MODEL_VERSION,
            schema_fingerprint: self.schema_fingerprint.clone(),
            fuser: self.fuser,
            first_stage,
            second_stage: BandFile::from(&self.second_stage),
            calibration_queries: self.calibration_queries.clone(),
        }
    }

    /// Binds a parsed model file to the schema it must score against.
    pub fn from_file(file: ModelFile, schema: &ModalitySchema) -> Result<Self> {
        if file.version != MODEL_VERSION {
            return Err(Error::format("model", format!("unsupported model version {}", file.version)));
        }
        let fp = schema.fingerprint();
        if fp != file.schema_fingerprint {
            return Err(Error::ModelMismatch(format!(
                "model was fitted on schema {}, dataset schema is {}",
                file.schema_fingerprint, fp
            )));
        }
        let rows = schema.query_modality_count();
        let cols = schema.reference_modality_count();
        let mut bands = vec![None; rows * cols];
        for entry in file.first_stage {
            let pair = schema
                .parse_pair(&format!("{}:{}", entry.query_modality, entry.reference_modality))
                .map_err(|e| Error::ModelMismatch(e.to_string()))?;
            let space = schema.space_for(pair).map(|s| schema.spaces()[s].name.as_str());
            if space != Some(entry.space.as_str()) {
                return Err(Error::ModelMismatch(format!(
                    "band for {} was fitted in space {:?}, schema scores it in {:?}",
                    schema.pair_label(pair),
                    entry.space,
                    space
                )));
            }
            bands[pair.query * cols + pair.reference] = Some(entry.band.into_band()?);
        }
        Ok(Self {
            schema_fingerprint: file.schema_fingerprint,
            rows,
            cols,
            bands,
            labels: Labels::from_schema(schema),
            fuser: file.fuser,
            second_stage: file.second_stage.into_band()?,
            calibration_queries: file.calibration_queries,
        })
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        to_json_bytes(&self.to_file())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json_bytes()?)
    }

    pub fn load(path: &Path, schema: &ModalitySchema) -> Result<Self> {
        Self::from_file(ModelFile::read(path)?, schema)
    }
}

/// Serialized band: `{theta_min, theta_max, sorted_gamma}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandFile {
    pub theta_min: f64,
    pub theta_max: f64,
    pub sorted_gamma: Vec<f64>,
}

impl From<&PredictionBand> for BandFile {
    fn from(b: &PredictionBand) -> Self {
        Self {
            theta_min: b.theta_min(),
            theta_max: b.theta_max(),
            sorted_gamma: b.sorted_gamma().to_vec(),
        }
    }
}

impl BandFile {
    pub fn into_band(self) -> Result<PredictionBand> {
        PredictionBand::from_parts(self.theta_min, self.theta_max, self.sorted_gamma)
            .map_err(|e| Error::format("model band", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairBandFile {
    pub query_modality: String,
    pub reference_modality: String,
    pub space: String,
    #[serde(flatten)]
    pub band: BandFile,
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub schema_fingerprint: String,
    pub fuser: FuserKind,
    pub first_stage: Vec<PairBandFile>,
    pub second_stage: BandFile,
    #[serde(default)]
    pub calibration_queries: Vec<usize>,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path.display().to_string(), e))
    }
}

/// `(score, label)` pairs for one modality pair over the calibration
/// queries: every (query with the query modality, reference with the
/// reference modality) combination, labeled by relevance.
pub fn build_calibration_pairs<S: ScoreSource + ?Sized>(
    source: &S,
    calibration_queries: &[usize],
    pair: ModalityPair,
    subsample: Option<&NegativeSubsample>,
) -> Result<Vec<LabeledScore>> {
    if source.schema().space_for(pair).is_none() {
        return Err(Error::InvalidArgument(format!(
            "modality pair {} is not scoreable",
            source.schema().pair_label(pair)
        )));
    }
    check_queries(source, calibration_queries)?;
    let mut out = Vec::new();
    for &q in calibration_queries {
        collect_pair_scores(source, q, pair, subsample, &mut out);
    }
    Ok(out)
}

fn collect_pair_scores<S: ScoreSource + ?Sized>(
    source: &S,
    query: usize,
    pair: ModalityPair,
    subsample: Option<&NegativeSubsample>,
    out: &mut Vec<LabeledScore>,
) {
    if !source.query_has(query, pair.query) {
        return;
    }
    let keep = subsample.map(|s| s.keep_mask(query, source.n_references()));
    let relevance = source.relevance();
    for r in 0..source.n_references() {
        let correct = relevance.is_relevant(query, r);
        if !correct && keep.as_ref().is_some_and(|k| !k[r]) {
            continue;
        }
        if let Some(theta) = source.pair_score(pair, query, r) {
            out.push(LabeledScore::new(theta, correct));
        }
    }
}

fn check_queries<S: ScoreSource + ?Sized>(source: &S, ids: &[usize]) -> Result<()> {
    match ids.iter().find(|&&q| q >= source.n_queries()) {
        Some(q) => Err(Error::IndexOutOfRange(format!("query {q} of {}", source.n_queries()))),
        None => Ok(()),
    }
}

/// Fits both stages on the given calibration queries.
pub fn fit_model<S: ScoreSource + ?Sized>(
    source: &S,
    calibration_queries: &[usize],
    options: &FitOptions,
) -> Result<CalibratedModel> {
    if calibration_queries.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 calibration queries, got {}",
            calibration_queries.len()
        )));
    }
    check_queries(source, calibration_queries)?;
    if let Some(s) = &options.negative_subsample {
        if !(s.ratio > 0.0 && s.ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "negative subsample ratio must lie in (0, 1], got {}",
                s.ratio
            )));
        }
    }
    let schema = source.schema();
    let rows = schema.query_modality_count();
    let cols = schema.reference_modality_count();
    let subsample = options.negative_subsample.as_ref();

    let pairs = schema.scoreable_pairs();
    let fitted = ordered_map(&pairs, options.workers, |&pair| {
        let scores = build_calibration_pairs(source, calibration_queries, pair, subsample)?;
        match PredictionBand::fit(&scores) {
            Ok(band) => Ok(Some(band)),
            // too few pairs or a flat score range: the pair stays unobserved
            Err(Error::InsufficientCalibration { .. } | Error::DegenerateRange { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut bands = vec![None; rows * cols];
    for (pair, band) in pairs.iter().zip(fitted) {
        bands[pair.query * cols + pair.reference] = band?;
    }
    if bands.iter().all(Option::is_none) {
        return Err(Error::NoFittablePairs);
    }

    let first_stage_only = |m: &SimilarityMatrix| conformal_matrix_with(&bands, cols, m);
    let per_query = ordered_map(calibration_queries, options.workers, |&q| {
        let keep = subsample.map(|s| s.keep_mask(q, source.n_references()));
        let mut out = Vec::new();
        for r in 0..source.n_references() {
            let correct = source.relevance().is_relevant(q, r);
            if !correct && keep.as_ref().is_some_and(|k| !k[r]) {
                continue;
            }
            let sim = similarity_matrix_unchecked(source, q, r);
            if let Some(v) = fuse(&first_stage_only(&sim), options.fuser) {
                out.push(LabeledScore::new(v, correct));
            }
        }
        out
    });
    let fused: Vec<LabeledScore> = per_query.into_iter().flatten().collect();
    let second_stage = PredictionBand::fit(&fused)?;

    Ok(CalibratedModel {
        schema_fingerprint: schema.fingerprint(),
        rows,
        cols,
        bands,
        labels: Labels::from_schema(schema),
        fuser: options.fuser,
        second_stage,
        calibration_queries: calibration_queries.to_vec(),
    })
}

fn conformal_matrix_with(bands: &[Option<PredictionBand>], cols: usize, sim: &SimilarityMatrix) -> ConformalMatrix {
    let n = sim.rows() * sim.cols();
    let mut values = vec![0.0; n];
    let mut observed = vec![false; n];
    for (pair, theta) in sim.observed_entries() {
        let i = pair.query * cols + pair.reference;
        if let Some(band) = &bands[i] {
            values[i] = band.conformal_probability(theta);
            observed[i] = true;
        }
    }
    ConformalMatrix {
        rows: sim.rows(),
        cols: sim.cols(),
        values,
        observed,
    }
}

/// Maps each observed similarity through its pair's first-stage band.
/// Entries whose pair has no band become unobserved.
pub fn conformal_matrix(model: &CalibratedModel, sim: &SimilarityMatrix) -> ConformalMatrix {
    assert_eq!(
        (sim.rows(), sim.cols()),
        (model.rows, model.cols),
        "similarity matrix shape does not match the model"
    );
    conformal_matrix_with(&model.bands, model.cols, sim)
}

/// Final calibrated score for one instance pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub probability: f64,
    /// Fused first-stage value; `None` for unanswerable pairs.
    pub fused: Option<f64>,
    /// Mean band-normalized raw score over the same entries. Only used to
    /// order pairs that tie exactly on the calibrated values.
    pub normalized: Option<f64>,
}

impl PairScore {
    pub fn unanswerable(&self) -> bool {
        self.fused.is_none()
    }
}

pub(crate) fn score_pair_unchecked<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    reference: usize,
) -> PairScore {
    let sim = similarity_matrix_unchecked(source, query, reference);
    score_similarity(model, &sim)
}

/// Second-stage probability for a prepared similarity matrix.
pub fn score_similarity(model: &CalibratedModel, sim: &SimilarityMatrix) -> PairScore {
    let fused = fuse(&conformal_matrix(model, sim), model.fuser);
    let (mut sum, mut n) = (0.0, 0usize);
    for (pair, theta) in sim.observed_entries() {
        if let Some(band) = model.band(pair) {
            sum += band.normalize(theta);
            n += 1;
        }
    }
    PairScore {
        probability: fused.map_or(0.0, |v| model.second_stage.conformal_probability(v)),
        fused,
        normalized: (n > 0).then(|| sum / n as f64),
    }
}

/// Calibrated probability that `reference` is a correct retrieval for
/// `query`. Pairs with no observable calibrated entry score 0 and are
/// flagged unanswerable.
pub fn score_pair<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    reference: usize,
) -> Result<PairScore> {
    model.check_schema(source.schema())?;
    if query >= source.n_queries() || reference >= source.n_references() {
        return Err(Error::IndexOutOfRange(format!(
            "pair ({query}, {reference}) outside {}x{}",
            source.n_queries(),
            source.n_references()
        )));
    }
    Ok(score_pair_unchecked(model, source, query, reference))
}
