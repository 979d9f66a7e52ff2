//! Conformal retrieval over multimodal data with missing modalities.
//!
//! Raw cross-modal similarities from different embedding spaces are not
//! comparable. Each modality pair gets its own conformal band that maps a
//! raw score onto a probability of correct retrieval; those probabilities
//! are fused across observed pairs and calibrated a second time, giving one
//! comparable number per (query, reference) no matter which modalities
//! either side has.

pub mod conformal;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
mod parallel;
pub mod pipeline;
pub mod retrieval;
pub mod similarity;
pub mod synthgen;

pub use conformal::{LabelSet, LabeledScore, PredictionBand};
pub use dataset::{ModalityPair, ModalitySchema, MultimodalDataset, RelevanceMap, SharedSpace, Side};
pub use error::{Error, Result};
pub use metrics::{ranking_metrics, score_correlation, CorrelationKind, MetricsReport};
pub use pipeline::{fit_model, CalibratedModel, FitOptions, FuserKind, NegativeSubsample, PairScore};
pub use retrieval::{batch_retrieve, retrieve, retrieve_shortlist, RankedReference, RetrievalMode, RetrievalResult};
pub use similarity::{cosine_similarity, similarity_matrix, ScoreSource, SimilarityMatrix};
pub use synthgen::{generate, SynthConfig, SynthSpace};
