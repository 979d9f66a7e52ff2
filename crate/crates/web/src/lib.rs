//! wasm entry points for the demo page. Each export takes plain numbers and
//! returns a JSON string; the `*_json` functions hold the logic so they can
//! be tested natively.

use conformal_retrieval::dataset::split_queries;
use conformal_retrieval::synthgen::{heuristic_baseline, heuristic_rankings};
use conformal_retrieval::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct CurvePoint {
    theta: f64,
    normalized: f64,
    probability: f64,
    brute_force: f64,
    set: &'static str,
}

#[derive(Serialize)]
struct BandReport {
    theta_min: f64,
    theta_max: f64,
    calibration_size: usize,
    cutoff: Option<f64>,
    points: Vec<CurvePoint>,
}

fn set_label(s: LabelSet) -> &'static str {
    match (s.negative, s.positive) {
        (false, false) => "{}",
        (true, false) => "{0}",
        (false, true) => "{1}",
        (true, true) => "{0,1}",
    }
}

/// Fits a band on `n` synthetic scores (positives ~ N(pos_mean, sd), rate
/// `pos_rate`) and samples the probability curve on 101 points across the
/// calibration range, with the label set at `epsilon`.
pub fn band_curve_json(
    pos_mean: f64,
    neg_mean: f64,
    sd: f64,
    pos_rate: f64,
    n: usize,
    epsilon: f64,
    seed: u64,
) -> Result<String> {
    if sd.is_nan() || sd <= 0.0 || !(0.0..=1.0).contains(&pos_rate) || !(0.0..=1.0).contains(&epsilon) || n < 2 {
        return Err(Error::InvalidArgument("need sd > 0, rates in [0, 1], n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = Bernoulli::new(pos_rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pos = Normal::new(pos_mean, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let neg = Normal::new(neg_mean, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pairs: Vec<LabeledScore> = (0..n)
        .map(|_| {
            let correct = label.sample(&mut rng);
            let theta = if correct { pos.sample(&mut rng) } else { neg.sample(&mut rng) };
            LabeledScore::new(theta, correct)
        })
        .collect();
    let band = PredictionBand::fit(&pairs)?;
    let (lo, hi) = (band.theta_min(), band.theta_max());
    let points = (0..=100)
        .map(|i| {
            let theta = lo + (hi - lo) * i as f64 / 100.0;
            CurvePoint {
                theta,
                normalized: band.normalize(theta),
                probability: band.conformal_probability(theta),
                brute_force: band.brute_force_probability(theta, 1e-3),
                set: set_label(band.band_set(theta, epsilon)),
            }
        })
        .collect();
    let report = BandReport {
        theta_min: lo,
        theta_max: hi,
        calibration_size: band.len(),
        cutoff: band.quantile(epsilon).filter(|a| a.is_finite()),
        points,
    };
    to_json(&report)
}

#[derive(Serialize)]
struct Comparison {
    calibrated: Vec<f64>,
    heuristic: Vec<f64>,
    ks: Vec<usize>,
    calibrated_pairs: usize,
    test_queries: usize,
}

fn preset(name: &str, n: usize, seed: u64) -> Result<SynthConfig> {
    match name {
        "trimodal" => Ok(SynthConfig::trimodal(n, n, seed)),
        "text-to-video" => Ok(SynthConfig::text_to_video(n, n, seed)),
        other => Err(Error::InvalidArgument(format!("unknown preset {other}"))),
    }
}

/// Recall at 1, 5 and 10 of calibrated retrieval and the first-pair
/// heuristic on a synthetic set, with `dropout` applied to both sides.
pub fn compare_json(name: &str, n: usize, sigma_scale: f64, dropout: f64, seed: u64) -> Result<String> {
    let mut cfg = preset(name, n, seed)?;
    for s in &mut cfg.spaces {
        s.noise_sigma *= sigma_scale;
    }
    if dropout > 0.0 {
        cfg = cfg.with_dropout(dropout, dropout);
    }
    let ds = generate(&cfg)?;
    let (cal, test) = split_queries(ds.n_queries(), 0.3, seed)?;
    let model = fit_model(&ds, &cal, &FitOptions { workers: 1, ..Default::default() })?;
    let ks = vec![1, 5, 10];
    let res = batch_retrieve(&model, &ds, &test, 10, RetrievalMode::Exhaustive, 1)?;
    let ours = ranking_metrics(&res, ds.relevance(), &ks)?;
    let theirs = heuristic_baseline(&ds, &model.calibrated_pairs(), &test, &ks)?;
    let report = Comparison {
        calibrated: ks.iter().map(|&k| ours.recall(k)).collect(),
        heuristic: ks.iter().map(|&k| theirs.recall(k)).collect(),
        ks,
        calibrated_pairs: model.calibrated_pairs().len(),
        test_queries: test.len(),
    };
    to_json(&report)
}

#[derive(Serialize)]
struct Row {
    reference: usize,
    score: f64,
    unanswerable: bool,
    relevant: bool,
}

#[derive(Serialize)]
struct QueryView {
    query: usize,
    query_modalities: Vec<String>,
    calibrated: Vec<Row>,
    heuristic: Vec<Row>,
}

/// Top `k` of one test query under both rankings.
pub fn query_json(name: &str, n: usize, dropout: f64, seed: u64, query: usize, k: usize) -> Result<String> {
    let mut cfg = preset(name, n, seed)?;
    if dropout > 0.0 {
        cfg = cfg.with_dropout(dropout, dropout);
    }
    let ds = generate(&cfg)?;
    let (cal, test) = split_queries(ds.n_queries(), 0.3, seed)?;
    let q = *test
        .get(query)
        .ok_or_else(|| Error::IndexOutOfRange(format!("test query {query} of {}", test.len())))?;
    let model = fit_model(&ds, &cal, &FitOptions { workers: 1, ..Default::default() })?;
    let relevant = ds.relevance().relevant(q);
    let rows = |r: &RetrievalResult| -> Vec<Row> {
        r.ranked
            .iter()
            .map(|x| Row {
                reference: x.reference,
                score: x.probability,
                unanswerable: x.unanswerable,
                relevant: relevant.contains(&x.reference),
            })
            .collect()
    };
    let ours = retrieve(&model, &ds, q, k)?;
    let theirs = heuristic_rankings(&ds, &model.calibrated_pairs(), &[q], k)?;
    let schema = ds.schema();
    let view = QueryView {
        query: q,
        query_modalities: (0..schema.query_modalities().len())
            .filter(|&m| ds.query_has(q, m))
            .map(|m| schema.query_modalities()[m].clone())
            .collect(),
        calibrated: rows(&ours),
        heuristic: rows(&theirs[0]),
    };
    to_json(&view)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn band_curve(
    pos_mean: f64,
    neg_mean: f64,
    sd: f64,
    pos_rate: f64,
    n: usize,
    epsilon: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js(band_curve_json(pos_mean, neg_mean, sd, pos_rate, n, epsilon, seed.into()))
}

#[wasm_bindgen]
pub fn compare(preset: &str, n: usize, sigma_scale: f64, dropout: f64, seed: u32) -> std::result::Result<String, JsError> {
    js(compare_json(preset, n, sigma_scale, dropout, seed.into()))
}

#[wasm_bindgen]
pub fn inspect_query(
    preset: &str,
    n: usize,
    dropout: f64,
    seed: u32,
    query: usize,
    k: usize,
) -> std::result::Result<String, JsError> {
    js(query_json(preset, n, dropout, seed.into(), query, k))
}
