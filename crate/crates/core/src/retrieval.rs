//! Top-k retrieval by calibrated probability, exhaustive or over per-pair
//! shortlists.

use std::cmp::Ordering;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::{fmt_sig17, write_atomic};
use crate::parallel::ordered_map;
use crate::pipeline::{score_pair_unchecked, CalibratedModel, PairScore};
use crate::similarity::ScoreSource;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedReference {
    pub reference: usize,
    pub probability: f64,
    pub unanswerable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: usize,
    pub ranked: Vec<RankedReference>,
}

impl RetrievalResult {
    pub fn reference_ids(&self) -> Vec<usize> {
        self.ranked.iter().map(|r| r.reference).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalMode {
    #[default]
    Exhaustive,
    /// Score only the union of the top `alpha * k` references of every
    /// observable modality pair.
    Shortlist { alpha: usize },
}

/// Ranking order: answerable before unanswerable, then probability
/// descending, then fused first-stage value descending, then mean normalized
/// raw score descending, then reference index ascending.
///
/// The fused key keeps the order identical to ranking by fused value, since
/// the second stage maps distinct fused values onto a coarse grid. The
/// normalized key only splits exact ties on both, which happen when raw
/// scores fall between the same calibration scores; above all of them every
/// probability saturates at m/(m+1).
pub fn rank_order(a: &(usize, PairScore), b: &(usize, PairScore)) -> Ordering {
    let (ra, sa) = a;
    let (rb, sb) = b;
    let desc = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        _ => Ordering::Equal,
    };
    sa.unanswerable()
        .cmp(&sb.unanswerable())
        .then_with(|| sb.probability.total_cmp(&sa.probability))
        .then_with(|| desc(sa.fused, sb.fused))
        .then_with(|| desc(sa.normalized, sb.normalized))
        .then_with(|| ra.cmp(rb))
}

fn finish(query: usize, mut scored: Vec<(usize, PairScore)>, k: usize) -> RetrievalResult {
    scored.sort_unstable_by(rank_order);
    scored.truncate(k);
    RetrievalResult {
        query,
        ranked: scored
            .into_iter()
            .map(|(reference, s)| RankedReference {
                reference,
                probability: s.probability,
                unanswerable: s.unanswerable(),
            })
            .collect(),
    }
}

fn check<S: ScoreSource + ?Sized>(model: &CalibratedModel, source: &S, queries: &[usize], k: usize) -> Result<()> {
    model.check_schema(source.schema())?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if let Some(q) = queries.iter().find(|&&q| q >= source.n_queries()) {
        return Err(Error::IndexOutOfRange(format!("query {q} of {}", source.n_queries())));
    }
    Ok(())
}

fn retrieve_unchecked<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    k: usize,
) -> RetrievalResult {
    let scored = (0..source.n_references())
        .map(|r| (r, score_pair_unchecked(model, source, query, r)))
        .collect();
    finish(query, scored, k)
}

/// Scores every reference and returns the top `min(k, N)`.
pub fn retrieve<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    k: usize,
) -> Result<RetrievalResult> {
    check(model, source, &[query], k)?;
    Ok(retrieve_unchecked(model, source, query, k))
}

/// Candidate references for the shortlist path: the union over observable
/// calibrated pairs of the top `alpha * k` references by raw score.
pub fn shortlist_candidates<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    k: usize,
    alpha: usize,
) -> Vec<usize> {
    let take = alpha.saturating_mul(k);
    let mut in_union = vec![false; source.n_references()];
    for pair in model.calibrated_pairs() {
        if !source.query_has(query, pair.query) {
            continue;
        }
        let mut scores: Vec<(f64, usize)> = (0..source.n_references())
            .filter_map(|r| source.pair_score(pair, query, r).map(|s| (s, r)))
            .collect();
        let by_score = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if take < scores.len() {
            scores.select_nth_unstable_by(take, by_score);
            scores.truncate(take);
        }
        for (_, r) in scores {
            in_union[r] = true;
        }
    }
    (0..source.n_references()).filter(|&r| in_union[r]).collect()
}

fn retrieve_shortlist_unchecked<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    k: usize,
    alpha: usize,
) -> RetrievalResult {
    let candidates = shortlist_candidates(model, source, query, k, alpha);
    let mut scored: Vec<(usize, PairScore)> = candidates
        .iter()
        .map(|&r| (r, score_pair_unchecked(model, source, query, r)))
        .collect();
    let want = k.min(source.n_references());
    if scored.len() < want {
        // The union is short only when every pair's list held all of its
        // eligible references, so the remainder is unanswerable.
        let mut taken = vec![false; source.n_references()];
        candidates.iter().for_each(|&r| taken[r] = true);
        scored.extend(
            (0..source.n_references())
                .filter(|&r| !taken[r])
                .take(want - scored.len())
                .map(|r| (r, score_pair_unchecked(model, source, query, r))),
        );
    }
    finish(query, scored, k)
}

/// Top-k over the shortlist union. Identical to [`retrieve`] whenever the
/// union covers every answerable reference, e.g. when `alpha * k >= N`.
pub fn retrieve_shortlist<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query: usize,
    k: usize,
    alpha: usize,
) -> Result<RetrievalResult> {
    check(model, source, &[query], k)?;
    if alpha == 0 {
        return Err(Error::InvalidArgument("shortlist alpha must be at least 1".into()));
    }
    Ok(retrieve_shortlist_unchecked(model, source, query, k, alpha))
}

/// Runs many queries on up to `workers` threads; output order follows
/// `query_ids` and does not depend on `workers`.
pub fn batch_retrieve<S: ScoreSource + ?Sized>(
    model: &CalibratedModel,
    source: &S,
    query_ids: &[usize],
    k: usize,
    mode: RetrievalMode,
    workers: usize,
) -> Result<Vec<RetrievalResult>> {
    check(model, source, query_ids, k)?;
    if mode == (RetrievalMode::Shortlist { alpha: 0 }) {
        return Err(Error::InvalidArgument("shortlist alpha must be at least 1".into()));
    }
    Ok(ordered_map(query_ids, workers, |&q| match mode {
        RetrievalMode::Exhaustive => retrieve_unchecked(model, source, q, k),
        RetrievalMode::Shortlist { alpha } => retrieve_shortlist_unchecked(model, source, q, k, alpha),
    }))
}

pub const RESULTS_HEADER: &str = "query_id,rank,reference_id,probability,unanswerable";

pub fn results_to_csv(results: &[RetrievalResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for res in results {
        for (i, r) in res.ranked.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                res.query,
                i + 1,
                r.reference,
                fmt_sig17(r.probability),
                r.unanswerable as u8
            ));
        }
    }
    out
}

pub fn write_results(path: &Path, results: &[RetrievalResult]) -> Result<()> {
    write_atomic(path, results_to_csv(results).as_bytes())
}

#[derive(Deserialize)]
struct ResultRow {
    query_id: usize,
    rank: usize,
    reference_id: usize,
    probability: f64,
    unanswerable: u8,
}

/// Reads a results CSV. Rows of one query must be contiguous with ranks
/// `1, 2, ...` in order.
pub fn read_results(path: &Path) -> Result<Vec<RetrievalResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::format(path.display().to_string(), e))?;
    if headers.iter().ne(RESULTS_HEADER.split(',')) {
        return Err(Error::format(path.display().to_string(), format!("expected header {RESULTS_HEADER:?}")));
    }
    let mut out: Vec<RetrievalResult> = Vec::new();
    for (line, row) in rdr.deserialize::<ResultRow>().enumerate() {
        let loc = || format!("{}:{}", path.display(), line + 2);
        let row = row.map_err(|e| Error::format(loc(), e))?;
        if row.unanswerable > 1 {
            return Err(Error::format(loc(), "unanswerable must be 0 or 1"));
        }
        let entry = RankedReference {
            reference: row.reference_id,
            probability: row.probability,
            unanswerable: row.unanswerable == 1,
        };
        match out.last_mut() {
            Some(last) if last.query == row.query_id => {
                if row.rank != last.ranked.len() + 1 {
                    return Err(Error::format(loc(), format!("rank {} out of sequence", row.rank)));
                }
                last.ranked.push(entry);
            }
            _ => {
                if row.rank != 1 {
                    return Err(Error::format(loc(), format!("rank {} out of sequence", row.rank)));
                }
                if out.iter().any(|r| r.query == row.query_id) {
                    return Err(Error::format(loc(), format!("query {} is not contiguous", row.query_id)));
                }
                out.push(RetrievalResult {
                    query: row.query_id,
                    ranked: vec![entry],
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(probability: f64, fused: Option<f64>) -> PairScore {
        PairScore {
            probability,
            fused,
            normalized: fused,
        }
    }

    #[test]
    fn order_rules() {
        let mut v = [
            (3, ps(0.0, None)),
            (0, ps(0.0, None)),
            (5, ps(0.5, Some(0.4))),
            (1, ps(0.5, Some(0.6))),
            (2, ps(0.5, Some(0.6))),
            (4, ps(0.0, Some(0.0))),
            (9, ps(0.9, Some(0.7))),
        ];
        v.sort_by(rank_order);
        let ids: Vec<usize> = v.iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![9, 1, 2, 5, 4, 0, 3]);
    }

    #[test]
    fn saturated_ties_use_normalized_score() {
        let mut a = ps(0.9, Some(0.99));
        let mut b = ps(0.9, Some(0.99));
        a.normalized = Some(0.8);
        b.normalized = Some(0.95);
        let mut v = [(0, a), (1, b)];
        v.sort_by(rank_order);
        assert_eq!(v[0].0, 1);
    }

    #[test]
    fn csv_round_trip() {
        let results = vec![
            RetrievalResult {
                query: 4,
                ranked: vec![
                    RankedReference { reference: 2, probability: 0.75, unanswerable: false },
                    RankedReference { reference: 0, probability: 0.0, unanswerable: true },
                ],
            },
            RetrievalResult {
                query: 1,
                ranked: vec![RankedReference { reference: 1, probability: 1.0 / 3.0, unanswerable: false }],
            },
        ];
        let text = results_to_csv(&results);
        assert!(text.starts_with("query_id,rank,reference_id,probability,unanswerable\n4,1,2,0.75000000000000000,0\n"));
        let dir = std::env::temp_dir().join(format!("cr-res-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("r.csv");
        write_results(&p, &results).unwrap();
        assert_eq!(read_results(&p).unwrap(), results);
        std::fs::write(&p, "query_id,rank,reference_id,probability,unanswerable\n0,2,1,0.5,0\n").unwrap();
        assert!(read_results(&p).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
