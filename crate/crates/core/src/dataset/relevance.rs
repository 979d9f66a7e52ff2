use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Ground truth: the references that count as a correct retrieval for each
/// query. Empty sets are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceMap {
    n_references: usize,
    sets: Vec<BTreeSet<usize>>,
}

impl RelevanceMap {
    pub fn new(n_references: usize, sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        for (q, set) in sets.iter().enumerate() {
            if let Some(&r) = set.iter().next_back().filter(|&&r| r >= n_references) {
                return Err(Error::RelevanceOutOfRange {
                    location: "relevance".into(),
                    detail: format!("query {q} lists reference {r}, but there are {n_references}"),
                });
            }
        }
        Ok(Self { n_references, sets })
    }

    pub fn from_pairs(
        n_queries: usize,
        n_references: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n_queries];
        for (q, r) in pairs {
            if q >= n_queries || r >= n_references {
                return Err(Error::RelevanceOutOfRange {
                    location: "relevance".into(),
                    detail: format!(
                        "pair ({q}, {r}) outside {n_queries} queries x {n_references} references"
                    ),
                });
            }
            sets[q].insert(r);
        }
        Ok(Self { n_references, sets })
    }

    pub fn n_queries(&self) -> usize {
        self.sets.len()
    }

    pub fn n_references(&self) -> usize {
        self.n_references
    }

    pub fn is_relevant(&self, query: usize, reference: usize) -> bool {
        self.sets[query].contains(&reference)
    }

    pub fn relevant(&self, query: usize) -> &BTreeSet<usize> {
        &self.sets[query]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sets
            .iter()
            .enumerate()
            .flat_map(|(q, s)| s.iter().map(move |&r| (q, r)))
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

/// A reference is relevant to a query when their Euclidean distance is at
/// most `threshold` meters (inclusive).
pub fn relevance_from_positions(
    query_positions: &[Position],
    reference_positions: &[Position],
    threshold: f64,
) -> Result<RelevanceMap> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "distance threshold must be positive, got {threshold}"
        )));
    }
    let sets = query_positions
        .iter()
        .map(|q| {
            reference_positions
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    let (dx, dy) = (q.x - r.x, q.y - r.y);
                    (dx * dx + dy * dy).sqrt() <= threshold
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    RelevanceMap::new(reference_positions.len(), sets)
}

#[derive(Deserialize)]
struct PairRow {
    query_id: usize,
    reference_id: usize,
}

#[derive(Deserialize)]
struct PositionRow {
    id: usize,
    x: f64,
    y: f64,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn expect_headers(rdr: &mut csv::Reader<std::fs::File>, path: &Path, want: &[&str]) -> Result<()> {
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path.display().to_string(), e))?;
    if headers.iter().ne(want.iter().copied()) {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected header {:?}, found {:?}", want.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(())
}

/// Reads a `query_id,reference_id` CSV.
pub fn read_relevance_pairs(path: &Path, n_queries: usize, n_references: usize) -> Result<RelevanceMap> {
    let mut rdr = csv_reader(path)?;
    expect_headers(&mut rdr, path, &["query_id", "reference_id"])?;
    let mut pairs = Vec::new();
    for (line, row) in rdr.deserialize::<PairRow>().enumerate() {
        let row = row.map_err(|e| Error::format(format!("{}:{}", path.display(), line + 2), e))?;
        pairs.push((row.query_id, row.reference_id));
    }
    RelevanceMap::from_pairs(n_queries, n_references, pairs).map_err(|e| match e {
        Error::RelevanceOutOfRange { detail, .. } => Error::RelevanceOutOfRange {
            location: path.display().to_string(),
            detail,
        },
        other => other,
    })
}

pub fn write_relevance_pairs(path: &Path, relevance: &RelevanceMap) -> Result<()> {
    let mut out = String::from("query_id,reference_id\n");
    for (q, r) in relevance.pairs() {
        out.push_str(&format!("{q},{r}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Reads an `id,x,y` CSV; ids must be exactly `0..expected`.
pub fn read_positions(path: &Path, expected: usize) -> Result<Vec<Position>> {
    let mut rdr = csv_reader(path)?;
    expect_headers(&mut rdr, path, &["id", "x", "y"])?;
    let mut slots: Vec<Option<Position>> = vec![None; expected];
    let mut count = 0usize;
    for (line, row) in rdr.deserialize::<PositionRow>().enumerate() {
        let loc = || format!("{}:{}", path.display(), line + 2);
        let row = row.map_err(|e| Error::format(loc(), e))?;
        count += 1;
        if !(row.x.is_finite() && row.y.is_finite()) {
            return Err(Error::format(loc(), "non-finite coordinate"));
        }
        match slots.get_mut(row.id) {
            Some(slot @ None) => *slot = Some(Position { x: row.x, y: row.y }),
            Some(Some(_)) => return Err(Error::format(loc(), format!("duplicate id {}", row.id))),
            None => {
                return Err(Error::DimensionMismatch {
                    location: path.display().to_string(),
                    detail: format!("id {} but the dataset has {expected} instances", row.id),
                })
            }
        }
    }
    if count != expected {
        return Err(Error::DimensionMismatch {
            location: path.display().to_string(),
            detail: format!("{count} positions for {expected} instances"),
        });
    }
    Ok(slots.into_iter().map(Option::unwrap).collect())
}

pub fn write_positions(path: &Path, positions: &[Position]) -> Result<()> {
    let mut out = String::from("id,x,y\n");
    for (i, p) in positions.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", crate::io::fmt_sig17(p.x), crate::io::fmt_sig17(p.y)));
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    #[test]
    fn threshold_twenty_meters() {
        let rel = relevance_from_positions(&[pos(0.0, 0.0)], &[pos(3.0, 4.0), pos(30.0, 0.0)], 20.0).unwrap();
        assert_eq!(rel.relevant(0).iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn boundary_is_inclusive() {
        let rel = relevance_from_positions(&[pos(0.0, 0.0)], &[pos(3.0, 4.0)], 5.0).unwrap();
        assert!(rel.is_relevant(0, 0));
    }

    #[test]
    fn bad_threshold() {
        assert!(relevance_from_positions(&[], &[], 0.0).is_err());
        assert!(relevance_from_positions(&[], &[], f64::NAN).is_err());
    }

    #[test]
    fn out_of_range_pairs() {
        let err = RelevanceMap::from_pairs(2, 3, [(0, 3)]).unwrap_err();
        assert!(matches!(err, Error::RelevanceOutOfRange { .. }));
    }

    fn coords() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..12)
    }

    proptest! {
        #[test]
        fn shrinking_threshold_shrinks_sets(qs in coords(), rs in coords(), t in 1.0f64..40.0, f in 0.05f64..1.0) {
            let qs: Vec<_> = qs.into_iter().map(|(x, y)| pos(x, y)).collect();
            let rs: Vec<_> = rs.into_iter().map(|(x, y)| pos(x, y)).collect();
            let wide = relevance_from_positions(&qs, &rs, t).unwrap();
            let narrow = relevance_from_positions(&qs, &rs, t * f).unwrap();
            for q in 0..qs.len() {
                prop_assert!(narrow.relevant(q).is_subset(wide.relevant(q)));
            }
        }

        #[test]
        fn swap_symmetry(a in (-50.0f64..50.0, -50.0f64..50.0), b in (-50.0f64..50.0, -50.0f64..50.0), t in 1.0f64..60.0) {
            let (a, b) = (pos(a.0, a.1), pos(b.0, b.1));
            let ab = relevance_from_positions(&[a], &[b], t).unwrap().is_relevant(0, 0);
            let ba = relevance_from_positions(&[b], &[a], t).unwrap().is_relevant(0, 0);
            prop_assert_eq!(ab, ba);
        }
    }
}
