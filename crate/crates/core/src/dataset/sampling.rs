use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PresenceMask;
use crate::error::{Error, Result};

/// Drops each present modality independently with its modality's
/// probability. Absent bits stay absent.
///
/// With `keep_at_least_one`, an instance that had at least one modality and
/// would lose all of them is redrawn until one survives. When every present
/// modality has drop probability 1 that loop cannot terminate, so one present
/// modality is kept uniformly at random instead.
pub fn apply_modality_dropout(
    mask: &PresenceMask,
    probs: &[f64],
    seed: u64,
    keep_at_least_one: bool,
) -> Result<PresenceMask> {
    if probs.len() != mask.modalities() {
        return Err(Error::DimensionMismatch {
            location: "dropout probabilities".into(),
            detail: format!("{} probabilities for {} modalities", probs.len(), mask.modalities()),
        });
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("drop probability {p} outside [0, 1]")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = mask.clone();
    let m = mask.modalities();
    let mut row_bits = vec![false; m];
    for i in 0..mask.rows() {
        let input = mask.row(i);
        let had_any = input.iter().any(|&b| b);
        let certain_loss = input.iter().zip(probs).all(|(&b, &p)| !b || p >= 1.0);
        loop {
            for j in 0..m {
                let dropped = rng.random::<f64>() < probs[j];
                row_bits[j] = input[j] && !dropped;
            }
            if !keep_at_least_one || !had_any || row_bits.iter().any(|&b| b) {
                break;
            }
            if certain_loss {
                let present: Vec<usize> = (0..m).filter(|&j| input[j]).collect();
                row_bits[present[rng.random_range(0..present.len())]] = true;
                break;
            }
        }
        for (j, &b) in row_bits.iter().enumerate() {
            out.set(i, j, b);
        }
    }
    Ok(out)
}

/// Deterministic disjoint split of `0..n_queries` into calibration and test
/// ids, both returned in ascending order.
pub fn split_queries(n_queries: usize, calibration_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_queries < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 queries to split, got {n_queries}"
        )));
    }
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "calibration fraction must lie in (0, 1), got {calibration_fraction}"
        )));
    }
    let n_cal = (calibration_fraction * n_queries as f64).round() as usize;
    if n_cal == 0 || n_cal == n_queries {
        return Err(Error::InvalidArgument(format!(
            "calibration fraction {calibration_fraction} of {n_queries} queries leaves an empty split"
        )));
    }
    let mut ids: Vec<usize> = (0..n_queries).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut cal = ids[..n_cal].to_vec();
    let mut test = ids[n_cal..].to_vec();
    cal.sort_unstable();
    test.sort_unstable();
    Ok((cal, test))
}
