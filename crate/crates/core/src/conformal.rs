//! Split-conformal prediction band over similarity scores.
//!
//! A band is fitted on `(score, label)` pairs. Scores are min-max normalized
//! over the calibration range, and each pair's nonconformity is
//! `|y - normalized score|`. For a new score the band answers two questions:
//!
//! * [`PredictionBand::band_set`]: which labels fall inside the band at error
//!   rate `epsilon`, using the `ceil((m + 1)(1 - epsilon))`-th smallest
//!   calibration score as the cutoff;
//! * [`PredictionBand::conformal_probability`]: the largest `1 - epsilon` for
//!   which the band excludes the negative label, i.e. a lower bound on the
//!   probability that the score belongs to a correct retrieval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One calibration observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledScore {
    pub theta: f64,
    pub correct: bool,
}

impl LabeledScore {
    pub fn new(theta: f64, correct: bool) -> Self {
        Self { theta, correct }
    }
}

/// Subset of `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelSet {
    pub negative: bool,
    pub positive: bool,
}

impl LabelSet {
    pub const EMPTY: Self = Self {
        negative: false,
        positive: false,
    };
    pub const BOTH: Self = Self {
        negative: true,
        positive: true,
    };
    pub const POSITIVE: Self = Self {
        negative: false,
        positive: true,
    };
    pub const NEGATIVE: Self = Self {
        negative: true,
        positive: false,
    };

    pub fn contains(&self, correct: bool) -> bool {
        if correct {
            self.positive
        } else {
            self.negative
        }
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        (!self.negative || other.negative) && (!self.positive || other.positive)
    }
}

/// `|y - theta_tilde|`.
pub fn calibration_score(theta_tilde: f64, correct: bool) -> f64 {
    let y = if correct { 1.0 } else { 0.0 };
    (y - theta_tilde).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    theta_min: f64,
    theta_max: f64,
    sorted_gamma: Vec<f64>,
}

impl PredictionBand {
    /// Fits a band on at least two pairs whose scores are not all equal.
    pub fn fit(pairs: &[LabeledScore]) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::InsufficientCalibration {
                needed: 2,
                got: pairs.len(),
            });
        }
        if let Some(p) = pairs.iter().find(|p| !p.theta.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite calibration score {}", p.theta)));
        }
        let theta_min = pairs.iter().map(|p| p.theta).fold(f64::INFINITY, f64::min);
        let theta_max = pairs.iter().map(|p| p.theta).fold(f64::NEG_INFINITY, f64::max);
        if theta_min >= theta_max {
            return Err(Error::DegenerateRange {
                count: pairs.len(),
                value: theta_min,
            });
        }
        let mut band = Self {
            theta_min,
            theta_max,
            sorted_gamma: Vec::with_capacity(pairs.len()),
        };
        band.sorted_gamma = pairs
            .iter()
            .map(|p| calibration_score(band.normalize(p.theta), p.correct))
            .collect();
        band.sorted_gamma.sort_by(f64::total_cmp);
        Ok(band)
    }

    /// Rebuilds a band from its serialized parts, checking invariants.
    pub fn from_parts(theta_min: f64, theta_max: f64, sorted_gamma: Vec<f64>) -> Result<Self> {
        if !(theta_min.is_finite() && theta_max.is_finite() && theta_min < theta_max) {
            return Err(Error::InvalidArgument(format!(
                "band range [{theta_min}, {theta_max}] is not a finite non-empty interval"
            )));
        }
        if sorted_gamma.is_empty() {
            return Err(Error::InsufficientCalibration { needed: 1, got: 0 });
        }
        if sorted_gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidArgument("calibration score outside [0, 1]".into()));
        }
        if sorted_gamma.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("calibration scores are not sorted".into()));
        }
        Ok(Self {
            theta_min,
            theta_max,
            sorted_gamma,
        })
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn sorted_gamma(&self) -> &[f64] {
        &self.sorted_gamma
    }

    /// Number of calibration pairs.
    pub fn len(&self) -> usize {
        self.sorted_gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_gamma.is_empty()
    }

    /// Min-max normalization over the calibration range, clamped to `[0, 1]`.
    pub fn normalize(&self, theta: f64) -> f64 {
        ((theta - self.theta_min) / (self.theta_max - self.theta_min)).clamp(0.0, 1.0)
    }

    /// Cutoff `alpha` at error rate `epsilon`; `None` means the index is
    /// non-positive and the band is empty.
    pub fn quantile(&self, epsilon: f64) -> Option<f64> {
        let m = self.sorted_gamma.len();
        let index = ((m as f64 + 1.0) * (1.0 - epsilon)).ceil();
        if index <= 0.0 {
            None
        } else if index > m as f64 {
            Some(f64::INFINITY)
        } else {
            Some(self.sorted_gamma[index as usize - 1])
        }
    }

    /// Labels whose calibration score at `theta` does not exceed the cutoff.
    pub fn band_set(&self, theta: f64, epsilon: f64) -> LabelSet {
        let Some(alpha) = self.quantile(epsilon) else {
            return LabelSet::EMPTY;
        };
        let t = self.normalize(theta);
        LabelSet {
            negative: calibration_score(t, false) <= alpha,
            positive: calibration_score(t, true) <= alpha,
        }
    }

    /// Number of calibration scores strictly below the normalized score.
    pub fn rank(&self, theta: f64) -> usize {
        let t = self.normalize(theta);
        self.sorted_gamma.partition_point(|&g| g < t)
    }

    /// `rank / (m + 1)`: a value in `{0, 1/(m+1), ..., m/(m+1)}` that is
    /// non-decreasing in `theta`.
    pub fn conformal_probability(&self, theta: f64) -> f64 {
        self.rank(theta) as f64 / (self.sorted_gamma.len() as f64 + 1.0)
    }

    /// Grid search for the smallest `epsilon` whose band is exactly `{1}`;
    /// returns `1 - epsilon`, or 0 when no grid point reaches `{1}`.
    pub fn brute_force_probability(&self, theta: f64, grid_step: f64) -> f64 {
        assert!(grid_step > 0.0, "grid_step must be positive");
        let steps = (1.0 / grid_step).ceil() as usize;
        for i in 0..=steps {
            let epsilon = (i as f64 * grid_step).min(1.0);
            if self.band_set(theta, epsilon) == LabelSet::POSITIVE {
                return 1.0 - epsilon;
            }
        }
        0.0
    }
}

/// Fits a band; alias kept for symmetry with the other free functions.
pub fn fit_band(pairs: &[LabeledScore]) -> Result<PredictionBand> {
    PredictionBand::fit(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_band() -> PredictionBand {
        fit_band(&[
            LabeledScore::new(0.2, false),
            LabeledScore::new(0.5, true),
            LabeledScore::new(0.8, true),
        ])
        .unwrap()
    }

    /// Ten-point band with gammas 0.0, 0.1, ..., 0.9 over range [0, 1].
    fn decile_band() -> PredictionBand {
        PredictionBand::from_parts(0.0, 1.0, (0..10).map(|i| i as f64 / 10.0).collect()).unwrap()
    }

    #[test]
    fn normalization() {
        let b = PredictionBand::from_parts(0.2, 0.8, vec![0.0, 1.0]).unwrap();
        assert_eq!(b.normalize(0.2), 0.0);
        assert_eq!(b.normalize(0.8), 1.0);
        assert!((b.normalize(0.65) - 0.75).abs() < 1e-15);
        assert_eq!(b.normalize(2.0), 1.0);
        assert_eq!(b.normalize(-2.0), 0.0);
    }

    #[test]
    fn calibration_scores() {
        assert_eq!(calibration_score(1.0, true), 0.0);
        assert_eq!(calibration_score(0.0, false), 0.0);
        assert!((calibration_score(1.0 / 3.0, true) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fit_small_band() {
        let b = small_band();
        assert_eq!((b.theta_min(), b.theta_max()), (0.2, 0.8));
        let g = b.sorted_gamma();
        assert_eq!(&g[..2], &[0.0, 0.0]);
        assert!((g[2] - 0.5).abs() < 1e-15);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn fit_errors() {
        let flat = [LabeledScore::new(0.4, true), LabeledScore::new(0.4, false)];
        assert!(matches!(fit_band(&flat), Err(Error::DegenerateRange { .. })));
        assert!(matches!(
            fit_band(&[LabeledScore::new(0.4, true)]),
            Err(Error::InsufficientCalibration { .. })
        ));
    }

    #[test]
    fn fit_many_pairs_is_sorted_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = (0..10_000)
            .map(|_| {
                let y = rng.random_bool(0.3);
                LabeledScore::new(rng.random_range(-1.0..1.0) + if y { 0.3 } else { 0.0 }, y)
            })
            .collect();
        let b = fit_band(&pairs).unwrap();
        assert!(b.sorted_gamma().windows(2).all(|w| w[0] <= w[1]));
        assert!(b.sorted_gamma().iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn zero_epsilon_covers_both_labels() {
        assert_eq!(decile_band().band_set(0.35, 0.0), LabelSet::BOTH);
        assert_eq!(small_band().band_set(0.95, 0.0), LabelSet::BOTH);
    }

    #[test]
    fn hand_enumerated_band_sets() {
        let b = decile_band();
        // ceil(11 * 0.7) = 8 -> alpha = 0.7
        assert_eq!(b.quantile(0.3), Some(0.7));
        assert_eq!(b.band_set(0.35, 0.3), LabelSet::BOTH);
        assert_eq!(b.band_set(0.9, 0.3), LabelSet::POSITIVE);
        // epsilon = 1 -> index 0 -> empty
        assert_eq!(b.band_set(0.9, 1.0), LabelSet::EMPTY);
    }

    #[test]
    fn probabilities_on_small_band() {
        let b = small_band();
        assert_eq!(b.conformal_probability(0.65), 0.75);
        assert_eq!(b.conformal_probability(0.2), 0.0);
        assert_eq!(b.conformal_probability(0.95), 0.75);
    }

    #[test]
    fn brute_force_matches_hand_transitions() {
        let b = decile_band();
        // theta 0.9: gamma0 = 0.9, gamma1 = 0.1. {1} needs 0.1 <= alpha < 0.9,
        // first reached at alpha = 0.8 (index 9): ceil(11(1-e)) <= 9 -> e >= 2/11.
        let p = b.brute_force_probability(0.9, 1e-4);
        assert!((p - 9.0 / 11.0).abs() <= 1e-4, "{p}");
        assert_eq!(b.conformal_probability(0.9), 9.0 / 11.0);
        // theta 0.35 has theta_tilde <= 0.5: {1} never reachable.
        assert_eq!(b.brute_force_probability(0.35, 1e-3), 0.0);
        assert_eq!(b.brute_force_probability(0.0, 1e-3), 0.0);
    }

    #[test]
    fn brute_force_zero_when_window_empty() {
        // No calibration score in [1 - t, t) for t = 0.55: the band jumps
        // from {0, 1} straight to the empty set, so the literal search finds
        // nothing while the rank count still reports 0.3 / (m + 1).
        let b = PredictionBand::from_parts(0.0, 1.0, vec![0.0, 0.1, 0.2, 0.6, 0.9]).unwrap();
        assert_eq!(b.brute_force_probability(0.55, 1e-4), 0.0);
        assert_eq!(b.conformal_probability(0.55), 3.0 / 6.0);
    }

    fn band_strategy() -> impl Strategy<Value = PredictionBand> {
        proptest::collection::vec((-1.0f64..1.0, any::<bool>()), 2..60).prop_filter_map(
            "degenerate",
            |v| {
                let pairs: Vec<_> = v.into_iter().map(|(t, y)| LabeledScore::new(t, y)).collect();
                fit_band(&pairs).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn nesting(b in band_strategy(), theta in -1.5f64..1.5, e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(b.band_set(theta, hi).is_subset(&b.band_set(theta, lo)));
        }

        #[test]
        fn monotone_and_quantized(b in band_strategy(), t1 in -1.5f64..1.5, t2 in -1.5f64..1.5) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (p_lo, p_hi) = (b.conformal_probability(lo), b.conformal_probability(hi));
            prop_assert!(p_lo <= p_hi);
            let m1 = b.len() as f64 + 1.0;
            prop_assert!(p_hi <= b.len() as f64 / m1);
            prop_assert_eq!((p_hi * m1).round() / m1, p_hi);
        }

        #[test]
        fn affine_invariance(v in proptest::collection::vec((-1.0f64..1.0, any::<bool>()), 2..40),
                             a in 0.1f64..10.0, c in -5.0f64..5.0, theta in -1.0f64..1.0, eps in 0.0f64..=1.0) {
            let pairs: Vec<_> = v.iter().map(|&(t, y)| LabeledScore::new(t, y)).collect();
            let moved: Vec<_> = v.iter().map(|&(t, y)| LabeledScore::new(a * t + c, y)).collect();
            if let (Ok(b1), Ok(b2)) = (fit_band(&pairs), fit_band(&moved)) {
                let (n1, n2) = (b1.normalize(theta), b2.normalize(a * theta + c));
                prop_assert!((n1 - n2).abs() < 1e-12);
                // exact agreement unless a calibration score sits within rounding of the query
                let close = b1.sorted_gamma().iter().any(|g| (g - n1).abs() < 1e-9);
                if !close {
                    prop_assert_eq!(b1.conformal_probability(theta), b2.conformal_probability(a * theta + c));
                    prop_assert_eq!(b1.band_set(theta, eps), b2.band_set(a * theta + c, eps));
                }
            }
        }
    }
}
