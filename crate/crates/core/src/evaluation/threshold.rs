use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold for verification: a pair matches when its score is
/// at least `value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// Accuracy reached on the calibration scores.
    pub accuracy: f64,
}

pub fn accuracy_at(scored: &[(f64, bool)], threshold: f64) -> f64 {
    let correct = scored
        .iter()
        .filter(|&&(s, m)| (s >= threshold) == m)
        .count();
    correct as f64 / scored.len() as f64
}

/// Threshold with the highest accuracy on `(score, is_match)` samples.
///
/// Candidates are the smallest score, every midpoint between consecutive
/// distinct scores, and one past the largest score (reject everything). On
/// ties the smallest candidate wins.
pub fn calibrate_threshold(scored: &[(f64, bool)]) -> Result<Threshold> {
    let positives = scored.iter().filter(|s| s.1).count();
    if positives == 0 || positives == scored.len() {
        return Err(Error::config(
            "pairs",
            "threshold calibration needs both matching and non-matching pairs",
        ));
    }
    if let Some(&(s, _)) = scored.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::config("pairs", format!("non-finite score {s}")));
    }
    let mut sorted: Vec<f64> = scored.iter().map(|s| s.0).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![sorted[0]];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(sorted[sorted.len() - 1] + 1.0);

    let mut best = Threshold {
        value: candidates[0],
        accuracy: accuracy_at(scored, candidates[0]),
    };
    for &t in &candidates[1..] {
        let acc = accuracy_at(scored, t);
        if acc > best.accuracy {
            best = Threshold {
                value: t,
                accuracy: acc,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_scores_reach_full_accuracy() {
        let s = [(0.9, true), (0.9, true), (0.1, false), (0.1, false)];
        let t = calibrate_threshold(&s).unwrap();
        assert_eq!(t.accuracy, 1.0);
        assert!(t.value > 0.1 && t.value <= 0.9);
        assert_eq!(t.value, 0.5);
    }

    #[test]
    fn identical_scores_give_majority_fraction() {
        let s = [(0.4, true), (0.4, false), (0.4, false)];
        let t = calibrate_threshold(&s).unwrap();
        assert!((t.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_set_matches_exhaustive_scan() {
        let s = [
            (0.91, true),
            (0.35, true),
            (0.62, true),
            (0.58, false),
            (0.12, false),
            (0.77, true),
            (0.66, false),
            (0.20, false),
        ];
        let t = calibrate_threshold(&s).unwrap();
        // brute force over every real threshold via a fine grid
        let best = (0..=2000)
            .map(|i| accuracy_at(&s, i as f64 / 1000.0 - 0.5))
            .fold(0.0, f64::max);
        assert_eq!(t.accuracy, best);
        assert_eq!(t.accuracy, 0.75);
        assert!((t.value - 0.275).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(calibrate_threshold(&[(0.3, true), (0.5, true)]).is_err());
        assert!(calibrate_threshold(&[]).is_err());
    }
}
