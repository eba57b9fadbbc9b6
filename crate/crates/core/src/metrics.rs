//! Classification scores, rank agreement of policy weights, and summary
//! statistics over runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no predictions to score")]
    Empty,
    #[error("{0} predictions for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("class {class} outside [0, {num_classes})")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("rankings are not permutations of the same items")]
    NotPermutation,
    #[error("stability needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("runs disagree on the number of node types")]
    TypeCountMismatch,
}

/// Macro-F1 averages per-class F1 over all `num_classes` classes, a class
/// with zero precision and recall denominators scoring 0. Micro-F1 pools
/// counts and equals accuracy.
pub fn macro_micro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<(f64, f64), MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        for class in [p, y] {
            if class >= num_classes {
                return Err(MetricsError::ClassOutOfRange { class, num_classes });
            }
        }
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let macro_f1 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum::<f64>()
        / num_classes as f64;
    let micro_f1 = tp.iter().sum::<usize>() as f64 / predictions.len() as f64;
    Ok((macro_f1, micro_f1))
}

/// Row-wise argmax; ties go to the lower class id.
pub fn argmax_rows(logits: &crate::kernel::Tensor) -> Vec<usize> {
    (0..logits.rows()).map(|r| crate::bandit::argmax(logits.row(r))).collect()
}

/// Item ids ordered by descending weight; equal weights keep ascending id order.
pub fn rank_by_weight(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

fn positions(ranking: &[usize]) -> Option<Vec<usize>> {
    let mut pos = vec![usize::MAX; ranking.len()];
    for (i, &item) in ranking.iter().enumerate() {
        if item >= ranking.len() || pos[item] != usize::MAX {
            return None;
        }
        pos[item] = i;
    }
    Some(pos)
}

/// `(concordant − discordant) / (K(K−1)/2)` between two orderings of the
/// items `0..K`.
pub fn kendall_tau(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let (Some(pa), Some(pb)) = (positions(a), positions(b)) else {
        return Err(MetricsError::NotPermutation);
    };
    let k = a.len();
    if k < 2 {
        return Ok(1.0);
    }
    let mut score: i64 = 0;
    for i in 0..k {
        for j in i + 1..k {
            let sa = (pa[i] as i64 - pa[j] as i64).signum();
            let sb = (pb[i] as i64 - pb[j] as i64).signum();
            score += sa * sb;
        }
    }
    Ok(score as f64 / (k * (k - 1) / 2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { n, mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { n, mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub mean_final_weights: Vec<f64>,
    /// Type with the largest mean final weight.
    pub top_type: usize,
    /// How many runs rank each type first.
    pub top_counts: Vec<usize>,
    pub mean_pairwise_tau: f64,
    pub min_mean_final_weight: f64,
    /// Smallest and largest final weight of each type across runs.
    pub weight_range: Vec<(f64, f64)>,
}

/// Cross-run agreement of final policy weights, one weight vector per run.
pub fn stability_report(final_weights: &[Vec<f64>]) -> Result<StabilityReport, MetricsError> {
    let runs = final_weights.len();
    if runs < 2 {
        return Err(MetricsError::TooFewRuns(runs));
    }
    let k = final_weights[0].len();
    if final_weights.iter().any(|w| w.len() != k) {
        return Err(MetricsError::TypeCountMismatch);
    }
    let mean_final_weights: Vec<f64> = (0..k)
        .map(|t| final_weights.iter().map(|w| w[t]).sum::<f64>() / runs as f64)
        .collect();
    let rankings: Vec<Vec<usize>> = final_weights.iter().map(|w| rank_by_weight(w)).collect();
    let mut top_counts = vec![0; k];
    for r in &rankings {
        top_counts[r[0]] += 1;
    }
    let mut tau_sum = 0.0;
    let mut pairs = 0;
    for i in 0..runs {
        for j in i + 1..runs {
            tau_sum += kendall_tau(&rankings[i], &rankings[j])?;
            pairs += 1;
        }
    }
    let weight_range = (0..k)
        .map(|t| {
            final_weights
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w[t]), hi.max(w[t])))
        })
        .collect();
    Ok(StabilityReport {
        runs,
        top_type: rank_by_weight(&mean_final_weights)[0],
        min_mean_final_weight: mean_final_weights.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_final_weights,
        top_counts,
        mean_pairwise_tau: tau_sum / pairs as f64,
        weight_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        assert_eq!(macro_micro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn hand_computed_confusion() {
        let (ma, mi) = macro_micro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((ma - 11.0 / 15.0).abs() < 1e-15);
        assert_eq!(mi, 0.75);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let (ma, _) = macro_micro_f1(&[0, 1], &[0, 1], 4).unwrap();
        assert_eq!(ma, 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(macro_micro_f1(&[], &[], 2), Err(MetricsError::Empty));
        assert!(macro_micro_f1(&[0], &[0, 1], 2).is_err());
        assert!(macro_micro_f1(&[3], &[0], 2).is_err());
        assert!(kendall_tau(&[0, 1], &[0, 1, 2]).is_err());
        assert!(kendall_tau(&[0, 0, 1], &[0, 1, 2]).is_err());
        assert!(stability_report(&[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn tau_endpoints() {
        assert_eq!(kendall_tau(&[2, 0, 1], &[2, 0, 1]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[0, 1, 2], &[2, 1, 0]).unwrap(), -1.0);
    }

    #[test]
    fn ties_rank_by_id() {
        assert_eq!(rank_by_weight(&[0.2, 0.4, 0.4]), vec![1, 2, 0]);
    }

    #[test]
    fn stability_of_opposite_runs() {
        let r = stability_report(&[vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5]]).unwrap();
        assert_eq!(r.mean_pairwise_tau, -1.0);
        assert_eq!(r.top_counts, vec![1, 0, 1]);
        assert!((r.min_mean_final_weight - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let s = mean_std(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]).std, 0.0);
    }
}
