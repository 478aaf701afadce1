//! Evaluation metrics: phone error rate, accent-identification accuracy
//! with confusion counts, and relative improvement over a baseline.

use crate::error::{Error, Result};
use crate::model::Accent;

/// Unit-cost Levenshtein distance.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Levenshtein distance over max(1, |ref|), as a percentage. Can exceed
/// 100 with insertions.
pub fn phone_error_rate(reference: &[usize], hypothesis: &[usize]) -> f64 {
    let dist = edit_distance(reference, hypothesis);
    100.0 * dist as f64 / reference.len().max(1) as f64
}

/// 2×2 confusion counts indexed [truth][prediction], US first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AidConfusion {
    pub counts: [[usize; 2]; 2],
}

fn idx(a: Accent) -> usize {
    match a {
        Accent::Us => 0,
        Accent::Uk => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AidReport {
    pub accuracy: f64,
    pub confusion: AidConfusion,
    pub recall_us: f64,
    pub recall_uk: f64,
}

pub fn aid_accuracy(predictions: &[Accent], truths: &[Accent]) -> Result<AidReport> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut confusion = AidConfusion::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        confusion.counts[idx(t)][idx(p)] += 1;
    }
    let total = predictions.len().max(1);
    let correct = confusion.counts[0][0] + confusion.counts[1][1];
    let recall = |row: usize| {
        let n = confusion.counts[row][0] + confusion.counts[row][1];
        if n == 0 {
            100.0
        } else {
            100.0 * confusion.counts[row][row] as f64 / n as f64
        }
    };
    Ok(AidReport {
        accuracy: 100.0 * correct as f64 / total as f64,
        confusion,
        recall_us: recall(0),
        recall_uk: recall(1),
    })
}

/// (system − baseline)/baseline × 100; negative values are improvements,
/// matching the sign convention of error-rate tables.
pub fn relative_improvement(baseline: f64, system: f64) -> Result<f64> {
    if baseline <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "baseline {baseline} must be positive"
        )));
    }
    Ok((system - baseline) / baseline * 100.0)
}
