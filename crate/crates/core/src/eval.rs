//! Signal-level inference and metrics: majority voting across a recording's
//! windows, confusion-matrix metrics, and a Monte-Carlo study of the
//! accuracy gained by voting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::RecordingKey;
use crate::error::{CoreError, Result};
use crate::tensor::Rng;
use crate::train::WindowEval;

/// Which rule decided the vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    /// A single class held the plurality.
    None,
    /// Tally tie resolved by the larger summed probability.
    SummedProbability,
    /// Full tie resolved by the lowest class index.
    LowestIndex,
}

/// Majority vote over per-window probability rows.
///
/// Ties on the tally are broken by the largest probability mass summed over
/// all windows, then by the lowest class index.
pub fn majority_vote(window_probs: &[Vec<f64>]) -> Result<(usize, Vec<usize>, TieBreak)> {
    if window_probs.is_empty() {
        return Err(CoreError::Data("majority vote over zero windows".into()));
    }
    let k = window_probs[0].len();
    if k == 0 || window_probs.iter().any(|row| row.len() != k) {
        return Err(CoreError::ShapeMismatch("ragged probability rows".into()));
    }
    let mut tally = vec![0usize; k];
    for row in window_probs {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        tally[best] += 1;
    }
    let top = *tally.iter().max().expect("nonempty tally");
    let tied: Vec<usize> = (0..k).filter(|&c| tally[c] == top).collect();
    if tied.len() == 1 {
        return Ok((tied[0], tally, TieBreak::None));
    }
    let summed: Vec<f64> = tied
        .iter()
        .map(|&c| window_probs.iter().map(|row| row[c]).sum::<f64>())
        .collect();
    let best_sum = summed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let by_sum: Vec<usize> = tied
        .iter()
        .zip(&summed)
        .filter(|&(_, &s)| s == best_sum)
        .map(|(&c, _)| c)
        .collect();
    if by_sum.len() == 1 {
        Ok((by_sum[0], tally, TieBreak::SummedProbability))
    } else {
        Ok((by_sum[0], tally, TieBreak::LowestIndex))
    }
}

/// One recording's voted prediction.
#[derive(Clone, Debug)]
pub struct SignalPrediction {
    pub recording: RecordingKey,
    /// Per-window probability rows, window order.
    pub window_probs: Vec<Vec<f64>>,
    pub tally: Vec<usize>,
    pub predicted: usize,
    pub true_class: u32,
    pub tie_break: TieBreak,
}

/// Group window-level predictions by recording and vote each one.
pub fn signal_predictions(eval: &WindowEval) -> Result<Vec<SignalPrediction>> {
    let mut grouped: BTreeMap<RecordingKey, Vec<(usize, &[f64], u32)>> = BTreeMap::new();
    for p in &eval.predictions {
        grouped.entry(p.parent).or_default().push((p.window_index, &p.probs, p.label));
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (recording, mut windows) in grouped {
        windows.sort_by_key(|(idx, _, _)| *idx);
        let true_class = windows[0].2;
        let window_probs: Vec<Vec<f64>> =
            windows.into_iter().map(|(_, probs, _)| probs.to_vec()).collect();
        let (predicted, tally, tie_break) = majority_vote(&window_probs)?;
        out.push(SignalPrediction { recording, window_probs, tally, predicted, true_class, tie_break });
    }
    Ok(out)
}

/// Voted signal accuracy over a prediction set.
pub fn signal_accuracy(preds: &[SignalPrediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let correct = preds.iter().filter(|p| p.predicted == p.true_class as usize).count();
    correct as f64 / preds.len() as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_signals: usize,
    pub signal_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Diagonal over row sums; 0 for classes without support.
    pub per_class_accuracy: Vec<f64>,
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<usize>>,
}

/// Confusion-matrix metrics with macro averaging over classes that have
/// support. Classes with no predicted positives contribute precision 0.
pub fn compute_metrics(preds: &[SignalPrediction], k: usize) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(CoreError::Data("no predictions to score".into()));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for p in preds {
        let t = p.true_class as usize;
        if t >= k || p.predicted >= k {
            return Err(CoreError::InvalidArg(format!(
                "class out of range: true {t}, predicted {} (k = {k})",
                p.predicted
            )));
        }
        confusion[t][p.predicted] += 1;
    }
    let total: usize = preds.len();
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut per_class_accuracy = vec![0.0; k];
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut supported = 0usize;
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        let predicted_positives: usize = (0..k).map(|t| confusion[t][c]).sum();
        let tp = confusion[c][c];
        if support > 0 {
            per_class_accuracy[c] = tp as f64 / support as f64;
            let precision =
                if predicted_positives > 0 { tp as f64 / predicted_positives as f64 } else { 0.0 };
            let recall = tp as f64 / support as f64;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            precision_sum += precision;
            recall_sum += recall;
            f1_sum += f1;
            supported += 1;
        }
    }
    if supported == 0 {
        return Err(CoreError::Data("no class has support".into()));
    }
    Ok(MetricsReport {
        n_signals: total,
        signal_accuracy: trace as f64 / total as f64,
        macro_precision: precision_sum / supported as f64,
        macro_recall: recall_sum / supported as f64,
        macro_f1: f1_sum / supported as f64,
        per_class_accuracy,
        confusion,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoteGainReport {
    pub window_accuracy: f64,
    pub voted_accuracy: f64,
    /// 95% normal-approximation half width.
    pub ci_half_width: f64,
    pub trials: usize,
}

/// Monte-Carlo voted accuracy when each of `n` windows is independently
/// correct with probability `p` and errors scatter uniformly over the other
/// `k - 1` classes.
pub fn vote_gain_study(p: f64, n: usize, k: usize, trials: usize, seed: u64) -> Result<VoteGainReport> {
    if !(0.0 < p && p <= 1.0) {
        return Err(CoreError::InvalidArg(format!("window accuracy {p} outside (0, 1]")));
    }
    if n == 0 || k < 2 || trials == 0 {
        return Err(CoreError::InvalidArg("need n >= 1 windows, k >= 2, trials >= 1".into()));
    }
    let mut rng = Rng::new(seed).derive("vote-gain");
    let mut correct_windows = 0usize;
    let mut correct_votes = 0usize;
    for _ in 0..trials {
        let true_class = rng.below(k);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let label = if rng.uniform(0.0, 1.0) < p {
                true_class
            } else {
                // Uniform over the k-1 wrong classes.
                let mut wrong = rng.below(k - 1);
                if wrong >= true_class {
                    wrong += 1;
                }
                wrong
            };
            if label == true_class {
                correct_windows += 1;
            }
            let mut row = vec![0.0; k];
            row[label] = 1.0;
            rows.push(row);
        }
        let (voted, _, _) = majority_vote(&rows)?;
        if voted == true_class {
            correct_votes += 1;
        }
    }
    let voted_accuracy = correct_votes as f64 / trials as f64;
    Ok(VoteGainReport {
        window_accuracy: correct_windows as f64 / (trials * n) as f64,
        voted_accuracy,
        ci_half_width: 1.96 * (voted_accuracy * (1.0 - voted_accuracy) / trials as f64).sqrt(),
        trials,
    })
}
