//! End-to-end runs: dataset -> grouped split -> normalized windows ->
//! training -> voted evaluation -> report structures.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_grouped, windows_for_keys, DatasetSplit, EegRecording, WindowSample};
use crate::error::{CoreError, Result};
use crate::eval::{compute_metrics, signal_accuracy, signal_predictions, MetricsReport, TieBreak};
use crate::model::ModelParams;
use crate::tensor::Rng;
use crate::train::{evaluate_windows, fit, TrainConfig, TrainState};

/// Normalized windows for all three splits.
pub struct SplitWindows {
    pub split: DatasetSplit,
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Group recordings by image, split, z-score and window them.
///
/// The split stream is derived from `seed`, so one seed always reproduces
/// one partition of the same dataset.
pub fn prepare_windows(
    recs: &[EegRecording],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitWindows> {
    let split_seed = Rng::new(seed).derive("split").seed();
    let split = split_grouped(recs, fractions, split_seed)?;
    Ok(SplitWindows {
        train: windows_for_keys(recs, &split.train)?,
        validation: windows_for_keys(recs, &split.validation)?,
        test: windows_for_keys(recs, &split.test)?,
        split,
    })
}

/// Full training run as the CLI performs it.
pub fn train_pipeline(
    recs: &[EegRecording],
    run: &RunConfig,
) -> Result<(ModelParams, TrainState, SplitWindows)> {
    let windows = prepare_windows(recs, run.split_fractions, run.seed)?;
    let (model, state) = fit(&windows.train, &windows.validation, &run.model_config(), &run.train_config())?;
    Ok((model, state, windows))
}

/// Window- and signal-level results over one split, both labeled.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_recordings: usize,
    pub n_windows: usize,
    /// Pre-vote accuracy at window granularity.
    pub window_accuracy: f64,
    pub window_mean_loss: f64,
    /// Post-vote accuracy at one-label-per-recording granularity.
    pub signal_accuracy: f64,
    pub metrics: MetricsReport,
    /// How often each tie-break rule decided a vote.
    pub plurality_votes: usize,
    pub summed_probability_ties: usize,
    pub lowest_index_ties: usize,
}

/// Evaluate a trained model on a window set (grouped back into recordings).
pub fn evaluate_split(
    model: &ModelParams,
    windows: &[WindowSample],
    split_name: &str,
) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(CoreError::Data(format!("split `{split_name}` has no windows")));
    }
    let eval = evaluate_windows(model, windows)?;
    let signals = signal_predictions(&eval)?;
    let metrics = compute_metrics(&signals, model.config.n_classes)?;
    let mut plurality = 0;
    let mut by_sum = 0;
    let mut by_index = 0;
    for s in &signals {
        match s.tie_break {
            TieBreak::None => plurality += 1,
            TieBreak::SummedProbability => by_sum += 1,
            TieBreak::LowestIndex => by_index += 1,
        }
    }
    Ok(EvalReport {
        split: split_name.to_string(),
        n_recordings: signals.len(),
        n_windows: windows.len(),
        window_accuracy: eval.accuracy,
        window_mean_loss: eval.mean_loss,
        signal_accuracy: signal_accuracy(&signals),
        metrics,
        plurality_votes: plurality,
        summed_probability_ties: by_sum,
        lowest_index_ties: by_index,
    })
}

/// Per-class accuracy table as CSV (`class,accuracy,support`).
pub fn per_class_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,accuracy,support\n");
    for (c, acc) in report.metrics.per_class_accuracy.iter().enumerate() {
        let support: usize = report.metrics.confusion[c].iter().sum();
        out.push_str(&format!("{c},{acc:.6},{support}\n"));
    }
    out
}

/// Report JSON document with the reproducibility header (config echo).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: RunConfig,
    pub train: TrainConfig,
    pub report: EvalReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticSpec};

    #[test]
    fn prepare_windows_partitions_and_windows() {
        let spec = SyntheticSpec::disjoint(3, 5, 2, 0.2, 9).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let w = prepare_windows(&recs, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(w.split.total(), recs.len());
        assert_eq!(w.train.len(), w.split.train.len() * 11);
        assert_eq!(w.validation.len(), w.split.validation.len() * 11);
        assert_eq!(w.test.len(), w.split.test.len() * 11);
        // Same seed, same partition.
        let w2 = prepare_windows(&recs, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(w.split.train, w2.split.train);
    }
}
