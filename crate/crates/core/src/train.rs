//! Window-level supervised training: mini-batch Adam over cross-entropy,
//! epoch-loss convergence rule, best-validation snapshot selection, and the
//! NDMD checkpoint format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{RecordingKey, WindowSample};
use crate::error::{CoreError, Result};
use crate::heads::HeadKind;
use crate::model::{init_model, window_logits, window_tensor, ModelConfig, ModelParams};
use crate::tensor::{adam_step, AdamConfig, AdamState, Gradients, Graph, ParamStore, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub head: HeadKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch cap; the loss-delta rule usually halts earlier.
    pub max_iterations: usize,
    /// Halt when successive epoch losses differ by less than this.
    pub convergence_eps: f64,
    pub seed: u64,
    pub n_classes: usize,
}

impl TrainConfig {
    /// Defaults mirroring the reported run lengths: 400 epochs for the
    /// Bi-LSTM model, 760 for the transformer.
    pub fn defaults(head: HeadKind, n_classes: usize) -> Self {
        TrainConfig {
            head,
            learning_rate: 1e-3,
            batch_size: 64,
            max_iterations: match head {
                HeadKind::Bilstm => 400,
                HeadKind::Transformer => 760,
            },
            convergence_eps: 1e-4,
            seed: 0,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(CoreError::Config("learning rate must be positive and finite".into()));
        }
        if self.batch_size == 0 || self.max_iterations == 0 {
            return Err(CoreError::Config("batch size and iteration cap must be positive".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(CoreError::Config("convergence eps must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(CoreError::Config("need at least 2 classes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_window_accuracy: f64,
    pub val_loss: f64,
    pub val_window_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs actually executed (== history length).
    pub epochs_run: usize,
    /// Mini-batch optimizer steps executed.
    pub batch_steps: u64,
    /// Whether the loss-delta rule fired before the epoch cap.
    pub converged: bool,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Per-window prediction with full probabilities kept for vote tie-breaks.
#[derive(Clone, Debug)]
pub struct WindowPrediction {
    pub parent: RecordingKey,
    pub window_index: usize,
    pub label: u32,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct WindowEval {
    pub predictions: Vec<WindowPrediction>,
    pub accuracy: f64,
    pub mean_loss: f64,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Forward-only pass over windows: argmax labels, probabilities, accuracy
/// and mean negative log-likelihood.
pub fn evaluate_windows(model: &ModelParams, windows: &[WindowSample]) -> Result<WindowEval> {
    if windows.is_empty() {
        return Err(CoreError::Data("no windows to evaluate".into()));
    }
    let k = model.config.n_classes;
    let mut predictions = Vec::with_capacity(windows.len());
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for w in windows {
        if w.class_id as usize >= k {
            return Err(CoreError::InvalidArg(format!(
                "window label {} out of range for {k} classes",
                w.class_id
            )));
        }
        let mut g = Graph::inference();
        let input = g.input(window_tensor(w)?);
        let logits = window_logits(&mut g, model, input)?;
        let probs_node = g.softmax_rows(logits)?;
        let probs = g.value(probs_node).data().to_vec();
        let predicted = argmax(&probs);
        if predicted == w.class_id as usize {
            correct += 1;
        }
        loss_sum -= probs[w.class_id as usize].max(f64::MIN_POSITIVE).ln();
        predictions.push(WindowPrediction {
            parent: w.parent,
            window_index: w.window_index,
            label: w.class_id,
            predicted,
            probs,
        });
    }
    let n = windows.len() as f64;
    Ok(WindowEval { predictions, accuracy: correct as f64 / n, mean_loss: loss_sum / n })
}

/// One window's loss graph; returns (loss value, correct flag, gradients).
fn window_step(model: &ModelParams, w: &WindowSample) -> Result<(f64, bool, Gradients)> {
    let mut g = Graph::new();
    let input = g.input(window_tensor(w)?);
    let logits = window_logits(&mut g, model, input)?;
    let label = w.class_id as usize;
    let loss = g.softmax_xent(logits, &[label])?;
    let loss_value = g.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(CoreError::Numeric(format!("non-finite loss on window {:?}", w.parent)));
    }
    let correct = argmax(g.probs(loss)?.data()) == label;
    g.backward(loss)?;
    Ok((loss_value, correct, g.param_gradients()))
}

/// Train a fresh model on `train` windows, selecting the snapshot with the
/// best validation window accuracy. Deterministic given the config seed.
pub fn fit(
    train: &[WindowSample],
    val: &[WindowSample],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainState)> {
    config.validate()?;
    model_config.validate()?;
    if train.is_empty() {
        return Err(CoreError::Data("empty training split".into()));
    }
    if val.is_empty() {
        return Err(CoreError::Data("empty validation split".into()));
    }
    if model_config.n_classes != config.n_classes {
        return Err(CoreError::Config(format!(
            "model has {} classes, train config {}",
            model_config.n_classes, config.n_classes
        )));
    }
    if let Some(w) = train.iter().chain(val).find(|w| w.class_id as usize >= config.n_classes) {
        return Err(CoreError::InvalidArg(format!(
            "label {} out of range for {} classes",
            w.class_id, config.n_classes
        )));
    }

    let mut model = init_model(model_config, config.seed)?;
    let mut adam = AdamState::new(&model.store);
    let adam_cfg = AdamConfig::new(config.learning_rate);
    let rng = Rng::new(config.seed);

    let mut state = TrainState {
        epochs_run: 0,
        batch_steps: 0,
        converged: false,
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        history: Vec::new(),
    };
    let mut best_store: Option<ParamStore> = None;
    // Sentinel start: the first epoch's delta is astronomically large, so
    // only an infinite eps can halt after exactly one epoch.
    let mut last_loss = f64::MAX;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_iterations {
        rng.derive(&format!("shuffle/{epoch}")).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::new();
            for &idx in batch {
                let (loss, ok, g) = window_step(&model, &train[idx])?;
                loss_sum += loss;
                correct += ok as usize;
                grads.accumulate(&g)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.store, &grads, &mut adam, &adam_cfg)?;
            state.batch_steps += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(CoreError::Numeric(format!("non-finite epoch loss at epoch {epoch}")));
        }
        let val_eval = evaluate_windows(&model, val)?;
        state.history.push(EpochRecord {
            epoch,
            train_loss,
            train_window_accuracy: correct as f64 / train.len() as f64,
            val_loss: val_eval.mean_loss,
            val_window_accuracy: val_eval.accuracy,
        });
        state.epochs_run = epoch + 1;
        if val_eval.accuracy > state.best_val_accuracy {
            state.best_val_accuracy = val_eval.accuracy;
            state.best_epoch = epoch;
            best_store = Some(model.store.clone());
        }
        let delta = (train_loss - last_loss).abs();
        last_loss = train_loss;
        if delta < config.convergence_eps {
            state.converged = true;
            break;
        }
    }
    model.store = best_store.expect("at least one epoch ran");
    Ok((model, state))
}

// ---- checkpoint format ----

const CKPT_MAGIC: &[u8; 4] = b"NDMD";
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Serialize a trained model with its config echo.
///
/// Layout: magic "NDMD" | u32 version | u8 head id | u32 json_len | meta
/// JSON | u32 param_count | per param: u32 name_len, name, u32 ndim,
/// u32 dims..., u64 numel, f64-LE data.
pub fn write_checkpoint_bytes(model: &ModelParams, train: &TrainConfig) -> Result<Vec<u8>> {
    let meta = CheckpointMeta { model: model.config.clone(), train: train.clone() };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.push(model.config.head.kind().id_byte());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (name, tensor) in model.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(tensor.numel() as u64).to_le_bytes());
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &ModelParams, train: &TrainConfig) -> Result<()> {
    fs::write(path, write_checkpoint_bytes(model, train)?)?;
    Ok(())
}

pub fn parse_checkpoint_bytes(bytes: &[u8]) -> Result<(ModelParams, TrainConfig)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CoreError::Format(format!("truncated checkpoint while reading {what}")));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 4, "magic")?;
    if magic != CKPT_MAGIC {
        return Err(CoreError::Format("bad magic; not an NDMD checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(CoreError::Format(format!("unsupported checkpoint version {version}")));
    }
    let head_id = take(&mut pos, 1, "head id")?[0];
    let head = HeadKind::from_id_byte(head_id)?;
    let json_len = u32::from_le_bytes(take(&mut pos, 4, "meta length")?.try_into().unwrap());
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut pos, json_len as usize, "meta")?)?;
    if meta.model.head.kind() != head {
        return Err(CoreError::Format(format!(
            "head id byte says {}, config echo says {}",
            head.as_str(),
            meta.model.head.kind().as_str()
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4, "param count")?.try_into().unwrap());
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4, "name length")?.try_into().unwrap());
        let name = String::from_utf8(take(&mut pos, name_len as usize, "name")?.to_vec())
            .map_err(|_| CoreError::Format("parameter name is not UTF-8".into()))?;
        let ndim = u32::from_le_bytes(take(&mut pos, 4, "ndim")?.try_into().unwrap());
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4, "dim")?.try_into().unwrap()) as usize);
        }
        let numel = u64::from_le_bytes(take(&mut pos, 8, "numel")?.try_into().unwrap()) as usize;
        if numel != shape.iter().product::<usize>() {
            return Err(CoreError::Format(format!("parameter `{name}`: shape/count mismatch")));
        }
        let raw = take(&mut pos, 8 * numel, "values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if pos != bytes.len() {
        return Err(CoreError::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    let model = ModelParams { config: meta.model, store };
    model.config.validate().map_err(|e| CoreError::Format(format!("config echo invalid: {e}")))?;
    Ok((model, meta.train))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let bytes = fs::read(path)?;
    parse_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, synth_generate, zscore, SyntheticSpec};
    use crate::heads::HeadKind;

    /// Tiny surrogate dataset: a few windows of synthetic recordings pushed
    /// through the surrogate extractor dims by cropping channels/time.
    fn surrogate_windows(n_per_class: usize, k: usize, seed: u64) -> Vec<WindowSample> {
        let spec = SyntheticSpec::disjoint(k as u32, n_per_class as u32, 1, 0.3, seed).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let mut out = Vec::new();
        for rec in &recs {
            let z = zscore(rec).unwrap();
            let mut windows = make_windows(&z, 220, 0.9).unwrap();
            out.push(windows.swap_remove(0));
        }
        out
    }

    /// Crop full windows down to the surrogate extractor geometry.
    fn crop(windows: Vec<WindowSample>, channels: usize, time: usize) -> Vec<WindowSample> {
        windows
            .into_iter()
            .map(|w| {
                let mut samples = Vec::with_capacity(channels * time);
                for c in 0..channels {
                    let row = &w.samples()[c * w.window_len()..c * w.window_len() + time];
                    samples.extend_from_slice(row);
                }
                WindowSample::from_parts(samples, channels, time, w.class_id, w.parent, w.window_index)
            })
            .collect()
    }

    fn tiny_setup(k: usize) -> (Vec<WindowSample>, Vec<WindowSample>, ModelConfig, TrainConfig) {
        let all = crop(surrogate_windows(6, k, 3), 8, 60);
        let (train, val): (Vec<_>, Vec<_>) =
            all.into_iter().enumerate().partition(|(i, _)| i % 3 != 0);
        let train: Vec<WindowSample> = train.into_iter().map(|(_, w)| w).collect();
        let val: Vec<WindowSample> = val.into_iter().map(|(_, w)| w).collect();
        let model_config = ModelConfig::surrogate(HeadKind::Bilstm, k);
        let config = TrainConfig {
            head: HeadKind::Bilstm,
            learning_rate: 3e-3,
            batch_size: 4,
            max_iterations: 3,
            convergence_eps: 1e-12,
            seed: 11,
            n_classes: k,
        };
        (train, val, model_config, config)
    }

    #[test]
    fn fit_runs_and_reports_history() {
        let (train, val, model_config, config) = tiny_setup(3);
        let (model, state) = fit(&train, &val, &model_config, &config).unwrap();
        assert_eq!(state.epochs_run, 3);
        assert_eq!(state.history.len(), 3);
        assert!(!state.converged);
        assert!(state.batch_steps >= 3);
        assert_eq!(model.config.n_classes, 3);
        // Best snapshot invariant: returned model's val accuracy >= final's.
        let returned = evaluate_windows(&model, &val).unwrap();
        let final_acc = state.history.last().unwrap().val_window_accuracy;
        assert!(returned.accuracy >= final_acc - 1e-12);
        assert!((returned.accuracy - state.best_val_accuracy).abs() < 1e-12);
    }

    #[test]
    fn infinite_eps_stops_after_one_epoch() {
        let (train, val, model_config, mut config) = tiny_setup(3);
        config.convergence_eps = f64::INFINITY;
        config.max_iterations = 50;
        let (_, state) = fit(&train, &val, &model_config, &config).unwrap();
        assert_eq!(state.epochs_run, 1);
        assert!(state.converged);
    }

    #[test]
    fn same_seed_gives_identical_parameter_bytes() {
        let (train, val, model_config, config) = tiny_setup(3);
        let (m1, _) = fit(&train, &val, &model_config, &config).unwrap();
        let (m2, _) = fit(&train, &val, &model_config, &config).unwrap();
        let b1 = write_checkpoint_bytes(&m1, &config).unwrap();
        let b2 = write_checkpoint_bytes(&m2, &config).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (train, val, model_config, config) = tiny_setup(3);
        assert!(fit(&[], &val, &model_config, &config).is_err());
        assert!(fit(&train, &[], &model_config, &config).is_err());
    }

    #[test]
    fn batch_gradient_is_order_invariant() {
        let (train, _, model_config, config) = tiny_setup(3);
        let model = init_model(&model_config, config.seed).unwrap();
        let batch: Vec<&WindowSample> = train.iter().take(5).collect();
        let mut fwd = Gradients::new();
        for w in &batch {
            fwd.accumulate(&window_step(&model, w).unwrap().2).unwrap();
        }
        let mut rev = Gradients::new();
        for w in batch.iter().rev() {
            rev.accumulate(&window_step(&model, w).unwrap().2).unwrap();
        }
        for ((n1, g1), (n2, g2)) in fwd.iter().zip(rev.iter()) {
            assert_eq!(n1, n2);
            for (a, b) in g1.iter().zip(g2) {
                assert!((a - b).abs() < 1e-10, "{n1}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn small_adam_step_does_not_increase_frozen_batch_loss() {
        let (train, _, model_config, config) = tiny_setup(3);
        let mut model = init_model(&model_config, config.seed).unwrap();
        let batch: Vec<&WindowSample> = train.iter().take(6).collect();
        let batch_loss = |model: &ModelParams| -> f64 {
            batch.iter().map(|w| window_step(model, w).unwrap().0).sum::<f64>()
                / batch.len() as f64
        };
        let before = batch_loss(&model);
        let mut grads = Gradients::new();
        for w in &batch {
            grads.accumulate(&window_step(&model, w).unwrap().2).unwrap();
        }
        grads.scale(1.0 / batch.len() as f64);
        let mut adam = AdamState::new(&model.store);
        adam_step(&mut model.store, &grads, &mut adam, &AdamConfig::new(1e-5)).unwrap();
        let after = batch_loss(&model);
        assert!(after <= before + 1e-9, "loss rose from {before} to {after}");
    }

    #[test]
    fn evaluate_uniform_model_is_chance_level() {
        let (train, _, model_config, _) = tiny_setup(3);
        // Zero classifier output weights: exactly uniform probabilities.
        let mut model = init_model(&model_config, 1).unwrap();
        let d2w_shape = model.store.get("cls.d2.w").unwrap().shape().to_vec();
        *model.store.get_mut("cls.d2.w").unwrap() = Tensor::zeros(d2w_shape);
        *model.store.get_mut("cls.d2.b").unwrap() = Tensor::zeros(vec![3]);
        let eval = evaluate_windows(&model, &train).unwrap();
        assert_eq!(eval.predictions.len(), train.len());
        for p in &eval.predictions {
            for &v in &p.probs {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
            // Uniform rows argmax to class 0 under the first-max rule.
            assert_eq!(p.predicted, 0);
        }
        assert!((eval.mean_loss - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let (train, val, model_config, config) = tiny_setup(3);
        let (model, _) = fit(&train, &val, &model_config, &config).unwrap();
        let bytes = write_checkpoint_bytes(&model, &config).unwrap();
        let (back_model, back_config) = parse_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back_config, config);
        assert_eq!(back_model.config, model.config);
        assert_eq!(back_model.store, model.store);
        let rebytes = write_checkpoint_bytes(&back_model, &back_config).unwrap();
        assert_eq!(rebytes, bytes);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let (train, val, model_config, config) = tiny_setup(3);
        let (model, _) = fit(&train, &val, &model_config, &config).unwrap();
        let bytes = write_checkpoint_bytes(&model, &config).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'Z';
        assert!(matches!(parse_checkpoint_bytes(&bad_magic), Err(CoreError::Format(_))));
        let mut bad_head = bytes.clone();
        bad_head[8] = 77;
        assert!(parse_checkpoint_bytes(&bad_head).is_err());
        assert!(matches!(
            parse_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(CoreError::Format(_))
        ));
    }
}
