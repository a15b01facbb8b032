//! Dataset representation and preparation: recordings, per-channel z-score
//! normalization, overlapping-window segmentation and grouped splitting.

mod eegb;
mod synth;

pub use eegb::{load_eegb, save_eegb, write_eegb_bytes};
pub use synth::{channel_energy_probe, synth_generate, ClassSignature, SignatureComponent, SyntheticSpec};

use crate::error::{CoreError, Result};
use crate::tensor::Rng;

/// Electrode count of the target recordings.
pub const CHANNELS: usize = 128;
/// Samples per recording.
pub const RECORDING_LEN: usize = 440;
/// Samples per training window.
pub const WINDOW_LEN: usize = 220;
/// Fraction of overlap between consecutive windows.
pub const WINDOW_OVERLAP: f64 = 0.9;

/// One EEG trial: a channels x time matrix plus identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    /// Row-major [channels x time] amplitudes.
    samples: Vec<f64>,
    channels: usize,
    timesteps: usize,
    pub subject_id: u32,
    pub class_id: u32,
    pub image_id: u32,
}

impl EegRecording {
    pub fn new(
        samples: Vec<f64>,
        channels: usize,
        timesteps: usize,
        subject_id: u32,
        class_id: u32,
        image_id: u32,
    ) -> Result<Self> {
        if samples.len() != channels * timesteps {
            return Err(CoreError::ShapeMismatch(format!(
                "recording: {} samples for {channels} x {timesteps}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("recording samples".into()));
        }
        Ok(EegRecording { samples, channels, timesteps, subject_id, class_id, image_id })
    }

    /// Standard-shape constructor (128 x 440).
    pub fn standard(
        samples: Vec<f64>,
        subject_id: u32,
        class_id: u32,
        image_id: u32,
    ) -> Result<Self> {
        EegRecording::new(samples, CHANNELS, RECORDING_LEN, subject_id, class_id, image_id)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * self.timesteps..(c + 1) * self.timesteps]
    }

    /// Recording identity used for grouping and reports.
    pub fn key(&self) -> RecordingKey {
        RecordingKey { subject_id: self.subject_id, class_id: self.class_id, image_id: self.image_id }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordingKey {
    pub subject_id: u32,
    pub class_id: u32,
    pub image_id: u32,
}

/// One 220-sample slice of a recording, inheriting its label.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// Row-major [channels x window_len].
    samples: Vec<f64>,
    channels: usize,
    window_len: usize,
    pub class_id: u32,
    pub parent: RecordingKey,
    pub window_index: usize,
}

impl WindowSample {
    /// Assemble a window directly (surrogate tests, external loaders).
    pub fn from_parts(
        samples: Vec<f64>,
        channels: usize,
        window_len: usize,
        class_id: u32,
        parent: RecordingKey,
        window_index: usize,
    ) -> Self {
        debug_assert_eq!(samples.len(), channels * window_len);
        WindowSample { samples, channels, window_len, class_id, parent, window_index }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Z-score each channel to mean 0, population std 1.
///
/// Errors on a constant channel (zero variance).
pub fn zscore(rec: &EegRecording) -> Result<EegRecording> {
    let t = rec.timesteps as f64;
    let mut out = rec.samples.clone();
    for c in 0..rec.channels {
        let row = &mut out[c * rec.timesteps..(c + 1) * rec.timesteps];
        let mean = row.iter().sum::<f64>() / t;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        if var <= 0.0 {
            return Err(CoreError::Data(format!("channel {c} is constant; cannot z-score")));
        }
        let inv_std = 1.0 / var.sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
    }
    EegRecording::new(out, rec.channels, rec.timesteps, rec.subject_id, rec.class_id, rec.image_id)
}

/// Stride implied by a window length and overlap fraction.
pub fn window_stride(win_len: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(CoreError::InvalidArg(format!("overlap {overlap} outside [0, 1)")));
    }
    let stride = (win_len as f64 * (1.0 - overlap)).round() as usize;
    if stride == 0 {
        return Err(CoreError::InvalidArg(format!(
            "window {win_len} with overlap {overlap} gives zero stride"
        )));
    }
    Ok(stride)
}

/// Number of full windows produced by `make_windows`.
pub fn window_count(signal_len: usize, win_len: usize, stride: usize) -> usize {
    (signal_len - win_len) / stride + 1
}

/// Cut a recording into overlapping windows; trailing samples that do not
/// fill a window are dropped. Every window inherits the recording's label.
pub fn make_windows(rec: &EegRecording, win_len: usize, overlap: f64) -> Result<Vec<WindowSample>> {
    if win_len == 0 || win_len > rec.timesteps {
        return Err(CoreError::InvalidArg(format!(
            "window length {win_len} for signal length {}",
            rec.timesteps
        )));
    }
    let stride = window_stride(win_len, overlap)?;
    let count = window_count(rec.timesteps, win_len, stride);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        let mut samples = Vec::with_capacity(rec.channels * win_len);
        for c in 0..rec.channels {
            samples.extend_from_slice(&rec.channel(c)[start..start + win_len]);
        }
        out.push(WindowSample {
            samples,
            channels: rec.channels,
            window_len: win_len,
            class_id: rec.class_id,
            parent: rec.key(),
            window_index: i,
        });
    }
    Ok(out)
}

/// Train/validation/test recording keys, grouped so no image straddles
/// splits.
#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<RecordingKey>,
    pub validation: Vec<RecordingKey>,
    pub test: Vec<RecordingKey>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Split recordings into (train, validation, test) fractions with image_id
/// as the grouping key: all recordings of one image (every subject) land in
/// one split, and every class contributes images to all three splits.
pub fn split_grouped(
    recs: &[EegRecording],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidArg(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    // class -> sorted distinct image ids.
    let mut by_class: std::collections::BTreeMap<u32, Vec<u32>> = std::collections::BTreeMap::new();
    for r in recs {
        let imgs = by_class.entry(r.class_id).or_default();
        if !imgs.contains(&r.image_id) {
            imgs.push(r.image_id);
        }
    }
    if by_class.is_empty() {
        return Err(CoreError::Data("no recordings to split".into()));
    }
    let mut assignment: std::collections::HashMap<(u32, u32), usize> =
        std::collections::HashMap::new();
    let rng = Rng::new(seed);
    for (&class, imgs) in by_class.iter_mut() {
        if imgs.len() < 3 {
            return Err(CoreError::Data(format!(
                "class {class} has {} distinct images; need at least 3 to cover every split",
                imgs.len()
            )));
        }
        imgs.sort_unstable();
        rng.derive(&format!("split/class/{class}")).shuffle(imgs);
        let counts = largest_remainder(imgs.len(), &[ft, fv, fe]);
        let mut offset = 0;
        for (split_idx, &count) in counts.iter().enumerate() {
            for &img in &imgs[offset..offset + count] {
                assignment.insert((class, img), split_idx);
            }
            offset += count;
        }
    }
    let mut split = DatasetSplit::default();
    for r in recs {
        let idx = assignment[&(r.class_id, r.image_id)];
        match idx {
            0 => split.train.push(r.key()),
            1 => split.validation.push(r.key()),
            _ => split.test.push(r.key()),
        }
    }
    Ok(split)
}

/// Allot `n` items to fractions by largest-remainder rounding, then repair
/// any empty bucket from the fullest one so every split stays populated.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(f64, usize)> = fractions
        .iter()
        .enumerate()
        .map(|(i, f)| (f * n as f64 - counts[i] as f64, i))
        .collect();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..n - assigned {
        counts[remainders[k % remainders.len()].1] += 1;
    }
    loop {
        let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
        let fullest = counts
            .iter()
            .enumerate()
            .max_by_key(|&(_, &c)| c)
            .map(|(i, _)| i)
            .expect("nonempty counts");
        counts[fullest] -= 1;
        counts[empty] += 1;
    }
    counts
}

/// Expand a list of split keys into zscored windows ready for training.
pub fn windows_for_keys(
    recs: &[EegRecording],
    keys: &[RecordingKey],
) -> Result<Vec<WindowSample>> {
    let index: std::collections::HashMap<RecordingKey, &EegRecording> =
        recs.iter().map(|r| (r.key(), r)).collect();
    let mut out = Vec::new();
    for key in keys {
        let rec = index
            .get(key)
            .ok_or_else(|| CoreError::Data(format!("recording {key:?} not in dataset")))?;
        let normalized = zscore(rec)?;
        out.extend(make_windows(&normalized, WINDOW_LEN, WINDOW_OVERLAP)?);
    }
    Ok(out)
}
