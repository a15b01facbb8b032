//! EEG visual-decoding pipelines at desk scale.
//!
//! Two window-level classifiers over 128-channel EEG recordings — a
//! CNN + stacked bidirectional LSTM and a CNN + single-layer transformer
//! encoder — plus the machinery around them: per-channel normalization,
//! overlapping-window segmentation, grouped dataset splitting, a synthetic
//! band-limited generator, window-level Adam training with a loss-delta
//! convergence rule, majority-vote signal inference, and analysis exports
//! (embedding CSV, PCA projection, topographic maps).

pub mod analysis;
pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod heads;
pub(crate) mod init;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
