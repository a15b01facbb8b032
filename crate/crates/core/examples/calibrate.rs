//! Calibration harness for the synthetic learnability benchmark: sweeps the
//! generator noise level against the channel-energy probe, then times and
//! traces a full training run at paper dimensions.
//!
//! Usage: cargo run --example calibrate [probe|train <head> <noise> <lr> <epochs>]

use std::time::Instant;

use neurodecode_core::data::{channel_energy_probe, synth_generate, SyntheticSpec};
use neurodecode_core::heads::HeadKind;
use neurodecode_core::model::ModelConfig;
use neurodecode_core::pipeline::{evaluate_split, prepare_windows};
use neurodecode_core::train::{fit, TrainConfig};

fn probe_sweep() {
    println!("noise_std  probe_accuracy (train->test split by image parity)");
    for noise in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0] {
        let spec = SyntheticSpec::disjoint(4, 20, 2, noise, 42).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let (train, test): (Vec<_>, Vec<_>) = recs.into_iter().partition(|r| r.image_id % 2 == 0);
        let acc = channel_energy_probe(&train, &test).unwrap();
        println!("{noise:>8.2}  {acc:.3}");
    }
}

fn train_trace(head: HeadKind, noise: f64, lr: f64, epochs: usize) {
    let spec = SyntheticSpec::disjoint(4, 20, 2, noise, 42).unwrap();
    let t0 = Instant::now();
    let recs = synth_generate(&spec).unwrap();
    println!("generated {} recordings in {:.1?}", recs.len(), t0.elapsed());

    let t1 = Instant::now();
    let windows = prepare_windows(&recs, (0.8, 0.1, 0.1), 7).unwrap();
    println!(
        "windows: train {} / val {} / test {} in {:.1?}",
        windows.train.len(),
        windows.validation.len(),
        windows.test.len(),
        t1.elapsed()
    );

    let model_config = ModelConfig::paper(head, 4);
    let config = TrainConfig {
        head,
        learning_rate: lr,
        batch_size: 64,
        max_iterations: epochs,
        convergence_eps: 1e-4,
        seed: 7,
        n_classes: 4,
    };
    let t2 = Instant::now();
    let (model, state) = fit(&windows.train, &windows.validation, &model_config, &config).unwrap();
    println!("trained {} epochs in {:.1?}", state.epochs_run, t2.elapsed());
    for h in &state.history {
        println!(
            "  epoch {:>3}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            h.epoch, h.train_loss, h.train_window_accuracy, h.val_loss, h.val_window_accuracy
        );
    }
    println!(
        "converged: {} | best epoch {} (val window acc {:.3})",
        state.converged, state.best_epoch, state.best_val_accuracy
    );
    let t3 = Instant::now();
    let report = evaluate_split(&model, &windows.test, "test").unwrap();
    println!(
        "test: window acc {:.3} | voted signal acc {:.3} ({} recordings) in {:.1?}",
        report.window_accuracy,
        report.signal_accuracy,
        report.n_recordings,
        t3.elapsed()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args.get(1).map(String::as_str) {
        Some("probe") | None => probe_sweep(),
        Some("train") => {
            let head = HeadKind::parse(args.get(2).map(String::as_str).unwrap_or("bilstm")).unwrap();
            let noise: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2.0);
            let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
            let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
            train_trace(head, noise, lr, epochs);
        }
        Some(other) => eprintln!("unknown mode {other}"),
    }
}
