//! Class-conditional synthetic EEG generator.
//!
//! Each class is defined by sinusoidal signature components on dedicated
//! channel groups; subjects differ by deterministic random carrier phases.
//! Noise is Gaussian but synthesized on the in-band DFT bins only, so every
//! emitted signal is band-limited to the configured band, matching a
//! pre-filtered recording. All samples are quantized through f32 so the
//! on-disk EEGB round trip is bit-exact.

use serde::{Deserialize, Serialize};

use super::{EegRecording, CHANNELS, RECORDING_LEN};
use crate::error::{CoreError, Result};
use crate::tensor::Rng;

/// One sinusoidal ingredient of a class signature.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SignatureComponent {
    pub channels: Vec<usize>,
    pub freq_hz: f64,
    pub amplitude: f64,
}

/// All components of one class.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassSignature {
    pub components: Vec<SignatureComponent>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: u32,
    pub images_per_class: u32,
    pub n_subjects: u32,
    /// Passband in Hz; all signal energy stays inside it.
    pub band: (f64, f64),
    pub sample_rate: f64,
    pub signatures: Vec<ClassSignature>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Default scheme: per class one contiguous block of channels (disjoint
    /// across classes) carrying one carrier spread across the band.
    pub fn disjoint(
        n_classes: u32,
        images_per_class: u32,
        n_subjects: u32,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(CoreError::InvalidArg("need at least 2 classes".into()));
        }
        let band = (5.0, 95.0);
        let block = CHANNELS / n_classes as usize;
        if block == 0 {
            return Err(CoreError::InvalidArg(format!(
                "{n_classes} classes cannot get disjoint groups over {CHANNELS} channels"
            )));
        }
        // Carriers placed on an even grid strictly inside the band.
        let signatures = (0..n_classes)
            .map(|c| {
                let f = band.0 + (band.1 - band.0) * (c as f64 + 1.0) / (n_classes as f64 + 1.0);
                ClassSignature {
                    components: vec![SignatureComponent {
                        channels: (c as usize * block..(c as usize + 1) * block).collect(),
                        freq_hz: f,
                        amplitude: 1.0,
                    }],
                }
            })
            .collect();
        Ok(SyntheticSpec {
            n_classes,
            images_per_class,
            n_subjects,
            band,
            sample_rate: 1000.0,
            signatures,
            noise_std,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(CoreError::Config("n_classes must be >= 2".into()));
        }
        if self.signatures.len() != self.n_classes as usize {
            return Err(CoreError::Config(format!(
                "{} signatures for {} classes",
                self.signatures.len(),
                self.n_classes
            )));
        }
        if self.band.0 <= 0.0 || self.band.1 <= self.band.0
            || self.band.1 >= self.sample_rate / 2.0
        {
            return Err(CoreError::Config(format!("invalid band {:?}", self.band)));
        }
        for (c, sig) in self.signatures.iter().enumerate() {
            for comp in &sig.components {
                if comp.freq_hz < self.band.0 || comp.freq_hz > self.band.1 {
                    return Err(CoreError::Config(format!(
                        "class {c} carrier {} Hz outside band {:?}",
                        comp.freq_hz, self.band
                    )));
                }
                if let Some(&bad) = comp.channels.iter().find(|&&ch| ch >= CHANNELS) {
                    return Err(CoreError::Config(format!(
                        "class {c} references channel {bad} (have {CHANNELS})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_recordings(&self) -> usize {
        (self.n_classes * self.images_per_class * self.n_subjects) as usize
    }
}

/// DFT bin index range (inclusive) covering the band for a length-T signal.
fn band_bins(band: (f64, f64), sample_rate: f64, t: usize) -> (usize, usize) {
    let lo = (band.0 * t as f64 / sample_rate).ceil() as usize;
    let hi = (band.1 * t as f64 / sample_rate).floor() as usize;
    (lo.max(1), hi.min(t / 2 - 1))
}

/// Snap a carrier to the nearest in-band DFT bin frequency so a finite
/// window carries no spectral leakage outside the band.
fn snap_to_bin(freq: f64, band: (f64, f64), sample_rate: f64, t: usize) -> f64 {
    let (lo, hi) = band_bins(band, sample_rate, t);
    let m = (freq * t as f64 / sample_rate).round() as usize;
    m.clamp(lo, hi) as f64 * sample_rate / t as f64
}

/// Generate the full dataset described by `spec`, deterministically.
///
/// Recordings are ordered by (class, image, subject); image ids are globally
/// unique (`class * images_per_class + image`).
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<EegRecording>> {
    spec.validate()?;
    let t = RECORDING_LEN;
    let root = Rng::new(spec.seed);
    let (bin_lo, bin_hi) = band_bins(spec.band, spec.sample_rate, t);
    let n_bins = bin_hi - bin_lo + 1;
    // cos/sin tables per in-band bin.
    let mut cos_table = vec![0.0; n_bins * t];
    let mut sin_table = vec![0.0; n_bins * t];
    for (bi, m) in (bin_lo..=bin_hi).enumerate() {
        for ti in 0..t {
            let phase = 2.0 * std::f64::consts::PI * m as f64 * ti as f64 / t as f64;
            cos_table[bi * t + ti] = phase.cos();
            sin_table[bi * t + ti] = phase.sin();
        }
    }
    let sigma_bin = spec.noise_std / (n_bins as f64).sqrt();

    let mut out = Vec::with_capacity(spec.total_recordings());
    for class in 0..spec.n_classes {
        let signature = &spec.signatures[class as usize];
        for image in 0..spec.images_per_class {
            let image_id = class * spec.images_per_class + image;
            for subject in 0..spec.n_subjects {
                let mut samples = vec![0.0f64; CHANNELS * t];
                for (ci, comp) in signature.components.iter().enumerate() {
                    let phase = root
                        .derive(&format!("phase/s{subject}/c{class}/k{ci}"))
                        .uniform(0.0, 2.0 * std::f64::consts::PI);
                    let f = snap_to_bin(comp.freq_hz, spec.band, spec.sample_rate, t);
                    let omega = 2.0 * std::f64::consts::PI * f / spec.sample_rate;
                    let wave: Vec<f64> =
                        (0..t).map(|ti| comp.amplitude * (omega * ti as f64 + phase).sin()).collect();
                    for &ch in &comp.channels {
                        let row = &mut samples[ch * t..(ch + 1) * t];
                        for (dst, w) in row.iter_mut().zip(&wave) {
                            *dst += w;
                        }
                    }
                }
                if spec.noise_std > 0.0 {
                    let mut nrng =
                        root.derive(&format!("noise/s{subject}/c{class}/i{image}"));
                    for ch in 0..CHANNELS {
                        let row = &mut samples[ch * t..(ch + 1) * t];
                        for bi in 0..n_bins {
                            let a = nrng.normal(0.0, sigma_bin);
                            let b = nrng.normal(0.0, sigma_bin);
                            let cr = &cos_table[bi * t..(bi + 1) * t];
                            let sr = &sin_table[bi * t..(bi + 1) * t];
                            for ti in 0..t {
                                row[ti] += a * cr[ti] + b * sr[ti];
                            }
                        }
                    }
                }
                // Quantize through f32: the EEGB format stores f32, and the
                // pipeline must train on exactly what a round trip loads.
                for v in samples.iter_mut() {
                    *v = *v as f32 as f64;
                }
                out.push(EegRecording::standard(samples, subject, class, image_id)?);
            }
        }
    }
    Ok(out)
}

/// Nearest-class-mean classifier on per-channel mean-square energy,
/// fit on `train` and scored on `test`. A cheap reference separating
/// amplitude-coded classes; used to calibrate generator difficulty.
pub fn channel_energy_probe(train: &[EegRecording], test: &[EegRecording]) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(CoreError::Data("probe needs nonempty train and test sets".into()));
    }
    let energy = |rec: &EegRecording| -> Vec<f64> {
        (0..rec.channels())
            .map(|c| {
                let row = rec.channel(c);
                row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64
            })
            .collect()
    };
    let mut sums: std::collections::BTreeMap<u32, (Vec<f64>, usize)> =
        std::collections::BTreeMap::new();
    for rec in train {
        let e = energy(rec);
        let entry = sums.entry(rec.class_id).or_insert_with(|| (vec![0.0; e.len()], 0));
        for (s, v) in entry.0.iter_mut().zip(&e) {
            *s += v;
        }
        entry.1 += 1;
    }
    let means: Vec<(u32, Vec<f64>)> = sums
        .into_iter()
        .map(|(class, (sum, count))| {
            (class, sum.into_iter().map(|s| s / count as f64).collect())
        })
        .collect();
    let mut correct = 0usize;
    for rec in test {
        let e = energy(rec);
        let best = means
            .iter()
            .map(|(class, mean)| {
                let d: f64 = mean.iter().zip(&e).map(|(m, v)| (m - v) * (m - v)).sum();
                (*class, d)
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(class, _)| class)
            .expect("nonempty class means");
        if best == rec.class_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_same_subject_recordings_identical() {
        let spec = SyntheticSpec::disjoint(2, 3, 2, 0.0, 99).unwrap();
        let recs = synth_generate(&spec).unwrap();
        // Same class + subject, different images: identical samples.
        let a = recs.iter().find(|r| r.class_id == 0 && r.subject_id == 0 && r.image_id == 0).unwrap();
        let b = recs.iter().find(|r| r.class_id == 0 && r.subject_id == 0 && r.image_id == 1).unwrap();
        assert_eq!(a.samples(), b.samples());
        // Different subject: same class but different phase.
        let c = recs.iter().find(|r| r.class_id == 0 && r.subject_id == 1 && r.image_id == 0).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::disjoint(3, 2, 2, 0.4, 123).unwrap();
        let r1 = synth_generate(&spec).unwrap();
        let r2 = synth_generate(&spec).unwrap();
        assert_eq!(r1.len(), r2.len());
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.key(), b.key());
            for (x, y) in a.samples().iter().zip(b.samples()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn two_disjoint_classes_probe_perfectly() {
        let spec = SyntheticSpec::disjoint(2, 6, 1, 0.05, 7).unwrap();
        let recs = synth_generate(&spec).unwrap();
        // Closed form: class c carries amplitude 1 sinusoids on its own 64
        // channels, so in-group energy ~ 0.5 + sigma^2 vs sigma^2 off-group.
        let (train, test): (Vec<_>, Vec<_>) =
            recs.into_iter().partition(|r| r.image_id % 2 == 0);
        let acc = channel_energy_probe(&train, &test).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn spectrum_is_band_limited() {
        let spec = SyntheticSpec::disjoint(2, 1, 1, 0.5, 31).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let t = RECORDING_LEN;
        // Direct DFT magnitude oracle on a handful of channels.
        for &ch in &[0usize, 20, 70, 127] {
            let row = recs[0].channel(ch);
            let mut peak: f64 = 0.0;
            let mut mags = Vec::new();
            for k in 0..=t / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (ti, &v) in row.iter().enumerate() {
                    let ph = 2.0 * std::f64::consts::PI * k as f64 * ti as f64 / t as f64;
                    re += v * ph.cos();
                    im -= v * ph.sin();
                }
                let mag = (re * re + im * im).sqrt();
                let f = k as f64 * spec.sample_rate / t as f64;
                mags.push((f, mag));
                peak = peak.max(mag);
            }
            let floor = peak * 10f64.powf(-40.0 / 20.0);
            for (f, mag) in mags {
                if !(5.0..=95.0).contains(&f) {
                    assert!(
                        mag < floor,
                        "channel {ch}: {mag:.3e} at {f:.1} Hz exceeds -40 dB of peak {peak:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn carriers_snap_inside_band() {
        let f = snap_to_bin(5.0, (5.0, 95.0), 1000.0, 440);
        assert!(f >= 5.0 && f <= 95.0);
        let f2 = snap_to_bin(95.0, (5.0, 95.0), 1000.0, 440);
        assert!(f2 >= 5.0 && f2 <= 95.0);
        // Snapped frequency is an integer multiple of fs/T.
        let cycles = f * 440.0 / 1000.0;
        assert!((cycles - cycles.round()).abs() < 1e-9);
    }

    #[test]
    fn recording_counts_and_ids() {
        let spec = SyntheticSpec::disjoint(4, 10, 2, 0.1, 0).unwrap();
        let recs = synth_generate(&spec).unwrap();
        assert_eq!(recs.len(), 80);
        for r in &recs {
            assert_eq!(r.channels(), CHANNELS);
            assert_eq!(r.timesteps(), RECORDING_LEN);
            assert_eq!(r.image_id / spec.images_per_class, r.class_id);
        }
    }
}
