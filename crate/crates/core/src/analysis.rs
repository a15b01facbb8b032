//! Analysis artifacts: head-embedding export, a 2-D PCA projection for
//! cluster inspection, and per-class topographic mean-amplitude maps.

use std::collections::BTreeMap;

use crate::data::{EegRecording, RecordingKey, WindowSample};
use crate::error::{CoreError, Result};
use crate::model::{window_embedding, window_tensor, ModelParams};
use crate::tensor::{Graph, Rng};

/// One window's head embedding (taken before the classifier).
#[derive(Clone, Debug)]
pub struct EmbeddingRecord {
    pub recording: RecordingKey,
    pub window_index: usize,
    pub class_id: u32,
    pub embedding: Vec<f64>,
}

/// Deterministically subsample up to `per_class` windows per class and
/// compute their head embeddings. Classes with fewer windows contribute all
/// of them.
pub fn extract_embeddings(
    model: &ModelParams,
    windows: &[WindowSample],
    per_class: usize,
    seed: u64,
) -> Result<Vec<EmbeddingRecord>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_class.entry(w.class_id).or_default().push(i);
    }
    let rng = Rng::new(seed);
    let mut out = Vec::new();
    for (class, mut indices) in by_class {
        if indices.len() < per_class {
            eprintln!(
                "warning: class {class} has only {} windows (requested {per_class}); taking all",
                indices.len()
            );
        }
        rng.derive(&format!("embed-sample/{class}")).shuffle(&mut indices);
        indices.truncate(per_class);
        indices.sort_unstable();
        for idx in indices {
            let w = &windows[idx];
            let mut g = Graph::inference();
            let input = g.input(window_tensor(w)?);
            let emb = window_embedding(&mut g, model, input)?;
            out.push(EmbeddingRecord {
                recording: w.parent,
                window_index: w.window_index,
                class_id: w.class_id,
                embedding: g.value(emb).data().to_vec(),
            });
        }
    }
    Ok(out)
}

/// Embeddings as CSV: `rec_id,window,class,e0..e{d-1}`.
pub fn embeddings_csv(records: &[EmbeddingRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(CoreError::Data("no embedding records".into()));
    }
    let d = records[0].embedding.len();
    if records.iter().any(|r| r.embedding.len() != d) {
        return Err(CoreError::ShapeMismatch("ragged embedding dimensions".into()));
    }
    let mut out = String::from("rec_id,window,class");
    for i in 0..d {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "s{}_i{},{},{}",
            r.recording.subject_id, r.recording.image_id, r.window_index, r.class_id
        ));
        for v in &r.embedding {
            out.push_str(&format!(",{v:.17e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Top-2 PCA of a record set.
#[derive(Clone, Debug)]
pub struct Pca2d {
    /// One (x, y) pair per input record, input order.
    pub coords: Vec<[f64; 2]>,
    /// Orthonormal principal directions, length d each.
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    /// Sum of all covariance eigenvalues (= total variance).
    pub total_variance: f64,
    pub mean: Vec<f64>,
}

impl Pca2d {
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            (self.eigenvalues[0] + self.eigenvalues[1]) / self.total_variance
        } else {
            0.0
        }
    }
}

/// Iterated power method on the centered covariance (applied implicitly
/// through the data matrix). The second component is deflated against the
/// first and re-orthogonalized every step; rank-one input yields a zero
/// second component.
pub fn pca_2d(data: &[Vec<f64>]) -> Result<Pca2d> {
    let n = data.len();
    if n < 3 {
        return Err(CoreError::Data(format!("PCA needs at least 3 records, got {n}")));
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|r| r.len() != d) {
        return Err(CoreError::ShapeMismatch("ragged PCA input".into()));
    }
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let total_variance: f64 =
        centered.iter().flat_map(|r| r.iter().map(|v| v * v)).sum::<f64>() / n as f64;

    // cov * v without materializing the d x d covariance.
    let cov_apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for row in &centered {
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, r) in out.iter_mut().zip(row) {
                *o += dot * r;
            }
        }
        for o in out.iter_mut() {
            *o /= n as f64;
        }
        out
    };

    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut eigenvalues = [0.0f64; 2];
    let mut rng = Rng::new(0xA11CE).derive("pca");
    for which in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        orthogonalize(&mut v, &components[..which]);
        if normalize(&mut v) < 1e-300 {
            break;
        }
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let mut next = cov_apply(&v);
            orthogonalize(&mut next, &components[..which]);
            let norm = normalize(&mut next);
            if norm < 1e-14 * total_variance.max(1e-300) {
                // Deflated operator is numerically zero: rank deficient.
                next = vec![0.0; d];
                lambda = 0.0;
                v = next;
                break;
            }
            let delta: f64 =
                v.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let flipped: f64 =
                v.iter().zip(&next).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
            v = next;
            lambda = norm;
            if delta.min(flipped) < 1e-13 {
                break;
            }
        }
        // Fix sign: largest-magnitude coordinate is positive.
        if let Some(imax) =
            (0..d).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap())
        {
            if v[imax] < 0.0 {
                for x in v.iter_mut() {
                    *x = -*x;
                }
            }
        }
        components[which] = v;
        eigenvalues[which] = lambda;
    }
    let coords: Vec<[f64; 2]> = centered
        .iter()
        .map(|row| {
            [
                row.iter().zip(&components[0]).map(|(a, b)| a * b).sum(),
                row.iter().zip(&components[1]).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    Ok(Pca2d { coords, components, eigenvalues, total_variance, mean })
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        for (x, ui) in v.iter_mut().zip(u) {
            *x -= dot * ui;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Mean within-class and between-class pairwise embedding distances.
pub fn embedding_separation(records: &[EmbeddingRecord]) -> Result<(f64, f64)> {
    if records.len() < 2 {
        return Err(CoreError::Data("need at least 2 embedding records".into()));
    }
    let mut within = (0.0, 0usize);
    let mut between = (0.0, 0usize);
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let dist: f64 = records[i]
                .embedding
                .iter()
                .zip(&records[j].embedding)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if records[i].class_id == records[j].class_id {
                within.0 += dist;
                within.1 += 1;
            } else {
                between.0 += dist;
                between.1 += 1;
            }
        }
    }
    if within.1 == 0 || between.1 == 0 {
        return Err(CoreError::Data("need both within- and between-class pairs".into()));
    }
    Ok((within.0 / within.1 as f64, between.0 / between.1 as f64))
}

// ---- topographic maps ----

/// 128 electrode positions on concentric rings inside the unit disk.
#[derive(Clone, Debug)]
pub struct ElectrodeLayout {
    positions: Vec<(f64, f64)>,
}

impl ElectrodeLayout {
    /// Rings of 16/32/48/32 electrodes at radii 0.25/0.5/0.75/0.95.
    pub fn standard() -> Self {
        let mut positions = Vec::with_capacity(128);
        for (count, radius) in [(16usize, 0.25f64), (32, 0.5), (48, 0.75), (32, 0.95)] {
            for j in 0..count {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                positions.push((radius * theta.cos(), radius * theta.sin()));
            }
        }
        ElectrodeLayout { positions }
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Interpolated mean-amplitude map for one class.
#[derive(Clone, Debug)]
pub struct TopomapGrid {
    pub class_id: u32,
    pub size: usize,
    /// Row-major size x size; meaningful only where `mask` is true.
    pub values: Vec<f64>,
    /// True inside the unit disk.
    pub mask: Vec<bool>,
    pub min: f64,
    pub max: f64,
}

impl TopomapGrid {
    /// Cell center in disk coordinates; row 0 is y = +1 (top of the head).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let g = self.size as f64;
        let x = -1.0 + 2.0 * (col as f64 + 0.5) / g;
        let y = 1.0 - 2.0 * (row as f64 + 0.5) / g;
        (x, y)
    }
}

/// Per-channel mean absolute amplitude over time and recordings.
fn mean_abs_amplitudes(recs: &[&EegRecording]) -> Vec<f64> {
    let channels = recs[0].channels();
    let mut out = vec![0.0; channels];
    let mut count = 0usize;
    for rec in recs {
        for (c, acc) in out.iter_mut().enumerate() {
            *acc += rec.channel(c).iter().map(|v| v.abs()).sum::<f64>();
        }
        count += rec.timesteps();
    }
    for acc in out.iter_mut() {
        *acc /= count as f64;
    }
    out
}

/// Inverse-distance-weighted (power 2) interpolation of per-channel mean
/// absolute amplitudes onto a size x size grid, one map per class present.
pub fn class_mean_topomap(
    recordings: &[EegRecording],
    layout: &ElectrodeLayout,
    size: usize,
) -> Result<Vec<TopomapGrid>> {
    if recordings.is_empty() {
        return Err(CoreError::Data("no recordings for topomaps".into()));
    }
    if size < 2 {
        return Err(CoreError::InvalidArg("grid must be at least 2 x 2".into()));
    }
    let mut by_class: BTreeMap<u32, Vec<&EegRecording>> = BTreeMap::new();
    for r in recordings {
        if r.channels() != layout.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "recording has {} channels, layout {}",
                r.channels(),
                layout.len()
            )));
        }
        by_class.entry(r.class_id).or_default().push(r);
    }
    let mut out = Vec::with_capacity(by_class.len());
    for (class_id, recs) in by_class {
        let amps = mean_abs_amplitudes(&recs);
        let mut grid = TopomapGrid {
            class_id,
            size,
            values: vec![0.0; size * size],
            mask: vec![false; size * size],
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for row in 0..size {
            for col in 0..size {
                let (x, y) = grid.cell_center(row, col);
                if x * x + y * y > 1.0 {
                    continue;
                }
                let idx = row * size + col;
                grid.mask[idx] = true;
                let v = idw(layout.positions(), &amps, x, y);
                grid.values[idx] = v;
                grid.min = grid.min.min(v);
                grid.max = grid.max.max(v);
            }
        }
        out.push(grid);
    }
    Ok(out)
}

/// Shepard inverse-distance weighting with power 2; exact at electrodes.
fn idw(positions: &[(f64, f64)], values: &[f64], x: f64, y: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((px, py), &v) in positions.iter().zip(values) {
        let d2 = (x - px) * (x - px) + (y - py) * (y - py);
        if d2 < 1e-18 {
            return v;
        }
        let w = 1.0 / d2;
        num += w * v;
        den += w;
    }
    num / den
}

/// Topomap as CSV rows; cells outside the disk are empty fields.
pub fn topomap_csv(grid: &TopomapGrid) -> String {
    let mut out = String::new();
    for row in 0..grid.size {
        for col in 0..grid.size {
            if col > 0 {
                out.push(',');
            }
            let idx = row * grid.size + col;
            if grid.mask[idx] {
                out.push_str(&format!("{:.12e}", grid.values[idx]));
            }
        }
        out.push('\n');
    }
    out
}

/// Render one class map as a standalone SVG: colored cells clipped to the
/// head disk, with the linear color scale annotated by its min/max.
pub fn topomap_svg(grid: &TopomapGrid) -> String {
    let px = 512.0;
    let cell = px / grid.size as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" \
         viewBox=\"0 0 {0} {1}\">\n",
        px as usize,
        px as usize + 40
    ));
    svg.push_str(&format!(
        "<clipPath id=\"disk\"><circle cx=\"{0}\" cy=\"{0}\" r=\"{0}\"/></clipPath>\n",
        px / 2.0
    ));
    svg.push_str("<g clip-path=\"url(#disk)\">\n");
    let span = (grid.max - grid.min).max(1e-300);
    for row in 0..grid.size {
        for col in 0..grid.size {
            let idx = row * grid.size + col;
            if !grid.mask[idx] {
                continue;
            }
            // Linear scale: blue (min) to red (max).
            let t = (grid.values[idx] - grid.min) / span;
            let r = (255.0 * t) as u8;
            let b = (255.0 * (1.0 - t)) as u8;
            let g_ch = (96.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"rgb({r},{g_ch},{b})\"/>\n",
                col as f64 * cell,
                row as f64 * cell,
                cell + 0.5,
                cell + 0.5
            ));
        }
    }
    svg.push_str("</g>\n");
    svg.push_str(&format!(
        "<circle cx=\"{0}\" cy=\"{0}\" r=\"{1}\" fill=\"none\" stroke=\"black\"/>\n",
        px / 2.0,
        px / 2.0 - 0.5
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{}\" font-size=\"14\">class {} | min {:.4e} | max {:.4e}</text>\n",
        px as usize + 24,
        grid.class_id,
        grid.min,
        grid.max
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticSpec};

    #[test]
    fn layout_is_inside_unit_disk() {
        let layout = ElectrodeLayout::standard();
        assert_eq!(layout.len(), 128);
        for &(x, y) in layout.positions() {
            assert!(x * x + y * y <= 1.0);
        }
    }

    #[test]
    fn pca_recovers_planar_data_exactly() {
        // Points on a 2-D plane embedded in R^8: projection then
        // reconstruction must be lossless.
        let mut rng = Rng::new(5).derive("plane");
        let d = 8;
        let u: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut w: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        orthogonalize(&mut w, &[u.clone()]);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let a = rng.uniform(-3.0, 3.0);
                let b = rng.uniform(-2.0, 2.0);
                (0..d).map(|i| a * u[i] + b * w[i] + 0.7).collect()
            })
            .collect();
        let pca = pca_2d(&data).unwrap();
        for (row, c) in data.iter().zip(&pca.coords) {
            for i in 0..d {
                let recon =
                    pca.mean[i] + c[0] * pca.components[0][i] + c[1] * pca.components[1][i];
                assert!((row[i] - recon).abs() < 1e-8, "reconstruction error at dim {i}");
            }
        }
        // Orthonormal components.
        let dot: f64 =
            pca.components[0].iter().zip(&pca.components[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-8);
        let n0: f64 = pca.components[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn pca_explained_ratio_matches_full_eigendecomposition() {
        // Isotropic Gaussian in d = 6: explained ratio of top-2 ~ 2/d, and
        // must match a dense Jacobi eigensolver run on the same covariance.
        let mut rng = Rng::new(77).derive("iso");
        let d = 6;
        let n = 4000;
        let data: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        let pca = pca_2d(&data).unwrap();

        // Oracle: explicit covariance + Jacobi rotations.
        let mut mean = vec![0.0; d];
        for row in &data {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for row in &data {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / n as f64;
                }
            }
        }
        let mut a = cov.clone();
        for _ in 0..100 {
            // Largest off-diagonal element.
            let (mut p, mut q, mut big) = (0, 1, 0.0f64);
            for i in 0..d {
                for j in i + 1..d {
                    if a[i][j].abs() > big {
                        big = a[i][j].abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if big < 1e-12 {
                break;
            }
            let theta = 0.5 * (2.0 * a[p][q]).atan2(a[p][p] - a[q][q]);
            let (c, s) = (theta.cos(), theta.sin());
            for k in 0..d {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp + s * akq;
                a[k][q] = -s * akp + c * akq;
            }
            for k in 0..d {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk + s * aqk;
                a[q][k] = -s * apk + c * aqk;
            }
        }
        let mut eigs: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
        eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let oracle_ratio = (eigs[0] + eigs[1]) / eigs.iter().sum::<f64>();
        assert!((pca.explained_ratio() - oracle_ratio).abs() < 1e-6);
        assert!((pca.explained_ratio() - 2.0 / d as f64).abs() < 0.05);
    }

    #[test]
    fn pca_duplicate_points_map_identically() {
        let mut rng = Rng::new(3).derive("dup");
        let mut data: Vec<Vec<f64>> =
            (0..10).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        data.push(data[2].clone());
        let pca = pca_2d(&data).unwrap();
        assert_eq!(pca.coords[2], pca.coords[10]);
    }

    #[test]
    fn pca_rank_one_zeroes_second_component() {
        let u: Vec<f64> = vec![1.0, 2.0, -1.0, 0.5];
        let data: Vec<Vec<f64>> =
            (0..8).map(|i| u.iter().map(|v| v * i as f64).collect()).collect();
        let pca = pca_2d(&data).unwrap();
        assert!(pca.eigenvalues[1].abs() < 1e-10 * pca.eigenvalues[0].max(1.0));
        for c in &pca.coords {
            assert!(c[1].abs() < 1e-6);
        }
    }

    #[test]
    fn pca_is_order_invariant() {
        let mut rng = Rng::new(9).derive("ord");
        let mut data: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.normal(0.0, 1.0)).collect())
            .collect();
        // Add anisotropy so the top components are well separated.
        for row in data.iter_mut() {
            row[0] *= 4.0;
            row[1] *= 2.0;
        }
        let pca1 = pca_2d(&data).unwrap();
        let mut shuffled: Vec<(usize, Vec<f64>)> = data.into_iter().enumerate().collect();
        Rng::new(10).shuffle(&mut shuffled);
        let reordered: Vec<Vec<f64>> = shuffled.iter().map(|(_, r)| r.clone()).collect();
        let pca2 = pca_2d(&reordered).unwrap();
        for (orig_idx, _) in &shuffled {
            let c1 = pca1.coords[*orig_idx];
            let c2 = pca2.coords[shuffled.iter().position(|(i, _)| i == orig_idx).unwrap()];
            assert!((c1[0] - c2[0]).abs() < 1e-6 && (c1[1] - c2[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn topomap_single_active_channel_peaks_at_its_electrode() {
        let layout = ElectrodeLayout::standard();
        let active = 40usize;
        let mut samples = vec![0.0; 128 * 440];
        // Tiny floor everywhere keeps z-scoring concerns away; this test
        // feeds raw amplitudes directly.
        for v in samples.iter_mut() {
            *v = 0.01;
        }
        for t in 0..440 {
            samples[active * 440 + t] = (t as f64 * 0.3).sin() * 5.0;
        }
        let rec = EegRecording::standard(samples, 0, 0, 0).unwrap();
        let grids = class_mean_topomap(&[rec], &layout, 64).unwrap();
        assert_eq!(grids.len(), 1);
        let grid = &grids[0];
        let (best_idx, _) = grid
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| grid.mask[*i])
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let (bx, by) = grid.cell_center(best_idx / grid.size, best_idx % grid.size);
        let (ex, ey) = layout.positions()[active];
        let dist = ((bx - ex).powi(2) + (by - ey).powi(2)).sqrt();
        // Must land within one cell of the active electrode.
        assert!(dist < 2.0 * 2.0 / 64.0, "peak {dist} away from electrode");
    }

    #[test]
    fn topomap_constant_amplitude_is_flat() {
        let layout = ElectrodeLayout::standard();
        let samples = vec![0.7; 128 * 440];
        let rec = EegRecording::standard(samples, 0, 3, 0).unwrap();
        let grids = class_mean_topomap(&[rec], &layout, 32).unwrap();
        let grid = &grids[0];
        for (i, &v) in grid.values.iter().enumerate() {
            if grid.mask[i] {
                assert!((v - 0.7).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn topomap_is_linear_in_amplitude() {
        let layout = ElectrodeLayout::standard();
        let spec = SyntheticSpec::disjoint(2, 1, 1, 0.2, 8).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let scaled: Vec<EegRecording> = recs
            .iter()
            .map(|r| {
                EegRecording::standard(
                    r.samples().iter().map(|v| 3.0 * v).collect(),
                    r.subject_id,
                    r.class_id,
                    r.image_id,
                )
                .unwrap()
            })
            .collect();
        let g1 = class_mean_topomap(&recs, &layout, 24).unwrap();
        let g2 = class_mean_topomap(&scaled, &layout, 24).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            for (i, (&va, &vb)) in a.values.iter().zip(&b.values).enumerate() {
                if a.mask[i] {
                    assert!((vb - 3.0 * va).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn topomap_disjoint_classes_peak_in_different_regions() {
        let spec = SyntheticSpec::disjoint(2, 3, 1, 0.1, 12).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let layout = ElectrodeLayout::standard();
        let grids = class_mean_topomap(&recs, &layout, 48).unwrap();
        assert_eq!(grids.len(), 2);
        let argmax = |g: &TopomapGrid| {
            g.values
                .iter()
                .enumerate()
                .filter(|(i, _)| g.mask[*i])
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        };
        assert_ne!(argmax(&grids[0]), argmax(&grids[1]));
    }

    #[test]
    fn svg_and_csv_are_deterministic() {
        let layout = ElectrodeLayout::standard();
        let spec = SyntheticSpec::disjoint(2, 1, 1, 0.1, 4).unwrap();
        let recs = synth_generate(&spec).unwrap();
        let g1 = class_mean_topomap(&recs, &layout, 16).unwrap();
        let g2 = class_mean_topomap(&recs, &layout, 16).unwrap();
        assert_eq!(topomap_svg(&g1[0]), topomap_svg(&g2[0]));
        assert_eq!(topomap_csv(&g1[1]), topomap_csv(&g2[1]));
        assert!(topomap_svg(&g1[0]).contains("class 0"));
    }
}
