//! Central finite-difference oracle for autodiff gradients.
//!
//! A loss is expressed as a build closure `(graph, params) -> scalar node`,
//! so the same construction serves both the reverse-mode pass and the
//! perturbed forward evaluations.

use std::collections::BTreeMap;

use super::graph::{Graph, NodeId};
use super::params::{Gradients, ParamStore};
use super::rng::Rng;
use crate::error::{CoreError, Result};

pub type BuildResult = Result<NodeId>;

/// Forward value of the loss under `params`.
pub fn loss_value<F>(build: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> BuildResult,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    g.value(loss).item()
}

/// Loss value and reverse-mode gradients in one pass.
pub fn ad_gradients<F>(build: &F, params: &ParamStore) -> Result<(f64, Gradients)>
where
    F: Fn(&mut Graph, &ParamStore) -> BuildResult,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    Ok((value, g.param_gradients()))
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Per-parameter worst relative error between autodiff and central finite
/// differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, ParamCheck>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: max rel err {:.3e} at `{}` (tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.worst_param,
            self.tol
        )
    }
}

/// Compare externally supplied gradients against the finite-difference
/// oracle. At most `coords_per_tensor` coordinates are sampled per tensor
/// (deterministically from `seed`); small tensors are checked exhaustively.
pub fn compare_with_fd<F>(
    ad: &Gradients,
    params: &ParamStore,
    build: &F,
    h: f64,
    tol: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> BuildResult,
{
    if h <= 0.0 {
        return Err(CoreError::InvalidArg("finite-difference step must be positive".into()));
    }
    let mut work = params.clone();
    let mut per_param = BTreeMap::new();
    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();

    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let numel = params.get(name)?.numel();
        let g_ad =
            ad.get(name).ok_or_else(|| CoreError::InvalidArg(format!("no AD gradient for `{name}`")))?;
        let coords = sample_coords(numel, coords_per_tensor, seed, name);
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let f_plus = loss_value(build, &work)?;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let f_minus = loss_value(build, &work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let g_fd = (f_plus - f_minus) / (2.0 * h);
            let rel = (g_ad[i] - g_fd).abs() / (g_ad[i].abs() + g_fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        if worst > max_rel_err {
            max_rel_err = worst;
            worst_param = name.clone();
        }
        per_param.insert(name.clone(), ParamCheck { max_rel_err: worst, coords_checked: coords.len() });
    }
    Ok(GradCheckReport { per_param, max_rel_err, worst_param, tol, pass: max_rel_err < tol })
}

/// Full gradient check: run reverse mode, then compare with the oracle.
pub fn check_gradients<F>(
    params: &ParamStore,
    build: &F,
    h: f64,
    tol: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> BuildResult,
{
    let (_, ad) = ad_gradients(build, params)?;
    compare_with_fd(&ad, params, build, h, tol, coords_per_tensor, seed)
}

/// Deterministic coordinate subsample: everything when the tensor is small,
/// otherwise `want` distinct indices drawn from a per-tensor stream.
fn sample_coords(numel: usize, want: usize, seed: u64, name: &str) -> Vec<usize> {
    if numel <= want {
        return (0..numel).collect();
    }
    let mut rng = Rng::new(seed).derive(&format!("fd/{name}"));
    let mut picked = vec![false; numel];
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let i = rng.below(numel);
        if !picked[i] {
            picked[i] = true;
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_loss_is_exact_to_fd_precision() {
        let mut params = ParamStore::new();
        params
            .insert("w", Tensor::from_vec((0..10).map(|i| 0.3 * i as f64 - 1.2).collect()).unwrap())
            .unwrap();
        let build = |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let w = g.bind(p, "w")?;
            let sq = g.mul(w, w)?;
            Ok(g.sum(sq))
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-9, 64, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn sigmoid_dense_chain_passes() {
        let mut rng = Rng::new(11).derive("gc");
        let mut params = ParamStore::new();
        params
            .insert(
                "w1",
                Tensor::new(vec![4, 6], (0..24).map(|_| rng.uniform(-0.8, 0.8)).collect()).unwrap(),
            )
            .unwrap();
        params
            .insert(
                "w2",
                Tensor::new(vec![6, 3], (0..18).map(|_| rng.uniform(-0.8, 0.8)).collect()).unwrap(),
            )
            .unwrap();
        params
            .insert("b2", Tensor::new(vec![3], (0..3).map(|_| rng.uniform(-0.2, 0.2)).collect()).unwrap())
            .unwrap();
        let x = Tensor::new(vec![2, 4], (0..8).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let build = move |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let xin = g.input(x.clone());
            let w1 = g.bind(p, "w1")?;
            let w2 = g.bind(p, "w2")?;
            let b2 = g.bind(p, "b2")?;
            let h = g.matmul(xin, w1)?;
            let h = g.sigmoid(h);
            let o = g.matmul(h, w2)?;
            let o = g.add_row_vec(o, b2)?;
            let o = g.tanh(o);
            Ok(g.mean(o))
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-6, 64, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::from_vec(vec![0.7, -1.3, 2.1]).unwrap()).unwrap();
        let build = |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let w = g.bind(p, "w")?;
            let sq = g.mul(w, w)?;
            Ok(g.sum(sq))
        };
        let (_, mut ad) = ad_gradients(&build, &params).unwrap();
        for (_, g) in ad.iter_mut() {
            for v in g.iter_mut() {
                *v *= 1.01;
            }
        }
        let report = compare_with_fd(&ad, &params, &build, 1e-5, 1e-4, 64, 0).unwrap();
        assert!(!report.pass, "corruption must be detected: {}", report.summary());
    }

    #[test]
    fn tanh_gradient_matches_fd() {
        let mut params = ParamStore::new();
        params
            .insert("x", Tensor::from_vec(vec![-1.7, -0.3, 0.0, 0.4, 1.9]).unwrap())
            .unwrap();
        let build = |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let x = g.bind(p, "x")?;
            let y = g.tanh(x);
            Ok(g.sum(y))
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-6, 64, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn matmul_gradient_matches_fd() {
        let mut rng = Rng::new(5).derive("mm");
        let mut params = ParamStore::new();
        params
            .insert(
                "a",
                Tensor::new(vec![3, 4], (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap(),
            )
            .unwrap();
        let b = Tensor::new(vec![4, 2], (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let build = move |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let a = g.bind(p, "a")?;
            let bn = g.input(b.clone());
            let c = g.matmul(a, bn)?;
            Ok(g.sum(c))
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-6, 64, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn softmax_xent_gradient_matches_fd() {
        let mut rng = Rng::new(9).derive("sx");
        let mut params = ParamStore::new();
        params
            .insert(
                "logits",
                Tensor::new(vec![4, 5], (0..20).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap(),
            )
            .unwrap();
        let labels = vec![0usize, 3, 2, 4];
        let build = move |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let l = g.bind(p, "logits")?;
            g.softmax_xent(l, &labels)
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-5, 64, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn conv_gradient_matches_fd() {
        let mut rng = Rng::new(12).derive("conv");
        let mut params = ParamStore::new();
        params
            .insert(
                "k",
                Tensor::new(vec![2, 3, 2, 3], (0..36).map(|_| rng.uniform(-0.5, 0.5)).collect())
                    .unwrap(),
            )
            .unwrap();
        params
            .insert("b", Tensor::new(vec![2], vec![0.1, -0.2]).unwrap())
            .unwrap();
        params
            .insert(
                "x",
                Tensor::new(vec![3, 5, 8], (0..120).map(|_| rng.uniform(-1.0, 1.0)).collect())
                    .unwrap(),
            )
            .unwrap();
        let build = |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let x = g.bind(p, "x")?;
            let k = g.bind(p, "k")?;
            let b = g.bind(p, "b")?;
            let y = g.conv2d_valid(x, k, Some(b), (2, 2))?;
            let y = g.tanh(y);
            Ok(g.sum(y))
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-6, 200, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn attention_style_graph_matches_fd() {
        // softmax rows, slicing, concat, transpose and layer norm together.
        let mut rng = Rng::new(21).derive("attn");
        let mut params = ParamStore::new();
        for (name, shape) in
            [("wq", vec![6, 6]), ("wk", vec![6, 6]), ("wv", vec![6, 6]), ("gamma", vec![6]), ("beta", vec![6])]
        {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.uniform(-0.6, 0.6)).collect();
            params.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
        }
        let x = Tensor::new(vec![4, 6], (0..24).map(|i| (i as f64 * 0.41).sin()).collect()).unwrap();
        let build = move |g: &mut Graph, p: &ParamStore| -> BuildResult {
            let xn = g.input(x.clone());
            let wq = g.bind(p, "wq")?;
            let wk = g.bind(p, "wk")?;
            let wv = g.bind(p, "wv")?;
            let gamma = g.bind(p, "gamma")?;
            let beta = g.bind(p, "beta")?;
            let q = g.matmul(xn, wq)?;
            let k = g.matmul(xn, wk)?;
            let v = g.matmul(xn, wv)?;
            let mut heads = Vec::new();
            for hi in 0..2 {
                let qh = g.slice_cols(q, hi * 3, 3)?;
                let kh = g.slice_cols(k, hi * 3, 3)?;
                let vh = g.slice_cols(v, hi * 3, 3)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, 1.0 / (3.0f64).sqrt());
                let attn = g.softmax_rows(scores)?;
                heads.push(g.matmul(attn, vh)?);
            }
            let ctx = g.concat_cols(&heads)?;
            let res = g.add(ctx, xn)?;
            let out = g.layer_norm_rows(res, gamma, beta, 1e-6)?;
            Ok(g.mean(out))
        };
        let report = check_gradients(&params, &build, 1e-5, 1e-6, 64, 0).unwrap();
        assert!(report.pass, "{}", report.summary());
    }
}
