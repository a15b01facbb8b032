//! Row-major GEMM wrapper and im2col/col2im for valid convolution.
//!
//! The inner product stage is `matrixmultiply::dgemm`; transposed operands
//! are expressed through strides so no copies are made.

/// C = alpha * op(A) * op(B) + beta * C, all row-major.
///
/// `a` is logically [m x k] (physically [k x m] when `ta`), `b` is logically
/// [k x n] (physically [n x k] when `tb`), `c` is [m x n].
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid-convolution output extent: floor((len - k) / stride) + 1.
pub fn conv_out_len(len: usize, k: usize, stride: usize) -> usize {
    (len - k) / stride + 1
}

/// Unfold `input` [c_in x h x w] into a [c_in*kh*kw x h_out*w_out] matrix so
/// that convolution becomes one GEMM with the flattened kernel matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
) -> Vec<f64> {
    let h_out = conv_out_len(h, kh, sh);
    let w_out = conv_out_len(w, kw, sw);
    let n_cols = h_out * w_out;
    let mut cols = vec![0.0; c_in * kh * kw * n_cols];
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let out_row = &mut cols[row * n_cols..(row + 1) * n_cols];
                for ho in 0..h_out {
                    let src = &input[(c * h + ho * sh + ky) * w..(c * h + ho * sh + ky + 1) * w];
                    let dst = &mut out_row[ho * w_out..(ho + 1) * w_out];
                    for (wo, d) in dst.iter_mut().enumerate() {
                        *d = src[wo * sw + kx];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the im2col-layout gradient back onto the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc(
    cols_grad: &[f64],
    grad_input: &mut [f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
) {
    let h_out = conv_out_len(h, kh, sh);
    let w_out = conv_out_len(w, kw, sw);
    let n_cols = h_out * w_out;
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let col_row = &cols_grad[row * n_cols..(row + 1) * n_cols];
                for ho in 0..h_out {
                    let dst =
                        &mut grad_input[(c * h + ho * sh + ky) * w..(c * h + ho * sh + ky + 1) * w];
                    let src = &col_row[ho * w_out..(ho + 1) * w_out];
                    for (wo, s) in src.iter().enumerate() {
                        dst[wo * sw + kx] += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 - i as f64 * 0.25).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a, false, &b, false, 0.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_transpose_flags() {
        // C = A^T B with A physically [k x m].
        let (m, k, n) = (2, 3, 2);
        let a_phys: Vec<f64> = (0..k * m).map(|i| i as f64).collect(); // [3 x 2]
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) - 1.0).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a_phys, true, &b, false, 0.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a_phys[p * m + i] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // C = A B^T with B physically [n x k].
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.1).collect();
        let b_phys: Vec<f64> = (0..n * k).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a, false, &b_phys, true, 0.0, &mut c2);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b_phys[j * k + p]).sum();
                assert!((c2[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random y: the pair is adjoint.
        let (c_in, h, w, kh, kw, sh, sw) = (2, 5, 7, 2, 3, 1, 2);
        let x: Vec<f64> = (0..c_in * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols = im2col(&x, c_in, h, w, kh, kw, sh, sw);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_acc(&y, &mut back, c_in, h, w, kh, kw, sh, sw);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
