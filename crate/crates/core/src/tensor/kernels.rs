//! Untaped dense kernels over row-major `f64` slices.
//!
//! These are shared by the recording [`Tape`](super::Tape) and by the
//! incremental inference path, so both see bit-identical forward values.

/// Additive mask value standing in for `-inf` before a softmax.
pub const MASK_VALUE: f64 = -1e30;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

/// `c = a · b` for `a: [m×k]`, `b: [k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, false, b, false, &mut c, m, k, n, 0.0);
    c
}

/// `c = a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, false, b, true, &mut c, m, k, n, 0.0);
    c
}

/// General `c = op(a) · op(b) + beta · c` where `op` optionally transposes.
///
/// `m`, `k`, `n` describe the product after transposition: `op(a)` is
/// `[m×k]`, `op(b)` is `[k×n]`, `c` is `[m×n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // Stored layouts: a is [m×k] or [k×m]; b is [k×n] or [n×k].
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reached through the
    // given strides lies inside the corresponding slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// In-place numerically stable softmax over each contiguous row of `cols`.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    if cols == 0 {
        return;
    }
    for row in x.chunks_mut(cols) {
        softmax_in_place(row);
    }
}

/// In-place softmax of one vector, using max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Log-softmax of one vector.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise layer norm. Returns `(output, mean, rstd)`; the statistics are
/// kept for the backward rule.
pub fn layer_norm_rows(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    cols: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = if cols == 0 { 0 } else { x.len() / cols };
    let mut out = vec![0.0; x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for (r, row) in x.chunks(cols).enumerate() {
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let o = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            o[j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Adds `bias` to each row of `x` in place.
pub fn add_row(x: &mut [f64], bias: &[f64]) {
    let cols = bias.len();
    if cols == 0 {
        return;
    }
    for row in x.chunks_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Sinusoidal positional encoding row for position `pos`.
pub fn positional_row(pos: usize, d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}
