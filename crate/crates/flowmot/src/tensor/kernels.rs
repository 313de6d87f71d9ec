//! Raw f64 kernels behind the graph ops. No recording, no allocation
//! policy beyond the output buffer; the hot loops are written so LLVM
//! vectorizes them.

/// C[m,n] = A[m,k] * B[k,n], accumulating into a fresh buffer.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// C += A * B. The i-k-j loop order streams rows of B.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// C += A * B^T where A is m×k and B is n×k (rows of both are contiguous).
pub fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cij) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            *cij += s;
        }
    }
}

/// C += A^T * B where A is k×m and B is k×n.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx of silu: sigma(x) * (1 + x * (1 - sigma(x))).
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Row-wise softmax over the positions allowed by `mask`, stabilized by
/// subtracting the row max over allowed positions. Masked positions are
/// exactly 0.0 in the output. Returns `None` for a fully masked row.
pub fn masked_softmax_row(logits: &[f64], mask: &[bool], out: &mut [f64]) -> Option<()> {
    let mut max = f64::NEG_INFINITY;
    for (l, &m) in logits.iter().zip(mask) {
        if m && *l > max {
            max = *l;
        }
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for ((o, l), &m) in out.iter_mut().zip(logits).zip(mask) {
        if m {
            let e = (l - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = 0.0;
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o /= sum;
        }
    }
    Some(())
}

/// RMS norm of one row: out_i = gain_i * x_i / sqrt(mean(x^2) + eps).
/// Returns the inverse RMS so the backward pass can reuse it.
pub fn rms_norm_row(x: &[f64], gain: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let d = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / d + eps;
    let inv = 1.0 / ms.sqrt();
    for ((o, &xi), &gi) in out.iter_mut().zip(x).zip(gain) {
        *o = gi * xi * inv;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        // nt: a(2x3) * transpose(b_t where b_t is 2x3) == a*b
        let bt = transpose(&b, 3, 2);
        let mut c_nt = vec![0.0; 4];
        matmul_nt_acc(&a, &bt, &mut c_nt, 2, 3, 2);
        assert_eq!(c_nt, c);

        // tn: transpose(a_t where a_t is 3x2) * b == a*b
        let at = transpose(&a, 2, 3);
        let mut c_tn = vec![0.0; 4];
        matmul_tn_acc(&at, &b, &mut c_tn, 2, 3, 2);
        assert_eq!(c_tn, c);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(-745.0) >= 0.0);
        assert!(sigmoid(745.0) <= 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(silu(-20.0).is_finite());
    }

    #[test]
    fn masked_softmax_row_handles_full_mask() {
        let mut out = [0.0; 3];
        assert!(masked_softmax_row(&[1.0, 2.0, 3.0], &[false, false, false], &mut out).is_none());
        masked_softmax_row(&[9.0, 3.0], &[false, true], &mut out[..2]).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 1.0);
    }
}
