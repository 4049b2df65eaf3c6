//! Dense row-major kernels used by the forward and backward passes.

pub(crate) const LN_EPS: f64 = 1e-5;

/// `row += a0*b0 + a1*b1 + a2*b2 + a3*b3`, the four source rows taken
/// from `b` at `k0..k0+4`. Blocking by four keeps `row` in registers for
/// four updates instead of one.
#[inline(always)]
fn axpy4(row: &mut [f64], a: [f64; 4], b: &[f64], k0: usize, m: usize) {
    let b0 = &b[k0 * m..(k0 + 1) * m];
    let b1 = &b[(k0 + 1) * m..(k0 + 2) * m];
    let b2 = &b[(k0 + 2) * m..(k0 + 3) * m];
    let b3 = &b[(k0 + 3) * m..(k0 + 4) * m];
    let row = &mut row[..m];
    for c in 0..m {
        row[c] += a[0] * b0[c] + a[1] * b1[c] + a[2] * b2[c] + a[3] * b3[c];
    }
}

#[inline(always)]
fn axpy(row: &mut [f64], a: f64, b: &[f64]) {
    for (o, &v) in row.iter_mut().zip(b) {
        *o += a * v;
    }
}

/// `out[n x m] += a[n x k] * b[k x m]`.
pub(crate) fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    let k4 = k - k % 4;
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        let ar = &a[i * k..(i + 1) * k];
        for k0 in (0..k4).step_by(4) {
            let av = [ar[k0], ar[k0 + 1], ar[k0 + 2], ar[k0 + 3]];
            if av != [0.0; 4] {
                axpy4(row, av, b, k0, m);
            }
        }
        for kk in k4..k {
            if ar[kk] != 0.0 {
                axpy(row, ar[kk], &b[kk * m..(kk + 1) * m]);
            }
        }
    }
}

/// `out[n x m] = a[n x k] * b[k x m] + bias[m]`.
pub(crate) fn matmul_bias(a: &[f64], b: &[f64], bias: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for row in out.chunks_exact_mut(m) {
        row.copy_from_slice(bias);
    }
    mm_acc(a, b, out, n, k, m);
}

/// `b[k x m]` transposed to `m x k`.
pub(crate) fn transpose(b: &[f64], k: usize, m: usize) -> alloc::vec::Vec<f64> {
    let mut t = alloc::vec![0.0; k * m];
    for r in 0..k {
        for c in 0..m {
            t[c * k + r] = b[r * m + c];
        }
    }
    t
}

/// `da[n x k] += dout[n x m] * b[k x m]^T`.
pub(crate) fn matmul_bt_acc(dout: &[f64], b: &[f64], da: &mut [f64], n: usize, k: usize, m: usize) {
    let bt = transpose(b, k, m);
    mm_acc(dout, &bt, da, n, m, k);
}

/// `db[k x m] += a[n x k]^T * dout[n x m]`.
pub(crate) fn mm_at_acc(a: &[f64], dout: &[f64], db: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(dout.len(), n * m);
    debug_assert_eq!(db.len(), k * m);
    let n4 = n - n % 4;
    for i0 in (0..n4).step_by(4) {
        for kk in 0..k {
            let av = [a[i0 * k + kk], a[(i0 + 1) * k + kk], a[(i0 + 2) * k + kk], a[(i0 + 3) * k + kk]];
            if av != [0.0; 4] {
                axpy4(&mut db[kk * m..(kk + 1) * m], av, dout, i0, m);
            }
        }
    }
    for i in n4..n {
        let dr = &dout[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                axpy(&mut db[kk * m..(kk + 1) * m], av, dr);
            }
        }
    }
}

/// `db[k x m] += a[n x k]^T * dout[n x m]` and `dbias[m] += colsum(dout)`.
pub(crate) fn matmul_at_acc(a: &[f64], dout: &[f64], db: &mut [f64], dbias: &mut [f64], n: usize, k: usize, m: usize) {
    for dr in dout.chunks_exact(m) {
        for (o, &d) in dbias.iter_mut().zip(dr) {
            *o += d;
        }
    }
    mm_at_acc(a, dout, db, n, k, m);
}

/// Columns `c0..c0+w` of `x[n x d]` as a contiguous `n x w` matrix.
pub(crate) fn columns(x: &[f64], n: usize, d: usize, c0: usize, w: usize) -> alloc::vec::Vec<f64> {
    let mut out = alloc::vec::Vec::with_capacity(n * w);
    for r in 0..n {
        out.extend_from_slice(&x[r * d + c0..r * d + c0 + w]);
    }
    out
}

/// Add a contiguous `n x w` matrix into columns `c0..c0+w` of `x[n x d]`.
pub(crate) fn add_columns(x: &mut [f64], src: &[f64], n: usize, d: usize, c0: usize, w: usize) {
    for r in 0..n {
        for (o, &v) in x[r * d + c0..r * d + c0 + w].iter_mut().zip(&src[r * w..(r + 1) * w]) {
            *o += v;
        }
    }
}

/// Row-wise layer norm. Writes normalized values to `xhat`, reciprocal
/// standard deviations to `rstd`, and the affine output to `out`.
pub(crate) fn layer_norm(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    xhat: &mut [f64],
    rstd: &mut [f64],
    out: &mut [f64],
    d: usize,
) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            out[r * d + c] = xh * gain[c] + bias[c];
        }
    }
}

/// Backward of [`layer_norm`]; accumulates into `dx`, `dgain`, `dbias`.
pub(crate) fn layer_norm_backward(
    dout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    dx: &mut [f64],
    dgain: Option<(&mut [f64], &mut [f64])>,
    d: usize,
) {
    let rows = rstd.len();
    let mut dxhat = alloc::vec![0.0; d];
    let mut dgain = dgain;
    for r in 0..rows {
        let dr = &dout[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        if dr.iter().all(|&v| v == 0.0) {
            continue;
        }
        if let Some((dg, db)) = dgain.as_mut() {
            for c in 0..d {
                dg[c] += dr[c] * xr[c];
                db[c] += dr[c];
            }
        }
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..d {
            dxhat[c] = dr[c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xr[c];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        let out = &mut dx[r * d..(r + 1) * d];
        for c in 0..d {
            out[c] += rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn softmax(row: &[f64]) -> alloc::vec::Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Index of the first maximum.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
