//! Layer primitives and their exact adjoints.

use super::{NnError, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `C = op(A) · op(B) + beta · C`, all row-major; `m × n` result.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index the kernel touches.
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

/// Columns per patch matrix; whole samples are grouped up to this size so the
/// matrix stays cache resident.
const COL_TARGET: usize = 2048;

fn group_size(x: &Tensor4) -> usize {
    (COL_TARGET / x.plane().max(1)).clamp(1, x.n.max(1))
}

/// `(C · 9) × (G · H · W)` patch matrix of samples `s0 .. s0 + g` for a 3×3
/// kernel with zero padding 1.
fn im2col(x: &Tensor4, s0: usize, g: usize, col: &mut [f64]) {
    let (c, h, w) = (x.c, x.h, x.w);
    let hw = h * w;
    let cols = g * hw;
    col.fill(0.0);
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for t in 0..g {
                    let plane = x.channel(s0 + t, ci);
                    for i in 0..h {
                        let ii = i as isize + ky as isize - 1;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let src = &plane[ii as usize * w..ii as usize * w + w];
                        let start = row + t * hw + i * w;
                        let dst = &mut col[start..start + w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&src[..w - 1]),
                            1 => dst.copy_from_slice(src),
                            _ => dst[..w - 1].copy_from_slice(&src[1..]),
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulated into `x`.
fn col2im(col: &[f64], s0: usize, g: usize, x: &mut Tensor4) {
    let (c, h, w) = (x.c, x.h, x.w);
    let hw = h * w;
    let cols = g * hw;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for t in 0..g {
                    let plane = x.channel_mut(s0 + t, ci);
                    for i in 0..h {
                        let ii = i as isize + ky as isize - 1;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let start = row + t * hw + i * w;
                        let src = &col[start..start + w];
                        let dst = &mut plane[ii as usize * w..ii as usize * w + w];
                        match kx {
                            0 => dst[..w - 1]
                                .iter_mut()
                                .zip(&src[1..])
                                .for_each(|(d, v)| *d += v),
                            1 => dst.iter_mut().zip(src).for_each(|(d, v)| *d += v),
                            _ => dst[1..]
                                .iter_mut()
                                .zip(&src[..w - 1])
                                .for_each(|(d, v)| *d += v),
                        }
                    }
                }
            }
        }
    }
}

/// `C × (N · H · W)` view of a tensor.
fn to_channel_major(x: &Tensor4) -> Vec<f64> {
    let hw = x.plane();
    let cols = x.n * hw;
    let mut out = vec![0.0; x.c * cols];
    for s in 0..x.n {
        for c in 0..x.c {
            out[c * cols + s * hw..c * cols + (s + 1) * hw].copy_from_slice(x.channel(s, c));
        }
    }
    out
}

fn from_channel_major(m: &[f64], n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
    let hw = h * w;
    let cols = n * hw;
    let mut t = Tensor4::zeros(n, c, h, w);
    for s in 0..n {
        for ci in 0..c {
            t.channel_mut(s, ci)
                .copy_from_slice(&m[ci * cols + s * hw..ci * cols + (s + 1) * hw]);
        }
    }
    t
}

fn check_conv(x: &Tensor4, w: &[f64], b: &[f64], out_c: usize, k: usize) -> Result<(), NnError> {
    if w.len() != out_c * x.c * k * k || b.len() != out_c {
        return Err(NnError::ShapeMismatch(format!(
            "kernel {} / bias {} for {} -> {out_c} channels",
            w.len(),
            b.len(),
            x.c
        )));
    }
    Ok(())
}

/// 3×3 convolution, stride 1, zero padding 1. `w` is `(out, in, 3, 3)`.
pub fn conv3x3_forward(
    x: &Tensor4,
    w: &[f64],
    b: &[f64],
    out_c: usize,
) -> Result<Tensor4, NnError> {
    check_conv(x, w, b, out_c, 3)?;
    let (hw, k, g) = (x.plane(), x.c * 9, group_size(x));
    let mut y = Tensor4::zeros(x.n, out_c, x.h, x.w);
    let mut col = vec![0.0; k * g * hw];
    let mut ym = vec![0.0; out_c * g * hw];
    let mut s0 = 0;
    while s0 < x.n {
        let gs = g.min(x.n - s0);
        let cols = gs * hw;
        im2col(x, s0, gs, &mut col[..k * cols]);
        for (o, row) in ym[..out_c * cols].chunks_mut(cols).enumerate() {
            row.fill(b[o]);
        }
        gemm(
            out_c,
            k,
            cols,
            w,
            false,
            &col[..k * cols],
            false,
            1.0,
            &mut ym[..out_c * cols],
        );
        for t in 0..gs {
            for o in 0..out_c {
                y.channel_mut(s0 + t, o)
                    .copy_from_slice(&ym[o * cols + t * hw..o * cols + (t + 1) * hw]);
            }
        }
        s0 += gs;
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub fn conv3x3_backward(
    dy: &Tensor4,
    x: &Tensor4,
    w: &[f64],
) -> Result<(Tensor4, Vec<f64>, Vec<f64>), NnError> {
    let out_c = dy.c;
    if (dy.n, dy.h, dy.w) != (x.n, x.h, x.w) || w.len() != out_c * x.c * 9 {
        return Err(NnError::ShapeMismatch("conv3x3 backward".into()));
    }
    let (hw, k, g) = (x.plane(), x.c * 9, group_size(x));
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut dw = vec![0.0; out_c * k];
    let mut db = vec![0.0; out_c];
    let mut col = vec![0.0; k * g * hw];
    let mut dcol = vec![0.0; k * g * hw];
    let mut dym = vec![0.0; out_c * g * hw];
    let mut s0 = 0;
    while s0 < x.n {
        let gs = g.min(x.n - s0);
        let cols = gs * hw;
        for t in 0..gs {
            for o in 0..out_c {
                let src = dy.channel(s0 + t, o);
                db[o] += src.iter().sum::<f64>();
                dym[o * cols + t * hw..o * cols + (t + 1) * hw].copy_from_slice(src);
            }
        }
        im2col(x, s0, gs, &mut col[..k * cols]);
        gemm(
            out_c,
            cols,
            k,
            &dym[..out_c * cols],
            false,
            &col[..k * cols],
            true,
            1.0,
            &mut dw,
        );
        gemm(
            k,
            out_c,
            cols,
            w,
            true,
            &dym[..out_c * cols],
            false,
            0.0,
            &mut dcol[..k * cols],
        );
        col2im(&dcol[..k * cols], s0, gs, &mut dx);
        s0 += gs;
    }
    Ok((dx, dw, db))
}

/// `(4·out) × in` matrix with row `(o, a, b)`.
fn tconv_matrix(w: &[f64], out_c: usize, in_c: usize) -> Vec<f64> {
    let mut m = vec![0.0; 4 * out_c * in_c];
    for o in 0..out_c {
        for c in 0..in_c {
            for q in 0..4 {
                m[(o * 4 + q) * in_c + c] = w[(o * in_c + c) * 4 + q];
            }
        }
    }
    m
}

/// 2×2 transposed convolution with stride 2. `w` is `(out, in, 2, 2)`;
/// `y[o, 2i+a, 2j+b] = bias[o] + Σ_c w[o, c, a, b] x[c, i, j]`.
pub fn tconv2x2_forward(
    x: &Tensor4,
    w: &[f64],
    b: &[f64],
    out_c: usize,
) -> Result<Tensor4, NnError> {
    check_conv(x, w, b, out_c, 2)?;
    let (hw, cols) = (x.plane(), x.n * x.plane());
    let xm = to_channel_major(x);
    let wm = tconv_matrix(w, out_c, x.c);
    let mut z = vec![0.0; 4 * out_c * cols];
    gemm(4 * out_c, x.c, cols, &wm, false, &xm, false, 0.0, &mut z);
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut y = Tensor4::zeros(x.n, out_c, h2, w2);
    for s in 0..x.n {
        for o in 0..out_c {
            let plane = y.channel_mut(s, o);
            for q in 0..4 {
                let (a, bb) = (q / 2, q % 2);
                let row = &z[(o * 4 + q) * cols + s * hw..(o * 4 + q) * cols + (s + 1) * hw];
                for i in 0..x.h {
                    for j in 0..x.w {
                        plane[(2 * i + a) * w2 + 2 * j + bb] = row[i * x.w + j] + b[o];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`.
pub fn tconv2x2_backward(
    dy: &Tensor4,
    x: &Tensor4,
    w: &[f64],
) -> Result<(Tensor4, Vec<f64>, Vec<f64>), NnError> {
    let out_c = dy.c;
    if (dy.n, dy.h, dy.w) != (x.n, 2 * x.h, 2 * x.w) || w.len() != out_c * x.c * 4 {
        return Err(NnError::ShapeMismatch("tconv2x2 backward".into()));
    }
    let (hw, cols) = (x.plane(), x.n * x.plane());
    let w2 = dy.w;
    let mut dz = vec![0.0; 4 * out_c * cols];
    let mut db = vec![0.0; out_c];
    for s in 0..x.n {
        for o in 0..out_c {
            let plane = dy.channel(s, o);
            db[o] += plane.iter().sum::<f64>();
            for q in 0..4 {
                let (a, bb) = (q / 2, q % 2);
                let row = &mut dz[(o * 4 + q) * cols + s * hw..(o * 4 + q) * cols + (s + 1) * hw];
                for i in 0..x.h {
                    for j in 0..x.w {
                        row[i * x.w + j] = plane[(2 * i + a) * w2 + 2 * j + bb];
                    }
                }
            }
        }
    }
    let xm = to_channel_major(x);
    let mut dwm = vec![0.0; 4 * out_c * x.c];
    gemm(4 * out_c, cols, x.c, &dz, false, &xm, true, 0.0, &mut dwm);
    let mut dw = vec![0.0; w.len()];
    for o in 0..out_c {
        for c in 0..x.c {
            for q in 0..4 {
                dw[(o * x.c + c) * 4 + q] = dwm[(o * 4 + q) * x.c + c];
            }
        }
    }
    let wm = tconv_matrix(w, out_c, x.c);
    let mut dxm = vec![0.0; x.c * cols];
    gemm(x.c, 4 * out_c, cols, &wm, true, &dz, false, 0.0, &mut dxm);
    Ok((from_channel_major(&dxm, x.n, x.c, x.h, x.w), dw, db))
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Derivative taken as 0 at `x = 0`.
pub fn relu_backward(dy: &Tensor4, x: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor4) -> Tensor4 {
    x.map(sigmoid)
}

/// Uses the forward output `y`.
pub fn sigmoid_backward(dy: &Tensor4, y: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (d, &s) in dx.data.iter_mut().zip(&y.data) {
        *d *= s * (1.0 - s);
    }
    dx
}

/// 2×2 max pooling, stride 2. Returns the output and, per output cell, the
/// flat input index of its maximum; ties go to the first cell in row-major
/// window order.
pub fn maxpool2x2_forward(x: &Tensor4) -> Result<(Tensor4, Vec<usize>), NnError> {
    if !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) {
        return Err(NnError::NonDivisibleDims { h: x.h, w: x.w });
    }
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut y = Tensor4::zeros(x.n, x.c, ho, wo);
    let mut arg = vec![0usize; y.len()];
    let mut k = 0;
    for s in 0..x.n {
        for c in 0..x.c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = x.index(s, c, 2 * i, 2 * j);
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = x.index(s, c, 2 * i + di, 2 * j + dj);
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                    y.data[k] = x.data[best];
                    arg[k] = best;
                    k += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2x2_backward(
    dy: &Tensor4,
    argmax: &[usize],
    x_shape: [usize; 4],
) -> Result<Tensor4, NnError> {
    if argmax.len() != dy.len() {
        return Err(NnError::ShapeMismatch("maxpool backward".into()));
    }
    let [n, c, h, w] = x_shape;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for (g, &idx) in dy.data.iter().zip(argmax) {
        dx.data[idx] += g;
    }
    Ok(dx)
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward(a: &Tensor4, b: &Tensor4) -> Result<Tensor4, NnError> {
    if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
        return Err(NnError::ShapeMismatch(format!(
            "concat {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let c = a.c + b.c;
    let mut y = Tensor4::zeros(a.n, c, a.h, a.w);
    for s in 0..a.n {
        for ci in 0..a.c {
            y.channel_mut(s, ci).copy_from_slice(a.channel(s, ci));
        }
        for ci in 0..b.c {
            y.channel_mut(s, a.c + ci).copy_from_slice(b.channel(s, ci));
        }
    }
    Ok(y)
}

/// Splits `dy` after the first `a_channels` channels.
pub fn concat_backward(dy: &Tensor4, a_channels: usize) -> (Tensor4, Tensor4) {
    let bc = dy.c - a_channels;
    let mut da = Tensor4::zeros(dy.n, a_channels, dy.h, dy.w);
    let mut db = Tensor4::zeros(dy.n, bc, dy.h, dy.w);
    for s in 0..dy.n {
        for ci in 0..a_channels {
            da.channel_mut(s, ci).copy_from_slice(dy.channel(s, ci));
        }
        for ci in 0..bc {
            db.channel_mut(s, ci)
                .copy_from_slice(dy.channel(s, a_channels + ci));
        }
    }
    (da, db)
}

pub fn residual_add_forward(a: &Tensor4, b: &Tensor4) -> Result<Tensor4, NnError> {
    a.same_shape(b)?;
    let mut y = a.clone();
    y.add_assign(b);
    Ok(y)
}

/// Batch statistics kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatch {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Tensor4,
}

impl BnBatch {
    /// Elements per channel.
    pub fn count(&self) -> usize {
        self.xhat.n * self.xhat.plane()
    }
}

pub fn batchnorm_train_forward(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
) -> Result<(Tensor4, BnBatch), NnError> {
    let m = x.n * x.plane();
    if m < 2 {
        return Err(NnError::DegenerateBatch { elements: m });
    }
    if gamma.len() != x.c || beta.len() != x.c {
        return Err(NnError::ShapeMismatch("batchnorm parameters".into()));
    }
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let s: f64 = (0..x.n).map(|n| x.channel(n, c).iter().sum::<f64>()).sum();
        mean[c] = s / m as f64;
        let ss: f64 = (0..x.n)
            .map(|n| {
                x.channel(n, c)
                    .iter()
                    .map(|v| (v - mean[c]).powi(2))
                    .sum::<f64>()
            })
            .sum();
        var[c] = ss / m as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    for n in 0..x.n {
        for c in 0..x.c {
            let src = x.channel(n, c);
            let xh: Vec<f64> = src.iter().map(|v| (v - mean[c]) * inv_std[c]).collect();
            for (d, v) in y.channel_mut(n, c).iter_mut().zip(&xh) {
                *d = gamma[c] * v + beta[c];
            }
            xhat.channel_mut(n, c).copy_from_slice(&xh);
        }
    }
    Ok((
        y,
        BnBatch {
            mean,
            var,
            inv_std,
            xhat,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_train_backward(
    dy: &Tensor4,
    batch: &BnBatch,
    gamma: &[f64],
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let xhat = &batch.xhat;
    let m = batch.count() as f64;
    let (nn, cc) = (dy.n, dy.c);
    let mut dgamma = vec![0.0; cc];
    let mut dbeta = vec![0.0; cc];
    for c in 0..cc {
        for n in 0..nn {
            for (g, xh) in dy.channel(n, c).iter().zip(xhat.channel(n, c)) {
                dbeta[c] += g;
                dgamma[c] += g * xh;
            }
        }
    }
    let mut dx = Tensor4::zeros(dy.n, dy.c, dy.h, dy.w);
    for c in 0..cc {
        // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
        let k = gamma[c] * batch.inv_std[c] / m;
        for n in 0..nn {
            let out = dx.channel_mut(n, c);
            for ((d, g), xh) in out.iter_mut().zip(dy.channel(n, c)).zip(xhat.channel(n, c)) {
                *d = k * (m * g - dbeta[c] - xh * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn batchnorm_eval_forward(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor4 {
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let inv = 1.0 / (running_var[c] + BN_EPS).sqrt();
            for v in y.channel_mut(n, c) {
                *v = gamma[c] * (*v - running_mean[c]) * inv + beta[c];
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)` for the running-statistics transform.
pub fn batchnorm_eval_backward(
    dy: &Tensor4,
    x: &Tensor4,
    gamma: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let mut dx = dy.clone();
    let mut dgamma = vec![0.0; x.c];
    let mut dbeta = vec![0.0; x.c];
    for n in 0..x.n {
        for c in 0..x.c {
            let inv = 1.0 / (running_var[c] + BN_EPS).sqrt();
            for ((d, g), v) in dx
                .channel_mut(n, c)
                .iter_mut()
                .zip(dy.channel(n, c))
                .zip(x.channel(n, c))
            {
                *d = g * gamma[c] * inv;
                dgamma[c] += g * (v - running_mean[c]) * inv;
                dbeta[c] += g;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Momentum update of running statistics; the variance is unbiased.
pub fn update_running(batch: &BnBatch, running_mean: &mut [f64], running_var: &mut [f64]) {
    let m = batch.count() as f64;
    for c in 0..running_mean.len() {
        running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * batch.mean[c];
        let unbiased = batch.var[c] * m / (m - 1.0);
        running_var[c] = (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * unbiased;
    }
}
