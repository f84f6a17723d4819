//! Raw-slice compute kernels behind the tape ops.
//!
//! Everything here is branch-light sequential code on contiguous slices.
//! Reductions use four accumulators so they vectorize without reassociation
//! flags; accumulation order is fixed, so results are run-to-run identical.

use crate::scalar::Scalar;

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut s0 = S::zero();
    let mut s1 = S::zero();
    let mut s2 = S::zero();
    let mut s3 = S::zero();
    let mut i = 0;
    while i + 4 <= n {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    while i < n {
        s0 += a[i] * b[i];
        i += 1;
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
pub(crate) fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

// ---------------------------------------------------------------- affine

/// out[b,o] = sum_i x[b,i] * w[o,i] + bias[o]
pub(crate) fn affine_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    in_dim: usize,
    w: &[S],
    out_dim: usize,
    bias: &[S],
) -> Vec<S> {
    let mut out = vec![S::zero(); batch * out_dim];
    for b in 0..batch {
        let xr = &x[b * in_dim..(b + 1) * in_dim];
        let or = &mut out[b * out_dim..(b + 1) * out_dim];
        for o in 0..out_dim {
            or[o] = dot(xr, &w[o * in_dim..(o + 1) * in_dim]) + bias[o];
        }
    }
    out
}

/// Returns (dx, dw, dbias).
pub(crate) fn affine_backward<S: Scalar>(
    dy: &[S],
    x: &[S],
    w: &[S],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); batch * in_dim];
    let mut dw = vec![S::zero(); out_dim * in_dim];
    let mut db = vec![S::zero(); out_dim];
    for b in 0..batch {
        let dyr = &dy[b * out_dim..(b + 1) * out_dim];
        let xr = &x[b * in_dim..(b + 1) * in_dim];
        let dxr = &mut dx[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let g = dyr[o];
            if g != S::zero() {
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], dxr);
                axpy(g, xr, &mut dw[o * in_dim..(o + 1) * in_dim]);
            }
            db[o] += g;
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------- conv2d

/// Output extent of a padded strided cross-correlation along one axis.
pub(crate) fn conv_out_extent(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if k > h + 2 * pad || stride == 0 {
        return None;
    }
    Some((h + 2 * pad - k) / stride + 1)
}

/// Valid output-index range [lo, hi) along one axis for a given tap offset,
/// such that every sampled input index stays in [0, extent).
#[inline]
fn tap_bounds(extent: usize, out_extent: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    // in = out*stride + k_off - pad must satisfy 0 <= in < extent
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let hi = if extent + pad > k_off {
        (((extent + pad - k_off - 1) / stride) + 1).min(out_extent)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
#[allow(clippy::needless_range_loop)]
pub(crate) fn conv2d_forward<S: Scalar>(
    x: &[S],
    (bs, c_in, h, w): (usize, usize, usize, usize),
    wt: &[S],
    (c_out, k_h, k_w): (usize, usize, usize),
    bias: &[S],
    stride: usize,
    pad: usize,
) -> (Vec<S>, usize, usize) {
    let h_out = conv_out_extent(h, k_h, stride, pad).unwrap();
    let w_out = conv_out_extent(w, k_w, stride, pad).unwrap();
    let mut out = vec![S::zero(); bs * c_out * h_out * w_out];

    for b in 0..bs {
        for co in 0..c_out {
            let o_base = (b * c_out + co) * h_out * w_out;
            out[o_base..o_base + h_out * w_out].fill(bias[co]);
            for ci in 0..c_in {
                let x_base = (b * c_in + ci) * h * w;
                let wt_base = (co * c_in + ci) * k_h * k_w;
                for kh in 0..k_h {
                    let (oh_lo, oh_hi) = tap_bounds(h, h_out, kh, stride, pad);
                    for kw in 0..k_w {
                        let wv = wt[wt_base + kh * k_w + kw];
                        let (ow_lo, ow_hi) = tap_bounds(w, w_out, kw, stride, pad);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + kh - pad;
                            let xrow = x_base + ih * w;
                            let orow = o_base + oh * w_out;
                            if stride == 1 {
                                let iw0 = ow_lo + kw - pad;
                                axpy(
                                    wv,
                                    &x[xrow + iw0..xrow + iw0 + (ow_hi - ow_lo)],
                                    &mut out[orow + ow_lo..orow + ow_hi],
                                );
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * stride + kw - pad;
                                    out[orow + ow] += wv * x[xrow + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, h_out, w_out)
}

/// Returns (dx, dw, dbias).
#[allow(clippy::too_many_arguments)]
#[allow(clippy::needless_range_loop)]
pub(crate) fn conv2d_backward<S: Scalar>(
    dy: &[S],
    x: &[S],
    wt: &[S],
    (bs, c_in, h, w): (usize, usize, usize, usize),
    (c_out, k_h, k_w): (usize, usize, usize),
    (h_out, w_out): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); bs * c_in * h * w];
    let mut dw = vec![S::zero(); c_out * c_in * k_h * k_w];
    let mut db = vec![S::zero(); c_out];

    for b in 0..bs {
        for co in 0..c_out {
            let o_base = (b * c_out + co) * h_out * w_out;
            let mut ds = S::zero();
            for v in &dy[o_base..o_base + h_out * w_out] {
                ds += *v;
            }
            db[co] += ds;
            for ci in 0..c_in {
                let x_base = (b * c_in + ci) * h * w;
                let wt_base = (co * c_in + ci) * k_h * k_w;
                for kh in 0..k_h {
                    let (oh_lo, oh_hi) = tap_bounds(h, h_out, kh, stride, pad);
                    for kw in 0..k_w {
                        let wv = wt[wt_base + kh * k_w + kw];
                        let (ow_lo, ow_hi) = tap_bounds(w, w_out, kw, stride, pad);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut dwv = S::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + kh - pad;
                            let xrow = x_base + ih * w;
                            let orow = o_base + oh * w_out;
                            if stride == 1 {
                                let iw0 = ow_lo + kw - pad;
                                let n = ow_hi - ow_lo;
                                dwv += dot(&dy[orow + ow_lo..orow + ow_hi], &x[xrow + iw0..xrow + iw0 + n]);
                                axpy(
                                    wv,
                                    &dy[orow + ow_lo..orow + ow_hi],
                                    &mut dx[xrow + iw0..xrow + iw0 + n],
                                );
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * stride + kw - pad;
                                    let g = dy[orow + ow];
                                    dwv += g * x[xrow + iw];
                                    dx[xrow + iw] += wv * g;
                                }
                            }
                        }
                        dw[wt_base + kh * k_w + kw] += dwv;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ------------------------------------------------------------- batchnorm

pub(crate) struct BnForward<S> {
    pub y: Vec<S>,
    pub xhat: Vec<S>,
    /// One per channel.
    pub invstd: Vec<S>,
    pub mean: Vec<S>,
    /// Biased (divide by n) per-channel variance.
    pub var: Vec<S>,
}

/// Train-mode forward: normalize by batch statistics.
pub(crate) fn bn_train_forward<S: Scalar>(
    x: &[S],
    (bs, c, h, w): (usize, usize, usize, usize),
    gamma: &[S],
    beta: &[S],
    eps: S,
) -> BnForward<S> {
    let plane = h * w;
    let n = S::from_usize(bs * plane);
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut invstd = vec![S::zero(); c];
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];

    for ci in 0..c {
        let mut s = S::zero();
        for b in 0..bs {
            let base = (b * c + ci) * plane;
            for v in &x[base..base + plane] {
                s += *v;
            }
        }
        let m = s / n;
        let mut sq = S::zero();
        for b in 0..bs {
            let base = (b * c + ci) * plane;
            for v in &x[base..base + plane] {
                let d = *v - m;
                sq += d * d;
            }
        }
        let v = sq / n;
        let istd = S::one() / (v + eps).sqrt();
        mean[ci] = m;
        var[ci] = v;
        invstd[ci] = istd;
        let g = gamma[ci];
        let be = beta[ci];
        for b in 0..bs {
            let base = (b * c + ci) * plane;
            for i in base..base + plane {
                let xh = (x[i] - m) * istd;
                xhat[i] = xh;
                y[i] = g * xh + be;
            }
        }
    }
    BnForward {
        y,
        xhat,
        invstd,
        mean,
        var,
    }
}

/// Eval-mode forward: normalize by running statistics.
pub(crate) fn bn_eval_forward<S: Scalar>(
    x: &[S],
    (bs, c, h, w): (usize, usize, usize, usize),
    gamma: &[S],
    beta: &[S],
    running_mean: &[S],
    running_var: &[S],
    eps: S,
) -> BnForward<S> {
    let plane = h * w;
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut invstd = vec![S::zero(); c];
    for ci in 0..c {
        let istd = S::one() / (running_var[ci] + eps).sqrt();
        invstd[ci] = istd;
        let m = running_mean[ci];
        let g = gamma[ci];
        let be = beta[ci];
        for b in 0..bs {
            let base = (b * c + ci) * plane;
            for i in base..base + plane {
                let xh = (x[i] - m) * istd;
                xhat[i] = xh;
                y[i] = g * xh + be;
            }
        }
    }
    BnForward {
        y,
        xhat,
        invstd,
        mean: running_mean.to_vec(),
        var: running_var.to_vec(),
    }
}

/// Returns (dx, dgamma, dbeta). `batch_stats` distinguishes the train-mode
/// backward (statistics depend on x) from the eval-mode affine backward.
pub(crate) fn bn_backward<S: Scalar>(
    dy: &[S],
    xhat: &[S],
    invstd: &[S],
    gamma: &[S],
    (bs, c, h, w): (usize, usize, usize, usize),
    batch_stats: bool,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let plane = h * w;
    let n = S::from_usize(bs * plane);
    let mut dx = vec![S::zero(); dy.len()];
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];

    for ci in 0..c {
        let mut sum_dy = S::zero();
        let mut sum_dy_xhat = S::zero();
        for b in 0..bs {
            let base = (b * c + ci) * plane;
            for i in base..base + plane {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
        }
        dgamma[ci] = sum_dy_xhat;
        dbeta[ci] = sum_dy;
        let g_istd = gamma[ci] * invstd[ci];
        if batch_stats {
            let scale = g_istd / n;
            for b in 0..bs {
                let base = (b * c + ci) * plane;
                for i in base..base + plane {
                    dx[i] = scale * (n * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
                }
            }
        } else {
            for b in 0..bs {
                let base = (b * c + ci) * plane;
                for i in base..base + plane {
                    dx[i] = g_istd * dy[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

// -------------------------------------------------------------- maxpool

/// Returns (out, argmax) where argmax holds the flat input index feeding
/// each output cell, first occurrence winning ties in row-major order.
pub(crate) fn maxpool_forward<S: Scalar>(
    x: &[S],
    (bs, c, h, w): (usize, usize, usize, usize),
    window: usize,
) -> (Vec<S>, Vec<usize>) {
    let h_out = h / window;
    let w_out = w / window;
    let mut out = vec![S::zero(); bs * c * h_out * w_out];
    let mut argmax = vec![0usize; out.len()];
    for b in 0..bs {
        for ci in 0..c {
            let x_base = (b * c + ci) * h * w;
            let o_base = (b * c + ci) * h_out * w_out;
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut best = x[x_base + oh * window * w + ow * window];
                    let mut best_idx = x_base + oh * window * w + ow * window;
                    for dh in 0..window {
                        for dw in 0..window {
                            let idx = x_base + (oh * window + dh) * w + ow * window + dw;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o_base + oh * w_out + ow] = best;
                    argmax[o_base + oh * w_out + ow] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward<S: Scalar>(dy: &[S], argmax: &[usize], x_len: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); x_len];
    for (g, &idx) in dy.iter().zip(argmax.iter()) {
        dx[idx] += *g;
    }
    dx
}

// ------------------------------------------------- softmax cross entropy

/// Returns (mean loss, softmax probabilities).
pub(crate) fn softmax_ce_forward<S: Scalar>(
    logits: &[S],
    batch: usize,
    k: usize,
    labels: &[usize],
) -> (S, Vec<S>) {
    let mut probs = vec![S::zero(); batch * k];
    let mut loss = S::zero();
    for b in 0..batch {
        let row = &logits[b * k..(b + 1) * k];
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut z = S::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[b * k + j] = e;
            z += e;
        }
        for p in &mut probs[b * k..(b + 1) * k] {
            *p /= z;
        }
        loss += z.ln() - (row[labels[b]] - m);
    }
    (loss / S::from_usize(batch), probs)
}
