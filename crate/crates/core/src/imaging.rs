//! Photon-count frames and the preprocessing that turns them into network
//! inputs: per-frame normalization, bicubic upsampling, and ambient-light
//! noise injection.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::Error;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sensor resolution along each axis.
pub const FRAME_DIM: usize = 8;

/// One 8x8 grid of photon counts plus an optional class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    counts: Vec<u32>,
    pub label: Option<usize>,
}

impl Frame {
    pub fn new(counts: Vec<u32>, label: Option<usize>) -> Result<Self, Error> {
        if counts.len() != FRAME_DIM * FRAME_DIM {
            return Err(Error::Dim(format!(
                "a frame holds exactly {} counts, got {}",
                FRAME_DIM * FRAME_DIM,
                counts.len()
            )));
        }
        Ok(Frame { counts, label })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Divides every pixel by the frame maximum, mapping counts into [0,1].
/// An all-zero frame maps to all zeros.
pub fn normalize<S: Scalar>(frame: &Frame) -> Tensor<S> {
    let max = frame.max_count();
    let mut out = Tensor::zeros(vec![FRAME_DIM, FRAME_DIM]);
    if max == 0 {
        return out;
    }
    let inv = 1.0 / max as f64;
    for (o, &c) in out.data.iter_mut().zip(frame.counts.iter()) {
        *o = S::from_f64(c as f64 * inv);
    }
    out
}

/// Keys cubic-convolution kernel with a = -0.5.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Precomputed taps for one output coordinate along one axis.
struct AxisTaps {
    /// Clamped source indices, 4 per output position.
    idx: Vec<usize>,
    /// Normalized kernel weights, 4 per output position.
    w: Vec<f64>,
}

/// Half-pixel source mapping with clamp-to-edge sampling; weights are
/// normalized per position so constants reproduce exactly.
#[allow(clippy::needless_range_loop)]
fn axis_taps(src: usize, dst: usize) -> AxisTaps {
    let scale = src as f64 / dst as f64;
    let mut idx = Vec::with_capacity(dst * 4);
    let mut w = Vec::with_capacity(dst * 4);
    for d in 0..dst {
        let center = (d as f64 + 0.5) * scale - 0.5;
        let base = center.floor();
        let frac = center - base;
        let mut ws = [0.0f64; 4];
        let mut sum = 0.0;
        for (j, wj) in ws.iter_mut().enumerate() {
            *wj = keys(frac - (j as f64 - 1.0));
            sum += *wj;
        }
        for j in 0..4 {
            let s = (base as isize + j as isize - 1).clamp(0, src as isize - 1);
            idx.push(s as usize);
            w.push(ws[j] / sum);
        }
    }
    AxisTaps { idx, w }
}

/// Resizes with cubic convolution (Keys kernel, a = -0.5), half-pixel
/// alignment, and clamped borders. Implemented as separable row and column
/// passes in 64-bit arithmetic.
pub fn bicubic_resize<S: Scalar>(
    img: &Tensor<S>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<S>, Error> {
    if img.shape.len() != 2 {
        return Err(Error::Dim(format!(
            "bicubic_resize expects a 2-D image, got {:?}",
            img.shape
        )));
    }
    let (h, w) = (img.shape[0], img.shape[1]);
    if h < 2 || w < 2 {
        return Err(Error::Dim(format!("source {h}x{w} too small to interpolate")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dim(format!("target extent {out_h}x{out_w} must be positive")));
    }

    let cols = axis_taps(w, out_w);
    let rows = axis_taps(h, out_h);

    // Both passes accumulate anchor + sum(w_j * (x_j - anchor)), identical
    // to sum(w_j * x_j) when weights sum to 1 but exact on constant input.

    // Horizontal pass: h x w -> h x out_w.
    let mut mid = vec![0.0f64; h * out_w];
    for r in 0..h {
        for c in 0..out_w {
            let anchor = img.data[r * w + cols.idx[c * 4 + 1]].to_f64();
            let mut acc = anchor;
            for j in 0..4 {
                let src = img.data[r * w + cols.idx[c * 4 + j]].to_f64();
                acc += cols.w[c * 4 + j] * (src - anchor);
            }
            mid[r * out_w + c] = acc;
        }
    }

    // Vertical pass: h x out_w -> out_h x out_w.
    let mut out = Tensor::zeros(vec![out_h, out_w]);
    for r in 0..out_h {
        for c in 0..out_w {
            let anchor = mid[rows.idx[r * 4 + 1] * out_w + c];
            let mut acc = anchor;
            for j in 0..4 {
                acc += rows.w[r * 4 + j] * (mid[rows.idx[r * 4 + j] * out_w + c] - anchor);
            }
            out.data[r * out_w + c] = S::from_f64(acc);
        }
    }
    Ok(out)
}

/// Adds an independent Poisson(lambda_bg) count to every pixel, modeling an
/// ambient-light pedestal on the raw counts (before any normalization).
pub fn inject_ambient<R: Rng>(frame: &Frame, lambda_bg: f64, rng: &mut R) -> Result<Frame, Error> {
    if !lambda_bg.is_finite() || lambda_bg < 0.0 {
        return Err(Error::Domain(format!(
            "ambient rate must be finite and non-negative, got {lambda_bg}"
        )));
    }
    if lambda_bg == 0.0 {
        return Ok(frame.clone());
    }
    let dist = Poisson::new(lambda_bg)
        .map_err(|e| Error::Domain(format!("invalid ambient rate {lambda_bg}: {e}")))?;
    let counts = frame
        .counts
        .iter()
        .map(|&c| {
            let extra: f64 = dist.sample(rng);
            c.saturating_add(extra as u32)
        })
        .collect();
    Ok(Frame {
        counts,
        label: frame.label,
    })
}

/// Clamps every element into [0,1]. Bicubic interpolation can overshoot the
/// unit interval, and the spike encoder requires exact containment.
pub fn clamp_unit<S: Scalar>(img: &mut Tensor<S>) {
    for v in &mut img.data {
        if *v < S::zero() {
            *v = S::zero();
        } else if *v > S::one() {
            *v = S::one();
        }
    }
}
