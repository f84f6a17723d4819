//! Reference oracles shared by the integration suites.
//!
//! Every oracle is written as the most literal possible transcription of
//! the defining formula (nested loops, no shared code with the library)
//! so that agreement is evidence, not tautology.

#![allow(dead_code)]

use photongest_core::tensor::{Tape, ValueId};
use photongest_core::Tensor64;

// ------------------------------------------------------------- forward

/// y[b,o] = bias[o] + sum_i x[b,i] * w[o,i]
pub fn affine_oracle(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    bs: usize,
    in_f: usize,
    out_f: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; bs * out_f];
    for b in 0..bs {
        for o in 0..out_f {
            let mut acc = bias[o];
            for i in 0..in_f {
                acc += x[b * in_f + i] * w[o * in_f + i];
            }
            y[b * out_f + o] = acc;
        }
    }
    y
}

/// Zero-padded strided cross-correlation, one multiply at a time.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_oracle(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    (bs, c_in, h, wd): (usize, usize, usize, usize),
    (c_out, k_h, k_w): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let h_out = (h + 2 * pad - k_h) / stride + 1;
    let w_out = (wd + 2 * pad - k_w) / stride + 1;
    let mut y = vec![0.0; bs * c_out * h_out * w_out];
    for b in 0..bs {
        for co in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for kh in 0..k_h {
                            for kw in 0..k_w {
                                let ih = (oh * stride + kh) as isize - pad as isize;
                                let iw = (ow * stride + kw) as isize - pad as isize;
                                if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                    let xv = x[((b * c_in + ci) * h + ih as usize) * wd
                                        + iw as usize];
                                    let wv = w[((co * c_in + ci) * k_h + kh) * k_w + kw];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    y[((b * c_out + co) * h_out + oh) * w_out + ow] = acc;
                }
            }
        }
    }
    (y, h_out, w_out)
}

/// Train-mode batch normalization: per-channel batch mean, biased
/// variance, then gamma * (x - m) / sqrt(v + eps) + beta.
pub fn batchnorm_train_oracle(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    (bs, c, h, w): (usize, usize, usize, usize),
    eps: f64,
) -> Vec<f64> {
    let plane = h * w;
    let n = (bs * plane) as f64;
    let mut y = vec![0.0; x.len()];
    for ci in 0..c {
        let mut m = 0.0;
        for b in 0..bs {
            for p in 0..plane {
                m += x[(b * c + ci) * plane + p];
            }
        }
        m /= n;
        let mut v = 0.0;
        for b in 0..bs {
            for p in 0..plane {
                let d = x[(b * c + ci) * plane + p] - m;
                v += d * d;
            }
        }
        v /= n;
        for b in 0..bs {
            for p in 0..plane {
                let i = (b * c + ci) * plane + p;
                y[i] = gamma[ci] * (x[i] - m) / (v + eps).sqrt() + beta[ci];
            }
        }
    }
    y
}

/// Non-overlapping window maximum.
pub fn maxpool_oracle(
    x: &[f64],
    (bs, c, h, w): (usize, usize, usize, usize),
    window: usize,
) -> Vec<f64> {
    let h_out = h / window;
    let w_out = w / window;
    let mut y = vec![0.0; bs * c * h_out * w_out];
    for b in 0..bs {
        for ci in 0..c {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut best = f64::NEG_INFINITY;
                    for dh in 0..window {
                        for dw in 0..window {
                            let v = x[((b * c + ci) * h + oh * window + dh) * w
                                + ow * window
                                + dw];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    y[((b * c + ci) * h_out + oh) * w_out + ow] = best;
                }
            }
        }
    }
    y
}

/// Mean over the batch of logsumexp(row) - row[label].
pub fn softmax_ce_oracle(logits: &[f64], labels: &[usize], bs: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..bs {
        let row = &logits[b * k..(b + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[b]];
    }
    total / bs as f64
}

// ------------------------------------------------------------- bicubic

/// Cubic convolution weight with a = -0.5 (Keys).
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Direct 16-tap kernel summation: for each output pixel, map its center
/// back with half-pixel alignment, take the 4x4 neighborhood with edge
/// clamping, and normalize the 2-D weight mass at that position.
pub fn bicubic_oracle(img: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for r in 0..oh {
        let cy = (r as f64 + 0.5) * sy - 0.5;
        let fy = cy.floor();
        for c in 0..ow {
            let cx = (c as f64 + 0.5) * sx - 0.5;
            let fx = cx.floor();
            let mut acc = 0.0;
            let mut mass = 0.0;
            for i in -1i64..=2 {
                let wy = cubic_weight(cy - (fy + i as f64));
                let ry = (fy as i64 + i).clamp(0, h as i64 - 1) as usize;
                for j in -1i64..=2 {
                    let wx = cubic_weight(cx - (fx + j as f64));
                    let rx = (fx as i64 + j).clamp(0, w as i64 - 1) as usize;
                    acc += wy * wx * img[ry * w + rx];
                    mass += wy * wx;
                }
            }
            out[r * ow + c] = acc / mass;
        }
    }
    out
}

// ------------------------------------------------------------- counting

/// Multiply-accumulate count of one convolution layer: literally walk
/// every output position and tick once per (input channel, tap) pair.
pub fn conv_macs_counting(
    c_in: usize,
    k_x: usize,
    k_y: usize,
    h_out: usize,
    w_out: usize,
    c_out: usize,
) -> u64 {
    let mut macs = 0u64;
    for _ in 0..c_out {
        for _ in 0..h_out {
            for _ in 0..w_out {
                for _ in 0..c_in {
                    for _ in 0..k_x {
                        for _ in 0..k_y {
                            macs += 1;
                        }
                    }
                }
            }
        }
    }
    macs
}

// ------------------------------------------------------------ gradcheck

/// Central finite differences against the tape's analytic gradients.
///
/// `build` must stage the given leaves on a fresh tape and return a
/// scalar root. Every leaf element is perturbed by ±1e-5 at 64 bits;
/// the comparison is relative where the magnitudes allow it and
/// absolute (1e-8) below that floor.
pub fn gradcheck<F>(inputs: &[Tensor64], build: F, context: &str)
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> ValueId,
{
    let eval = |tensors: &[Tensor64]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.data(root)[0]
    };

    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let root = build(&mut tape, &ids);
    assert_eq!(tape.data(root).len(), 1, "{context}: root must be scalar");
    tape.backward(root).expect("backward");
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf gradient").to_vec())
        .collect();

    let h = 1e-5;
    for (ti, t) in inputs.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for ei in 0..t.data.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data[ei] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data[ei] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[ti][ei];
            let scale = a.abs().max(fd.abs());
            if scale > 1e-4 {
                let rel = (a - fd).abs() / scale;
                assert!(
                    rel < 1e-4,
                    "{context}: input {ti} elem {ei}: analytic {a}, fd {fd}, rel {rel}"
                );
            } else {
                assert!(
                    (a - fd).abs() < 1e-8,
                    "{context}: input {ti} elem {ei}: analytic {a}, fd {fd} (abs)"
                );
            }
        }
    }
}

// ------------------------------------------------------------- helpers

pub fn rand_tensor<R: rand::Rng>(shape: Vec<usize>, rng: &mut R, lo: f64, hi: f64) -> Tensor64 {
    use rand::RngExt;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor64::new(shape, data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------- specs

use photongest_core::models::{plan, ArchitectureSpec, LayerSpec, Stage};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Random but valid conv/fc stacks for property checks.
pub fn random_arch_spec(rng: &mut ChaCha8Rng, spiking: bool) -> ArchitectureSpec {
    let mut layers = Vec::new();
    let mut h = rng.random_range(8..17usize);
    for _ in 0..rng.random_range(1..3usize) {
        let co = rng.random_range(1..6usize);
        layers.push(LayerSpec::Conv { out_channels: co, kernel: 3, stride: 1, padding: 1 });
        if spiking {
            layers.push(LayerSpec::Spike);
        } else {
            layers.push(LayerSpec::Relu);
        }
        if h >= 4 {
            layers.push(LayerSpec::Pool { window: 2 });
            h /= 2;
        }
    }
    layers.push(LayerSpec::Flatten);
    let classes = rng.random_range(2..6usize);
    let hidden = rng.random_range(4..20usize);
    layers.push(LayerSpec::Fc { out_features: hidden });
    if spiking {
        layers.push(LayerSpec::Spike);
    } else {
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Fc { out_features: classes });
    ArchitectureSpec {
        name: "rand".into(),
        input_shape: (1, h * 4, h * 4),
        num_classes: classes,
        timesteps: if spiking { Some(8) } else { None },
        v_th: 1.0,
        surrogate_alpha: 4.0,
        layers,
    }
}

/// Slot totals recomputed from the plan with the literal counting loops.
pub fn synaptic_slots_oracle(spec: &ArchitectureSpec) -> Vec<u64> {
    let mut out = Vec::new();
    for lp in plan(spec).unwrap() {
        match (&lp.spec, lp.input, lp.output) {
            (
                &LayerSpec::Conv { kernel, .. },
                Stage::Spatial { c: ci, .. },
                Stage::Spatial { c: co, h, w },
            ) => out.push(conv_macs_counting(ci, kernel, kernel, h, w, co)),
            (&LayerSpec::Fc { .. }, Stage::Flat { features }, Stage::Flat { features: o }) => {
                let mut acc = 0u64;
                for _ in 0..features {
                    for _ in 0..o {
                        acc += 1;
                    }
                }
                out.push(acc);
            }
            _ => {}
        }
    }
    out
}
