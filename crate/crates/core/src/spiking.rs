//! Integrate-and-Fire dynamics, the sigmoid surrogate gradient, and the
//! Poisson rate encoder.
//!
//! A neuron charges as H(t) = V(t-1) + X(t), fires S = 1 when H reaches the
//! threshold, and hard-resets its potential to 0 after firing. Temporal
//! unrolling over full networks lives in [`crate::models::Network`]; this
//! module owns the per-neuron math that unrolling is built from.

use rand::{Rng, RngExt};

use crate::error::Error;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default timestep count for spiking runs.
pub const DEFAULT_TIMESTEPS: usize = 8;

/// Default firing threshold.
pub const DEFAULT_V_TH: f64 = 1.0;

/// Slope of the sigmoid used as the spike derivative during backprop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub alpha: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig { alpha: 4.0 }
    }
}

impl SurrogateConfig {
    pub fn new(alpha: f64) -> Result<Self, Error> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Domain(format!(
                "surrogate slope must be finite and positive, got {alpha}"
            )));
        }
        Ok(SurrogateConfig { alpha })
    }
}

/// d/du of sigmoid(alpha * u): alpha * sig * (1 - sig).
///
/// Used as dS/dH in place of the threshold's true (zero almost everywhere)
/// derivative. Peaks at alpha/4 for u = 0 and saturates to 0 for large |u|.
pub fn surrogate_spike_grad<S: Scalar>(u: S, cfg: &SurrogateConfig) -> S {
    let a = S::from_f64(cfg.alpha);
    let sig = S::one() / (S::one() + (-(a * u)).exp());
    a * sig * (S::one() - sig)
}

/// Membrane potentials of one layer of IF neurons.
#[derive(Debug, Clone)]
pub struct IfState<S> {
    pub v: Tensor<S>,
    pub v_th: S,
}

impl<S: Scalar> IfState<S> {
    /// Zero-initialized potentials with the given threshold.
    pub fn new(shape: Vec<usize>, v_th: S) -> Result<Self, Error> {
        if v_th <= S::zero() || !v_th.is_finite() {
            return Err(Error::Domain(format!("firing threshold must be positive, got {v_th}")));
        }
        Ok(IfState {
            v: Tensor::zeros(shape),
            v_th,
        })
    }

    pub fn reset(&mut self) {
        self.v.data.fill(S::zero());
    }
}

/// One integrate-and-fire step.
///
/// Charges H = V + X, emits S = 1 where H >= V_th, then hard-resets fired
/// neurons to 0 and keeps H on the rest.
pub fn if_step<S: Scalar>(state: &mut IfState<S>, x: &Tensor<S>) -> Result<Tensor<S>, Error> {
    if x.shape != state.v.shape {
        return Err(Error::Dim(format!(
            "if_step input {:?} does not match state {:?}",
            x.shape, state.v.shape
        )));
    }
    let mut spikes = Tensor::zeros(x.shape.clone());
    for i in 0..x.data.len() {
        let h = state.v.data[i] + x.data[i];
        if h >= state.v_th {
            spikes.data[i] = S::one();
            state.v.data[i] = S::zero();
        } else {
            state.v.data[i] = h;
        }
    }
    Ok(spikes)
}

/// T binary frames encoding one image.
#[derive(Debug, Clone)]
pub struct SpikeTrain<S> {
    pub frames: Vec<Tensor<S>>,
}

impl<S: Scalar> SpikeTrain<S> {
    pub fn timesteps(&self) -> usize {
        self.frames.len()
    }

    /// Per-pixel total spike count over all frames.
    pub fn counts(&self) -> Vec<S> {
        let mut acc = vec![S::zero(); self.frames[0].data.len()];
        for f in &self.frames {
            for (a, v) in acc.iter_mut().zip(f.data.iter()) {
                *a += *v;
            }
        }
        acc
    }
}

/// Encodes an intensity image as T Bernoulli frames: at every timestep each
/// pixel spikes independently with probability equal to its intensity, so
/// the total count over T is Binomial(T, x) with mean T*x.
pub fn poisson_encode<S: Scalar, R: Rng>(
    image: &Tensor<S>,
    timesteps: usize,
    rng: &mut R,
) -> Result<SpikeTrain<S>, Error> {
    if timesteps == 0 {
        return Err(Error::Domain("encoder needs at least one timestep".into()));
    }
    for &v in &image.data {
        let x = v.to_f64();
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!(
                "encoder input must lie in [0,1], got {x}"
            )));
        }
    }
    let mut frames = Vec::with_capacity(timesteps);
    for _ in 0..timesteps {
        let mut frame = Tensor::zeros(image.shape.clone());
        for (out, &v) in frame.data.iter_mut().zip(image.data.iter()) {
            if rng.random::<f64>() < v.to_f64() {
                *out = S::one();
            }
        }
        frames.push(frame);
    }
    Ok(SpikeTrain { frames })
}
