//! Operation counting and spike-rate measurement.
//!
//! Conventional networks are costed in multiply-accumulates (2 FLOPs per
//! MAC slot). Spiking networks replace multiplies with accumulates gated by
//! incoming spikes, so each synaptic layer costs its slot count times the
//! measured rate of its input spike tensor.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::models::{plan, ArchitectureSpec, LayerSpec, Stage};
use crate::scalar::Scalar;

/// Exact MAC slot count of a conv layer. Every argument must be ≥ 1.
pub fn mac_conv(
    ch_in: u64,
    k_x: u64,
    k_y: u64,
    h_out: u64,
    w_out: u64,
    ch_out: u64,
) -> Result<u64, Error> {
    let args = [ch_in, k_x, k_y, h_out, w_out, ch_out];
    if args.contains(&0) {
        return Err(Error::Domain("mac_conv arguments must all be >= 1".into()));
    }
    args.iter()
        .try_fold(1u64, |acc, &a| acc.checked_mul(a))
        .ok_or_else(|| Error::Domain("mac_conv product overflows u64".into()))
}

/// One conv or fc layer with its slot count and per-sample input size.
#[derive(Debug, Clone, PartialEq)]
pub struct SynapticLayer {
    pub name: String,
    /// MAC/ACC slots: conv uses `mac_conv`, fc uses in·out.
    pub slots: u64,
    /// Neurons feeding the layer per sample, the spike-rate denominator.
    pub input_numel: usize,
}

/// Conv and fc layers of a validated architecture, in forward order.
pub fn synaptic_layers(spec: &ArchitectureSpec) -> Result<Vec<SynapticLayer>, Error> {
    let mut out = Vec::new();
    let mut conv_n = 0usize;
    let mut fc_n = 0usize;
    for lp in plan(spec)? {
        match (&lp.spec, lp.input, lp.output) {
            (
                &LayerSpec::Conv { kernel, .. },
                Stage::Spatial { c: ci, .. },
                Stage::Spatial { c: co, h, w },
            ) => {
                conv_n += 1;
                out.push(SynapticLayer {
                    name: format!("conv{conv_n}"),
                    slots: mac_conv(
                        ci as u64,
                        kernel as u64,
                        kernel as u64,
                        h as u64,
                        w as u64,
                        co as u64,
                    )?,
                    input_numel: lp.input.numel(),
                });
            }
            (&LayerSpec::Fc { .. }, Stage::Flat { features }, Stage::Flat { features: o }) => {
                fc_n += 1;
                let slots = (features as u64)
                    .checked_mul(o as u64)
                    .ok_or_else(|| Error::Domain("fc slot count overflows u64".into()))?;
                out.push(SynapticLayer {
                    name: format!("fc{fc_n}"),
                    slots,
                    input_numel: features,
                });
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Total FLOPs of a non-spiking network: 2 per MAC/ACC slot. Pooling,
/// batchnorm, and activations are excluded.
pub fn flops_cnn(spec: &ArchitectureSpec) -> Result<u64, Error> {
    if spec.is_spiking() {
        return Err(Error::Contract(
            "flops_cnn needs a non-spiking network; use flops_snn".into(),
        ));
    }
    let mut total = 0u64;
    for layer in synaptic_layers(spec)? {
        let doubled = layer
            .slots
            .checked_mul(2)
            .ok_or_else(|| Error::Domain("FLOP total overflows u64".into()))?;
        total = total
            .checked_add(doubled)
            .ok_or_else(|| Error::Domain("FLOP total overflows u64".into()))?;
    }
    Ok(total)
}

/// Total FLOPs of a spiking network given one measured input rate per
/// synaptic layer: each layer contributes slots × r.
pub fn flops_snn(spec: &ArchitectureSpec, rates: &[f64]) -> Result<f64, Error> {
    if !spec.is_spiking() {
        return Err(Error::Contract(
            "flops_snn needs a spiking network; use flops_cnn".into(),
        ));
    }
    let layers = synaptic_layers(spec)?;
    if rates.len() != layers.len() {
        return Err(Error::Contract(format!(
            "need one rate per synaptic layer: {} layers, {} rates",
            layers.len(),
            rates.len()
        )));
    }
    if let Some(r) = rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(Error::Domain(format!("spike rate {r} is not a finite non-negative number")));
    }
    Ok(layers
        .iter()
        .zip(rates)
        .map(|(l, &r)| l.slots as f64 * r)
        .sum())
}

/// Spikes per neuron per sample, summed over all timesteps.
pub fn measure_spike_rate(
    total_spikes: f64,
    neurons: usize,
    samples: usize,
) -> Result<f64, Error> {
    if neurons == 0 {
        return Err(Error::Domain("spike rate needs at least one neuron".into()));
    }
    if samples == 0 {
        return Err(Error::Contract(
            "spike rate needs at least one recorded forward pass".into(),
        ));
    }
    Ok(total_spikes / (neurons as f64 * samples as f64))
}

/// Accumulates input-spike totals for every synaptic layer across forward
/// runs. One `add_samples` call per run; rates come out per sample.
#[derive(Debug, Clone)]
pub struct SpikeRecorder {
    layers: Vec<SynapticLayer>,
    totals: Vec<f64>,
    samples: usize,
}

impl SpikeRecorder {
    pub fn new(spec: &ArchitectureSpec) -> Result<Self, Error> {
        let layers = synaptic_layers(spec)?;
        let totals = vec![0.0; layers.len()];
        Ok(SpikeRecorder {
            layers,
            totals,
            samples: 0,
        })
    }

    /// Adds one timestep's input tensor for synaptic layer `idx`.
    pub fn observe_input<S: Scalar>(&mut self, idx: usize, data: &[S]) {
        let mut sum = 0.0;
        for &x in data {
            sum += x.to_f64();
        }
        self.totals[idx] += sum;
    }

    /// Counts `n` samples as recorded (call once per forward run).
    pub fn add_samples(&mut self, n: usize) {
        self.samples += n;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn layers(&self) -> &[SynapticLayer] {
        &self.layers
    }

    /// Per-layer input spike rates over everything recorded so far.
    pub fn rates(&self) -> Result<Vec<f64>, Error> {
        self.layers
            .iter()
            .zip(&self.totals)
            .map(|(l, &t)| measure_spike_rate(t, l.input_numel, self.samples))
            .collect()
    }
}

/// One row of a [`ProfileReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub slots: u64,
    /// Measured input spike rate; absent for analog profiles.
    pub rate: Option<f64>,
    /// This layer's FLOPs contribution to the relevant total.
    pub flops: f64,
}

/// Per-layer and total operation counts, plus measured inference time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileReport {
    pub layers: Vec<LayerProfile>,
    /// FLOPs of the same topology run as a conventional network.
    pub flops_cnn: u64,
    /// Spike-gated FLOPs; absent when profiling a conventional network.
    pub flops_snn: Option<f64>,
    /// (1 − snn/cnn) · 100; absent when profiling a conventional network.
    pub reduction_percent: Option<f64>,
    pub secs_per_image: f64,
}

/// FLOPs saved by the spiking network relative to its analog twin.
pub fn reduction_percent(cnn_flops: u64, snn_flops: f64) -> Result<f64, Error> {
    if cnn_flops == 0 {
        return Err(Error::Domain("reduction needs a nonzero CNN FLOP total".into()));
    }
    Ok((1.0 - snn_flops / cnn_flops as f64) * 100.0)
}

/// Assembles the report. Spiking specs need one measured rate per synaptic
/// layer and are compared against their analog twin; conventional specs
/// take `rates = None`.
pub fn build_report(
    spec: &ArchitectureSpec,
    rates: Option<&[f64]>,
    secs_per_image: f64,
) -> Result<ProfileReport, Error> {
    let layers = synaptic_layers(spec)?;
    if spec.is_spiking() {
        let rates = rates.ok_or_else(|| {
            Error::Contract("profiling a spiking network needs measured spike rates".into())
        })?;
        let cnn = flops_cnn(&spec.analog_twin())?;
        let snn = flops_snn(spec, rates)?;
        let rows = layers
            .iter()
            .zip(rates)
            .map(|(l, &r)| LayerProfile {
                name: l.name.clone(),
                slots: l.slots,
                rate: Some(r),
                flops: l.slots as f64 * r,
            })
            .collect();
        Ok(ProfileReport {
            layers: rows,
            flops_cnn: cnn,
            flops_snn: Some(snn),
            reduction_percent: Some(reduction_percent(cnn, snn)?),
            secs_per_image,
        })
    } else {
        let cnn = flops_cnn(spec)?;
        let rows = layers
            .iter()
            .map(|l| LayerProfile {
                name: l.name.clone(),
                slots: l.slots,
                rate: None,
                flops: (l.slots * 2) as f64,
            })
            .collect();
        Ok(ProfileReport {
            layers: rows,
            flops_cnn: cnn,
            flops_snn: None,
            reduction_percent: None,
            secs_per_image,
        })
    }
}
