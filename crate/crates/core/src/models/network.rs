//! Runtime network: parameter storage plus tape-recorded forward passes,
//! including the temporal unrolling used by spiking models.

use rand::{Rng, RngExt};

use super::{plan, ArchitectureSpec, LayerPlan, LayerSpec, Stage};
use crate::error::Error;
use crate::profiling::SpikeRecorder;
use crate::scalar::Scalar;
use crate::tensor::{Mode, RunningStats, Tape, Tensor, ValueId};

/// One named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

#[derive(Debug, Clone)]
enum Binding {
    Conv { w: usize, b: usize },
    Bn { gamma: usize, beta: usize, state: usize },
    Fc { w: usize, b: usize },
    Spike { slot: usize },
    Dropout { slot: usize },
    Passive,
}

/// Result of a temporal forward run.
#[derive(Debug)]
pub struct TemporalRun {
    /// Final-layer output at each timestep.
    pub step_outputs: Vec<ValueId>,
    /// Mean of the step outputs over the run, the classification readout.
    pub rate: ValueId,
}

/// A built network: spec, parameters, batchnorm running stats, and the
/// per-spike-layer membrane state left behind by the last temporal run.
#[derive(Debug, Clone)]
pub struct Network<S> {
    pub spec: ArchitectureSpec,
    pub params: Vec<Param<S>>,
    pub bn_states: Vec<RunningStats<S>>,
    layer_plan: Vec<LayerPlan>,
    bindings: Vec<Binding>,
    if_potentials: Vec<Option<Tensor<S>>>,
    dropout_count: usize,
}

impl<S: Scalar> Network<S> {
    /// Builds a network with Kaiming-uniform (fan-in) weights, zero biases,
    /// and identity batchnorm parameters.
    pub fn build<R: Rng>(spec: &ArchitectureSpec, rng: &mut R) -> Result<Self, Error> {
        let layer_plan = plan(spec)?;
        let mut params = Vec::new();
        let mut bn_states = Vec::new();
        let mut bindings = Vec::with_capacity(layer_plan.len());
        let mut counts = LayerCounters::default();
        let mut spike_slots = 0usize;
        let mut dropout_count = 0usize;

        for lp in &layer_plan {
            let binding = match (&lp.spec, lp.input) {
                (
                    &LayerSpec::Conv {
                        out_channels,
                        kernel,
                        ..
                    },
                    Stage::Spatial { c, .. },
                ) => {
                    let name = counts.next("conv");
                    let fan_in = c * kernel * kernel;
                    let w = kaiming_uniform(&mut *rng, vec![out_channels, c, kernel, kernel], fan_in);
                    let wi = push_param(&mut params, format!("{name}.weight"), w);
                    let bi = push_param(
                        &mut params,
                        format!("{name}.bias"),
                        Tensor::zeros(vec![out_channels]),
                    );
                    Binding::Conv { w: wi, b: bi }
                }
                (LayerSpec::Batchnorm, Stage::Spatial { c, .. }) => {
                    let name = counts.next("bn");
                    let gi = push_param(&mut params, format!("{name}.gamma"), Tensor::filled(vec![c], S::one()));
                    let bi = push_param(&mut params, format!("{name}.beta"), Tensor::zeros(vec![c]));
                    bn_states.push(RunningStats::identity(c));
                    Binding::Bn {
                        gamma: gi,
                        beta: bi,
                        state: bn_states.len() - 1,
                    }
                }
                (&LayerSpec::Fc { out_features }, Stage::Flat { features }) => {
                    let name = counts.next("fc");
                    let w = kaiming_uniform(&mut *rng, vec![out_features, features], features);
                    let wi = push_param(&mut params, format!("{name}.weight"), w);
                    let bi = push_param(
                        &mut params,
                        format!("{name}.bias"),
                        Tensor::zeros(vec![out_features]),
                    );
                    Binding::Fc { w: wi, b: bi }
                }
                (LayerSpec::Spike, _) => {
                    spike_slots += 1;
                    Binding::Spike {
                        slot: spike_slots - 1,
                    }
                }
                (LayerSpec::Dropout { .. }, _) => {
                    dropout_count += 1;
                    Binding::Dropout {
                        slot: dropout_count - 1,
                    }
                }
                _ => Binding::Passive,
            };
            bindings.push(binding);
        }

        Ok(Network {
            spec: spec.clone(),
            params,
            bn_states,
            layer_plan,
            bindings,
            if_potentials: vec![None; spike_slots],
            dropout_count,
        })
    }

    /// Reassembles a network from stored arrays, validating them against
    /// the shapes the architecture declares.
    pub fn from_parts(
        spec: ArchitectureSpec,
        params: Vec<Param<S>>,
        bn_states: Vec<RunningStats<S>>,
    ) -> Result<Self, Error> {
        use rand::SeedableRng;
        // The template is only used for shape checks; the seed is irrelevant.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let template = Network::build(&spec, &mut rng)?;
        if params.len() != template.params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter arrays, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (have, want) in params.iter().zip(template.params.iter()) {
            if have.name != want.name || have.shape != want.shape {
                return Err(Error::Validation(format!(
                    "parameter {} with shape {:?} does not match expected {} {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
            if have.data.len() != have.shape.iter().product::<usize>() {
                return Err(Error::Validation(format!(
                    "parameter {} length {} does not match shape {:?}",
                    have.name,
                    have.data.len(),
                    have.shape
                )));
            }
        }
        if bn_states.len() != template.bn_states.len()
            || bn_states
                .iter()
                .zip(template.bn_states.iter())
                .any(|(a, b)| a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return Err(Error::Validation(
                "batchnorm running stats do not match the architecture".into(),
            ));
        }
        Ok(Network {
            params,
            bn_states,
            ..template
        })
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.layer_plan
    }

    pub fn is_spiking(&self) -> bool {
        self.spec.is_spiking()
    }

    /// (trainable scalar count, serialized size in 32-bit floats).
    pub fn count_params(&self) -> (usize, usize) {
        let n: usize = self.params.iter().map(|p| p.data.len()).sum();
        (n, n * 4)
    }

    /// Copies every parameter onto a tape as a leaf.
    pub fn stage_params(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<ValueId> {
        self.params
            .iter()
            .map(|p| {
                tape.leaf(Tensor {
                    shape: p.shape.clone(),
                    data: p.data.clone(),
                    requires_grad: trainable,
                    grad: None,
                })
            })
            .collect()
    }

    /// Inverted-dropout masks for one forward run, one per dropout layer.
    /// Masks are shared across all timesteps of the run.
    pub fn sample_dropout_masks<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<Vec<S>> {
        let mut masks = Vec::with_capacity(self.dropout_count);
        for lp in &self.layer_plan {
            if let LayerSpec::Dropout { p } = lp.spec {
                let keep_scale = S::from_f64(1.0 / (1.0 - p));
                let mask = (0..batch * lp.input.numel())
                    .map(|_| {
                        if rng.random::<f64>() < p {
                            S::zero()
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                masks.push(mask);
            }
        }
        masks
    }

    /// True when the membrane state is clear and a temporal run may start.
    pub fn states_reset(&self) -> bool {
        self.if_potentials.iter().all(|v| v.is_none())
    }

    /// Clears all membrane potentials. Idempotent.
    pub fn reset_states(&mut self) {
        for v in &mut self.if_potentials {
            *v = None;
        }
    }

    /// Membrane potentials left by the last run, one entry per spike layer.
    pub fn potentials(&self) -> &[Option<Tensor<S>>] {
        &self.if_potentials
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_step(
        &mut self,
        tape: &mut Tape<S>,
        mut x: ValueId,
        param_ids: &[ValueId],
        mode: Mode,
        masks: Option<&[Vec<S>]>,
        states: &mut [Option<ValueId>],
        mut recorder: Option<&mut SpikeRecorder>,
    ) -> Result<ValueId, Error> {
        let momentum = S::from_f64(0.1);
        let eps = S::from_f64(1e-5);
        let alpha = S::from_f64(self.spec.surrogate_alpha);
        let v_th = S::from_f64(self.spec.v_th);

        for li in 0..self.layer_plan.len() {
            let lp = self.layer_plan[li].clone();
            let binding = self.bindings[li].clone();
            match (&lp.spec, binding) {
                (&LayerSpec::Conv { stride, padding, .. }, Binding::Conv { w, b }) => {
                    if let Some(rec) = recorder.as_deref_mut() {
                        rec.observe_input(count_synaptic_before(&self.layer_plan, li), tape.data(x));
                    }
                    x = tape.conv2d(x, param_ids[w], param_ids[b], stride, padding)?;
                }
                (LayerSpec::Batchnorm, Binding::Bn { gamma, beta, state }) => {
                    x = tape.batchnorm2d(
                        x,
                        param_ids[gamma],
                        param_ids[beta],
                        &mut self.bn_states[state],
                        mode,
                        momentum,
                        eps,
                    )?;
                }
                (&LayerSpec::Pool { window }, _) => {
                    if let Some((ch, cw)) = lp.pre_crop {
                        x = tape.crop2d(x, ch, cw)?;
                    }
                    x = tape.maxpool2d(x, window)?;
                }
                (LayerSpec::Flatten, _) => {
                    let batch = tape.shape(x)[0];
                    let features = lp.output.numel();
                    x = tape.reshape(x, vec![batch, features])?;
                }
                (LayerSpec::Fc { .. }, Binding::Fc { w, b }) => {
                    if let Some(rec) = recorder.as_deref_mut() {
                        rec.observe_input(count_synaptic_before(&self.layer_plan, li), tape.data(x));
                    }
                    x = tape.affine(x, param_ids[w], param_ids[b])?;
                }
                (LayerSpec::Dropout { .. }, Binding::Dropout { slot }) => {
                    if mode == Mode::Train {
                        let Some(masks) = masks else {
                            return Err(Error::Contract(
                                "train-mode forward needs dropout masks".into(),
                            ));
                        };
                        x = tape.dropout_masked(x, masks[slot].clone())?;
                    }
                }
                (LayerSpec::Spike, Binding::Spike { slot }) => {
                    let v_prev = match states[slot] {
                        Some(id) => id,
                        None => tape.leaf(Tensor::zeros(tape.shape(x).to_vec())),
                    };
                    let h = tape.add(v_prev, x)?;
                    let s = tape.spike(h, alpha, v_th)?;
                    states[slot] = Some(tape.hard_reset(h, s)?);
                    x = s;
                }
                (LayerSpec::Relu, _) => {
                    x = tape.relu(x)?;
                }
                (spec, binding) => {
                    return Err(Error::Contract(format!(
                        "layer {} ({}) has inconsistent binding {:?}",
                        li,
                        spec.kind_name(),
                        binding
                    )));
                }
            }
        }
        Ok(x)
    }

    /// Unrolls the network over the given input frames, carrying membrane
    /// potentials across timesteps, and returns the per-step outputs plus
    /// their mean (the rate readout). Requires clear state; leaves the
    /// final potentials behind for inspection until [`Self::reset_states`].
    #[allow(clippy::too_many_arguments)]
    pub fn run_temporal(
        &mut self,
        tape: &mut Tape<S>,
        param_ids: &[ValueId],
        frames: &[ValueId],
        mode: Mode,
        masks: Option<&[Vec<S>]>,
        mut recorder: Option<&mut SpikeRecorder>,
    ) -> Result<TemporalRun, Error> {
        if !self.is_spiking() {
            return Err(Error::Contract(
                "run_temporal needs a spiking network; use forward_analog".into(),
            ));
        }
        if frames.is_empty() {
            return Err(Error::Contract("run_temporal needs at least one frame".into()));
        }
        if !self.states_reset() {
            return Err(Error::Contract(
                "membrane state carries a previous run; call reset_states first".into(),
            ));
        }

        let mut states: Vec<Option<ValueId>> = vec![None; self.if_potentials.len()];
        let mut step_outputs = Vec::with_capacity(frames.len());
        for &frame in frames {
            let out = self.forward_step(
                tape,
                frame,
                param_ids,
                mode,
                masks,
                &mut states,
                recorder.as_deref_mut(),
            )?;
            step_outputs.push(out);
        }
        if let Some(rec) = recorder {
            rec.add_samples(tape.shape(frames[0])[0]);
        }

        let mut acc = step_outputs[0];
        for &out in &step_outputs[1..] {
            acc = tape.add(acc, out)?;
        }
        let rate = tape.scale(acc, S::from_f64(1.0 / frames.len() as f64))?;

        for (slot, state) in states.into_iter().enumerate() {
            // Every spike layer ran at least once, so the slot is filled.
            let id = state.expect("spike layer state populated during run");
            self.if_potentials[slot] = Some(tape.value(id).clone());
        }
        Ok(TemporalRun { step_outputs, rate })
    }

    /// Single analog pass for non-spiking networks; returns the logits.
    pub fn forward_analog(
        &mut self,
        tape: &mut Tape<S>,
        param_ids: &[ValueId],
        input: ValueId,
        mode: Mode,
        masks: Option<&[Vec<S>]>,
        recorder: Option<&mut SpikeRecorder>,
    ) -> Result<ValueId, Error> {
        if self.is_spiking() {
            return Err(Error::Contract(
                "forward_analog needs a non-spiking network; use run_temporal".into(),
            ));
        }
        let mut states: Vec<Option<ValueId>> = Vec::new();
        let out = self.forward_step(tape, input, param_ids, mode, masks, &mut states, recorder)?;
        Ok(out)
    }
}

/// Builds a network from a validated spec; see [`Network::build`].
pub fn build_model<S: Scalar, R: Rng>(
    spec: &ArchitectureSpec,
    rng: &mut R,
) -> Result<Network<S>, Error> {
    Network::build(spec, rng)
}

fn count_synaptic_before(plans: &[LayerPlan], li: usize) -> usize {
    plans[..li]
        .iter()
        .filter(|p| matches!(p.spec, LayerSpec::Conv { .. } | LayerSpec::Fc { .. }))
        .count()
}

#[derive(Default)]
struct LayerCounters {
    conv: usize,
    bn: usize,
    fc: usize,
}

impl LayerCounters {
    fn next(&mut self, kind: &str) -> String {
        let n = match kind {
            "conv" => {
                self.conv += 1;
                self.conv
            }
            "bn" => {
                self.bn += 1;
                self.bn
            }
            _ => {
                self.fc += 1;
                self.fc
            }
        };
        format!("{kind}{n}")
    }
}

fn push_param<S: Scalar>(params: &mut Vec<Param<S>>, name: String, t: Tensor<S>) -> usize {
    params.push(Param {
        name,
        shape: t.shape,
        data: t.data,
    });
    params.len() - 1
}

fn kaiming_uniform<S: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
    }
}
