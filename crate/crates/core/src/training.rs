//! Adam optimization, the epoch loop with early stopping, and evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::imaging::{bicubic_resize, clamp_unit, inject_ambient, normalize, Frame};
use crate::models::Network;
use crate::profiling::SpikeRecorder;
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Scalar;
use crate::spiking::poisson_encode;
use crate::tensor::{Mode, Tape, Tensor, ValueId};

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub timesteps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 32,
            max_epochs: 300,
            patience: 20,
            seed: 0,
            timesteps: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Domain(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Domain(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps_adam.is_finite() && self.eps_adam > 0.0) {
            return Err(Error::Domain(format!("eps {} must be positive", self.eps_adam)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.timesteps == 0 {
            return Err(Error::Domain(
                "batch_size, max_epochs, and timesteps must be >= 1".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Domain("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(param_lens: &[usize]) -> Self {
        AdamState {
            m: param_lens.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: param_lens.iter().map(|&n| vec![S::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One Adam update with bias correction across every parameter array.
pub fn adam_step<S: Scalar>(
    params: &mut [crate::models::Param<S>],
    grads: &[Vec<S>],
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<(), Error> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dim(format!(
            "adam_step got {} params, {} grads, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::one();
    let corr1 = S::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let corr2 = S::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let lr = S::from_f64(cfg.lr);
    let eps = S::from_f64(cfg.eps_adam);

    for (pi, p) in params.iter_mut().enumerate() {
        let g = &grads[pi];
        if g.len() != p.data.len() {
            return Err(Error::Dim(format!(
                "gradient for {} has {} values, parameter has {}",
                p.name,
                g.len(),
                p.data.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Optimizer(format!(
                "non-finite gradient for parameter {}",
                p.name
            )));
        }
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for i in 0..g.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Strict-improvement early stopping over validation accuracy.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    pub best_epoch: usize,
    pub best_acc: f64,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Result<Self, Error> {
        if patience == 0 {
            return Err(Error::Domain("patience must be >= 1".into()));
        }
        Ok(EarlyStopper {
            patience,
            best_epoch: 0,
            best_acc: f64::NEG_INFINITY,
        })
    }

    /// Records epoch `epoch`'s accuracy; true when it strictly improves.
    pub fn observe(&mut self, epoch: usize, acc: f64) -> bool {
        if acc > self.best_acc {
            self.best_acc = acc;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    /// True once `patience` consecutive epochs brought no improvement.
    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch.saturating_sub(self.best_epoch) >= self.patience
    }
}

/// K×K counts; rows index the true class, columns the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self, Error> {
        if k == 0 {
            return Err(Error::Domain("confusion matrix needs at least one class".into()));
        }
        Ok(ConfusionMatrix {
            k,
            cells: vec![0; k * k],
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<(), Error> {
        if true_class >= self.k || predicted >= self.k {
            return Err(Error::Index(format!(
                "class pair ({true_class}, {predicted}) outside {} classes",
                self.k
            )));
        }
        self.cells[true_class * self.k + predicted] += 1;
        Ok(())
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.cells[true_class * self.k + predicted]
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        self.cells[true_class * self.k..(true_class + 1) * self.k]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    /// trace/total; 0 when nothing has been recorded.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Plain K×K comma-separated grid, one row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.k {
            for c in 0..self.k {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(&self.count(r, c).to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// `epoch,train_loss,train_acc,val_acc` rows with a header line.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for rec in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            rec.epoch, rec.train_loss, rec.train_acc, rec.val_acc
        ));
    }
    out
}

/// What [`train`] hands back: the best-epoch weights and the full history.
pub struct TrainOutcome<S> {
    pub best: Network<S>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Evaluation controls; `encoder_seed` drives the per-sample spike encoder
/// streams so results do not depend on batch size.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub encoder_seed: u64,
    pub ambient: Option<f64>,
    pub record_spikes: bool,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            encoder_seed: 0,
            ambient: None,
            record_spikes: false,
            batch_size: 32,
        }
    }
}

/// Accuracy, per-class confusion, optional spike rates, and timing.
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Input spike rate per synaptic layer; present only for spiking
    /// networks evaluated with `record_spikes`.
    pub spike_rates: Option<Vec<f64>>,
    pub secs_per_image: f64,
    pub samples: usize,
}

fn required_label(frame: &Frame, index: usize, k: usize) -> Result<usize, Error> {
    let label = frame
        .label
        .ok_or_else(|| Error::Data(format!("sample {index} has no label")))?;
    if label >= k {
        return Err(Error::Data(format!(
            "sample {index} has label {label}, outside {k} classes"
        )));
    }
    Ok(label)
}

/// normalize → bicubic to the model's input extent → clamp to [0, 1].
fn preprocess<S: Scalar>(frame: &Frame, h: usize, w: usize) -> Result<Vec<S>, Error> {
    let img = normalize::<S>(frame);
    let mut resized = bicubic_resize(&img, h, w)?;
    clamp_unit(&mut resized);
    Ok(resized.data)
}

fn batch_tensor<S: Scalar>(images: &[Vec<S>], c: usize, h: usize, w: usize) -> Tensor<S> {
    let per = c * h * w;
    let mut data = Vec::with_capacity(images.len() * per);
    for img in images {
        data.extend_from_slice(img);
    }
    Tensor::new(vec![images.len(), c, h, w], data).expect("batch assembly shapes agree")
}

fn argmax_rows<S: Scalar>(data: &[S], rows: usize, cols: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mut best = 0usize;
        for (i, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = i;
            }
        }
        out.push(best);
    }
    out
}

/// Encodes each image separately and stacks the results per timestep, so
/// stream assignment is positional and independent of batching upstream.
fn encode_batch<S: Scalar>(
    images: &[Vec<S>],
    h: usize,
    w: usize,
    timesteps: usize,
    mut rng_for: impl FnMut(usize) -> rand_chacha::ChaCha8Rng,
) -> Result<Vec<Tensor<S>>, Error> {
    let batch = images.len();
    let mut frames = vec![Tensor::zeros(vec![batch, 1, h, w]); timesteps];
    for (i, img) in images.iter().enumerate() {
        let image = Tensor::new(vec![h, w], img.clone())?;
        let mut rng = rng_for(i);
        let train = poisson_encode(&image, timesteps, &mut rng)?;
        for (t, spikes) in train.frames.iter().enumerate() {
            let dst = &mut frames[t].data[i * h * w..(i + 1) * h * w];
            dst.copy_from_slice(&spikes.data);
        }
    }
    Ok(frames)
}

use crate::data::fisher_yates;

/// Runs the epoch loop and returns the best-validation-accuracy weights.
///
/// Per epoch: seeded shuffle, minibatch forward (temporal unroll for
/// spiking networks, one analog pass otherwise), cross-entropy on the
/// rate readout or logits, backprop, one Adam step per batch. Stops after
/// `patience` epochs without validation improvement.
pub fn train<S: Scalar>(
    net: &mut Network<S>,
    train_set: &[Frame],
    val_set: &[Frame],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>, Error> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training needs non-empty train and val sets".into()));
    }
    let spiking = net.is_spiking();
    if spiking && net.spec.timesteps != Some(cfg.timesteps) {
        return Err(Error::Validation(format!(
            "architecture timesteps {:?} disagree with training config {}",
            net.spec.timesteps, cfg.timesteps
        )));
    }
    let (c, h, w) = net.spec.input_shape;
    let k = net.spec.num_classes;
    if c != 1 {
        return Err(Error::Validation(format!(
            "training expects single-channel input, got {c} channels"
        )));
    }

    let mut images = Vec::with_capacity(train_set.len());
    let mut labels = Vec::with_capacity(train_set.len());
    for (i, frame) in train_set.iter().enumerate() {
        labels.push(required_label(frame, i, k)?);
        images.push(preprocess::<S>(frame, h, w)?);
    }

    let mut adam = AdamState::new(&net.params.iter().map(|p| p.data.len()).collect::<Vec<_>>());
    let mut stopper = EarlyStopper::new(cfg.patience)?;
    let mut history = Vec::new();
    let mut best = net.clone();
    let val_seed = derive_seed(cfg.seed, &[tag("val-encode")]);
    let mut stopped_epoch = cfg.max_epochs;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut shuffle_rng = stream(cfg.seed, &[tag("shuffle"), epoch as u64]);
        fisher_yates(&mut order, &mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_images: Vec<Vec<S>> = batch.iter().map(|&i| images[i].clone()).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let b = batch.len();

            let mut tape = Tape::new();
            let param_ids = net.stage_params(&mut tape, true);
            let masks = {
                let mut rng = stream(cfg.seed, &[tag("dropout"), epoch as u64, bi as u64]);
                net.sample_dropout_masks(b, &mut rng)
            };
            let mask_arg = if masks.is_empty() { None } else { Some(masks.as_slice()) };

            let readout: ValueId = if spiking {
                let mut enc =
                    stream(cfg.seed, &[tag("train-encode"), epoch as u64, bi as u64]);
                let frames = encode_batch(&batch_images, h, w, cfg.timesteps, |_| {
                    use rand::{RngExt, SeedableRng};
                    rand_chacha::ChaCha8Rng::seed_from_u64(enc.random::<u64>())
                })?;
                let frame_ids: Vec<ValueId> =
                    frames.into_iter().map(|f| tape.leaf(f)).collect();
                let run = net.run_temporal(&mut tape, &param_ids, &frame_ids, Mode::Train, mask_arg, None)?;
                run.rate
            } else {
                let input = tape.leaf(batch_tensor(&batch_images, c, h, w));
                net.forward_analog(&mut tape, &param_ids, input, Mode::Train, mask_arg, None)?
            };

            let loss = tape.softmax_cross_entropy(readout, &batch_labels)?;
            let loss_val = tape.data(loss)[0].to_f64();
            if !loss_val.is_finite() {
                net.reset_states();
                return Err(Error::Diverged(format!(
                    "loss became non-finite at epoch {epoch}, batch {bi}"
                )));
            }
            loss_sum += loss_val * b as f64;
            let preds = argmax_rows(tape.data(readout), b, k);
            correct += preds
                .iter()
                .zip(&batch_labels)
                .filter(|(p, l)| p == l)
                .count();

            tape.backward(loss)?;
            let grads: Vec<Vec<S>> = param_ids
                .iter()
                .map(|&id| tape.grad(id).expect("trainable leaf has a gradient").to_vec())
                .collect();
            adam_step(&mut net.params, &grads, &mut adam, cfg)?;
            net.reset_states();
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let val = evaluate(
            net,
            val_set,
            &EvalOptions {
                encoder_seed: val_seed,
                ambient: None,
                record_spikes: false,
                batch_size: cfg.batch_size,
            },
        )?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_acc: val.accuracy,
        });

        if stopper.observe(epoch, val.accuracy) {
            best = net.clone();
        }
        if stopper.should_stop(epoch) {
            stopped_epoch = epoch;
            break;
        }
        stopped_epoch = epoch;
    }

    Ok(TrainOutcome {
        best,
        best_epoch: stopper.best_epoch,
        best_val_acc: stopper.best_acc,
        stopped_epoch,
        history,
    })
}

/// Eval-mode pass over `test_set`: argmax prediction on the rate readout
/// (spiking) or logits (analog), confusion counts, optional ambient-photon
/// injection before normalization, optional spike-rate recording.
pub fn evaluate<S: Scalar>(
    net: &mut Network<S>,
    test_set: &[Frame],
    opts: &EvalOptions,
) -> Result<EvalReport, Error> {
    if test_set.is_empty() {
        return Err(Error::Data("evaluation needs a non-empty test set".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Domain("eval batch size must be >= 1".into()));
    }
    if !net.states_reset() {
        return Err(Error::Contract(
            "membrane state carries a previous run; call reset_states first".into(),
        ));
    }
    let spiking = net.is_spiking();
    let (c, h, w) = net.spec.input_shape;
    if c != 1 {
        return Err(Error::Validation(format!(
            "evaluation expects single-channel input, got {c} channels"
        )));
    }
    let k = net.spec.num_classes;
    let timesteps = net.spec.timesteps.unwrap_or(1);

    let mut recorder = if opts.record_spikes && spiking {
        Some(SpikeRecorder::new(&net.spec)?)
    } else {
        None
    };
    let mut confusion = ConfusionMatrix::new(k)?;
    let started = Instant::now();

    for (base, chunk) in test_set
        .chunks(opts.batch_size)
        .enumerate()
        .map(|(ci, chunk)| (ci * opts.batch_size, chunk))
    {
        let mut batch_images = Vec::with_capacity(chunk.len());
        let mut batch_labels = Vec::with_capacity(chunk.len());
        for (off, frame) in chunk.iter().enumerate() {
            let i = base + off;
            batch_labels.push(required_label(frame, i, k)?);
            let prepared = match opts.ambient {
                Some(rate) => {
                    let mut rng = stream(opts.encoder_seed, &[tag("ambient"), i as u64]);
                    let noisy = inject_ambient(frame, rate, &mut rng)?;
                    preprocess::<S>(&noisy, h, w)?
                }
                None => preprocess::<S>(frame, h, w)?,
            };
            batch_images.push(prepared);
        }

        let mut tape = Tape::new();
        let param_ids = net.stage_params(&mut tape, false);
        let readout = if spiking {
            let frames = encode_batch(&batch_images, h, w, timesteps, |off| {
                stream(opts.encoder_seed, &[tag("encode"), (base + off) as u64])
            })?;
            let frame_ids: Vec<ValueId> = frames.into_iter().map(|f| tape.leaf(f)).collect();
            let run = net.run_temporal(
                &mut tape,
                &param_ids,
                &frame_ids,
                Mode::Eval,
                None,
                recorder.as_mut(),
            )?;
            net.reset_states();
            run.rate
        } else {
            let input = tape.leaf(batch_tensor(&batch_images, c, h, w));
            net.forward_analog(&mut tape, &param_ids, input, Mode::Eval, None, None)?
        };

        let preds = argmax_rows(tape.data(readout), chunk.len(), k);
        for (label, pred) in batch_labels.iter().zip(preds) {
            confusion.record(*label, pred)?;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let spike_rates = match recorder {
        Some(rec) => Some(rec.rates()?),
        None => None,
    };
    Ok(EvalReport {
        accuracy: confusion.accuracy(),
        confusion,
        spike_rates,
        secs_per_image: elapsed / test_set.len() as f64,
        samples: test_set.len(),
    })
}
