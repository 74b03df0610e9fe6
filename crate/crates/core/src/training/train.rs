use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, clip_global_norm, cosine_lr, AdamWConfig, OptimState};
use super::checkpoint::Checkpoint;
use super::init::init_params;
use crate::dataset::synth::derive_seed;
use crate::dataset::{augment, eval_input, AugmentMode, Normalization, Sample, Sizes};
use crate::error::{Error, Result};
use crate::head::{semantic_maps_from_tokens, tscam_loss, SemanticMaps};
use crate::params::Params;
use crate::tensor::{ops, Tape, Tensor};
use crate::vit::{self, VitConfig};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_4700_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    /// Side length images are resized to before cropping to the model size.
    pub resize_to: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optim: AdamWConfig::default(),
            clip_norm: 1.0,
            resize_to: 72,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &VitConfig) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.resize_to < model.image_size {
            return Err(Error::Config(format!(
                "resize_to {} is smaller than the model input {}",
                self.resize_to, model.image_size
            )));
        }
        if !(self.optim.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr and clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn sizes(&self, model: &VitConfig) -> Sizes {
        Sizes::new(self.resize_to, model.image_size)
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent of validation images whose top class is correct.
    pub val_cls_top1: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    #[serde(skip)]
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Mean batch loss of every step, measured before its update.
    pub steps: Vec<StepLoss>,
}

/// Sample order of epoch `epoch` (0-based).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Augmented inputs and labels of one mini-batch; a pure function of the
/// seed, so any step can be reconstructed.
pub fn batch_inputs(
    tc: &TrainConfig,
    model: &VitConfig,
    norm: &Normalization,
    data: &[Sample],
    epoch: usize,
    step: usize,
) -> Vec<(Tensor<f32>, usize)> {
    let order = epoch_order(tc.seed, epoch, data.len());
    let sizes = tc.sizes(model);
    let lo = step * tc.batch_size;
    let hi = (lo + tc.batch_size).min(order.len());
    (lo..hi)
        .map(|pos| {
            let s = &data[order[pos]];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                tc.seed,
                AUGMENT_STREAM + epoch as u64,
                pos as u64,
            ));
            let img = augment(&s.image, AugmentMode::Train, sizes, norm, &mut rng);
            (img, s.record.label)
        })
        .collect()
}

fn sample_loss_and_grads(
    model: &VitConfig,
    params: &Params<f32>,
    image: &Tensor<f32>,
    label: usize,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let (loss, _) = tscam_loss(&mut tape, model, &vars, image, label)?;
    let value = tape.value(loss).data()[0] as f64;
    let mut grads = tape.backward(loss)?;
    let out = vars
        .iter()
        .map(|(_, v)| grads.take(v).expect("every parameter gets a gradient"))
        .collect();
    Ok((value, out))
}

fn sample_loss(
    model: &VitConfig,
    params: &Params<f32>,
    image: &Tensor<f32>,
    label: usize,
) -> Result<f64> {
    let mut tape = Tape::inference();
    let vars = params.register(&mut tape);
    let (loss, _) = tscam_loss(&mut tape, model, &vars, image, label)?;
    Ok(tape.value(loss).data()[0] as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean loss and mean gradient over a batch. Samples run in parallel and
/// are reduced in index order, so results do not depend on thread count.
pub fn batch_gradients(
    model: &VitConfig,
    params: &Params<f32>,
    batch: &[(Tensor<f32>, usize)],
) -> Result<(f64, Params<f32>)> {
    let per_sample: Vec<(f64, Vec<Tensor<f32>>)> = batch
        .par_iter()
        .map(|(img, label)| sample_loss_and_grads(model, params, img, *label))
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = per_sample.iter().map(|(l, _)| *l).collect();
    let mut sum = params.zeros_like();
    for (_, grads) in &per_sample {
        for ((_, acc), g) in sum.iter_mut().zip(grads) {
            acc.add_assign(g)?;
        }
    }
    let inv = 1.0 / batch.len() as f32;
    for (_, g) in sum.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((mean(&losses), sum))
}

/// Mean loss over a batch without building gradients. Matches the loss
/// reported by [`batch_gradients`].
pub fn batch_loss(
    model: &VitConfig,
    params: &Params<f32>,
    batch: &[(Tensor<f32>, usize)],
) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|(img, label)| sample_loss(model, params, img, *label))
        .collect::<Result<_>>()?;
    Ok(mean(&losses))
}

/// Class probabilities from the mean-pooled semantic maps.
pub fn class_probabilities(
    model: &VitConfig,
    params: &Params<f32>,
    image: &Tensor<f32>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::inference();
    let vars = params.register(&mut tape);
    let out = vit::forward(&mut tape, model, &vars, image)?;
    let maps = semantic_maps_from_tokens(&mut tape, model, &vars, out.tokens)?;
    let pooled = SemanticMaps(tape.value(maps).cast::<f64>()).pooled();
    Ok(ops::softmax(&pooled))
}

/// Top-1 accuracy (percent) and mean cross-entropy on eval-mode inputs.
pub fn evaluate_classification(
    model: &VitConfig,
    params: &Params<f32>,
    norm: &Normalization,
    sizes: Sizes,
    data: &[Sample],
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let results: Vec<(bool, f64)> = data
        .par_iter()
        .map(|s| {
            let probs = class_probabilities(model, params, &eval_input(&s.image, sizes, norm))?;
            let top = (0..probs.len())
                .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            let label = s.record.label;
            Ok((top == label, -probs[label].max(1e-300).ln()))
        })
        .collect::<Result<_>>()?;
    let correct = results.iter().filter(|(c, _)| *c).count();
    let losses: Vec<f64> = results.iter().map(|(_, l)| *l).collect();
    Ok((100.0 * correct as f64 / data.len() as f64, mean(&losses)))
}

/// Runs every optimizer step of `epoch` (0-based) and returns the step
/// losses. Given the checkpoint written after the previous epoch, this
/// replays an epoch of [`train`] exactly.
pub fn train_epoch(
    model: &VitConfig,
    tc: &TrainConfig,
    norm: &Normalization,
    train_set: &[Sample],
    epoch: usize,
    params: &mut Params<f32>,
    optim: &mut OptimState<f32>,
) -> Result<Vec<StepLoss>> {
    let steps_per_epoch = tc.steps_per_epoch(train_set.len());
    let total = steps_per_epoch * tc.epochs;
    let mut steps = Vec::with_capacity(steps_per_epoch);
    for step in 0..steps_per_epoch {
        let batch = batch_inputs(tc, model, norm, train_set, epoch, step);
        let (loss, mut grads) = batch_gradients(model, params, &batch).map_err(|e| match e {
            Error::InvalidInput(msg) => {
                Error::Divergence(format!("loss at epoch {} step {step}: {msg}", epoch + 1))
            }
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "loss at epoch {} step {step}",
                epoch + 1
            )));
        }
        clip_global_norm(&mut grads, tc.clip_norm);
        let lr = cosine_lr(tc.optim.lr, epoch * steps_per_epoch + step, total);
        adamw_step(params, &grads, optim, lr)?;
        steps.push(StepLoss { epoch, step, loss });
    }
    Ok(steps)
}

/// Trains from scratch. `on_epoch` sees every epoch's log line and
/// checkpoint, and whether it is the best so far.
pub fn train(
    model: &VitConfig,
    tc: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog, &Checkpoint, bool) -> Result<()>,
) -> Result<TrainOutcome> {
    model.validate()?;
    tc.validate(model)?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for s in train_set.iter().chain(val_set) {
        if s.record.label >= model.num_classes {
            return Err(Error::Label {
                label: s.record.label,
                num_classes: model.num_classes,
            });
        }
    }
    let norm = Normalization::from_images(train_set.iter().map(|s| &s.image));
    let sizes = tc.sizes(model);
    let mut params = init_params::<f32>(model, tc.seed)?;
    let mut optim = OptimState::new(&params, tc.optim);
    let steps_per_epoch = tc.steps_per_epoch(train_set.len());
    let total = steps_per_epoch * tc.epochs;

    let mut log = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(Checkpoint, (f64, f64))> = None;
    let mut last = None;
    for epoch in 0..tc.epochs {
        let epoch_steps = train_epoch(model, tc, &norm, train_set, epoch, &mut params, &mut optim)?;
        let losses: Vec<f64> = epoch_steps.iter().map(|s| s.loss).collect();
        let lr = cosine_lr(tc.optim.lr, (epoch + 1) * steps_per_epoch - 1, total);
        steps.extend(epoch_steps);
        let (val_top1, val_loss) = evaluate_classification(model, &params, &norm, sizes, val_set)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss: mean(&losses),
            val_cls_top1: val_top1,
            lr,
            val_loss,
        };
        let ck = Checkpoint {
            config: model.clone(),
            params: params.clone(),
            optim: Some(optim.clone()),
            norm,
            epoch: epoch + 1,
        };
        // higher accuracy wins; ties go to the lower validation loss
        let key = (val_top1, -val_loss);
        let is_best = best
            .as_ref()
            .map_or(true, |(_, k)| key.0 > k.0 || (key.0 == k.0 && key.1 >= k.1));
        on_epoch(&entry, &ck, is_best)?;
        if is_best {
            best = Some((ck.clone(), key));
        }
        log.push(entry);
        last = Some(ck);
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch").0,
        last: last.expect("at least one epoch"),
        log,
        steps,
    })
}
