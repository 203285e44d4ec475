//! Mini-batch VAE training with best-validation checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{frames_to_batch, VaeConfig, VaeError, VaeModel};
use crate::numerics::{Adam, AdamConfig, Tape, Tensor};
use crate::render::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the latent prior term.
    pub beta: f32,
    /// Each epoch trains on every `frame_stride`-th frame, with an offset that rotates per epoch.
    pub frame_stride: usize,
    /// Validation uses every `val_stride`-th frame.
    pub val_stride: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { epochs: 80, batch_size: 1610, adam: AdamConfig::default(), beta: 1.0, frame_stride: 1, val_stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-frame training loss (sampled z).
    pub train_loss: f64,
    /// Mean per-frame validation loss, decoding from μ.
    pub val_loss: f64,
    /// Reconstruction part of `val_loss`.
    pub val_recon: f64,
}

#[derive(Clone, Debug)]
pub struct VaeTraining {
    pub model: VaeModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeEvaluation {
    pub loss: f64,
    pub recon: f64,
    /// Fraction of pixels whose decoded argmax matches the label.
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 128;

/// Mean per-frame loss and argmax accuracy, decoding from μ.
pub fn evaluate_frames(model: &VaeModel, frames: &[&Frame], beta: f32) -> Result<VaeEvaluation, VaeError> {
    let (mut loss, mut recon, mut hits, mut pixels) = (0.0f64, 0.0f64, 0usize, 0usize);
    for chunk in frames.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let v = model.bind(&mut tape, false);
        let x = tape.constant(frames_to_batch(chunk, model.config.channels)?);
        let out = model.forward_loss(&mut tape, &v, x, None, beta)?;
        loss += f64::from(tape.value(out.loss).item()) * chunk.len() as f64;
        recon += f64::from(tape.value(out.recon).item());
        let c = model.config.channels;
        let plane = model.config.height * model.config.width;
        let logits = tape.value(out.logits).data();
        for (i, f) in chunk.iter().enumerate() {
            let base = i * c * plane;
            for (p, &label) in f.labels.iter().enumerate() {
                let mut best = 0;
                for k in 1..c {
                    if logits[base + k * plane + p] > logits[base + best * plane + p] {
                        best = k;
                    }
                }
                hits += usize::from(best == label as usize);
            }
            pixels += plane;
        }
    }
    let n = frames.len().max(1) as f64;
    Ok(VaeEvaluation { loss: loss / n, recon: recon / n, accuracy: hits as f64 / pixels.max(1) as f64 })
}

fn strided<'a>(episodes: &[&'a [Frame]], stride: usize, offset: usize) -> Vec<&'a Frame> {
    episodes.iter().flat_map(|e| e.iter().skip(offset).step_by(stride.max(1))).collect()
}

/// Trains from scratch and returns the epoch with the lowest validation loss.
pub fn train_vae(config: &VaeConfig, train: &[&[Frame]], val: &[&[Frame]], hyper: &VaeTrainConfig, seed: u64) -> Result<VaeTraining, VaeError> {
    if hyper.epochs == 0 || hyper.batch_size == 0 {
        return Err(VaeError::Config("epochs and batch size must be positive".into()));
    }
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let mut model = VaeModel::new(config.clone(), &mut init)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(1);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2);
    let mut adam = Adam::new(hyper.adam, &model.params);
    let val_frames = strided(val, hyper.val_stride, 0);
    if val_frames.is_empty() {
        return Err(VaeError::Config("validation set is empty".into()));
    }
    let l = config.latent;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, VaeModel)> = None;
    for epoch in 1..=hyper.epochs {
        let stride = hyper.frame_stride.max(1);
        let mut frames = strided(train, stride, (epoch - 1) % stride);
        frames.shuffle(&mut shuffle);
        let mut total = 0.0f64;
        for (b, batch) in frames.chunks(hyper.batch_size).enumerate() {
            let mut tape = Tape::new();
            let v = model.bind(&mut tape, true);
            let x = tape.constant(frames_to_batch(batch, config.channels)?);
            let eps: Vec<f32> = (0..batch.len() * l).map(|_| StandardNormal.sample(&mut noise)).collect();
            let eps = Tensor::new(&[batch.len(), l], eps)?;
            let out = model.forward_loss(&mut tape, &v, x, Some(&eps), hyper.beta)?;
            let loss = tape.value(out.loss).item();
            if !loss.is_finite() {
                return Err(VaeError::Diverged { epoch, batch: b, loss });
            }
            total += f64::from(loss) * batch.len() as f64;
            let grads = tape.backward(out.loss)?;
            let grads = model.params.collect_grads(&grads, v.as_slice());
            adam.step(&mut model.params, &grads)?;
        }
        let eval = evaluate_frames(&model, &val_frames, hyper.beta)?;
        let record = EpochRecord { epoch, train_loss: total / frames.len().max(1) as f64, val_loss: eval.loss, val_recon: eval.recon };
        log::info!("vae epoch {epoch}: train {:.3} val {:.3} (recon {:.3}, acc {:.4})", record.train_loss, record.val_loss, record.val_recon, eval.accuracy);
        if best.as_ref().map_or(true, |(b, _, _)| record.val_loss < *b) {
            best = Some((record.val_loss, epoch, model.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(VaeTraining { model, history, best_epoch })
}
