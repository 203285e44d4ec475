//! Truncated-BPTT training on Ψ windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{mdn_nll_tape, LstmModel, MdnConfig, MdnError};
use crate::dataset::{PsiSegment, PsiTable};
use crate::numerics::{clip_global_norm, Adam, AdamConfig, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmTrainConfig {
    /// Optimizer steps.
    pub steps: usize,
    /// Ψ rows per batch, split into windows of `seq_len` rows.
    pub batch_rows: usize,
    pub seq_len: usize,
    pub adam: AdamConfig,
    pub clip_norm: f32,
    /// Learning rate at the last step as a fraction of the initial one (cosine decay).
    pub final_lr_ratio: f32,
    pub eval_every: usize,
    /// Cap on the number of fixed windows used for each NLL probe.
    pub probe_windows: usize,
    /// Draw z from the stored posterior instead of using μ directly.
    pub sample_inputs: bool,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_rows: 1610,
            seq_len: 32,
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            clip_norm: 5.0,
            final_lr_ratio: 0.1,
            eval_every: 500,
            probe_windows: 256,
            sample_inputs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean per-step NLL on a fixed set of training windows.
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug)]
pub struct LstmTraining {
    pub model: LstmModel,
    pub history: Vec<StepRecord>,
    pub best_step: usize,
}

/// Window start rows; each window holds `seq_len` consecutive rows of one segment.
fn probe_windows(segments: &[PsiSegment], seq_len: usize, cap: usize) -> Vec<(usize, usize)> {
    let mut all = Vec::new();
    for s in segments {
        let mut off = 0;
        while off < s.len {
            let len = seq_len.min(s.len - off);
            all.push((s.start + off, len));
            off += seq_len;
        }
    }
    if all.len() <= cap || cap == 0 {
        return all;
    }
    (0..cap).map(|i| all[i * all.len() / cap]).collect()
}

fn sample_block(psi: &PsiTable, row: usize, offset: usize, sample: bool, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    let l = psi.latent;
    let r = psi.row(row);
    for i in 0..l {
        let mu = r[offset + i];
        if sample {
            let eps: f32 = rng.sample(StandardNormal);
            out.push(mu + (0.5 * r[offset + l + i]).exp() * eps);
        } else {
            out.push(mu);
        }
    }
}

/// Loss summed over windows, steps and latent dims, plus the number of steps.
/// All windows must share a length.
fn window_loss(model: &LstmModel, tape: &mut Tape, trainable: bool, psi: &PsiTable, starts: &[usize], len: usize, sample: bool, rng: &mut ChaCha8Rng) -> Result<(crate::numerics::Var, Vec<crate::numerics::Var>), MdnError> {
    let l = psi.latent;
    let b = starts.len();
    let hd = model.config.hidden;
    let v = model.bind(tape, trainable);
    let mut h = tape.constant(Tensor::zeros(&[b, hd]));
    let mut c = tape.constant(Tensor::zeros(&[b, hd]));
    let mut total = None;
    for t in 0..len {
        let mut z = Vec::with_capacity(b * l);
        let mut target = Vec::with_capacity(b * l);
        let mut x = Vec::with_capacity(b * (l + 3));
        for &s in starts {
            let row = s + t;
            let before = z.len();
            sample_block(psi, row, 0, sample, rng, &mut z);
            x.extend_from_slice(&z[before..]);
            x.extend_from_slice(&psi.row(row)[2 * l..2 * l + 3]);
            sample_block(psi, row, 2 * l + 3, sample, rng, &mut target);
        }
        let xv = tape.constant(Tensor::new(&[b, l + 3], x)?);
        let step = model.step_tape(tape, &v, &z, xv, h, c)?;
        let nll = mdn_nll_tape(tape, &step, &target, model.config.components)?;
        total = Some(match total {
            None => nll,
            Some(acc) => tape.add(acc, nll)?,
        });
        h = step.h;
        c = step.c;
    }
    let total = total.ok_or_else(|| MdnError::Config("empty window".into()))?;
    Ok((total, v.as_slice().to_vec()))
}

/// Mean per-step NLL over fixed windows with a fixed noise stream.
fn probe_nll(model: &LstmModel, psi: &PsiTable, windows: &[(usize, usize)], sample: bool, seed: u64) -> Result<f64, MdnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &(s, len) in windows {
        by_len.entry(len).or_default().push(s);
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for (len, starts) in by_len {
        for chunk in starts.chunks(64) {
            let mut tape = Tape::new();
            let (loss, _) = window_loss(model, &mut tape, false, psi, chunk, len, sample, &mut rng)?;
            sum += f64::from(tape.value(loss).item());
            count += chunk.len() * len;
        }
    }
    if count == 0 {
        return Err(MdnError::Config("no probe windows".into()));
    }
    let nll = sum / count as f64;
    if !nll.is_finite() {
        return Err(MdnError::NonFinite);
    }
    Ok(nll)
}

/// Trains from scratch. Histories start with the untrained network at step 0;
/// the returned model is the probe point with the lowest validation NLL.
pub fn train_lstm(config: &MdnConfig, psi: &PsiTable, train: &[PsiSegment], val: &[PsiSegment], hyper: &LstmTrainConfig, seed: u64) -> Result<LstmTraining, MdnError> {
    if config.latent != psi.latent {
        return Err(MdnError::Width { what: "Ψ latent", expected: config.latent, got: psi.latent });
    }
    if hyper.seq_len == 0 || hyper.batch_rows == 0 || hyper.eval_every == 0 {
        return Err(MdnError::Config("seq_len, batch_rows and eval_every must be positive".into()));
    }
    let usable: Vec<&PsiSegment> = train.iter().filter(|s| s.len >= hyper.seq_len).collect();
    if usable.is_empty() {
        return Err(MdnError::Config(format!("no training segment has {} rows", hyper.seq_len)));
    }
    let train_probe = probe_windows(train, hyper.seq_len, hyper.probe_windows);
    let val_probe = probe_windows(val, hyper.seq_len, hyper.probe_windows);
    if val_probe.is_empty() {
        return Err(MdnError::Config("validation set is empty".into()));
    }
    let mut model = LstmModel::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut adam = Adam::new(hyper.adam, &model.params);
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(1);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2);
    let windows = (hyper.batch_rows / hyper.seq_len).max(1);
    let weights: Vec<usize> = usable.iter().map(|s| s.len - hyper.seq_len + 1).collect();
    let total_weight: usize = weights.iter().sum();

    let probe = |m: &LstmModel, step: usize| -> Result<StepRecord, MdnError> {
        let rec = StepRecord {
            step,
            train_nll: probe_nll(m, psi, &train_probe, hyper.sample_inputs, seed)?,
            val_nll: probe_nll(m, psi, &val_probe, hyper.sample_inputs, seed)?,
        };
        log::info!("lstm step {step}: train nll {:.4} val nll {:.4}", rec.train_nll, rec.val_nll);
        Ok(rec)
    };
    let mut history = vec![probe(&model, 0)?];
    let mut best = (history[0].val_nll, 0, model.clone());
    let base_lr = hyper.adam.learning_rate;
    for step in 1..=hyper.steps {
        let progress = (step - 1) as f32 / hyper.steps.max(2).saturating_sub(1) as f32;
        let cosine = 0.5 * (1.0 + (std::f32::consts::PI * progress).cos());
        adam.config.learning_rate = base_lr * (hyper.final_lr_ratio + (1.0 - hyper.final_lr_ratio) * cosine);
        let starts: Vec<usize> = (0..windows)
            .map(|_| {
                let mut u = pick.gen_range(0..total_weight);
                let mut i = 0;
                while u >= weights[i] {
                    u -= weights[i];
                    i += 1;
                }
                usable[i].start + u
            })
            .collect();
        let mut tape = Tape::new();
        let (loss, vars) = window_loss(&model, &mut tape, true, psi, &starts, hyper.seq_len, hyper.sample_inputs, &mut noise)?;
        let scale = 1.0 / (windows * hyper.seq_len) as f32;
        let loss = tape.scale(loss, scale);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(MdnError::Diverged { step, loss: value });
        }
        let grads = tape.backward(loss)?;
        let mut grads = model.params.collect_grads(&grads, &vars);
        clip_global_norm(&mut grads, hyper.clip_norm);
        adam.step(&mut model.params, &grads)?;
        if step % hyper.eval_every == 0 || step == hyper.steps {
            let rec = probe(&model, step)?;
            if rec.val_nll < best.0 {
                best = (rec.val_nll, step, model.clone());
            }
            history.push(rec);
        }
    }
    let (_, best_step, model) = best;
    Ok(LstmTraining { model, history, best_step })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_windows_cover_segments() {
        let segs = [PsiSegment { start: 0, len: 70 }, PsiSegment { start: 70, len: 10 }];
        let w = probe_windows(&segs, 32, 0);
        assert_eq!(w, vec![(0, 32), (32, 32), (64, 6), (70, 10)]);
        assert_eq!(probe_windows(&segs, 32, 2).len(), 2);
    }
}
