//! Convolutional VAE over one-hot semantic frames.

mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::conv::{conv_out_len, conv_transpose_out_len};
use crate::numerics::{ConvSpec, ConvTransposeSpec, NumericsError, ParamSet, Tape, Tensor, Var};
use crate::render::{Frame, ProbFrame};

pub use train::{evaluate_frames, train_vae, EpochRecord, VaeEvaluation, VaeTrainConfig, VaeTraining};

/// Bounds applied to the encoder's log-variance head.
pub const LOGVAR_MIN: f32 = -10.0;
pub const LOGVAR_MAX: f32 = 10.0;
/// Added to every sigmoid output before per-pixel normalisation.
pub const PROB_FLOOR: f32 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("vae config: {0}")]
    Config(String),
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f32 },
    #[error("category {label} out of range for {channels} channels")]
    Category { label: u8, channels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub latent: usize,
    /// Output channels of the four encoder convolutions.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { height: 45, width: 85, channels: 8, latent: 50, conv_channels: vec![32, 64, 128, 256], kernel: 4, stride: 2, padding: 1 }
    }
}

/// Spatial sizes through the encoder and the decoder's output paddings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VaePlan {
    /// `(h, w)` of the input and after every encoder layer.
    pub sizes: Vec<(usize, usize)>,
    /// Per decoder layer, in decoding order.
    pub output_padding: Vec<(usize, usize)>,
}

impl VaeConfig {
    pub fn plan(&self) -> Result<VaePlan, VaeError> {
        if self.conv_channels.is_empty() || self.latent == 0 || self.channels == 0 {
            return Err(VaeError::Config("need at least one conv layer, a latent and a channel".into()));
        }
        let spec = ConvSpec { stride: self.stride, padding: self.padding };
        let mut sizes = vec![(self.height, self.width)];
        for _ in &self.conv_channels {
            let (h, w) = *sizes.last().expect("non-empty");
            match (conv_out_len(h, self.kernel, spec), conv_out_len(w, self.kernel, spec)) {
                (Some(h), Some(w)) if h > 0 && w > 0 => sizes.push((h, w)),
                _ => return Err(VaeError::Config(format!("{}x{} input collapses before layer {}", self.height, self.width, sizes.len()))),
            }
        }
        let mut output_padding = Vec::new();
        for pair in sizes.windows(2).rev() {
            let (target, from) = (pair[0], pair[1]);
            let pad = |t: usize, f: usize| -> Result<usize, VaeError> {
                let base = conv_transpose_out_len(f, self.kernel, self.stride, self.padding, 0).unwrap_or(usize::MAX);
                if t < base || t - base >= self.stride {
                    return Err(VaeError::Config(format!("no output padding maps {f} back to {t}")));
                }
                Ok(t - base)
            };
            output_padding.push((pad(target.0, from.0)?, pad(target.1, from.1)?));
        }
        Ok(VaePlan { sizes, output_padding })
    }

    fn flat(&self, plan: &VaePlan) -> usize {
        let (h, w) = *plan.sizes.last().expect("non-empty");
        self.conv_channels.last().copied().unwrap_or(0) * h * w
    }

    fn meta(&self) -> Vec<f32> {
        let mut v = vec![self.height, self.width, self.channels, self.latent, self.kernel, self.stride, self.padding];
        v.extend(&self.conv_channels);
        v.into_iter().map(|x| x as f32).collect()
    }

    fn from_meta(v: &[f32]) -> Result<Self, VaeError> {
        if v.len() < 8 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(VaeError::Config("malformed meta.config tensor".into()));
        }
        let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
        Ok(Self { height: u[0], width: u[1], channels: u[2], latent: u[3], kernel: u[4], stride: u[5], padding: u[6], conv_channels: u[7..].to_vec() })
    }
}

/// Per-frame latent Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

/// `z = μ + exp(log σ² / 2) · ε`, `ε ~ N(0, I)`.
pub fn sample_latent(g: &LatentGaussian, rng: &mut ChaCha8Rng) -> Vec<f32> {
    g.mu.iter()
        .zip(&g.logvar)
        .map(|(&m, &lv)| {
            let eps: f32 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * eps
        })
        .collect()
}

/// Tape handles of one bound copy of the VAE parameters.
pub struct VaeVars {
    vars: Vec<Var>,
}

impl VaeVars {
    /// Handles in parameter order, e.g. for tensors placed on the tape by the caller.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn as_slice(&self) -> &[Var] {
        &self.vars
    }
}

/// Outputs of one batched forward pass on a tape.
pub struct VaeForward {
    pub mu: Var,
    pub logvar: Var,
    /// Decoder pre-sigmoid output `[n, c, h, w]`.
    pub logits: Var,
    pub recon: Var,
    pub kl: Var,
    /// `(recon + β · kl) / n`.
    pub loss: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub plan: VaePlan,
    pub params: ParamSet,
}

impl VaeModel {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Result<Self, VaeError> {
        let plan = config.plan()?;
        let k = config.kernel;
        let mut params = ParamSet::new();
        let mut cin = config.channels;
        for (i, &c) in config.conv_channels.iter().enumerate() {
            params.push_he(&format!("enc.conv{i}.w"), &[c, cin, k, k], cin * k * k, rng);
            params.push(format!("enc.conv{i}.b"), Tensor::zeros(&[c]));
            cin = c;
        }
        let flat = config.flat(&plan);
        let l = config.latent;
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f32).sqrt();
        params.push_uniform("enc.mu.w", &[flat, l], xavier(flat, l), rng);
        params.push("enc.mu.b", Tensor::zeros(&[l]));
        params.push_uniform("enc.logvar.w", &[flat, l], 0.1 * xavier(flat, l), rng);
        params.push("enc.logvar.b", Tensor::zeros(&[l]));
        params.push_he("dec.dense.w", &[l, flat], l, rng);
        params.push("dec.dense.b", Tensor::zeros(&[flat]));
        let mut chans: Vec<usize> = config.conv_channels.iter().rev().copied().collect();
        chans.push(config.channels);
        for (i, pair) in chans.windows(2).enumerate() {
            let (ci, co) = (pair[0], pair[1]);
            params.push_he(&format!("dec.deconv{i}.w"), &[ci, co, k, k], ci * k * k / (config.stride * config.stride).max(1), rng);
            params.push(format!("dec.deconv{i}.b"), Tensor::zeros(&[co]));
        }
        Ok(Self { config, plan, params })
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> VaeVars {
        VaeVars { vars: if trainable { self.params.bind(tape) } else { self.params.bind_frozen(tape) } }
    }

    fn conv_spec(&self) -> ConvSpec {
        ConvSpec { stride: self.config.stride, padding: self.config.padding }
    }

    /// `x: [n, c, h, w]` one-hot → `(μ, log σ²)`, each `[n, L]`.
    pub fn encode_tape(&self, tape: &mut Tape, v: &VaeVars, x: Var) -> Result<(Var, Var), VaeError> {
        let want = [self.config.channels, self.config.height, self.config.width];
        let got = tape.value(x).shape().to_vec();
        if got.len() != 4 || got[1..] != want {
            return Err(VaeError::Shape { what: "vae input", expected: want.to_vec(), got });
        }
        let n = got[0];
        let mut h = x;
        let layers = self.config.conv_channels.len();
        for i in 0..layers {
            h = tape.conv2d(h, v.vars[2 * i], v.vars[2 * i + 1], self.conv_spec())?;
            h = tape.relu(h);
        }
        let flat = tape.reshape(h, &[n, self.config.flat(&self.plan)])?;
        let base = 2 * layers;
        let mu = tape.dense(flat, v.vars[base], v.vars[base + 1])?;
        let lv = tape.dense(flat, v.vars[base + 2], v.vars[base + 3])?;
        let lv = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, lv))
    }

    /// `z: [n, L]` → pre-sigmoid logits `[n, c, h, w]`.
    pub fn decode_tape(&self, tape: &mut Tape, v: &VaeVars, z: Var) -> Result<Var, VaeError> {
        let got = tape.value(z).shape().to_vec();
        if got.len() != 2 || got[1] != self.config.latent {
            return Err(VaeError::Shape { what: "latent batch", expected: vec![self.config.latent], got });
        }
        let n = got[0];
        let layers = self.config.conv_channels.len();
        let base = 2 * layers + 4;
        let d = tape.dense(z, v.vars[base], v.vars[base + 1])?;
        let d = tape.relu(d);
        let (h, w) = *self.plan.sizes.last().expect("non-empty");
        let mut x = tape.reshape(d, &[n, *self.config.conv_channels.last().expect("non-empty"), h, w])?;
        for i in 0..layers {
            let spec = ConvTransposeSpec { stride: self.config.stride, padding: self.config.padding, output_padding: self.plan.output_padding[i] };
            x = tape.conv2d_transpose(x, v.vars[base + 2 + 2 * i], v.vars[base + 3 + 2 * i], spec)?;
            if i + 1 < layers {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Full pass with the total loss. `noise` is the reparameterisation ε
    /// (`[n, L]`); `None` decodes from μ.
    pub fn forward_loss(&self, tape: &mut Tape, v: &VaeVars, x: Var, noise: Option<&Tensor>, beta: f32) -> Result<VaeForward, VaeError> {
        let n = tape.value(x).shape()[0];
        let (mu, logvar) = self.encode_tape(tape, v, x)?;
        let z = match noise {
            Some(eps) => {
                let eps = tape.constant(eps.clone());
                let half = tape.scale(logvar, 0.5);
                let sigma = tape.exp(half);
                let spread = tape.mul(sigma, eps)?;
                tape.add(mu, spread)?
            }
            None => mu,
        };
        let logits = self.decode_tape(tape, v, z)?;
        let recon = recon_loss_tape(tape, logits, x)?;
        let kl = kl_tape(tape, mu, logvar)?;
        let weighted = tape.scale(kl, beta);
        let total = tape.add(recon, weighted)?;
        let loss = tape.scale(total, 1.0 / n as f32);
        Ok(VaeForward { mu, logvar, logits, recon, kl, loss })
    }

    /// Latent Gaussians of a batch of frames.
    pub fn encode_frames(&self, frames: &[&Frame]) -> Result<Vec<LatentGaussian>, VaeError> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let v = self.bind(&mut tape, false);
        let x = tape.constant(frames_to_batch(frames, self.config.channels)?);
        let (mu, lv) = self.encode_tape(&mut tape, &v, x)?;
        let l = self.config.latent;
        let (mu, lv) = (tape.value(mu).data(), tape.value(lv).data());
        Ok((0..frames.len()).map(|i| LatentGaussian { mu: mu[i * l..(i + 1) * l].to_vec(), logvar: lv[i * l..(i + 1) * l].to_vec() }).collect())
    }

    pub fn encode(&self, frame: &Frame) -> Result<LatentGaussian, VaeError> {
        Ok(self.encode_frames(&[frame])?.remove(0))
    }

    /// Decodes a batch of latents into sigmoid probability frames.
    pub fn decode_batch(&self, zs: &[Vec<f32>]) -> Result<Vec<ProbFrame>, VaeError> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let l = self.config.latent;
        if let Some(bad) = zs.iter().find(|z| z.len() != l) {
            return Err(VaeError::Shape { what: "latent", expected: vec![l], got: vec![bad.len()] });
        }
        let mut tape = Tape::new();
        let v = self.bind(&mut tape, false);
        let z = tape.constant(Tensor::new(&[zs.len(), l], zs.concat())?);
        let logits = self.decode_tape(&mut tape, &v, z)?;
        let probs = tape.sigmoid(logits);
        let (c, h, w) = (self.config.channels, self.config.height, self.config.width);
        Ok(tape
            .value(probs)
            .data()
            .chunks_exact(c * h * w)
            .map(|chw| ProbFrame::new(h, w, c, chw_to_hwc(chw, c, h * w)).expect("decoder shape"))
            .collect())
    }

    pub fn decode(&self, z: &[f32]) -> Result<ProbFrame, VaeError> {
        Ok(self.decode_batch(&[z.to_vec()])?.remove(0))
    }

    /// Parameters plus `meta.*` tensors describing the architecture.
    pub fn to_checkpoint(&self) -> ParamSet {
        let mut p = self.params.clone();
        p.push("meta.config", Tensor::from_vec(self.config.meta()));
        let pads: Vec<f32> = self.plan.output_padding.iter().flat_map(|&(a, b)| [a as f32, b as f32]).collect();
        let n = self.plan.output_padding.len();
        p.push("meta.output_padding", Tensor::new(&[n, 2], pads).expect("padding shape"));
        p
    }

    pub fn from_checkpoint(ckpt: &ParamSet) -> Result<Self, VaeError> {
        let meta = ckpt.by_name("meta.config").ok_or_else(|| VaeError::Config("checkpoint has no meta.config".into()))?;
        let config = VaeConfig::from_meta(meta.data())?;
        let mut model = Self::new(config, &mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        if let Some(pads) = ckpt.by_name("meta.output_padding") {
            let stored: Vec<usize> = pads.data().iter().map(|&x| x as usize).collect();
            let planned: Vec<usize> = model.plan.output_padding.iter().flat_map(|&(a, b)| [a, b]).collect();
            if stored != planned {
                return Err(VaeError::Config(format!("checkpoint output padding {stored:?} disagrees with {planned:?}")));
            }
        }
        model.params.load_from(ckpt)?;
        Ok(model)
    }
}

fn chw_to_hwc(chw: &[f32], c: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0; chw.len()];
    for k in 0..c {
        for p in 0..plane {
            out[p * c + k] = chw[k * plane + p];
        }
    }
    out
}

/// One-hot `[n, c, h, w]` batch.
pub fn frames_to_batch(frames: &[&Frame], channels: usize) -> Result<Tensor, VaeError> {
    let (h, w) = (frames[0].height, frames[0].width);
    let plane = h * w;
    let mut data = vec![0.0f32; frames.len() * channels * plane];
    for (i, f) in frames.iter().enumerate() {
        if f.height != h || f.width != w {
            return Err(VaeError::Shape { what: "frame", expected: vec![h, w], got: vec![f.height, f.width] });
        }
        let base = i * channels * plane;
        for (p, &l) in f.labels.iter().enumerate() {
            if l as usize >= channels {
                return Err(VaeError::Category { label: l, channels });
            }
            data[base + l as usize * plane + p] = 1.0;
        }
    }
    Ok(Tensor::new(&[frames.len(), channels, h, w], data)?)
}

/// `Σ −P_true · log P̂` with `P̂ = (σ(logits) + ε) / Σ_c (σ(logits) + ε)`;
/// for one-hot targets this is the full KL between the per-pixel distributions.
pub fn recon_loss_tape(tape: &mut Tape, logits: Var, target: Var) -> Result<Var, VaeError> {
    let s = tape.sigmoid(logits);
    let s = tape.add_scalar(s, PROB_FLOOR);
    let log_s = tape.log(s);
    let log_p = tape.log_softmax(log_s, 1)?;
    let picked = tape.mul(log_p, target)?;
    let total = tape.reduce_sum(picked);
    Ok(tape.scale(total, -1.0))
}

/// `Σ ½ (exp(log σ²) + μ² − 1 − log σ²)` over the whole batch.
pub fn kl_tape(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var, VaeError> {
    let var = tape.exp(logvar);
    let mu2 = tape.mul(mu, mu)?;
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.reduce_sum(c);
    Ok(tape.scale(s, 0.5))
}

/// Per-pixel normalised decoded distribution `P̂`.
fn normalised(decoded: &[f32]) -> impl Iterator<Item = f64> + '_ {
    let total: f64 = decoded.iter().map(|&s| f64::from(s) + f64::from(PROB_FLOOR)).sum();
    decoded.iter().map(move |&s| (f64::from(s) + f64::from(PROB_FLOOR)) / total)
}

/// `Σ_pixels Σ_c P_true log(P_true / P̂)` with `0 · log 0 = 0`.
pub fn recon_kl_loss(truth: &ProbFrame, decoded: &ProbFrame) -> Result<f64, VaeError> {
    if (truth.height, truth.width, truth.channels) != (decoded.height, decoded.width, decoded.channels) {
        return Err(VaeError::Shape {
            what: "recon_kl_loss",
            expected: vec![truth.height, truth.width, truth.channels],
            got: vec![decoded.height, decoded.width, decoded.channels],
        });
    }
    let c = truth.channels;
    let mut loss = 0.0;
    for (t, d) in truth.values.chunks_exact(c).zip(decoded.values.chunks_exact(c)) {
        for (&p, q) in t.iter().zip(normalised(d)) {
            if p > 0.0 {
                loss += f64::from(p) * (f64::from(p) / q).ln();
            }
        }
    }
    Ok(loss)
}

/// Closed-form KL of `N(μ, σ²)` from the unit normal, summed over dimensions.
pub fn latent_kl(g: &LatentGaussian) -> f64 {
    g.mu.iter().zip(&g.logvar).map(|(&m, &lv)| 0.5 * (f64::from(lv).exp() + f64::from(m) * f64::from(m) - 1.0 - f64::from(lv))).sum()
}

pub fn vae_total_loss(truth: &ProbFrame, decoded: &ProbFrame, g: &LatentGaussian, beta: f64) -> Result<f64, VaeError> {
    Ok(recon_kl_loss(truth, decoded)? + beta * latent_kl(g))
}
