//! LSTM with a mixture density head over the next latent.

mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::ActionVector;
use crate::numerics::{lstm_cell, LstmVars, NumericsError, ParamSet, Tape, Tensor, Var};

pub use train::{train_lstm, LstmTrainConfig, LstmTraining, StepRecord};

pub const LOGSTD_MIN: f32 = -10.0;
pub const LOGSTD_MAX: f32 = 10.0;
/// Smallest temperature used to divide logits.
pub const TAU_FLOOR: f32 = 1e-6;
const HALF_LOG_TAU: f32 = 0.918_938_5;

#[derive(Debug, thiserror::Error)]
pub enum MdnError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("mdn config: {0}")]
    Config(String),
    #[error("{what}: expected width {expected}, got {got}")]
    Width { what: &'static str, expected: usize, got: usize },
    #[error("non-finite negative log-likelihood")]
    NonFinite,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdnConfig {
    pub latent: usize,
    pub hidden: usize,
    pub components: usize,
}

impl Default for MdnConfig {
    fn default() -> Self {
        Self { latent: 50, hidden: 512, components: 5 }
    }
}

impl MdnConfig {
    pub fn input_width(&self) -> usize {
        self.latent + ActionVector::WIDTH
    }

    /// Head width: logits, mean offsets and log-stds for every latent dimension.
    pub fn output_width(&self) -> usize {
        self.latent * 3 * self.components
    }
}

/// Mixture over one latent vector; every field is `L × K`, row-major by dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnParams {
    pub latent: usize,
    pub components: usize,
    pub logits: Vec<f32>,
    pub means: Vec<f32>,
    pub logstds: Vec<f32>,
}

impl MdnParams {
    fn dim(&self, i: usize) -> (&[f32], &[f32], &[f32]) {
        let k = self.components;
        let r = i * k..(i + 1) * k;
        (&self.logits[r.clone()], &self.means[r.clone()], &self.logstds[r])
    }

    /// Mixture weights of dimension `i` at temperature `tau`.
    pub fn weights(&self, i: usize, tau: f32) -> Vec<f32> {
        let (logits, _, _) = self.dim(i);
        let t = tau.max(TAU_FLOOR);
        let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b / t));
        let e: Vec<f32> = logits.iter().map(|&x| (x / t - m).exp()).collect();
        let s: f32 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    /// Expected value `Σ_k π_k μ_k` per dimension with weights `softmax(logits / τ)`.
    /// At `τ = 0` this is the mean of the arg-max component, as `sample_mdn` picks it.
    pub fn mixture_mean(&self, tau: f32) -> Vec<f32> {
        (0..self.latent)
            .map(|i| {
                let (logits, mu, _) = self.dim(i);
                if tau <= 0.0 {
                    return mu[argmax(logits)];
                }
                self.weights(i, tau).iter().zip(mu).map(|(w, m)| w * m).sum()
            })
            .collect()
    }
}

/// First index of the largest value.
fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Samples one latent: component from `softmax(logits / τ)`, value from
/// `N(μ, σ² τ)`. At `τ = 0` this is the mean of the arg-max component (lowest index on ties).
pub fn sample_mdn(params: &MdnParams, tau: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..params.latent)
        .map(|i| {
            let (logits, mu, logstd) = params.dim(i);
            if tau <= 0.0 {
                return mu[argmax(logits)];
            }
            let w = params.weights(i, tau);
            let u: f32 = rng.gen();
            let mut acc = 0.0;
            let mut k = w.len() - 1;
            for (j, &p) in w.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = j;
                    break;
                }
            }
            let eps: f32 = rng.sample(StandardNormal);
            mu[k] + logstd[k].exp() * tau.sqrt() * eps
        })
        .collect()
}

/// `−Σ_i log Σ_k π_ik N(target_i; μ_ik, σ_ik²)`, accumulated in f64.
pub fn mdn_nll(params: &MdnParams, target: &[f32]) -> Result<f64, MdnError> {
    if target.len() != params.latent {
        return Err(MdnError::Width { what: "mdn_nll target", expected: params.latent, got: target.len() });
    }
    let mut nll = 0.0f64;
    for (i, &x) in target.iter().enumerate() {
        let (logits, mu, logstd) = params.dim(i);
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
        let lse = m + logits.iter().map(|&l| (f64::from(l) - m).exp()).sum::<f64>().ln();
        let terms: Vec<f64> = (0..params.components)
            .map(|k| {
                let s = f64::from(logstd[k]);
                let u = (f64::from(x) - f64::from(mu[k])) / s.exp();
                f64::from(logits[k]) - lse - 0.5 * u * u - s - f64::from(HALF_LOG_TAU)
            })
            .collect();
        let tm = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        nll -= tm + terms.iter().map(|t| (t - tm).exp()).sum::<f64>().ln();
    }
    if !nll.is_finite() {
        return Err(MdnError::NonFinite);
    }
    Ok(nll)
}

/// Hidden and cell state, `batch × hidden` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub batch: usize,
    pub hidden: usize,
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self { batch, hidden, h: vec![0.0; batch * hidden], c: vec![0.0; batch * hidden] }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }

    /// Rows `rows` of a batched state, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let hd = self.hidden;
        let pick = |v: &[f32]| rows.iter().flat_map(|&r| v[r * hd..(r + 1) * hd].iter().copied()).collect();
        Self { batch: rows.len(), hidden: hd, h: pick(&self.h), c: pick(&self.c) }
    }
}

/// Tape handles of the model's parameters.
pub struct LstmModelVars {
    cell: LstmVars,
    head_w: Var,
    head_b: Var,
    all: Vec<Var>,
}

impl LstmModelVars {
    /// Handles in parameter order: `lstm.wx`, `lstm.wh`, `lstm.b`, `mdn.w`, `mdn.b`.
    pub fn from_vars(all: Vec<Var>) -> Result<Self, MdnError> {
        if all.len() != 5 {
            return Err(MdnError::Config(format!("expected 5 parameter handles, got {}", all.len())));
        }
        Ok(Self { cell: LstmVars { wx: all[0], wh: all[1], b: all[2] }, head_w: all[3], head_b: all[4], all })
    }

    pub fn as_slice(&self) -> &[Var] {
        &self.all
    }
}

/// Tape outputs of one step for a batch.
pub struct StepVars {
    pub logits: Var,
    pub means: Var,
    pub logstds: Var,
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    pub config: MdnConfig,
    pub params: ParamSet,
}

impl LstmModel {
    pub fn new(config: MdnConfig, rng: &mut impl Rng) -> Result<Self, MdnError> {
        if config.latent == 0 || config.hidden == 0 || config.components == 0 {
            return Err(MdnError::Config("latent, hidden and components must be positive".into()));
        }
        let (i, h) = (config.input_width(), config.hidden);
        let mut params = ParamSet::new();
        let bound = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f32).sqrt();
        params.push_uniform("lstm.wx", &[i, 4 * h], bound(i, h), rng);
        params.push_uniform("lstm.wh", &[h, 4 * h], bound(h, h), rng);
        let mut b = vec![0.0f32; 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        params.push("lstm.b", Tensor::from_vec(b));
        let out = config.output_width();
        params.push_uniform("mdn.w", &[h, out], 0.1 * bound(h, out), rng);
        params.push("mdn.b", Tensor::zeros(&[out]));
        Ok(Self { config, params })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LstmModelVars {
        let all = if trainable { self.params.bind(tape) } else { self.params.bind_frozen(tape) };
        LstmModelVars::from_vars(all).expect("five lstm parameters")
    }

    /// One recurrent step on a tape. `z: [B, L]` is data; `x` carries `[z ‖ a]`.
    /// Means are offsets added to the input latent.
    pub fn step_tape(&self, tape: &mut Tape, v: &LstmModelVars, z: &[f32], x: Var, h: Var, c: Var) -> Result<StepVars, MdnError> {
        let (l, k) = (self.config.latent, self.config.components);
        let width = tape.value(x).shape().get(1).copied().unwrap_or(0);
        if width != self.config.input_width() {
            return Err(MdnError::Width { what: "lstm input", expected: self.config.input_width(), got: width });
        }
        let batch = tape.value(x).shape()[0];
        let (h, c) = lstm_cell(tape, x, h, c, v.cell)?;
        let out = tape.dense(h, v.head_w, v.head_b)?;
        let out = tape.reshape(out, &[batch, l, 3 * k])?;
        let logits = tape.slice(out, 2, 0, k)?;
        let offsets = tape.slice(out, 2, k, k)?;
        let logstds = tape.slice(out, 2, 2 * k, k)?;
        let logstds = tape.clamp(logstds, LOGSTD_MIN, LOGSTD_MAX);
        let base: Vec<f32> = z.iter().flat_map(|&zi| std::iter::repeat(zi).take(k)).collect();
        let base = tape.constant(Tensor::new(&[batch, l, k], base)?);
        let means = tape.add(base, offsets)?;
        Ok(StepVars { logits, means, logstds, h, c })
    }

    fn input(&self, zs: &[f32], actions: &[ActionVector]) -> Result<Tensor, MdnError> {
        let l = self.config.latent;
        if zs.len() != actions.len() * l {
            return Err(MdnError::Width { what: "lstm latent batch", expected: actions.len() * l, got: zs.len() });
        }
        let mut x = Vec::with_capacity(actions.len() * (l + 3));
        for (z, a) in zs.chunks_exact(l).zip(actions) {
            x.extend_from_slice(z);
            x.extend_from_slice(&a.to_array());
        }
        Ok(Tensor::new(&[actions.len(), l + 3], x)?)
    }

    /// Batched inference step: `zs` is `B × L`, one action per row.
    pub fn forward_batch(&self, zs: &[f32], actions: &[ActionVector], state: &LstmState) -> Result<(Vec<MdnParams>, LstmState), MdnError> {
        let b = actions.len();
        let hd = self.config.hidden;
        if state.batch != b || state.hidden != hd {
            return Err(MdnError::Width { what: "lstm state", expected: b * hd, got: state.batch * state.hidden });
        }
        let mut tape = Tape::new();
        let v = self.bind(&mut tape, false);
        let x = tape.constant(self.input(zs, actions)?);
        let h = tape.constant(Tensor::new(&[b, hd], state.h.clone())?);
        let c = tape.constant(Tensor::new(&[b, hd], state.c.clone())?);
        let s = self.step_tape(&mut tape, &v, zs, x, h, c)?;
        let (l, k) = (self.config.latent, self.config.components);
        let per = l * k;
        let split = |var: Var| tape.value(var).data().chunks_exact(per).map(<[f32]>::to_vec).collect::<Vec<_>>();
        let (lg, mu, ls) = (split(s.logits), split(s.means), split(s.logstds));
        let params = lg
            .into_iter()
            .zip(mu)
            .zip(ls)
            .map(|((logits, means), logstds)| MdnParams { latent: l, components: k, logits, means, logstds })
            .collect();
        let next = LstmState { batch: b, hidden: hd, h: tape.value(s.h).data().to_vec(), c: tape.value(s.c).data().to_vec() };
        Ok((params, next))
    }

    /// One step for a single sequence.
    pub fn lstm_forward(&self, z: &[f32], a: &ActionVector, state: &LstmState) -> Result<(MdnParams, LstmState), MdnError> {
        let (mut p, s) = self.forward_batch(z, std::slice::from_ref(a), state)?;
        Ok((p.remove(0), s))
    }

    /// Runs `r` closed-loop steps from `z0`, feeding each sample back as the next input.
    pub fn predict_rollout(&self, z0: &[f32], actions: &[ActionVector], r: usize, tau: f32, state: &LstmState, rng: &mut ChaCha8Rng) -> Result<Rollout, MdnError> {
        let mut out = Rollout { params: Vec::with_capacity(r), samples: Vec::with_capacity(r), state: state.clone() };
        if r == 0 {
            return Ok(out);
        }
        if actions.len() < r {
            return Err(MdnError::Width { what: "rollout actions", expected: r, got: actions.len() });
        }
        let mut z = z0.to_vec();
        for a in &actions[..r] {
            let (p, s) = self.lstm_forward(&z, a, &out.state)?;
            z = sample_mdn(&p, tau, rng);
            out.params.push(p);
            out.samples.push(z.clone());
            out.state = s;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> ParamSet {
        let mut p = self.params.clone();
        let c = &self.config;
        p.push("meta.config", Tensor::from_vec(vec![c.latent as f32, c.hidden as f32, c.components as f32]));
        p
    }

    pub fn from_checkpoint(ckpt: &ParamSet) -> Result<Self, MdnError> {
        let meta = ckpt.by_name("meta.config").ok_or_else(|| MdnError::Config("checkpoint has no meta.config".into()))?;
        let m = meta.data();
        if m.len() != 3 {
            return Err(MdnError::Config("malformed meta.config tensor".into()));
        }
        let config = MdnConfig { latent: m[0] as usize, hidden: m[1] as usize, components: m[2] as usize };
        let mut model = Self::new(config, &mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        model.params.load_from(ckpt)?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub params: Vec<MdnParams>,
    pub samples: Vec<Vec<f32>>,
    pub state: LstmState,
}

/// Tape NLL of `target` (`[B, L]`, data) under a step's mixture, summed over
/// dimensions and batch.
pub fn mdn_nll_tape(tape: &mut Tape, step: &StepVars, target: &[f32], components: usize) -> Result<Var, MdnError> {
    let shape = tape.value(step.means).shape().to_vec();
    if target.len() * components != shape.iter().product::<usize>() {
        return Err(MdnError::Width { what: "mdn target", expected: shape[0] * shape[1], got: target.len() });
    }
    let rep: Vec<f32> = target.iter().flat_map(|&t| std::iter::repeat(t).take(components)).collect();
    let t = tape.constant(Tensor::new(&shape, rep)?);
    let diff = tape.sub(t, step.means)?;
    let neg = tape.scale(step.logstds, -1.0);
    let inv = tape.exp(neg);
    let u = tape.mul(diff, inv)?;
    let u2 = tape.mul(u, u)?;
    let quad = tape.scale(u2, -0.5);
    let log_n = tape.sub(quad, step.logstds)?;
    let log_n = tape.add_scalar(log_n, -HALF_LOG_TAU);
    let log_pi = tape.log_softmax(step.logits, 2)?;
    let joint = tape.add(log_pi, log_n)?;
    let lse = tape.logsumexp(joint, 2)?;
    let total = tape.reduce_sum(lse);
    Ok(tape.scale(total, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn single(logits: Vec<f32>, means: Vec<f32>, logstds: Vec<f32>) -> MdnParams {
        MdnParams { latent: 1, components: logits.len(), logits, means, logstds }
    }

    #[test]
    fn unit_gaussian_nll() {
        let p = single(vec![0.0], vec![0.3], vec![0.0]);
        assert!((mdn_nll(&p, &[0.3]).unwrap() - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-6);
    }

    #[test]
    fn far_negligible_component_is_ignored() {
        let a = single(vec![0.0], vec![0.0], vec![0.0]);
        let b = single(vec![0.0, -40.0], vec![0.0, 50.0], vec![0.0, 0.0]);
        assert!((mdn_nll(&a, &[0.2]).unwrap() - mdn_nll(&b, &[0.2]).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn nll_falls_as_mean_approaches_target() {
        let far = single(vec![2.0, 0.0], vec![3.0, -1.0], vec![0.0, 0.0]);
        let near = single(vec![2.0, 0.0], vec![1.0, -1.0], vec![0.0, 0.0]);
        assert!(mdn_nll(&near, &[0.5]).unwrap() < mdn_nll(&far, &[0.5]).unwrap());
    }

    #[test]
    fn zero_temperature_is_argmax_mean() {
        let p = single(vec![0.7, 0.3], vec![1.0, -1.0], vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_mdn(&p, 0.0, &mut rng), vec![1.0]);
        let tie = single(vec![0.5, 0.5], vec![2.0, -2.0], vec![0.0, 0.0]);
        assert_eq!(sample_mdn(&tie, 0.0, &mut rng), vec![2.0]);
    }

    #[test]
    fn weights_sum_to_one() {
        let p = single(vec![0.1, -2.0, 3.0], vec![0.0; 3], vec![0.0; 3]);
        for tau in [1e-3, 0.4, 1.0] {
            assert!((p.weights(0, tau).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn widths_at_full_defaults() {
        let c = MdnConfig::default();
        assert_eq!(c.input_width(), 53);
        assert_eq!(c.output_width(), 750);
    }

    #[test]
    fn forward_is_deterministic_and_checkpointable() {
        let cfg = MdnConfig { latent: 4, hidden: 8, components: 2 };
        let m = LstmModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = LstmState::zeros(1, 8);
        let a = ActionVector { moved: 1.0, body_yaw: 0.5, head_yaw: 0.0 };
        let one = m.lstm_forward(&[0.1, 0.2, 0.3, 0.4], &a, &s).unwrap();
        let two = m.lstm_forward(&[0.1, 0.2, 0.3, 0.4], &a, &s).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.0.logits.len(), 8);
        let back = LstmModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
        assert!(m.lstm_forward(&[0.1, 0.2, 0.3], &a, &s).is_err());
    }
}
