//! Horizon evaluation, the persistence baseline, dreams and report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ActionVector, DatasetError, EncodedEpisode, EpisodeLog};
use crate::mdn::{sample_mdn, LstmModel, LstmState, MdnError};
use crate::render::{write_ppm_to, Frame, ProbFrame, RenderError, SemanticPalette};
use crate::vae::{VaeError, VaeModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Mdn(#[from] MdnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("evaluation: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    /// Temperature of intermediate rollout samples.
    pub tau: f32,
    pub dream_tau: f32,
    /// Steps of recorded history seen by the network before its last prediction;
    /// a rollout of `r` steps is preceded by `context − r` teacher-forced steps.
    pub context: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizons: vec![1, 8, 16], tau: 0.0, dream_tau: 0.4, context: 32, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(EvalError::Config("horizons must be non-empty and ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.dream_tau) {
            return Err(EvalError::Config("temperatures must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Errors `e_t` for `t = horizon, horizon + 1, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub episode: usize,
    pub horizon: usize,
    pub errors: Vec<f64>,
}

impl ErrorSeries {
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.horizon).and_then(|i| self.errors.get(i).copied())
    }

    pub fn mean(&self) -> f64 {
        mean(&self.errors)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum::<f64>().sqrt()
}

const ENCODE_BATCH: usize = 128;

pub fn encode_episode(vae: &VaeModel, log: &EpisodeLog) -> Result<EncodedEpisode, EvalError> {
    let l = vae.latent();
    let mut mu = Vec::with_capacity(log.len() * l);
    let mut logvar = Vec::with_capacity(log.len() * l);
    let frames: Vec<&Frame> = log.frames.iter().collect();
    for chunk in frames.chunks(ENCODE_BATCH) {
        for g in vae.encode_frames(chunk)? {
            mu.extend(g.mu);
            logvar.extend(g.logvar);
        }
    }
    Ok(EncodedEpisode { latent: l, mu, logvar, actions: log.actions.clone() })
}

fn check_episode(enc: &EncodedEpisode, r: usize) -> Result<(), EvalError> {
    if r == 0 {
        return Err(EvalError::Config("horizon must be ≥ 1".into()));
    }
    if enc.mu.len() != enc.len() * enc.latent {
        return Err(EvalError::Config("missing actions: action count differs from frame count".into()));
    }
    if enc.len() <= r {
        return Err(EvalError::Config(format!("episode of {} steps is too short for horizon {r}", enc.len())));
    }
    Ok(())
}

/// Predicted means `μ̂_t` for every `t ≥ r`. Each rollout starts from the encoded
/// `μ_{t−r}`, feeds recorded actions, and uses only steps before `t`. Intermediate
/// inputs are samples at `cfg.tau`; the last step reports the mixture's expected value.
pub fn predict_horizon(lstm: &LstmModel, enc: &EncodedEpisode, r: usize, cfg: &EvalConfig) -> Result<Vec<Vec<f32>>, EvalError> {
    check_episode(enc, r)?;
    let l = enc.latent;
    if lstm.config.latent != l {
        return Err(EvalError::Config(format!("lstm latent {} vs encoded latent {l}", lstm.config.latent)));
    }
    let starts: Vec<usize> = (0..enc.len() - r).collect();
    let b = starts.len();
    let hd = lstm.config.hidden;
    let warm = cfg.context.saturating_sub(r);
    let mut state = LstmState::zeros(b, hd);
    for j in 0..warm {
        // Row s consumes step s − warm + j; rows whose step precedes the episode stay at zero state.
        let steps: Vec<Option<usize>> = starts.iter().map(|&s| (s + j).checked_sub(warm)).collect();
        if steps.iter().all(Option::is_none) {
            continue;
        }
        let mut zs = Vec::with_capacity(b * l);
        let mut actions = Vec::with_capacity(b);
        for st in &steps {
            let t = st.unwrap_or(0);
            zs.extend_from_slice(enc.mu_at(t));
            actions.push(enc.actions[t]);
        }
        let (_, next) = lstm.forward_batch(&zs, &actions, &state)?;
        state = blend_rows(next, &state, &steps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::try_from(r).unwrap_or(u64::MAX));
    let mut zs: Vec<f32> = starts.iter().flat_map(|&s| enc.mu_at(s).iter().copied()).collect();
    let mut out = Vec::new();
    for k in 0..r {
        let actions: Vec<ActionVector> = starts.iter().map(|&s| enc.actions[s + k]).collect();
        let (params, next) = lstm.forward_batch(&zs, &actions, &state)?;
        state = next;
        if k + 1 == r {
            out = params.iter().map(|p| p.mixture_mean(1.0)).collect();
        } else {
            zs = params.iter().flat_map(|p| sample_mdn(p, cfg.tau, &mut rng)).collect();
        }
    }
    Ok(out)
}

fn blend_rows(next: LstmState, prev: &LstmState, steps: &[Option<usize>]) -> LstmState {
    let hd = next.hidden;
    let mut s = next;
    for (i, st) in steps.iter().enumerate() {
        if st.is_none() {
            s.h[i * hd..(i + 1) * hd].copy_from_slice(&prev.h[i * hd..(i + 1) * hd]);
            s.c[i * hd..(i + 1) * hd].copy_from_slice(&prev.c[i * hd..(i + 1) * hd]);
        }
    }
    s
}

/// `e_t = ‖μ̂_t − μ_t‖₂` for predictions indexed from `t = r`.
pub fn error_series(episode: usize, enc: &EncodedEpisode, predictions: &[Vec<f32>], r: usize) -> Result<ErrorSeries, EvalError> {
    check_episode(enc, r)?;
    if predictions.len() != enc.len() - r {
        return Err(EvalError::Config(format!("{} predictions for {} targets", predictions.len(), enc.len() - r)));
    }
    let errors = predictions.iter().enumerate().map(|(i, p)| euclidean(p, enc.mu_at(i + r))).collect();
    Ok(ErrorSeries { episode, horizon: r, errors })
}

pub fn evaluate_horizon(episode: usize, log: &EpisodeLog, vae: &VaeModel, lstm: &LstmModel, r: usize, cfg: &EvalConfig) -> Result<ErrorSeries, EvalError> {
    let enc = encode_episode(vae, log)?;
    let pred = predict_horizon(lstm, &enc, r, cfg)?;
    error_series(episode, &enc, &pred, r)
}

/// Predicts "nothing changes": `e_t = ‖μ_{t−r} − μ_t‖₂`.
pub fn persistence_baseline(episode: usize, enc: &EncodedEpisode, r: usize) -> Result<ErrorSeries, EvalError> {
    check_episode(enc, r)?;
    let errors = (r..enc.len()).map(|t| euclidean(enc.mu_at(t - r), enc.mu_at(t))).collect();
    Ok(ErrorSeries { episode, horizon: r, errors })
}

#[derive(Clone, Debug)]
pub struct Dream {
    /// Latents fed back into the loop, one per step.
    pub latents: Vec<Vec<f32>>,
    pub frames: Vec<ProbFrame>,
}

/// Closed loop from one encoded frame. Actions past the end of `actions` repeat the last one.
pub fn dream(vae: &VaeModel, lstm: &LstmModel, first: &Frame, actions: &[ActionVector], tau: f32, steps: usize, seed: u64) -> Result<Dream, EvalError> {
    let last = *actions.last().ok_or_else(|| EvalError::Config("dream needs at least one action".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vae.encode(first)?.mu;
    let mut state = LstmState::zeros(1, lstm.config.hidden);
    let mut latents = Vec::with_capacity(steps);
    for i in 0..steps {
        let a = actions.get(i).copied().unwrap_or(last);
        let (p, next) = lstm.lstm_forward(&z, &a, &state)?;
        state = next;
        z = sample_mdn(&p, tau, &mut rng);
        latents.push(z.clone());
    }
    let mut frames = Vec::with_capacity(steps);
    for chunk in latents.chunks(ENCODE_BATCH) {
        frames.extend(vae.decode_batch(chunk)?);
    }
    Ok(Dream { latents, frames })
}

/// Horizontal gap between strip panels, in pixels.
pub const STRIP_MARGIN: usize = 2;
pub const STRIP_PANELS: usize = 5;

pub fn strip_width(width: usize) -> usize {
    STRIP_PANELS * width + (STRIP_PANELS - 1) * STRIP_MARGIN
}

/// Per-timestep panels of one episode; `None` renders as a blank panel.
pub struct StripSet<'a> {
    pub episode: usize,
    pub original: &'a [Frame],
    pub decoded: &'a [Frame],
    pub predict8: &'a [Option<Frame>],
    pub predict16: &'a [Option<Frame>],
    pub dream: &'a [Frame],
    /// Timesteps to draw.
    pub steps: Vec<usize>,
}

/// Lays out original | decoded | predict-8 | predict-16 | dream as RGB.
pub fn compose_strip(panels: [Option<&Frame>; STRIP_PANELS], height: usize, width: usize, palette: &SemanticPalette) -> Vec<u8> {
    let sw = strip_width(width);
    let mut rgb = vec![255u8; sw * height * 3];
    for (p, panel) in panels.iter().enumerate() {
        let x0 = p * (width + STRIP_MARGIN);
        let Some(frame) = panel else {
            for row in 0..height {
                rgb[(row * sw + x0) * 3..(row * sw + x0 + width) * 3].fill(0);
            }
            continue;
        };
        let img = frame.to_rgb(palette);
        for row in 0..height {
            let src = &img[row * width * 3..(row + 1) * width * 3];
            rgb[(row * sw + x0) * 3..(row * sw + x0 + width) * 3].copy_from_slice(src);
        }
    }
    rgb
}

fn write_series_csv(path: &Path, series: &[ErrorSeries]) -> Result<(), EvalError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "episode,r,t,e").map_err(io_err(path))?;
    for s in series {
        for (i, e) in s.errors.iter().enumerate() {
            writeln!(w, "{},{},{},{e:.9}", s.episode, s.horizon, i + s.horizon).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn write_summary_csv(path: &Path, series: &[ErrorSeries]) -> Result<(), EvalError> {
    let mut horizons: Vec<usize> = series.iter().map(|s| s.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut out = String::from("r,count,mean,median,max\n");
    for r in horizons {
        let all: Vec<f64> = series.iter().filter(|s| s.horizon == r).flat_map(|s| s.errors.iter().copied()).collect();
        let max = all.iter().copied().fold(f64::NAN, f64::max);
        out.push_str(&format!("{r},{},{:.9},{:.9},{max:.9}\n", all.len(), mean(&all), median(&all)));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Writes `errors.csv`, `summary.csv`, the same pair for the baseline with a
/// `baseline_` prefix, and one PPM per requested strip under `strips/`.
pub fn emit_reports(series: &[ErrorSeries], baseline: &[ErrorSeries], strips: &[StripSet<'_>], palette: &SemanticPalette, outdir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if series.is_empty() {
        return Err(EvalError::Config("no error series to report".into()));
    }
    fs::create_dir_all(outdir).map_err(io_err(outdir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, s: &[ErrorSeries], summary: &str| -> Result<(), EvalError> {
        let p = outdir.join(name);
        write_series_csv(&p, s)?;
        let q = outdir.join(summary);
        write_summary_csv(&q, s)?;
        written.push(p);
        written.push(q);
        Ok(())
    };
    put("errors.csv", series, "summary.csv")?;
    if !baseline.is_empty() {
        put("baseline_errors.csv", baseline, "baseline_summary.csv")?;
    }
    if !strips.is_empty() {
        let dir = outdir.join("strips");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for set in strips {
            let Some(first) = set.original.first() else { continue };
            let (h, w) = (first.height, first.width);
            for &t in &set.steps {
                let panels = [
                    set.original.get(t),
                    set.decoded.get(t),
                    set.predict8.get(t).and_then(Option::as_ref),
                    set.predict16.get(t).and_then(Option::as_ref),
                    set.dream.get(t),
                ];
                let rgb = compose_strip(panels, h, w, palette);
                let p = dir.join(format!("ep{:04}_t{t:04}.ppm", set.episode));
                let file = fs::File::create(&p).map_err(io_err(&p))?;
                let mut bw = BufWriter::new(file);
                write_ppm_to(&mut bw, strip_width(w), h, &rgb).and_then(|()| bw.flush()).map_err(io_err(&p))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
