//! File-backed stages shared by the CLI and the FFI layer. Every stage reads and
//! writes inside one run directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::dataset::{
    assemble_psi, read_episode, read_manifest, read_psi, split_dataset, write_episode, write_manifest, write_psi, DatasetError, DatasetManifest, EpisodeLog,
    ManifestEpisode, Split,
};
use crate::eval::{dream, emit_reports, encode_episode, error_series, persistence_baseline, predict_horizon, ErrorSeries, EvalError, StripSet};
use crate::mdn::{train_lstm, LstmModel, LstmTraining, MdnError};
use crate::numerics::{read_checkpoint, write_checkpoint, NumericsError};
use crate::render::{write_ppm, Frame, RenderError, SemanticPalette};
use crate::sim::{run_episode, SimError};
use crate::vae::{train_vae, VaeError, VaeModel, VaeTraining};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const VAE_FILE: &str = "vae.wts";
pub const LSTM_FILE: &str = "lstm.wts";
pub const PSI_FILE: &str = "psi.bin";
pub const EPISODE_DIR: &str = "episodes";
pub const EVAL_DIR: &str = "eval";
pub const DREAM_DIR: &str = "dream";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Mdn(#[from] MdnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {what} at {path}")]
    Missing { what: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Seed of episode `index` in a dataset generated from `base`.
pub fn episode_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

fn require(path: PathBuf, what: &'static str) -> Result<PathBuf, PipelineError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::Missing { what, path })
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Simulates and records `episodes` episodes, assigning the VAE split.
pub fn simulate(cfg: &PipelineConfig, episodes: usize, seed: u64, dir: &Path) -> Result<DatasetManifest, PipelineError> {
    let ep_dir = dir.join(EPISODE_DIR);
    fs::create_dir_all(&ep_dir).map_err(io_err(&ep_dir))?;
    let palette = SemanticPalette::with_channels(cfg.vae.channels)?;
    let splits = if episodes >= 2 { split_dataset(episodes, cfg.vae_split, cfg.split_seed)? } else { vec![Split::Train; episodes] };
    let mut entries = Vec::with_capacity(episodes);
    let mut frame_count = 0;
    for (i, split) in splits.into_iter().enumerate() {
        let s = episode_seed(seed, i);
        let run = run_episode(&cfg.scenario, s, &cfg.render, &palette)?;
        let file = format!("{EPISODE_DIR}/ep{i:04}.pwm");
        write_episode(&run.log, &dir.join(&file))?;
        log::info!("episode {i}: seed {s}, {} frames", run.log.len());
        frame_count += run.log.len();
        entries.push(ManifestEpisode { id: i, file, seed: s, frames: run.log.len(), split, psi: None });
    }
    let manifest = DatasetManifest {
        format_version: 1,
        height: cfg.render.height,
        width: cfg.render.width,
        channels: cfg.vae.channels,
        latent: None,
        palette: palette.names.clone(),
        split_ratio: cfg.vae_split,
        split_seed: cfg.split_seed,
        frame_count,
        episodes: entries,
        psi_file: None,
    };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    let json = serde_json::to_string_pretty(cfg).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    write_text(&dir.join(CONFIG_FILE), &(json + "\n"))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, PipelineError> {
    Ok(read_manifest(&require(dir.join(MANIFEST_FILE), "dataset manifest")?)?)
}

fn load_episodes(dir: &Path, m: &DatasetManifest, split: Option<Split>) -> Result<Vec<(usize, EpisodeLog)>, PipelineError> {
    m.episodes
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .map(|e| Ok((e.id, read_episode(&dir.join(&e.file))?)))
        .collect()
}

pub fn load_vae(path: &Path) -> Result<VaeModel, PipelineError> {
    Ok(VaeModel::from_checkpoint(&read_checkpoint(&require(path.to_path_buf(), "VAE checkpoint")?)?)?)
}

pub fn load_lstm(path: &Path) -> Result<LstmModel, PipelineError> {
    Ok(LstmModel::from_checkpoint(&read_checkpoint(&require(path.to_path_buf(), "LSTM checkpoint")?)?)?)
}

pub fn train_vae_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<VaeTraining, PipelineError> {
    let m = load_manifest(dir)?;
    let train = load_episodes(dir, &m, Some(Split::Train))?;
    let val = load_episodes(dir, &m, Some(Split::Validation))?;
    let tf: Vec<&[Frame]> = train.iter().map(|(_, l)| l.frames.as_slice()).collect();
    let vf: Vec<&[Frame]> = val.iter().map(|(_, l)| l.frames.as_slice()).collect();
    let out = train_vae(&cfg.vae, &tf, &vf, &cfg.vae_train, seed)?;
    write_checkpoint(&out.model.to_checkpoint(), &dir.join(VAE_FILE))?;
    let mut csv = String::from("epoch,train_loss,val_loss,val_recon\n");
    for r in &out.history {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_loss, r.val_recon));
    }
    write_text(&dir.join("vae_history.csv"), &csv)?;
    Ok(out)
}

/// Encodes every episode with the VAE and writes the Ψ table next to the manifest.
pub fn encode_stage(dir: &Path, vae_path: &Path) -> Result<DatasetManifest, PipelineError> {
    let vae = load_vae(vae_path)?;
    let mut m = load_manifest(dir)?;
    let mut encoded = Vec::with_capacity(m.episodes.len());
    for (_, log) in load_episodes(dir, &m, None)? {
        encoded.push(encode_episode(&vae, &log)?);
    }
    let (psi, segments, _) = assemble_psi(&encoded)?;
    write_psi(&psi, &dir.join(PSI_FILE))?;
    for (e, seg) in m.episodes.iter_mut().zip(segments) {
        e.psi = Some(seg);
    }
    m.latent = Some(vae.latent());
    m.psi_file = Some(PSI_FILE.to_string());
    write_manifest(&m, &dir.join(MANIFEST_FILE))?;
    Ok(m)
}

pub fn train_lstm_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<LstmTraining, PipelineError> {
    let m = load_manifest(dir)?;
    let psi_name = m.psi_file.clone().ok_or_else(|| PipelineError::Missing { what: "Ψ table (run encode first)", path: dir.join(PSI_FILE) })?;
    let psi = read_psi(&require(dir.join(psi_name), "Ψ table")?)?;
    let splits = split_dataset(m.episodes.len(), cfg.lstm_split, m.split_seed)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (e, s) in m.episodes.iter().zip(splits) {
        let seg = e.psi.ok_or_else(|| PipelineError::Invalid(format!("episode {} has no Ψ segment", e.id)))?;
        if s == Split::Train { train.push(seg) } else { val.push(seg) }
    }
    let out = train_lstm(&cfg.mdn, &psi, &train, &val, &cfg.lstm_train, seed)?;
    write_checkpoint(&out.model.to_checkpoint(), &dir.join(LSTM_FILE))?;
    let mut csv = String::from("step,train_nll,val_nll\n");
    for r in &out.history {
        csv.push_str(&format!("{},{:.6},{:.6}\n", r.step, r.train_nll, r.val_nll));
    }
    write_text(&dir.join("lstm_history.csv"), &csv)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EvaluationOutput {
    pub series: Vec<ErrorSeries>,
    pub baseline: Vec<ErrorSeries>,
    pub files: Vec<PathBuf>,
}

fn decode_labels(vae: &VaeModel, zs: &[Vec<f32>]) -> Result<Vec<Frame>, PipelineError> {
    let mut out = Vec::with_capacity(zs.len());
    for chunk in zs.chunks(128) {
        out.extend(vae.decode_batch(chunk)?.iter().map(|p| p.argmax()));
    }
    Ok(out)
}

/// Error series for every validation episode and horizon, the persistence
/// baseline, and strips for the first `strip_episodes` episodes.
pub fn evaluate_stage(cfg: &PipelineConfig, dir: &Path, vae_path: &Path, lstm_path: &Path, strip_episodes: usize) -> Result<EvaluationOutput, PipelineError> {
    cfg.eval.validate()?;
    let vae = load_vae(vae_path)?;
    let lstm = load_lstm(lstm_path)?;
    let m = load_manifest(dir)?;
    let palette = SemanticPalette::with_channels(m.channels)?;
    let episodes = load_episodes(dir, &m, Some(Split::Validation))?;
    let (mut series, mut baseline) = (Vec::new(), Vec::new());
    let mut strip_data = Vec::new();
    for (n, (id, log)) in episodes.iter().enumerate() {
        let enc = encode_episode(&vae, log)?;
        let mut predicted: Vec<(usize, Vec<Vec<f32>>)> = Vec::new();
        for &r in &cfg.eval.horizons {
            let pred = predict_horizon(&lstm, &enc, r, &cfg.eval)?;
            series.push(error_series(*id, &enc, &pred, r)?);
            baseline.push(persistence_baseline(*id, &enc, r)?);
            predicted.push((r, pred));
        }
        if n < strip_episodes {
            let mus: Vec<Vec<f32>> = (0..enc.len()).map(|t| enc.mu_at(t).to_vec()).collect();
            let decoded = decode_labels(&vae, &mus)?;
            let horizon_frames = |r: usize| -> Result<Vec<Option<Frame>>, PipelineError> {
                let Some((_, pred)) = predicted.iter().find(|(h, _)| *h == r) else { return Ok(vec![None; enc.len()]) };
                let mut v = vec![None; r];
                v.extend(decode_labels(&vae, pred)?.into_iter().map(Some));
                Ok(v)
            };
            let p8 = horizon_frames(8)?;
            let p16 = horizon_frames(16)?;
            let d = dream(&vae, &lstm, &log.frames[0], &log.actions, cfg.eval.dream_tau, log.len(), cfg.eval.seed)?;
            // Dream step i shows the prediction for frame i + 1.
            let mut dream_frames = vec![Frame::filled(log.frames[0].height, log.frames[0].width, 0)];
            dream_frames.extend(d.frames.iter().map(|p| p.argmax()));
            strip_data.push((*id, decoded, p8, p16, dream_frames));
        }
    }
    if series.is_empty() {
        return Err(PipelineError::Invalid("no validation episodes to evaluate".into()));
    }
    let step = cfg.strip_every.max(1);
    let strips: Vec<StripSet<'_>> = strip_data
        .iter()
        .map(|(id, decoded, p8, p16, dream_frames)| {
            let log = &episodes.iter().find(|(i, _)| i == id).expect("strip episode").1;
            StripSet {
                episode: *id,
                original: &log.frames,
                decoded,
                predict8: p8,
                predict16: p16,
                dream: dream_frames,
                steps: (0..log.len()).step_by(step).collect(),
            }
        })
        .collect();
    let files = emit_reports(&series, &baseline, &strips, &palette, &dir.join(EVAL_DIR))?;
    Ok(EvaluationOutput { series, baseline, files })
}

/// Dreams from the first frame of `episode`, writing latents and one PPM per step.
pub fn dream_stage(dir: &Path, vae_path: &Path, lstm_path: &Path, episode: usize, steps: usize, tau: f32, seed: u64) -> Result<Vec<PathBuf>, PipelineError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(PipelineError::Invalid(format!("temperature {tau} outside [0, 1]")));
    }
    let vae = load_vae(vae_path)?;
    let lstm = load_lstm(lstm_path)?;
    let m = load_manifest(dir)?;
    let entry = m.episodes.iter().find(|e| e.id == episode).ok_or_else(|| PipelineError::Invalid(format!("no episode {episode} in manifest")))?;
    let log = read_episode(&dir.join(&entry.file))?;
    let palette = SemanticPalette::with_channels(m.channels)?;
    let d = dream(&vae, &lstm, &log.frames[0], &log.actions, tau, steps, seed)?;
    let out = dir.join(DREAM_DIR);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut files = Vec::with_capacity(steps + 1);
    let mut csv = String::from("step");
    for i in 0..vae.latent() {
        csv.push_str(&format!(",z{i}"));
    }
    csv.push('\n');
    for (i, z) in d.latents.iter().enumerate() {
        csv.push_str(&i.to_string());
        for v in z {
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    let p = out.join("latents.csv");
    write_text(&p, &csv)?;
    files.push(p);
    for (i, f) in d.frames.iter().enumerate() {
        let frame = f.argmax();
        let p = out.join(format!("dream_{i:04}.ppm"));
        write_ppm(&p, frame.width, frame.height, &frame.to_rgb(&palette))?;
        files.push(p);
    }
    Ok(files)
}
