//! Episode recordings, the Ψ corpus and train/validation splits.

mod files;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::render::Frame;

pub use files::{read_episode, read_episode_from, read_manifest, read_psi, read_psi_from, write_episode, write_episode_to, write_manifest, write_psi, write_psi_to, EPISODE_MAGIC, EPISODE_VERSION, PSI_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Data(String),
}

/// Action taken between two consecutive frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionVector {
    /// 1.0 if the ego changed position during the step.
    pub moved: f32,
    /// World-frame body yaw divided by π.
    pub body_yaw: f32,
    /// Body-frame head yaw divided by π/2.
    pub head_yaw: f32,
}

impl ActionVector {
    pub const WIDTH: usize = 3;

    pub fn from_pose(moved: bool, body_yaw: f64, head_yaw: f64) -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        let body = crate::sim::wrap_angle(body_yaw) / PI;
        Self {
            moved: if moved { 1.0 } else { 0.0 },
            body_yaw: body.clamp(-1.0, 1.0) as f32,
            head_yaw: (head_yaw / FRAC_PI_2).clamp(-1.0, 1.0) as f32,
        }
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.moved, self.body_yaw, self.head_yaw]
    }

    pub fn from_slice(v: &[f32]) -> Self {
        Self { moved: v[0], body_yaw: v[1], head_yaw: v[2] }
    }

    pub fn is_valid(&self) -> bool {
        (self.moved == 0.0 || self.moved == 1.0) && self.body_yaw.abs() <= 1.0 && self.head_yaw.abs() <= 1.0
    }
}

/// Frames and actions of one episode; step `n` is index `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: Vec<Frame>,
    pub actions: Vec<ActionVector>,
}

impl EpisodeLog {
    pub fn new(seed: u64, height: usize, width: usize, channels: usize) -> Self {
        Self { seed, height, width, channels, frames: Vec::new(), actions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, frame: Frame, action: ActionVector) {
        self.frames.push(frame);
        self.actions.push(action);
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.frames.len() != self.actions.len() {
            return Err(DatasetError::Data(format!("{} frames but {} actions", self.frames.len(), self.actions.len())));
        }
        for (n, f) in self.frames.iter().enumerate() {
            if f.height != self.height || f.width != self.width || f.labels.len() != self.height * self.width {
                return Err(DatasetError::Data(format!("frame {n} is {}x{}, episode is {}x{}", f.height, f.width, self.height, self.width)));
            }
            if let Some(&l) = f.labels.iter().find(|&&l| l as usize >= self.channels) {
                return Err(DatasetError::Data(format!("frame {n} has category {l} with {} channels", self.channels)));
            }
        }
        Ok(())
    }
}

/// Per-frame latent Gaussians of one episode, plus its actions.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedEpisode {
    pub latent: usize,
    /// N×L, row-major.
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
    pub actions: Vec<ActionVector>,
}

impl EncodedEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn mu_at(&self, t: usize) -> &[f32] {
        &self.mu[t * self.latent..(t + 1) * self.latent]
    }

    pub fn logvar_at(&self, t: usize) -> &[f32] {
        &self.logvar[t * self.latent..(t + 1) * self.latent]
    }
}

/// Rows of one episode inside a Ψ table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsiSegment {
    pub start: usize,
    pub len: usize,
}

/// Ψ rows `[μ_t ‖ log σ²_t ‖ a_t ‖ μ_{t+1} ‖ log σ²_{t+1}]`, flat row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiTable {
    pub latent: usize,
    pub data: Vec<f32>,
}

impl PsiTable {
    pub fn width_for(latent: usize) -> usize {
        4 * latent + 3
    }

    pub fn width(&self) -> usize {
        Self::width_for(self.latent)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }
}

/// Pairs each step with its successor inside every episode. Episodes shorter
/// than two frames are skipped with a warning.
pub fn assemble_psi(episodes: &[EncodedEpisode]) -> Result<(PsiTable, Vec<PsiSegment>, Vec<String>), DatasetError> {
    let latent = episodes.first().map_or(0, |e| e.latent);
    let mut data = Vec::new();
    let mut segments = Vec::with_capacity(episodes.len());
    let mut warnings = Vec::new();
    let width = PsiTable::width_for(latent);
    for (i, e) in episodes.iter().enumerate() {
        if e.latent != latent || e.mu.len() != e.len() * latent || e.logvar.len() != e.len() * latent {
            return Err(DatasetError::Data(format!("episode {i} has inconsistent latent blocks")));
        }
        let start = data.len() / width.max(1);
        if e.len() < 2 {
            let msg = format!("episode {i} has {} frames and contributes no Ψ rows", e.len());
            log::warn!("{msg}");
            warnings.push(msg);
            segments.push(PsiSegment { start, len: 0 });
            continue;
        }
        for t in 0..e.len() - 1 {
            data.extend_from_slice(e.mu_at(t));
            data.extend_from_slice(e.logvar_at(t));
            data.extend_from_slice(&e.actions[t].to_array());
            data.extend_from_slice(e.mu_at(t + 1));
            data.extend_from_slice(e.logvar_at(t + 1));
        }
        segments.push(PsiSegment { start, len: e.len() - 1 });
    }
    Ok((PsiTable { latent, data }, segments, warnings))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Assigns whole episodes to train/validation. The first `round(ratio · n)`
/// entries of a seeded permutation train, so train sets for a fixed seed grow
/// monotonically with the ratio.
pub fn split_dataset(episodes: usize, ratio: f64, seed: u64) -> Result<Vec<Split>, DatasetError> {
    if episodes < 2 {
        return Err(DatasetError::Data(format!("need at least 2 episodes to split, got {episodes}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Data(format!("split ratio {ratio} is outside (0, 1)")));
    }
    let train = ((ratio * episodes as f64).round() as usize).clamp(1, episodes - 1);
    let mut order: Vec<usize> = (0..episodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Validation; episodes];
    for &i in &order[..train] {
        out[i] = Split::Train;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEpisode {
    pub id: usize,
    pub file: String,
    pub seed: u64,
    pub frames: usize,
    pub split: Split,
    /// Ψ rows contributed by this episode, once encoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiSegment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u16,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<usize>,
    pub palette: Vec<String>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub frame_count: usize,
    pub episodes: Vec<ManifestEpisode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_file: Option<String>,
}

impl DatasetManifest {
    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.episodes.iter().filter(|e| e.split == split).map(|e| e.id).collect()
    }
}
