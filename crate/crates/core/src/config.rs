//! Run profiles and structural constants.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{ActionVector, PsiTable};
use crate::eval::EvalConfig;
use crate::mdn::{LstmTrainConfig, MdnConfig};
use crate::numerics::AdamConfig;
use crate::render::RenderConfig;
use crate::sim::{ScenarioConfig, DT};
use crate::vae::{VaeConfig, VaeTrainConfig};

/// Episode length the batch size is quoted against (1610 rows = two episodes).
pub const NOMINAL_EPISODE_STEPS: usize = 805;
pub const HORIZONS: [usize; 3] = [1, 8, 16];

pub fn horizon_seconds(r: usize) -> f64 {
    r as f64 * DT
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(clap::ValueEnum)]
pub enum Profile {
    Full,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub render: RenderConfig,
    pub episodes: usize,
    /// Train fractions; the LSTM train set is contained in the VAE train set when its ratio is smaller.
    pub vae_split: f64,
    pub lstm_split: f64,
    pub split_seed: u64,
    pub vae: VaeConfig,
    pub vae_train: VaeTrainConfig,
    pub mdn: MdnConfig,
    pub lstm_train: LstmTrainConfig,
    pub eval: EvalConfig,
    pub dream_steps: usize,
    /// Strip images are written every this many steps.
    pub strip_every: usize,
}

impl PipelineConfig {
    pub fn full() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            render: RenderConfig::default(),
            episodes: 1000,
            vae_split: 0.9,
            lstm_split: 0.86,
            split_seed: 0,
            vae: VaeConfig::default(),
            vae_train: VaeTrainConfig { batch_size: 2 * NOMINAL_EPISODE_STEPS, ..VaeTrainConfig::default() },
            mdn: MdnConfig::default(),
            lstm_train: LstmTrainConfig { steps: 4_000_000, batch_rows: 2 * NOMINAL_EPISODE_STEPS, eval_every: 10_000, ..LstmTrainConfig::default() },
            eval: EvalConfig::default(),
            dream_steps: 800,
            strip_every: 25,
        }
    }

    pub fn desk() -> Self {
        let render = RenderConfig { height: 24, width: 40, ..RenderConfig::default() };
        Self {
            render,
            episodes: 60,
            vae_split: 50.0 / 60.0,
            lstm_split: 50.0 / 60.0,
            vae: VaeConfig { height: 24, width: 40, latent: 16, conv_channels: vec![16, 32, 64, 128], ..VaeConfig::default() },
            vae_train: VaeTrainConfig {
                epochs: 20,
                batch_size: 256,
                adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
                beta: 0.1,
                frame_stride: 8,
                val_stride: 8,
            },
            mdn: MdnConfig { latent: 16, hidden: 128, components: 5 },
            lstm_train: LstmTrainConfig { steps: 4000, batch_rows: 256, eval_every: 250, probe_windows: 64, ..LstmTrainConfig::default() },
            dream_steps: 200,
            ..Self::full()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Full => Self::full(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Profile defaults with a JSON object merged on top; unknown keys are rejected.
    pub fn with_overrides(profile: Profile, json: &str) -> Result<Self, ConfigError> {
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        let patch: Value = serde_json::from_str(json)?;
        if !patch.is_object() {
            return Err(ConfigError::Invalid("top level must be a JSON object".into()));
        }
        merge(&mut base, patch);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.render;
        let v = &self.vae;
        if (r.height, r.width) != (v.height, v.width) {
            return Err(ConfigError::Invalid(format!("render {}x{} differs from vae input {}x{}", r.height, r.width, v.height, v.width)));
        }
        if self.mdn.latent != v.latent {
            return Err(ConfigError::Invalid(format!("mdn latent {} differs from vae latent {}", self.mdn.latent, v.latent)));
        }
        for s in [self.vae_split, self.lstm_split] {
            if !(s > 0.0 && s < 1.0) {
                return Err(ConfigError::Invalid(format!("split ratio {s} outside (0, 1)")));
            }
        }
        if self.episodes < 2 {
            return Err(ConfigError::Invalid("need at least two episodes".into()));
        }
        self.eval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn lstm_input_width(&self) -> usize {
        self.mdn.latent + ActionVector::WIDTH
    }

    pub fn psi_width(&self) -> usize {
        PsiTable::width_for(self.vae.latent)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        PipelineConfig::full().validate().unwrap();
        PipelineConfig::desk().validate().unwrap();
    }

    #[test]
    fn overrides_merge_and_reject_unknown_keys() {
        let c = PipelineConfig::with_overrides(Profile::Desk, r#"{"episodes": 4, "lstm_train": {"steps": 10}}"#).unwrap();
        assert_eq!(c.episodes, 4);
        assert_eq!(c.lstm_train.steps, 10);
        assert_eq!(c.lstm_train.batch_rows, 256);
        assert!(PipelineConfig::with_overrides(Profile::Desk, r#"{"episodez": 4}"#).is_err());
        assert!(PipelineConfig::with_overrides(Profile::Desk, r#"{"vae": {"latent": 8}}"#).is_err());
        assert!(PipelineConfig::with_overrides(Profile::Desk, "[1]").is_err());
    }
}
