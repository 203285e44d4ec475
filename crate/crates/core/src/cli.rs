//! `pwm` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, PipelineConfig, Profile};
use crate::pipeline::{self, PipelineError, LSTM_FILE, VAE_FILE};

#[derive(Debug, Parser)]
#[command(name = "pwm", version, about = "Pedestrian world model: simulate, train, evaluate, dream")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run directory holding the dataset, checkpoints and reports.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// JSON object merged over the profile defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate episodes and record frames, actions and a manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the profile's episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the VAE on the training split.
    TrainVae {
        #[command(flatten)]
        common: Common,
    },
    /// Encode all episodes and write the Ψ table.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// Train the MDN-LSTM on the Ψ table.
    TrainLstm {
        #[command(flatten)]
        common: Common,
    },
    /// Multi-horizon errors, persistence baseline and frame strips on validation episodes.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        lstm: Option<PathBuf>,
        /// Validation episodes that get frame strips.
        #[arg(long, default_value_t = 1)]
        strips: usize,
    },
    /// Closed-loop generation from the first frame of an episode.
    Dream {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        tau: Option<f32>,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        lstm: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Pipeline(PipelineError::Missing { .. }) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

fn resolve(common: &Common) -> Result<PipelineConfig, CliError> {
    match &common.config {
        None => Ok(PipelineConfig::for_profile(common.profile)),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Ok(PipelineConfig::with_overrides(common.profile, &text)?)
        }
    }
}

fn or_default(path: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| dir.join(name))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { common, episodes } => {
            let cfg = resolve(common)?;
            let n = episodes.unwrap_or(cfg.episodes);
            if n == 0 {
                return Err(CliError::Usage("--episodes must be at least 1".into()));
            }
            let m = pipeline::simulate(&cfg, n, common.seed, &common.out)?;
            println!("simulated {} episodes ({} frames) into {}", m.episodes.len(), m.frame_count, common.out.display());
        }
        Command::TrainVae { common } => {
            let cfg = resolve(common)?;
            let t = pipeline::train_vae_stage(&cfg, &common.out, common.seed)?;
            let best = &t.history[t.best_epoch - 1];
            println!("vae: best epoch {} val loss {:.4} (recon {:.4})", t.best_epoch, best.val_loss, best.val_recon);
        }
        Command::Encode { common, vae } => {
            resolve(common)?;
            let m = pipeline::encode_stage(&common.out, &or_default(vae, &common.out, VAE_FILE))?;
            let rows: usize = m.episodes.iter().filter_map(|e| e.psi).map(|s| s.len).sum();
            println!("encoded {} episodes into {rows} Ψ rows", m.episodes.len());
        }
        Command::TrainLstm { common } => {
            let cfg = resolve(common)?;
            let t = pipeline::train_lstm_stage(&cfg, &common.out, common.seed)?;
            let best = t.history.iter().find(|r| r.step == t.best_step).expect("best step recorded");
            println!("lstm: best step {} val nll {:.4}", t.best_step, best.val_nll);
        }
        Command::Evaluate { common, horizons, vae, lstm, strips } => {
            let mut cfg = resolve(common)?;
            if let Some(h) = horizons {
                cfg.eval.horizons = h.clone();
            }
            cfg.eval.seed = common.seed;
            cfg.eval.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let out = pipeline::evaluate_stage(&cfg, &common.out, &or_default(vae, &common.out, VAE_FILE), &or_default(lstm, &common.out, LSTM_FILE), *strips)?;
            for &r in &cfg.eval.horizons {
                let mean = |s: &[crate::eval::ErrorSeries]| {
                    let v: Vec<f64> = s.iter().filter(|x| x.horizon == r).map(|x| x.mean()).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                };
                println!("r={r}: model {:.4} persistence {:.4}", mean(&out.series), mean(&out.baseline));
            }
        }
        Command::Dream { common, steps, tau, episode, vae, lstm } => {
            let cfg = resolve(common)?;
            let files = pipeline::dream_stage(
                &common.out,
                &or_default(vae, &common.out, VAE_FILE),
                &or_default(lstm, &common.out, LSTM_FILE),
                *episode,
                steps.unwrap_or(cfg.dream_steps),
                tau.unwrap_or(cfg.eval.dream_tau),
                common.seed,
            )?;
            println!("dream: wrote {} files", files.len());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    ExitCode::from(run_code(args))
}

pub fn run_code<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
