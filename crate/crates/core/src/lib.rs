//! Pedestrian crossing world model: simulator, ego-view renderer, dataset
//! files, a small autodiff engine, a ConvVAE and an MDN-LSTM.

pub mod numerics;
pub mod render;
pub mod sim;
pub mod dataset;
pub mod vae;
pub mod mdn;
pub mod eval;
pub mod config;
pub mod pipeline;
pub mod cli;
