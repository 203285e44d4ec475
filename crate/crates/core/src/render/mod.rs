//! Semantic first-person frames: palette, label and probability frames,
//! the column raycaster and PPM dumps.

mod raycast;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

pub use raycast::{floor_cast, floor_cast_at, render_ego_frame, render_scene, CameraModel, RenderConfig};

pub const VOID: u8 = 0;
pub const SKY: u8 = 0;
pub const BUILDING: u8 = 1;
pub const ROAD: u8 = 2;
pub const SIDEWALK: u8 = 3;
pub const CROSSWALK: u8 = 4;
pub const PEDESTRIAN: u8 = 5;
pub const VEHICLE: u8 = 6;
pub const POLE: u8 = 7;

/// Categories the renderer can emit.
pub const BASE_CATEGORIES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("category {index} at pixel {pixel} is out of range for {channels} channels")]
    Category { index: u8, pixel: usize, channels: usize },
    #[error("frame payload of {len} does not match {height}x{width}x{channels}")]
    Payload { height: usize, width: usize, channels: usize, len: usize },
    #[error("camera: {0}")]
    Camera(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticPalette {
    pub names: Vec<String>,
    pub colors: Vec<[u8; 3]>,
}

impl Default for SemanticPalette {
    fn default() -> Self {
        let table: [(&str, [u8; 3]); BASE_CATEGORIES] = [
            ("void", [70, 130, 180]),
            ("building", [70, 70, 70]),
            ("road", [128, 64, 128]),
            ("sidewalk", [244, 35, 232]),
            ("crosswalk", [255, 255, 255]),
            ("pedestrian", [220, 20, 60]),
            ("vehicle", [0, 0, 142]),
            ("pole", [153, 153, 153]),
        ];
        Self { names: table.iter().map(|(n, _)| n.to_string()).collect(), colors: table.iter().map(|(_, c)| *c).collect() }
    }
}

impl SemanticPalette {
    /// Default palette padded with unused categories up to `channels`.
    pub fn with_channels(channels: usize) -> Result<Self, RenderError> {
        if channels < BASE_CATEGORIES || channels > 256 {
            return Err(RenderError::Domain(format!("palette needs between {BASE_CATEGORIES} and 256 channels, got {channels}")));
        }
        let mut p = Self::default();
        for k in BASE_CATEGORIES..channels {
            p.names.push(format!("unused{k}"));
            p.colors.push([(k * 37 % 256) as u8, (k * 91 % 256) as u8, (k * 53 % 256) as u8]);
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Ground-truth frame of category indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl Frame {
    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self { height, width, labels: vec![label; height * width] }
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn to_rgb(&self, palette: &SemanticPalette) -> Vec<u8> {
        self.labels.iter().flat_map(|&l| palette.colors.get(l as usize).copied().unwrap_or([0, 0, 0])).collect()
    }
}

/// Decoded frame: H×W×C values in [0, 1], channel-last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbFrame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl ProbFrame {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self, RenderError> {
        if values.len() != height * width * channels {
            return Err(RenderError::Payload { height, width, channels, len: values.len() });
        }
        Ok(Self { height, width, channels, values })
    }

    /// Per-pixel most likely category, lowest index on ties.
    pub fn argmax(&self) -> Frame {
        let labels = self
            .values
            .chunks_exact(self.channels)
            .map(|px| {
                let mut best = 0;
                for (k, &v) in px.iter().enumerate() {
                    if v > px[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        Frame { height: self.height, width: self.width, labels }
    }
}

/// H×W×C one-hot encoding of a label frame.
pub fn onehot(frame: &Frame, channels: usize) -> Result<Tensor, RenderError> {
    let mut data = vec![0.0f32; frame.labels.len() * channels];
    for (i, &l) in frame.labels.iter().enumerate() {
        if l as usize >= channels {
            return Err(RenderError::Category { index: l, pixel: i, channels });
        }
        data[i * channels + l as usize] = 1.0;
    }
    Ok(Tensor::new(&[frame.height, frame.width, channels], data).expect("one-hot shape"))
}

pub fn write_ppm_to(mut out: impl Write, width: usize, height: usize, rgb: &[u8]) -> std::io::Result<()> {
    write!(out, "P6\n{width} {height}\n255\n")?;
    out.write_all(rgb)?;
    out.flush()
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), RenderError> {
    assert_eq!(rgb.len(), width * height * 3, "rgb payload size");
    let io = |source| RenderError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io)?;
    write_ppm_to(BufWriter::new(file), width, height, rgb).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onehot_sets_one_channel() {
        let f = Frame { height: 1, width: 3, labels: vec![4, 0, 7] };
        let t = onehot(&f, 8).unwrap();
        assert_eq!(t.shape(), &[1, 3, 8]);
        assert_eq!(&t.data()[..8], &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        for px in t.data().chunks(8) {
            assert_eq!(px.iter().sum::<f32>(), 1.0);
        }
        let back = ProbFrame::new(1, 3, 8, t.into_data()).unwrap().argmax();
        assert_eq!(back, f);
    }

    #[test]
    fn onehot_rejects_out_of_range() {
        let f = Frame { height: 1, width: 2, labels: vec![1, 9] };
        assert!(matches!(onehot(&f, 8), Err(RenderError::Category { index: 9, pixel: 1, channels: 8 })));
    }

    #[test]
    fn ppm_header() {
        let mut buf = Vec::new();
        write_ppm_to(&mut buf, 2, 1, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(buf.len(), 11 + 6);
    }

    #[test]
    fn padded_palette() {
        assert_eq!(SemanticPalette::with_channels(24).unwrap().len(), 24);
        assert!(SemanticPalette::with_channels(4).is_err());
    }
}
