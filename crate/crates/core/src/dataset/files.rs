//! Little-endian episode and Ψ files, and the JSON manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ActionVector, DatasetError, DatasetManifest, EpisodeLog, PsiTable};
use crate::render::Frame;

pub const EPISODE_MAGIC: &[u8; 4] = b"PWM1";
pub const EPISODE_VERSION: u16 = 1;
pub const PSI_MAGIC: &[u8; 4] = b"PSI1";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn format(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn dim_u16(v: usize, what: &str) -> std::io::Result<[u8; 2]> {
    u16::try_from(v).map(u16::to_le_bytes).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{what} {v} exceeds u16")))
}

pub fn write_episode_to(log: &EpisodeLog, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(EPISODE_MAGIC)?;
    out.write_all(&EPISODE_VERSION.to_le_bytes())?;
    out.write_all(&dim_u16(log.height, "height")?)?;
    out.write_all(&dim_u16(log.width, "width")?)?;
    out.write_all(&dim_u16(log.channels, "channels")?)?;
    out.write_all(&(log.frames.len() as u32).to_le_bytes())?;
    out.write_all(&log.seed.to_le_bytes())?;
    for f in &log.frames {
        out.write_all(&f.labels)?;
    }
    for a in &log.actions {
        for v in a.to_array() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn write_episode(log: &EpisodeLog, path: &Path) -> Result<(), DatasetError> {
    log.validate()?;
    let file = File::create(path).map_err(io(path))?;
    write_episode_to(log, BufWriter::new(file)).map_err(io(path))
}

fn take<const N: usize>(input: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_episode_from(mut input: impl Read, path: &Path) -> Result<EpisodeLog, DatasetError> {
    let short = |e: std::io::Error| format(path, format!("truncated episode file: {e}"));
    let magic: [u8; 4] = take(&mut input).map_err(short)?;
    if &magic != EPISODE_MAGIC {
        return Err(format(path, format!("bad magic {magic:?}, expected PWM1")));
    }
    let version = u16::from_le_bytes(take(&mut input).map_err(short)?);
    if version != EPISODE_VERSION {
        return Err(format(path, format!("unsupported episode version {version}")));
    }
    let height = u16::from_le_bytes(take(&mut input).map_err(short)?) as usize;
    let width = u16::from_le_bytes(take(&mut input).map_err(short)?) as usize;
    let channels = u16::from_le_bytes(take(&mut input).map_err(short)?) as usize;
    let n = u32::from_le_bytes(take(&mut input).map_err(short)?) as usize;
    let seed = u64::from_le_bytes(take(&mut input).map_err(short)?);
    let mut log = EpisodeLog::new(seed, height, width, channels);
    let mut pixels = vec![0u8; n * height * width];
    input.read_exact(&mut pixels).map_err(short)?;
    let mut raw = vec![0u8; n * 12];
    input.read_exact(&mut raw).map_err(short)?;
    if input.read(&mut [0u8; 1]).map_err(io(path))? != 0 {
        return Err(format(path, "trailing bytes after the action block"));
    }
    let per = height * width;
    log.frames = (0..n).map(|i| Frame { height, width, labels: pixels[i * per..(i + 1) * per].to_vec() }).collect();
    log.actions = raw
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes([c[k], c[k + 1], c[k + 2], c[k + 3]]);
            ActionVector { moved: f(0), body_yaw: f(4), head_yaw: f(8) }
        })
        .collect();
    log.validate().map_err(|e| format(path, e.to_string()))?;
    Ok(log)
}

pub fn read_episode(path: &Path) -> Result<EpisodeLog, DatasetError> {
    let file = File::open(path).map_err(io(path))?;
    read_episode_from(BufReader::new(file), path)
}

pub fn write_psi_to(psi: &PsiTable, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(PSI_MAGIC)?;
    out.write_all(&dim_u16(psi.latent, "latent")?)?;
    out.write_all(&(psi.rows() as u32).to_le_bytes())?;
    for v in &psi.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn write_psi(psi: &PsiTable, path: &Path) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io(path))?;
    write_psi_to(psi, BufWriter::new(file)).map_err(io(path))
}

pub fn read_psi_from(mut input: impl Read, path: &Path) -> Result<PsiTable, DatasetError> {
    let short = |e: std::io::Error| format(path, format!("truncated Ψ file: {e}"));
    let magic: [u8; 4] = take(&mut input).map_err(short)?;
    if &magic != PSI_MAGIC {
        return Err(format(path, format!("bad magic {magic:?}, expected PSI1")));
    }
    let latent = u16::from_le_bytes(take(&mut input).map_err(short)?) as usize;
    let rows = u32::from_le_bytes(take(&mut input).map_err(short)?) as usize;
    let mut raw = vec![0u8; rows * PsiTable::width_for(latent) * 4];
    input.read_exact(&mut raw).map_err(short)?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(PsiTable { latent, data })
}

pub fn read_psi(path: &Path) -> Result<PsiTable, DatasetError> {
    let file = File::open(path).map_err(io(path))?;
    read_psi_from(BufReader::new(file), path)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| format(path, e.to_string()))
}
