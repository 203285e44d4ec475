//! `WTS1` weight files: little-endian, `u32` tensor count, then per tensor a
//! `u32` name length, UTF-8 name, `u8` rank, `u32` dims and `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NumericsError, ParamSet, Tensor, MAX_RANK};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"WTS1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NumericsError + '_ {
    move |source| NumericsError::Io { path: path.to_path_buf(), source }
}

pub fn write_checkpoint_to(params: &ParamSet, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn write_checkpoint(params: &ParamSet, path: &Path) -> Result<(), NumericsError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_checkpoint_to(params, BufWriter::new(file)).map_err(io_err(path))
}

fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint_from(mut input: impl Read) -> Result<ParamSet, NumericsError> {
    let fmt = |e: std::io::Error| NumericsError::Format(format!("truncated weight file: {e}"));
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(fmt)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(NumericsError::Format(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut input).map_err(fmt)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input).map_err(fmt)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(fmt)?;
        let name = String::from_utf8(name).map_err(|_| NumericsError::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        input.read_exact(&mut rank).map_err(fmt)?;
        let rank = rank[0] as usize;
        if rank > MAX_RANK {
            return Err(NumericsError::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut input).map_err(fmt)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw).map_err(fmt)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if params.index_of(&name).is_some() {
            return Err(NumericsError::Format(format!("duplicate tensor `{name}`")));
        }
        params.push(name, Tensor::new(&shape, data)?);
    }
    Ok(params)
}

pub fn read_checkpoint(path: &Path) -> Result<ParamSet, NumericsError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_checkpoint_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut p = ParamSet::new();
        p.push("ab", Tensor::new(&[1, 2], vec![1.0, -2.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint_to(&p, &mut buf).unwrap();
        let mut expect = b"WTS1".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend(b"ab");
        expect.push(2);
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend(1.0f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
        assert_eq!(read_checkpoint_from(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_checkpoint_from(&b"WTS2\0\0\0\0"[..]), Err(NumericsError::Format(_))));
        let mut p = ParamSet::new();
        p.push("w", Tensor::zeros(&[3]));
        let mut buf = Vec::new();
        write_checkpoint_to(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_checkpoint_from(buf.as_slice()), Err(NumericsError::Format(_))));
    }
}
