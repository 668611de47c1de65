//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `CMRTCKPT`, `u32` version, dtype tag and the
//! JSON model config as length-prefixed strings, `u32` tensor count, then per
//! tensor: name, `u32` rank, `u64` dims, and raw values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcore::Tensor;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CMRTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, ModelError> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(ModelError::Checkpoint(format!("string length {n} is implausible")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn write_checkpoint<T: Scalar>(w: &mut impl Write, params: &ModelParams<T>) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_str(w, T::DTYPE)?;
    let cfg = serde_json::to_string(params.config()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    put_str(w, &cfg)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put_str(w, name)?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(r: &mut impl Read) -> Result<ModelParams<T>, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = get_str(r)?;
    if dtype != T::DTYPE {
        return Err(ModelError::Checkpoint(format!("checkpoint holds {dtype}, requested {}", T::DTYPE)));
    }
    let config: ModelConfig = serde_json::from_str(&get_str(r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let count = get_u32(r)? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        names.push(get_str(r)?);
        let rank = get_u32(r)? as usize;
        let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    ModelParams::from_parts(config, names, tensors)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
