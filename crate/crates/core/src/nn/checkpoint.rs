//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "FTPM" | version u32 | base_cut u32 | layer count u32
//! per layer: in_dim u32 | out_dim u32
//! per layer: weights (row-major f64 bits) | bias (f64 bits)
//! ```
//!
//! Values are stored as `f64` bit patterns, so an `f64` model round-trips
//! bit-exactly (and an `f32` model losslessly widens).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::nn::params::{DenseLayer, ModelParams};
use crate::scalar::Scalar;

const MAGIC: [u8; 4] = *b"FTPM";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(w: &mut W, params: &ModelParams<T>) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.base_cut as u32).to_le_bytes())?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for layer in &params.layers {
        w.write_all(&(layer.in_dim as u32).to_le_bytes())?;
        w.write_all(&(layer.out_dim as u32).to_le_bytes())?;
    }
    for layer in &params.layers {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_all(&v.as_f64().to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<ModelParams<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CoreError::Checkpoint("bad magic header".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let base_cut = read_u32(r)? as usize;
    let num_layers = read_u32(r)? as usize;
    if num_layers == 0 || num_layers > 1024 {
        return Err(CoreError::Checkpoint(format!(
            "implausible layer count {num_layers}"
        )));
    }
    let mut dims = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let in_dim = read_u32(r)? as usize;
        let out_dim = read_u32(r)? as usize;
        dims.push((in_dim, out_dim));
    }
    let mut layers = Vec::with_capacity(num_layers);
    let mut buf = [0u8; 8];
    for (in_dim, out_dim) in dims {
        let mut read_vec = |len: usize| -> Result<Vec<T>> {
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                v.push(T::from_f64(f64::from_bits(u64::from_le_bytes(buf))));
            }
            Ok(v)
        };
        let weights = read_vec(in_dim * out_dim)?;
        let bias = read_vec(out_dim)?;
        layers.push(DenseLayer {
            weights,
            bias,
            in_dim,
            out_dim,
        });
    }
    let params = ModelParams { layers, base_cut };
    params.validate().map_err(|e| match e {
        CoreError::NonFinite(_) => CoreError::Checkpoint("non-finite parameter".into()),
        other => other,
    })?;
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
