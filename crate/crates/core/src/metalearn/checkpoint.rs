//! Flat binary model checkpoints.
//!
//! Layout, all little-endian: magic `MLCK`, `u32` version, `u32` layer count,
//! then for each layer its weight and bias tensors as `u32` rank, `u64` dims
//! and raw `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Layer, ModelParams, ModelShape};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.num_layers() as u32).to_le_bytes())?;
    for t in params.tensors() {
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint and checks every tensor against `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: &ModelShape) -> Result<ModelParams> {
    let path = path.as_ref();
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    expected.validate()?;
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic).map_err(&fail)?;
    if &magic != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = read_u32(&mut r).map_err(&fail)?;
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let layers = read_u32(&mut r).map_err(&fail)? as usize;
    let dims = &expected.layer_dims;
    if layers != dims.len() {
        return Err(fail(format!("{layers} layers, config expects {}", dims.len())));
    }
    let mut wanted: Vec<(usize, usize)> = dims.windows(2).map(|d| (d[0], d[1])).collect();
    wanted.push((*dims.last().unwrap(), expected.head_width()));

    let mut parsed = Vec::with_capacity(layers);
    for (i, &(fan_in, fan_out)) in wanted.iter().enumerate() {
        let w = read_tensor(&mut r).map_err(&fail)?;
        let b = read_tensor(&mut r).map_err(&fail)?;
        if w.shape() != [fan_in, fan_out] || b.shape() != [1, fan_out] {
            return Err(fail(format!(
                "layer {i}: shapes {:?}/{:?}, config expects [{fan_in}, {fan_out}]/[1, {fan_out}]",
                w.shape(),
                b.shape()
            )));
        }
        parsed.push(Layer { w, b });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(fail(format!("{} trailing bytes", rest.len())));
    }
    let head = parsed.pop().unwrap();
    Ok(ModelParams {
        body: parsed,
        head,
        num_groups: expected.num_groups,
        c_max: expected.c_max,
    })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> std::result::Result<(), String> {
    r.read_exact(buf).map_err(|e| format!("truncated file ({e})"))
}

fn read_u32(r: &mut impl Read) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::result::Result<u64, String> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor(r: &mut impl Read) -> std::result::Result<Tensor, String> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(format!("implausible rank {rank}"));
    }
    let shape = (0..rank)
        .map(|_| read_u64(r).map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("dims overflow")?;
    if len > 1 << 28 {
        return Err(format!("tensor of {len} values is too large"));
    }
    let mut bytes = vec![0u8; len * 8];
    read_exact(r, &mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}
