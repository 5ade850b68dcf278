//! The `DRGZ` binary tensor format.
//!
//! Layout: magic `DRGZ`, version byte `0x01`, rank as `u32` LE, each extent
//! as `u32` LE, then the elements as `f32` LE in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"DRGZ";
pub const VERSION: u8 = 0x01;

/// Encoded size in bytes of a tensor with the given shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    4 + 1 + 4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn encode<T: Element>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(encoded_len(tensor.shape()));
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    buf
}

pub fn write_tensor<T: Element>(w: &mut impl Write, tensor: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&encode(tensor))
}

/// Decode one tensor from the front of `bytes`, returning it together with
/// the number of bytes consumed.
pub fn decode<T: Element>(bytes: &[u8]) -> std::result::Result<(Tensor<T>, usize), String> {
    let mut cursor = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let end = cursor + n;
        let chunk = bytes
            .get(cursor..end)
            .ok_or_else(|| format!("truncated at byte {cursor}"))?;
        cursor = end;
        Ok(chunk)
    };
    if take(4)? != MAGIC {
        return Err("missing DRGZ magic".into());
    }
    let version = take(1)?[0];
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let rank = read_u32(take(4)?) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(take(4)?) as usize);
    }
    let numel: usize = shape.iter().product();
    let body = take(4 * numel)?;
    let data = body
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let tensor = Tensor::new(shape, data).map_err(|e| e.to_string())?;
    Ok((tensor, cursor))
}

pub fn read_tensor<T: Element>(r: &mut impl Read) -> std::result::Result<Tensor<T>, String> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
    let (tensor, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - used));
    }
    Ok(tensor)
}

pub fn save_tensor<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut file).map_err(|msg| Error::format(path, msg))
}
