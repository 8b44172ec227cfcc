//! OSMW checkpoint format: magic "OSMW", version u16, tensor count u32, then
//! per tensor: name length u16, UTF-8 name, rank u8, dims u32 x rank, and the
//! f32 little-endian payload. Save/load round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::ParameterSet;
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"OSMW";
const VERSION: u16 = 1;

pub fn save_checkpoint(params: &ParameterSet<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!(
                "tensor name of {} bytes exceeds the 65535-byte field",
                bytes.len()
            )));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        let rank = tensor.dims().len();
        if rank > u8::MAX as usize {
            return Err(Error::Format(format!("tensor rank {rank} exceeds format bound")));
        }
        w.write_all(&[rank as u8])?;
        for &d in tensor.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterSet<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:02x?}")));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut params = ParameterSet::default();
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            dims.push(read_u32(&mut r)? as usize);
        }
        let n: usize = dims.iter().product();
        if n == 0 || n > (1 << 28) {
            return Err(Error::Format(format!("implausible tensor dims {dims:?}")));
        }
        let mut raw = vec![0u8; 4 * n];
        read_exact(&mut r, &mut raw)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::from_vec(&dims, data)
            .map_err(|e| Error::Format(format!("inconsistent tensor in checkpoint: {e}")))?;
        params.insert(name, tensor);
    }
    Ok(params)
}
