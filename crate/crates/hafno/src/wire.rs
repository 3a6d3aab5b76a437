//! Little-endian binary primitives shared by the checkpoint and dataset
//! file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn write_u16(w: &mut impl Write, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Truncated(what.to_string()))
}

pub fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Tensor on the wire: `u32 rank`, `u64 dims…`, then row-major f64 payload.
pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u64(w, d as u64)?;
    }
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(r: &mut impl Read, what: &str) -> Result<Tensor> {
    let rank = read_u32(r, what)? as usize;
    if rank > 8 {
        return Err(Error::Truncated(format!("{}: implausible rank {}", what, rank)));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r, what)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes, what)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_string(r: &mut impl Read, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    if len > 1 << 24 {
        return Err(Error::Truncated(format!("{}: implausible string", what)));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::Truncated(format!("{}: invalid utf-8", what)))
}

/// FNV-1a 64-bit, used for payload checksums in dataset manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
