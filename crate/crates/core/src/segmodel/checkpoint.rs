//! `DTSCKPT1` parameter files.
//!
//! Layout: the 8-byte magic, then per parameter until end of file: name
//! length (u32), UTF-8 name, rank (u32), dims (u32 each), f32 data. All
//! integers and floats are little-endian.

use std::path::Path;

use super::net::SegNet;
use crate::binio::{put_f32s, put_u32, read_file, write_file, Reader};
use crate::error::Result;
use crate::numeric::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DTSCKPT1";

pub fn encode_checkpoint<'a>(named: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for (name, t) in named {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data());
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let mut named = Vec::new();
    while !r.at_end() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.bytes(len, "name")?)
            .map_err(|_| r.error("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let numel = dims.iter().product();
        let data = r.f32s(numel, "tensor data")?;
        let t = Tensor::new(&dims, data).map_err(|e| r.error(e.to_string()))?;
        named.push((name, t));
    }
    Ok(named)
}

pub fn save_checkpoint(net: &SegNet, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(net.named()))
}

pub fn load_checkpoint(path: &Path) -> Result<SegNet> {
    let bytes = read_file(path)?;
    SegNet::from_named(decode_checkpoint(path, &bytes)?)
}
