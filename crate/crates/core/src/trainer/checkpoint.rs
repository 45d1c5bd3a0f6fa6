//! Checkpoint files.
//!
//! Layout: `"OCCK"` | version `u8` = 1 | dtype `u8` = 1 (f64) | block count
//! `u32` LE, then one table entry per block (name length `u8`, UTF-8 name,
//! value count `u32` LE), then every block's values as `f64` LE in table
//! order.

use std::fs;
use std::path::Path;

use super::net::{TinyNet, BLOCK_NAMES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCCK";
pub const VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;

pub fn encode_checkpoint(net: &TinyNet) -> Vec<u8> {
    let blocks = net.blocks();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F64);
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, block) in BLOCK_NAMES.iter().zip(&blocks) {
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(block.len() as u32).to_le_bytes());
    }
    for block in &blocks {
        for v in block.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TinyNet> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "header")? != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = r.take(1, "header")?[0];
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dtype = r.take(1, "header")?[0];
    if dtype != DTYPE_F64 {
        return Err(Error::format(path, format!("unsupported dtype {dtype}")));
    }
    let n_blocks = r.u32("header")? as usize;
    if n_blocks != BLOCK_NAMES.len() {
        return Err(Error::format(
            path,
            format!("expected {} parameter blocks, found {n_blocks}", BLOCK_NAMES.len()),
        ));
    }
    let sizes = TinyNet::block_sizes();
    for (name, &size) in BLOCK_NAMES.iter().zip(&sizes) {
        let len = r.take(1, "block table")?[0] as usize;
        let found = r.take(len, "block table")?;
        if found != name.as_bytes() {
            return Err(Error::format(
                path,
                format!("expected block {name}, found {}", String::from_utf8_lossy(found)),
            ));
        }
        let count = r.u32("block table")? as usize;
        if count != size {
            return Err(Error::format(
                path,
                format!("block {name} has {count} values, expected {size}"),
            ));
        }
    }
    let mut net = TinyNet::zeros();
    for (name, block) in BLOCK_NAMES.iter().zip(net.blocks_mut()) {
        for v in block.iter_mut() {
            *v = f64::from_le_bytes(r.take(8, "payload")?.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(path, format!("non-finite value in block {name}")));
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &TinyNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::init_params;

    #[test]
    fn round_trip_is_exact() {
        let net = init_params(11);
        let bytes = encode_checkpoint(&net);
        let table: usize = BLOCK_NAMES.iter().map(|n| 1 + n.len() + 4).sum();
        assert_eq!(bytes.len(), 10 + table + 8 * net.n_params());
        assert_eq!(decode_checkpoint(&bytes, Path::new("x")).unwrap(), net);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_checkpoint(&init_params(0));
        let p = Path::new("ck");
        let msg = |b: &[u8]| decode_checkpoint(b, p).unwrap_err().to_string();
        assert!(msg(&bytes[..bytes.len() - 1]).contains("truncated payload"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(msg(&extra).contains("trailing bytes"));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(msg(&magic).contains("bad magic"));
        let mut name = bytes.clone();
        name[11] = b'k';
        assert!(msg(&name).contains("expected block conv1.weight"));
    }
}
