//! OCCM map files and PGM export.
//!
//! Layout: `"OCCM"` | version `u8` = 1 | dtype `u8` = 0 (f32) | width `u32` LE |
//! height `u32` LE | width×height `f32` LE, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::ScalarMap;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCCM";
pub const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 14;

pub(crate) fn encode_map(map: &ScalarMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * map.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&(map.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for v in map.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub(crate) fn decode_map(bytes: &[u8], path: &Path) -> Result<ScalarMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype {}", bytes[5])));
    }
    let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::format(path, format!("bad dimensions {width}x{height}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if payload.len() < expected {
        return Err(Error::format(path, "truncated payload"));
    }
    if payload.len() > expected {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite payload value at pixel {i}"),
        ));
    }
    Ok(ScalarMap::from_raw(width, height, values))
}

/// Writes `map` as an OCCM file.
pub fn save_map(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_map(map)).map_err(|e| Error::io(path, e))
}

/// Reads an OCCM file.
pub fn load_map(path: impl AsRef<Path>) -> Result<ScalarMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes, path)
}

/// 8-bit binary PGM (P5), values clamped to `[0, 1]` and scaled to 255.
pub fn write_pgm(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    buf.extend(
        map.values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.occm");
        let map = ScalarMap::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        save_map(&map, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 30);
        assert_eq!(&bytes[..6], b"OCCM\x01\x00");
        assert_eq!(load_map(&path).unwrap(), map);

        let one = ScalarMap::zeros(1, 1);
        save_map(&one, &path).unwrap();
        let back = load_map(&path).unwrap();
        assert_eq!((back.width(), back.height(), back.values()), (1, 1, &[0.0f32][..]));
    }

    #[test]
    fn format_errors_name_the_problem() {
        let p = Path::new("x.occm");
        let mut bytes = encode_map(&ScalarMap::zeros(4, 4));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(decode_map(&bad, p).unwrap_err().to_string().contains("bad magic"));

        bytes.truncate(HEADER_LEN + 8 * 4);
        assert!(decode_map(&bytes, p)
            .unwrap_err()
            .to_string()
            .contains("truncated payload"));

        let mut nan = encode_map(&ScalarMap::zeros(1, 1));
        nan[HEADER_LEN..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_map(&nan, p).unwrap_err().to_string().contains("non-finite"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_map("/nonexistent/dir/map.occm").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/dir/map.occm"));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let mut state = seed;
            let values: Vec<f32> = (0..w * h).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = f32::from_bits((state >> 32) as u32);
                if v.is_finite() { v } else { 0.0 }
            }).collect();
            let map = ScalarMap::new(w, h, values).unwrap();
            let bytes = encode_map(&map);
            let back = decode_map(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(encode_map(&back), bytes);
            prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            map.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
