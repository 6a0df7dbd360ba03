//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `TCMN1`, then for every parameter in name order
//! `u32 name_len`, name bytes (UTF-8), `u32 rank`, `rank × u32 dims`, and the
//! row-major `f32` payload. All integers and floats are little-endian. The
//! file ends after the last parameter.

use std::io::{Read, Write};

use super::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TCMN1";

pub fn write_checkpoint(store: &ParameterStore<f32>, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for (name, value) in store.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&2u32.to_le_bytes())?;
        out.write_all(&(value.rows() as u32).to_le_bytes())?;
        out.write_all(&(value.cols() as u32).to_le_bytes())?;
        for x in value.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint. Rank-1 tensors load as single rows; ranks above two
/// are rejected.
pub fn read_checkpoint(mut input: impl Read, source: &str) -> Result<ParameterStore<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(source, e))?;
    let bad = |msg: String| Error::data(source, None, msg);
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(bad("missing TCMN1 magic".into()));
    }
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let mut store = ParameterStore::new();
    while cursor.pos < bytes.len() {
        let name_len = cursor.u32().ok_or_else(|| bad("truncated name length".into()))? as usize;
        let name = cursor.take(name_len).ok_or_else(|| bad("truncated name".into()))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not UTF-8".into()))?;
        let rank = cursor.u32().ok_or_else(|| bad(format!("{name}: truncated rank")))?;
        let dims = (0..rank)
            .map(|_| cursor.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("{name}: truncated dims")))?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(bad(format!("{name}: rank {rank} is not supported"))),
        };
        let payload = cursor
            .take(rows * cols * 4)
            .ok_or_else(|| bad(format!("{name}: truncated payload")))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::from_vec(rows, cols, data));
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut store = ParameterStore::new();
        store.insert("ab", Tensor::from_vec(1, 2, vec![1.0f32, -2.5]));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let mut want = b"TCMN1".to_vec();
        want.extend(2u32.to_le_bytes());
        want.extend(b"ab");
        want.extend(2u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn round_trip() {
        let mut store = ParameterStore::new();
        store.insert("lang.w", Tensor::from_vec(2, 3, vec![0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6]));
        store.insert("b", Tensor::scalar(7.0f32));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn rank_one_loads_as_row() {
        let mut buf = b"TCMN1".to_vec();
        buf.extend(1u32.to_le_bytes());
        buf.extend(b"v");
        buf.extend(1u32.to_le_bytes());
        buf.extend(3u32.to_le_bytes());
        for x in [1.0f32, 2.0, 3.0] {
            buf.extend(x.to_le_bytes());
        }
        let store = read_checkpoint(buf.as_slice(), "mem").unwrap();
        assert_eq!(store.get("v").unwrap().shape(), (1, 3));
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        assert!(read_checkpoint(&b"NOPE!"[..], "mem").is_err());
        let mut buf = b"TCMN1".to_vec();
        buf.extend(4u32.to_le_bytes());
        buf.extend(b"ab");
        let err = read_checkpoint(buf.as_slice(), "mem").unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
