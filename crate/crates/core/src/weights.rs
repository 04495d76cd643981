//! `VGGW` portable weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "VGGW" · u32 version (1) · u32 entry_count ·
//!   entry_count × { u32 name_len · name (UTF-8) · u8 ndim · ndim × u32 dims ·
//!                   product(dims) × f32 }
//! ```
//!
//! Each conv layer contributes a kernel entry `<layer>` shaped
//! `[out, in, kh, kw]` followed by its bias entry `<layer>.bias` shaped `[out]`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::WeightStore;
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"VGGW";
pub const VERSION: u32 = 1;
pub const BIAS_SUFFIX: &str = ".bias";

/// One named tensor as stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses every entry without interpreting names.
pub fn decode_entries(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic.try_into().expect("4 bytes"),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let count = cur.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let what = format!("entry {i}");
        let name_len = cur.u32(&what)? as usize;
        let name = std::str::from_utf8(cur.take(name_len, &what)?)
            .map_err(|_| Error::Malformed(format!("{what}: name is not UTF-8")))?
            .to_string();
        let ndim = cur.u8(&what)? as usize;
        if ndim == 0 || ndim > MAX_RANK {
            return Err(Error::Malformed(format!(
                "{name}: rank {ndim} out of range"
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32(&name)? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Malformed(format!("{name}: dims {dims:?} overflow")))?;
        let data = cur
            .take(len, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let tensor =
            Tensor::new(dims, data).map_err(|e| Error::Malformed(format!("{name}: {e}")))?;
        entries.push(Entry { name, tensor });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(entries)
}

pub fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let payload: usize = entries
        .iter()
        .map(|e| 9 + e.name.len() + 4 * e.tensor.rank() + 4 * e.tensor.len())
        .sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.tensor.rank() as u8);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Pairs kernel and bias entries into a store, keeping file order.
pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    let entries = decode_entries(bytes)?;
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::Malformed(format!("duplicate entry {}", e.name)));
        }
    }
    let mut store = WeightStore::new();
    for e in &entries {
        if let Some(layer) = e.name.strip_suffix(BIAS_SUFFIX) {
            if !seen.contains(layer) {
                return Err(Error::Malformed(format!("bias {} has no kernel", e.name)));
            }
            continue;
        }
        let bias_name = format!("{}{BIAS_SUFFIX}", e.name);
        let bias = entries
            .iter()
            .find(|b| b.name == bias_name)
            .ok_or_else(|| Error::Malformed(format!("kernel {} has no bias", e.name)))?;
        store
            .insert(e.name.clone(), e.tensor.clone(), bias.tensor.clone())
            .map_err(|err| Error::Malformed(err.to_string()))?;
    }
    Ok(store)
}

pub fn encode_weights(store: &WeightStore) -> Vec<u8> {
    let entries: Vec<Entry> = store
        .iter()
        .flat_map(|(name, w)| {
            [
                Entry {
                    name: name.to_string(),
                    tensor: w.kernels.clone(),
                },
                Entry {
                    name: format!("{name}{BIAS_SUFFIX}"),
                    tensor: w.bias.clone(),
                },
            ]
        })
        .collect();
    encode_entries(&entries)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    decode_weights(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_weights(path: impl AsRef<Path>, store: &WeightStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(store)).map_err(|e| Error::io(path, e))
}
