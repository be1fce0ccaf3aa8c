//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "UDCK" | version u32 | config_len u32 | config json bytes
//! config_hash u64 | lr f64 | step u64 | n_entries u32
//! entry*: name_len u16 | name | tag u8 (0 tensor, 1 adam_m, 2 adam_v)
//!         rows u32 | cols u32 | payload f32[rows*cols]
//! ```
//!
//! Payloads are stored as f32; loading widens back to f64, so a
//! save/load/save cycle is byte-stable.

use super::params::{is_buffer, ParamStore};
use super::tensor::Tensor;
use crate::error::{Result, UdcError};
use crate::rng::fnv1a64;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"UDCK";
const VERSION: u32 = 1;

fn put_tensor(buf: &mut Vec<u8>, name: &str, tag: u8, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(tag);
    buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
    for &x in &t.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Serialize the store plus its optimizer state and a caller-provided config
/// document (JSON text) describing the model/graph layout.
pub fn to_bytes(store: &ParamStore, config_json: &str) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_json.as_bytes());
    buf.extend_from_slice(&fnv1a64(config_json.as_bytes()).to_le_bytes());
    buf.extend_from_slice(&store.lr.to_le_bytes());
    buf.extend_from_slice(&store.step.to_le_bytes());

    let names: Vec<&str> = store.names().collect();
    let n_entries: u32 = names
        .iter()
        .map(|n| if is_buffer(n) { 1u32 } else { 3u32 })
        .sum();
    buf.extend_from_slice(&n_entries.to_le_bytes());
    for name in names {
        put_tensor(&mut buf, name, 0, store.get(name));
        if !is_buffer(name) {
            let (m, v) = store.adam_state(name);
            put_tensor(&mut buf, name, 1, m);
            put_tensor(&mut buf, name, 2, v);
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(UdcError::CheckpointFormat("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse checkpoint bytes into a store and its config document.
pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(UdcError::CheckpointFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(UdcError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let config_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| UdcError::CheckpointFormat("config is not utf-8".into()))?;
    let stored_hash = r.u64()?;
    if stored_hash != fnv1a64(config_json.as_bytes()) {
        return Err(UdcError::CheckpointFormat("config hash mismatch".into()));
    }
    let lr = r.f64()?;
    let step = r.u64()?;
    let n_entries = r.u32()?;

    let mut store = ParamStore::new(lr);
    let mut adam: Vec<(String, u8, Tensor)> = Vec::new();
    for _ in 0..n_entries {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| UdcError::CheckpointFormat("entry name is not utf-8".into()))?;
        let tag = r.take(1)?[0];
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::from_vec(rows, cols, data);
        match tag {
            0 => store.insert(&name, t),
            1 | 2 => adam.push((name, tag, t)),
            other => {
                return Err(UdcError::CheckpointFormat(format!("unknown tag {other}")))
            }
        }
    }
    for (name, tag, t) in adam {
        if !store.contains(&name) {
            return Err(UdcError::CheckpointFormat(format!(
                "optimizer state for missing parameter `{name}`"
            )));
        }
        let (m, v) = store.adam_state(&name);
        let (m, v) = if tag == 1 {
            (t, v.clone())
        } else {
            (m.clone(), t)
        };
        store.set_adam_state(&name, m, v);
    }
    store.step = step;
    Ok((store, config_json))
}

/// Atomic write: temp file in the same directory, then rename.
pub fn save(path: &Path, store: &ParamStore, config_json: &str) -> Result<()> {
    let bytes = to_bytes(store, config_json);
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

/// Hash of the on-disk checkpoint, for report provenance.
pub fn file_hash(path: &Path) -> Result<u64> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(fnv1a64(&bytes))
}
