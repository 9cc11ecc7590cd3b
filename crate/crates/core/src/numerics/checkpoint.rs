//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"FXCK"  u32 version=1  u32 record_count
//! record* : u32 name_len, name bytes (UTF-8), u8 dtype (0 = f64, 1 = f32),
//!           u8 trainable, u32 rows, u32 cols, rows*cols raw values
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tensor};

const MAGIC: &[u8; 4] = b"FXCK";
const VERSION: u32 = 1;

fn dtype_tag() -> u8 {
    if std::mem::size_of::<Real>() == 8 {
        0
    } else {
        1
    }
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dtype_tag());
        buf.push(p.trainable as u8);
        buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checkpoint CRC mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let trainable = r.u8()? != 0;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        match dtype {
            0 => {
                for chunk in r.take(rows * cols * 8)?.chunks_exact(8) {
                    data.push(f64::from_le_bytes(chunk.try_into().unwrap()) as Real);
                }
            }
            1 => {
                for chunk in r.take(rows * cols * 4)?.chunks_exact(4) {
                    data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as Real);
                }
            }
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        }
        store.insert(name, Tensor::from_vec(rows, cols, data)?, trainable)?;
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(store)
}

/// Writes atomically via a sibling temporary file.
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(store))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    decode(&fs::read(path)?)
}
