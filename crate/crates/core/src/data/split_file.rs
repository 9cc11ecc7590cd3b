//! Binary dataset file and its JSON sidecar.
//!
//! ```text
//! b"FXB1"
//! u32 max_len  u32 min_interactions  u32 user_count  u32 item_count  u32 interaction_count
//! per user: u32 user_id, u32 len, len × u32 dense item id, len × i64 timestamp
//! ```
//!
//! All integers are little-endian. Users appear in ascending original id and
//! their events in chronological order, so the leave-one-out split is a pure
//! function of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{build_sequences, InteractionLog, RawInteraction, SplitDataset};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FXB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub max_len: usize,
    pub min_interactions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub source: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub average_length: f64,
    pub config: PrepareConfig,
    pub config_hash: String,
    pub dataset_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode(log: &InteractionLog, config: PrepareConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        config.max_len,
        config.min_interactions,
        log.users.len(),
        log.item_count,
        log.interaction_count(),
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for events in &log.users {
        let user_id = events.first().map_or(0, |e| e.user_id);
        buf.extend_from_slice(&user_id.to_le_bytes());
        buf.extend_from_slice(&(events.len() as u32).to_le_bytes());
        for e in events {
            buf.extend_from_slice(&e.item_id.to_le_bytes());
        }
        for e in events {
            buf.extend_from_slice(&e.timestamp.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("split file truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(InteractionLog, PrepareConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an FXB1 split file".into()));
    }
    let max_len = r.u32()? as usize;
    let min_interactions = r.u32()? as usize;
    let user_count = r.u32()? as usize;
    let item_count = r.u32()? as usize;
    let interaction_count = r.u32()? as usize;
    let mut users = Vec::with_capacity(user_count.min(1 << 20));
    for _ in 0..user_count {
        let user_id = r.u32()?;
        let len = r.u32()? as usize;
        let items: Vec<u32> = r
            .take(4 * len)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let stamps: Vec<i64> = r
            .take(8 * len)?
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if items.iter().any(|&i| i == 0 || i as usize > item_count) {
            return Err(Error::Format(format!(
                "user {user_id}: item id outside 1..={item_count}"
            )));
        }
        users.push(
            items
                .into_iter()
                .zip(stamps)
                .map(|(item_id, timestamp)| RawInteraction {
                    user_id,
                    item_id,
                    rating: 0.0,
                    timestamp,
                })
                .collect::<Vec<_>>(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes in split file".into()));
    }
    let log = InteractionLog { users, item_count };
    if log.interaction_count() != interaction_count {
        return Err(Error::Format(
            "interaction count does not match header".into(),
        ));
    }
    Ok((
        log,
        PrepareConfig {
            max_len,
            min_interactions,
        },
    ))
}

/// Writes `<out>` and `<out>.json`; returns the sidecar.
pub fn write(
    log: &InteractionLog,
    config: PrepareConfig,
    source: &str,
    out: &Path,
) -> Result<Sidecar> {
    let bytes = encode(log, config);
    let split = build_sequences(log, config.max_len)?;
    let sidecar = Sidecar {
        format: "FXB1".into(),
        source: source.to_string(),
        users: log.users.len(),
        items: log.item_count,
        interactions: log.interaction_count(),
        average_length: split.average_length(),
        config,
        config_hash: sha256_hex(&serde_json::to_vec(&config)?),
        dataset_hash: sha256_hex(&bytes),
    };
    std::fs::write(out, &bytes)?;
    std::fs::write(sidecar_path(out), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

pub fn sidecar_path(out: &Path) -> std::path::PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reads a split file and rebuilds its leave-one-out dataset. Returns the
/// dataset together with the file's hash.
pub fn read(path: &Path) -> Result<(SplitDataset, String)> {
    let bytes = std::fs::read(path)?;
    let (log, config) = decode(&bytes)?;
    Ok((build_sequences(&log, config.max_len)?, sha256_hex(&bytes)))
}
