//! Binary snapshot container.
//!
//! Layout: magic `EXPN`, format version (u32 LE), payload length (u64 LE),
//! bincode payload, then the SHA-256 of everything before it.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EXPN";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8;
const DIGEST: usize = 32;

pub fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    encode_with_version(value, VERSION)
}

fn encode_with_version<T: Serialize>(value: &T, version: u32) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| Error::Snapshot(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER + payload.len() + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::Snapshot("not a snapshot file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Snapshot(format!(
            "snapshot format version {version} is not supported (expected {VERSION})"
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_end = HEADER.checked_add(len).filter(|&e| e + DIGEST == bytes.len());
    let Some(body_end) = body_end else {
        return Err(Error::Snapshot(format!(
            "checksum missing or file truncated ({} bytes, expected {})",
            bytes.len(),
            HEADER.saturating_add(len).saturating_add(DIGEST)
        )));
    };
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Snapshot("checksum mismatch".into()));
    }
    bincode::deserialize(&bytes[HEADER..body_end]).map_err(|e| Error::Snapshot(e.to_string()))
}

pub fn save<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, encode(value)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    decode(&std::fs::read(path)?)
}
