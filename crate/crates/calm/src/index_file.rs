//! Binary retrieval index files.
//!
//! ```text
//! magic "CALMIDX\0"                    8 bytes
//! version                              u32
//! key_dim, style_dim                   u32, u32
//! count                                u64
//! checkpoint fingerprint               32 bytes
//! count records of
//!   id_len u16, id (zero padded)       2 + 64 bytes
//!   label_len u16 (0xFFFF = none)      2 bytes
//!   label (zero padded)                64 bytes
//!   key                                key_dim f64
//!   style                              style_dim f64
//! sha256 of everything above           32 bytes
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use calm_core::retrieval::{IndexEntry, RetrievalIndex};
use calm_core::Vec64;

use crate::binfmt::{self, Decoder, Encoder, DIGEST_LEN};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CALMIDX\0";
pub const VERSION: u32 = 1;
/// Longest id or label a record can hold, in bytes.
pub const MAX_TEXT: usize = 64;
const NO_LABEL: u16 = 0xFFFF;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + 32;

fn record_len(key_dim: usize, style_dim: usize) -> usize {
    2 + MAX_TEXT + 2 + MAX_TEXT + 8 * (key_dim + style_dim)
}

fn padded(e: &mut Encoder, s: &str) {
    let mut field = [0u8; MAX_TEXT];
    field[..s.len()].copy_from_slice(s.as_bytes());
    e.bytes(&field);
}

pub fn to_bytes(index: &RetrievalIndex) -> Result<Vec<u8>> {
    let mut e = Encoder::new(MAGIC, VERSION);
    e.u32(index.key_dim() as u32);
    e.u32(index.style_dim() as u32);
    e.u64(index.len() as u64);
    e.bytes(index.fingerprint());
    for entry in index.entries() {
        if entry.id.len() > MAX_TEXT {
            return Err(Error::Config(format!("id {:?} is longer than {MAX_TEXT} bytes", entry.id)));
        }
        e.u16(entry.id.len() as u16);
        padded(&mut e, &entry.id);
        match &entry.label {
            Some(l) if l.len() > MAX_TEXT => {
                return Err(Error::Config(format!("label {l:?} is longer than {MAX_TEXT} bytes")));
            }
            Some(l) => {
                e.u16(l.len() as u16);
                padded(&mut e, l);
            }
            None => {
                e.u16(NO_LABEL);
                padded(&mut e, "");
            }
        }
        e.f64s(entry.stf.as_slice());
        e.f64s(entry.style.as_slice());
    }
    debug_assert_eq!(e.len(), HEADER_LEN + index.len() * record_len(index.key_dim(), index.style_dim()));
    Ok(e.seal())
}

fn text(d: &mut Decoder<'_>, len: usize, what: &str) -> Result<String> {
    let field = d.take(MAX_TEXT)?;
    if len > MAX_TEXT || field[len..].iter().any(|b| *b != 0) {
        return Err(d.malformed(format!("bad {what} field")));
    }
    String::from_utf8(field[..len].to_vec()).map_err(|_| d.malformed(format!("{what} is not UTF-8")))
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<RetrievalIndex> {
    // The header fixes the file length, so a short file is reported as
    // truncated before the checksum is consulted.
    let known = bytes.len() >= 12 && &bytes[..8] == MAGIC && bytes[8..12] == VERSION.to_le_bytes();
    if known && bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Truncated { path: path.to_path_buf() });
    }
    if known {
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let expected = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(record_len(word(12), word(16))))
            .and_then(|r| r.checked_add(HEADER_LEN + DIGEST_LEN));
        match expected {
            Some(n) if bytes.len() < n => return Err(Error::Truncated { path: path.to_path_buf() }),
            Some(n) if bytes.len() > n => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    msg: format!("{} bytes after the last record", bytes.len() - n),
                })
            }
            Some(_) => {}
            None => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    msg: "record count overflows".into(),
                })
            }
        }
    }
    let mut d = Decoder::open(bytes, path, MAGIC, VERSION, "index")?;
    let key_dim = d.u32()? as usize;
    let style_dim = d.u32()? as usize;
    let count = d.u64()? as usize;
    let fingerprint: [u8; 32] = d.take(32)?.try_into().unwrap();
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = d.u16()? as usize;
        let id = text(&mut d, id_len, "id")?;
        let label_len = d.u16()?;
        let label = if label_len == NO_LABEL {
            text(&mut d, 0, "label")?;
            None
        } else {
            Some(text(&mut d, label_len as usize, "label")?)
        };
        let stf = Vec64::new(d.f64s(key_dim)?).map_err(|e| d.malformed(format!("{id}: {e}")))?;
        let style = Vec64::new(d.f64s(style_dim)?).map_err(|e| d.malformed(format!("{id}: {e}")))?;
        entries.push(IndexEntry { id, stf, style, label });
    }
    d.finish()?;
    RetrievalIndex::new(entries, fingerprint).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn save_index(index: &RetrievalIndex, path: &Path) -> Result<()> {
    binfmt::write_atomic(path, &to_bytes(index)?)
}

pub fn load_index(path: &Path) -> Result<RetrievalIndex> {
    from_bytes(&binfmt::read(path)?, path)
}
