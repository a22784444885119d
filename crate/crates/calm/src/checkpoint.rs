//! Binary parameter checkpoints.
//!
//! Layout (little-endian), after the `CALMCKPT` magic and `u32` version:
//!
//! ```text
//! speech_dim text_dim hidden style_dim n_tokens attn_dim : u32 x 6
//! dropout                                               : f64
//! tensor count                                          : u32
//! per tensor: name_len u16, name, rows u32, cols u32, rows*cols f64
//! step                                                  : u64
//! optimizer flag                                        : u8
//! if set: t u64, then m and v for every tensor in order : f64
//! sha256 of everything above                            : [u8; 32]
//! ```
//!
//! The fingerprint is the sha256 of the config and tensor section alone, so
//! it identifies the parameters regardless of optimizer state.

use std::path::Path;

use calm_core::encoders::CalmParams;
use calm_core::trainer::{Adam, AdamState};
use calm_core::{init_params, EncoderConfig, Mat64, Rng};
use sha2::{Digest, Sha256};

use crate::binfmt::{self, Decoder, Encoder};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CALMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: CalmParams,
    pub optimizer: Option<AdamState>,
    /// Joint training steps applied.
    pub step: u64,
}

impl Checkpoint {
    pub fn new(params: CalmParams) -> Self {
        Self {
            params,
            optimizer: None,
            step: 0,
        }
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        fingerprint(&self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(MAGIC, VERSION);
        encode_params(&mut e, &self.params);
        e.u64(self.step);
        match &self.optimizer {
            None => e.u8(0),
            Some(opt) => {
                e.u8(1);
                e.u64(opt.inner.t);
                for (m, v) in opt.inner.m.iter().zip(&opt.inner.v) {
                    e.f64s(m.as_slice());
                    e.f64s(v.as_slice());
                }
            }
        }
        e.seal()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut d = Decoder::open(bytes, path, MAGIC, VERSION, "checkpoint")?;
        let params = decode_params(&mut d)?;
        let step = d.u64()?;
        let optimizer = match d.u8()? {
            0 => None,
            1 => {
                let t = d.u64()?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (_, p) in params.tensors() {
                    let (r, c) = p.shape();
                    m.push(mat(&mut d, r, c)?);
                    v.push(mat(&mut d, r, c)?);
                }
                Some(AdamState {
                    inner: Adam { m, v, t },
                })
            }
            x => return Err(d.malformed(format!("optimizer flag {x}"))),
        };
        d.finish()?;
        Ok(Self { params, optimizer, step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfmt::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binfmt::read(path)?, path)
    }
}

pub fn fingerprint(params: &CalmParams) -> [u8; 32] {
    let mut e = Encoder::default();
    encode_params(&mut e, params);
    Sha256::digest(e.seal()).into()
}

pub fn fingerprint_hex(fp: &[u8; 32]) -> String {
    hex::encode(fp)
}

fn encode_params(e: &mut Encoder, params: &CalmParams) {
    let c = params.config();
    for d in [c.speech_dim, c.text_dim, c.hidden, c.style_dim, c.n_tokens, c.attn_dim] {
        e.u32(d as u32);
    }
    e.f64s(&[c.dropout]);
    let tensors = params.tensors();
    e.u32(tensors.len() as u32);
    for (name, t) in tensors {
        e.u16(name.len() as u16);
        e.bytes(name.as_bytes());
        e.u32(t.rows() as u32);
        e.u32(t.cols() as u32);
        e.f64s(t.as_slice());
    }
}

fn mat(d: &mut Decoder<'_>, rows: usize, cols: usize) -> Result<Mat64> {
    let data = d.f64s(rows * cols)?;
    Mat64::new(rows, cols, data).map_err(|e| d.malformed(e.to_string()))
}

fn decode_params(d: &mut Decoder<'_>) -> Result<CalmParams> {
    let mut dims = [0usize; 6];
    for x in &mut dims {
        *x = d.u32()? as usize;
    }
    let dropout = d.f64s(1)?[0];
    let config = EncoderConfig {
        speech_dim: dims[0],
        text_dim: dims[1],
        hidden: dims[2],
        style_dim: dims[3],
        n_tokens: dims[4],
        attn_dim: dims[5],
        dropout,
    };
    config.validate().map_err(|e| d.malformed(format!("encoder config: {e}")))?;
    // Shapes and names come from a freshly built parameter set.
    let mut params = init_params(&config, &mut Rng::new(0))?;
    let count = d.u32()? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(d.malformed(format!("{count} tensors, expected {expected}")));
    }
    for (name, t) in params.tensors_mut() {
        let len = d.u16()? as usize;
        let got = d.take(len)?;
        if got != name.as_bytes() {
            return Err(d.malformed(format!("tensor {} where {name} was expected", String::from_utf8_lossy(got))));
        }
        let (r, c) = (d.u32()? as usize, d.u32()? as usize);
        if (r, c) != t.shape() {
            return Err(d.malformed(format!("{name} is {r}x{c}, expected {}x{}", t.rows(), t.cols())));
        }
        *t = mat(d, r, c)?;
    }
    if !params.is_finite() {
        return Err(d.malformed("non-finite parameter"));
    }
    Ok(params)
}

/// Fails when an index was built from different parameters.
pub fn check_fingerprint(index: &[u8; 32], checkpoint: &[u8; 32]) -> Result<()> {
    if index != checkpoint {
        return Err(Error::FingerprintMismatch {
            index: fingerprint_hex(index),
            checkpoint: fingerprint_hex(checkpoint),
        });
    }
    Ok(())
}
