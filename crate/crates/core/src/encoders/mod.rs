//! The two encoders that share the style embedding space.

mod linguistic;
mod style;

use alloc::vec::Vec;

pub use linguistic::{GruLayer, LinguisticEncoderParams, TextCache};
pub use style::{StyleCache, StyleEncoderParams};

use crate::data::FeaturePair;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Mat64, Vec64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Deterministic.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EncoderConfig {
    /// Speech frame dimension.
    pub speech_dim: usize,
    /// Token feature dimension.
    pub text_dim: usize,
    /// GRU hidden size.
    pub hidden: usize,
    /// Shared embedding dimension.
    pub style_dim: usize,
    /// Size of the style token bank.
    pub n_tokens: usize,
    /// Attention query/key dimension.
    pub attn_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            speech_dim: 8,
            text_dim: 16,
            hidden: 16,
            style_dim: 8,
            n_tokens: 4,
            attn_dim: 8,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.speech_dim,
            self.text_dim,
            self.hidden,
            self.style_dim,
            self.n_tokens,
            self.attn_dim,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidConfig("encoder dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Parameters of both encoders. The same type doubles as a gradient buffer
/// and as Adam moment storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CalmParams {
    pub style: StyleEncoderParams,
    pub text: LinguisticEncoderParams,
}

impl CalmParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            style: self.style.zeros_like(),
            text: self.text.zeros_like(),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            speech_dim: self.style.input_dim(),
            text_dim: self.text.input_dim(),
            hidden: self.text.hidden(),
            style_dim: self.style.style_dim(),
            n_tokens: self.style.token_bank.rows(),
            attn_dim: self.style.pool_proj.rows(),
            dropout: self.text.dropout,
        }
    }

    /// Every trainable tensor in a fixed order with a stable name.
    pub fn tensors(&self) -> Vec<(&'static str, &Mat64)> {
        let mut out: Vec<(&'static str, &Mat64)> = Vec::with_capacity(24);
        out.push(("style.pool_proj", &self.style.pool_proj));
        out.push(("style.token_bank", &self.style.token_bank));
        out.push(("style.key_proj", &self.style.key_proj));
        for (names, layer) in GRU_NAMES.iter().zip(&self.text.layers) {
            out.extend(names.iter().copied().zip(layer.tensors()));
        }
        out.push(("text.out_proj", &self.text.out_proj));
        out.push(("text.out_bias", &self.text.out_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat64)> {
        let mut out: Vec<(&'static str, &mut Mat64)> = Vec::with_capacity(24);
        out.push(("style.pool_proj", &mut self.style.pool_proj));
        out.push(("style.token_bank", &mut self.style.token_bank));
        out.push(("style.key_proj", &mut self.style.key_proj));
        for (names, layer) in GRU_NAMES.iter().zip(&mut self.text.layers) {
            out.extend(names.iter().copied().zip(layer.tensors_mut()));
        }
        out.push(("text.out_proj", &mut self.text.out_proj));
        out.push(("text.out_bias", &mut self.text.out_bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.as_slice().len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            let len = t.as_slice().len();
            t.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

const GRU_NAMES: [[&str; 9]; 2] = [
    [
        "text.gru0.w_z",
        "text.gru0.w_r",
        "text.gru0.w_h",
        "text.gru0.u_z",
        "text.gru0.u_r",
        "text.gru0.u_h",
        "text.gru0.b_z",
        "text.gru0.b_r",
        "text.gru0.b_h",
    ],
    [
        "text.gru1.w_z",
        "text.gru1.w_r",
        "text.gru1.w_h",
        "text.gru1.u_z",
        "text.gru1.u_r",
        "text.gru1.u_h",
        "text.gru1.b_z",
        "text.gru1.b_r",
        "text.gru1.b_h",
    ],
];

/// Half-width of the uniform init range for a `rows × cols` weight matrix.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    libm::sqrt(6.0 / (rows + cols) as f64)
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Mat64 {
    let a = xavier_bound(rows, cols);
    Mat64::from_fn(rows, cols, |_, _| rng.uniform(-a, a))
}

fn init_layer(input: usize, hidden: usize, rng: &mut Rng) -> GruLayer {
    GruLayer {
        w_z: xavier(hidden, input, rng),
        w_r: xavier(hidden, input, rng),
        w_h: xavier(hidden, input, rng),
        u_z: xavier(hidden, hidden, rng),
        u_r: xavier(hidden, hidden, rng),
        u_h: xavier(hidden, hidden, rng),
        b_z: Mat64::zeros(hidden, 1),
        b_r: Mat64::zeros(hidden, 1),
        b_h: Mat64::zeros(hidden, 1),
    }
}

/// Xavier-uniform weights, zero biases.
pub fn init_params(config: &EncoderConfig, rng: &mut Rng) -> Result<CalmParams> {
    config.validate()?;
    let c = config;
    let style = StyleEncoderParams {
        pool_proj: xavier(c.attn_dim, c.speech_dim, rng),
        token_bank: xavier(c.n_tokens, c.style_dim, rng),
        key_proj: xavier(c.attn_dim, c.style_dim, rng),
    };
    let text = LinguisticEncoderParams {
        layers: [
            init_layer(c.text_dim, c.hidden, rng),
            init_layer(c.hidden, c.hidden, rng),
        ],
        out_proj: xavier(c.style_dim, c.hidden, rng),
        out_bias: Mat64::zeros(c.style_dim, 1),
        dropout: c.dropout,
    };
    Ok(CalmParams { style, text })
}

/// Anything that maps corpus items into the shared embedding space.
pub trait Encoders {
    fn style_embedding(&self, item: &FeaturePair) -> Result<Vec64>;
    fn stf(&self, item: &FeaturePair, mode: Mode, rng: &mut Rng) -> Result<Vec64>;

    fn stf_eval(&self, item: &FeaturePair) -> Result<Vec64> {
        self.stf(item, Mode::Eval, &mut Rng::new(0))
    }
}

impl Encoders for CalmParams {
    fn style_embedding(&self, item: &FeaturePair) -> Result<Vec64> {
        self.style.encode(&item.speech_frames)
    }

    fn stf(&self, item: &FeaturePair, mode: Mode, rng: &mut Rng) -> Result<Vec64> {
        self.text.encode(&item.text_tokens, mode, rng)
    }

    fn stf_eval(&self, item: &FeaturePair) -> Result<Vec64> {
        self.text.encode_eval(&item.text_tokens)
    }
}
