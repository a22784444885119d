//! Style encoder: mean-pool the speech frames, project to a query, attend
//! over a learned token bank and return the attention-weighted token mix.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{dot, softmax_backward, softmax_slice, Mat64, Vec64};

#[derive(Debug, Clone, PartialEq)]
pub struct StyleEncoderParams {
    /// `d_q × D_s`, no bias.
    pub pool_proj: Mat64,
    /// `n_tok × d_e`.
    pub token_bank: Mat64,
    /// `d_q × d_e`, applied to `tanh(token)`.
    pub key_proj: Mat64,
}

/// Activations kept from a forward pass for [`StyleEncoderParams::backward`].
#[derive(Debug, Clone)]
pub struct StyleCache {
    mean: Vec<f64>,
    query: Vec<f64>,
    squashed: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl StyleCache {
    pub fn attention(&self) -> &[f64] {
        &self.alpha
    }
}

impl StyleEncoderParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            pool_proj: Mat64::zeros(self.pool_proj.rows(), self.pool_proj.cols()),
            token_bank: Mat64::zeros(self.token_bank.rows(), self.token_bank.cols()),
            key_proj: Mat64::zeros(self.key_proj.rows(), self.key_proj.cols()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.pool_proj.cols()
    }

    pub fn style_dim(&self) -> usize {
        self.token_bank.cols()
    }

    pub fn encode(&self, frames: &[Vec64]) -> Result<Vec64> {
        self.forward(frames).map(|(out, _)| out)
    }

    pub fn forward(&self, frames: &[Vec64]) -> Result<(Vec64, StyleCache)> {
        let d_s = self.input_dim();
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut mean = vec![0.0; d_s];
        for f in frames {
            if f.dim() != d_s {
                return Err(Error::DimMismatch {
                    expected: d_s,
                    got: f.dim(),
                });
            }
            for (m, x) in mean.iter_mut().zip(f.as_slice()) {
                *m += x;
            }
        }
        let inv = 1.0 / frames.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);

        let query: Vec<f64> = self.pool_proj.matvec(&mean).into_iter().map(libm::tanh).collect();
        let scale = 1.0 / libm::sqrt(query.len() as f64);

        let n_tok = self.token_bank.rows();
        let mut squashed = Vec::with_capacity(n_tok);
        let mut keys = Vec::with_capacity(n_tok);
        let mut scores = Vec::with_capacity(n_tok);
        for k in 0..n_tok {
            let u: Vec<f64> = self.token_bank.row(k).iter().map(|&x| libm::tanh(x)).collect();
            let key = self.key_proj.matvec(&u);
            scores.push(dot(&query, &key) * scale);
            squashed.push(u);
            keys.push(key);
        }
        let alpha = softmax_slice(&scores);

        let mut out = vec![0.0; self.style_dim()];
        for (k, &a) in alpha.iter().enumerate() {
            for (o, &b) in out.iter_mut().zip(self.token_bank.row(k)) {
                *o += a * b;
            }
        }
        Ok((
            Vec64::from_raw(out),
            StyleCache {
                mean,
                query,
                squashed,
                keys,
                alpha,
            },
        ))
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/d(output)`.
    pub fn backward(&self, cache: &StyleCache, grad_out: &[f64], grads: &mut Self) {
        debug_assert_eq!(grad_out.len(), self.style_dim());
        let scale = 1.0 / libm::sqrt(cache.query.len() as f64);

        let d_alpha: Vec<f64> = (0..self.token_bank.rows())
            .map(|k| dot(grad_out, self.token_bank.row(k)))
            .collect();
        for (k, &a) in cache.alpha.iter().enumerate() {
            for (g, &go) in grads.token_bank.row_mut(k).iter_mut().zip(grad_out) {
                *g += a * go;
            }
        }
        let d_scores = softmax_backward(&cache.alpha, &d_alpha);

        let mut d_query = vec![0.0; cache.query.len()];
        for (k, &ds) in d_scores.iter().enumerate() {
            let ds = ds * scale;
            for (dq, &kk) in d_query.iter_mut().zip(&cache.keys[k]) {
                *dq += ds * kk;
            }
            let d_key: Vec<f64> = cache.query.iter().map(|q| ds * q).collect();
            grads.key_proj.add_outer(&d_key, &cache.squashed[k]);
            let mut d_u = vec![0.0; self.style_dim()];
            self.key_proj.matvec_t_acc(&d_key, &mut d_u);
            for ((g, du), u) in grads
                .token_bank
                .row_mut(k)
                .iter_mut()
                .zip(&d_u)
                .zip(&cache.squashed[k])
            {
                *g += du * (1.0 - u * u);
            }
        }

        let d_pre: Vec<f64> = d_query
            .iter()
            .zip(&cache.query)
            .map(|(d, q)| d * (1.0 - q * q))
            .collect();
        grads.pool_proj.add_outer(&d_pre, &cache.mean);
    }
}
