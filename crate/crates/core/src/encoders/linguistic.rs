//! Linguistic encoder: two stacked GRU layers over the token features, the
//! final hidden state of the top layer, inverted dropout and an affine
//! projection into the style space.

use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{sigmoid, Mat64, Vec64};

/// One GRU layer. `w_*` are `H × input`, `u_*` are `H × H`, `b_*` are `H × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub w_z: Mat64,
    pub w_r: Mat64,
    pub w_h: Mat64,
    pub u_z: Mat64,
    pub u_r: Mat64,
    pub u_h: Mat64,
    pub b_z: Mat64,
    pub b_r: Mat64,
    pub b_h: Mat64,
}

#[derive(Debug, Clone)]
struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    r_h: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    inputs: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Mat64::zeros(hidden, input);
        let u = || Mat64::zeros(hidden, hidden);
        let b = || Mat64::zeros(hidden, 1);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden(&self) -> usize {
        self.u_z.rows()
    }

    /// Tensors in the order `w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h`.
    pub(crate) fn tensors(&self) -> [&Mat64; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Mat64; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    fn forward(&self, inputs: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, LayerCache) {
        let hidden = self.hidden();
        let mut h = vec![0.0; hidden];
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        let mut tmp = vec![0.0; hidden];
        for x in &inputs {
            let mut z = self.w_z.matvec(x);
            self.u_z.matvec_into(&h, &mut tmp);
            for i in 0..hidden {
                z[i] = sigmoid(z[i] + tmp[i] + self.b_z.as_slice()[i]);
            }
            let mut r = self.w_r.matvec(x);
            self.u_r.matvec_into(&h, &mut tmp);
            for i in 0..hidden {
                r[i] = sigmoid(r[i] + tmp[i] + self.b_r.as_slice()[i]);
            }
            let r_h: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
            let mut cand = self.w_h.matvec(x);
            self.u_h.matvec_into(&r_h, &mut tmp);
            for i in 0..hidden {
                cand[i] = libm::tanh(cand[i] + tmp[i] + self.b_h.as_slice()[i]);
            }
            let next: Vec<f64> = (0..hidden)
                .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
                .collect();
            steps.push(GruStep {
                h_prev: core::mem::replace(&mut h, next),
                z,
                r,
                cand,
                r_h,
            });
            outputs.push(h.clone());
        }
        (outputs, LayerCache { inputs, steps })
    }

    /// Backpropagation through time. `d_outputs[t]` is the gradient arriving
    /// at `h_t` from outside the recurrence. Returns the gradient wrt each input.
    fn backward(&self, cache: &LayerCache, d_outputs: &[Vec<f64>], grads: &mut Self) -> Vec<Vec<f64>> {
        let hidden = self.hidden();
        let len = cache.steps.len();
        let mut d_inputs = vec![vec![0.0; self.input_dim()]; len];
        let mut carry = vec![0.0; hidden];
        for t in (0..len).rev() {
            let step = &cache.steps[t];
            let x = &cache.inputs[t];
            let dh: Vec<f64> = carry.iter().zip(&d_outputs[t]).map(|(a, b)| a + b).collect();

            let mut d_prev: Vec<f64> = (0..hidden).map(|i| dh[i] * (1.0 - step.z[i])).collect();
            let d_cand_pre: Vec<f64> = (0..hidden)
                .map(|i| dh[i] * step.z[i] * (1.0 - step.cand[i] * step.cand[i]))
                .collect();
            let d_z_pre: Vec<f64> = (0..hidden)
                .map(|i| {
                    dh[i] * (step.cand[i] - step.h_prev[i]) * step.z[i] * (1.0 - step.z[i])
                })
                .collect();

            grads.w_h.add_outer(&d_cand_pre, x);
            grads.u_h.add_outer(&d_cand_pre, &step.r_h);
            add_into(grads.b_h.as_mut_slice(), &d_cand_pre);
            let mut d_rh = vec![0.0; hidden];
            self.u_h.matvec_t_acc(&d_cand_pre, &mut d_rh);
            self.w_h.matvec_t_acc(&d_cand_pre, &mut d_inputs[t]);

            let d_r_pre: Vec<f64> = (0..hidden)
                .map(|i| d_rh[i] * step.h_prev[i] * step.r[i] * (1.0 - step.r[i]))
                .collect();
            for i in 0..hidden {
                d_prev[i] += d_rh[i] * step.r[i];
            }

            grads.w_z.add_outer(&d_z_pre, x);
            grads.u_z.add_outer(&d_z_pre, &step.h_prev);
            add_into(grads.b_z.as_mut_slice(), &d_z_pre);
            self.u_z.matvec_t_acc(&d_z_pre, &mut d_prev);
            self.w_z.matvec_t_acc(&d_z_pre, &mut d_inputs[t]);

            grads.w_r.add_outer(&d_r_pre, x);
            grads.u_r.add_outer(&d_r_pre, &step.h_prev);
            add_into(grads.b_r.as_mut_slice(), &d_r_pre);
            self.u_r.matvec_t_acc(&d_r_pre, &mut d_prev);
            self.w_r.matvec_t_acc(&d_r_pre, &mut d_inputs[t]);

            carry = d_prev;
        }
        d_inputs
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticEncoderParams {
    pub layers: [GruLayer; 2],
    /// `d_e × H`.
    pub out_proj: Mat64,
    /// `d_e × 1`.
    pub out_bias: Mat64,
    /// Dropout rate on the final hidden state, in `[0, 1)`. Not trained.
    pub dropout: f64,
}

/// Activations kept from a forward pass for [`LinguisticEncoderParams::backward`].
#[derive(Debug, Clone)]
pub struct TextCache {
    layers: [LayerCache; 2],
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
}

impl LinguisticEncoderParams {
    pub fn zeros_like(&self) -> Self {
        let [l1, l2] = &self.layers;
        Self {
            layers: [
                GruLayer::zeros(l1.input_dim(), l1.hidden()),
                GruLayer::zeros(l2.input_dim(), l2.hidden()),
            ],
            out_proj: Mat64::zeros(self.out_proj.rows(), self.out_proj.cols()),
            out_bias: Mat64::zeros(self.out_bias.rows(), 1),
            dropout: self.dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.layers[1].hidden()
    }

    pub fn style_dim(&self) -> usize {
        self.out_proj.rows()
    }

    pub fn encode(&self, tokens: &[Vec64], mode: Mode, rng: &mut Rng) -> Result<Vec64> {
        self.forward(tokens, mode, rng).map(|(out, _)| out)
    }

    /// Deterministic eval-mode encoding; draws nothing from any generator.
    pub fn encode_eval(&self, tokens: &[Vec64]) -> Result<Vec64> {
        self.forward_inner(tokens, None).map(|(out, _)| out)
    }

    pub fn forward(&self, tokens: &[Vec64], mode: Mode, rng: &mut Rng) -> Result<(Vec64, TextCache)> {
        match mode {
            Mode::Train if self.dropout > 0.0 => self.forward_inner(tokens, Some(rng)),
            _ => self.forward_inner(tokens, None),
        }
    }

    fn forward_inner(&self, tokens: &[Vec64], rng: Option<&mut Rng>) -> Result<(Vec64, TextCache)> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let d_t = self.input_dim();
        let mut inputs = Vec::with_capacity(tokens.len());
        for t in tokens {
            if t.dim() != d_t {
                return Err(Error::DimMismatch {
                    expected: d_t,
                    got: t.dim(),
                });
            }
            inputs.push(t.as_slice().to_vec());
        }
        let (mid, c1) = self.layers[0].forward(inputs);
        let (top, c2) = self.layers[1].forward(mid);
        let last = top.last().expect("non-empty sequence");

        let mask = rng.map(|rng| {
            let keep = 1.0 / (1.0 - self.dropout);
            (0..last.len())
                .map(|_| if rng.next_f64() < self.dropout { 0.0 } else { keep })
                .collect::<Vec<f64>>()
        });
        let dropped: Vec<f64> = match &mask {
            Some(m) => last.iter().zip(m).map(|(h, k)| h * k).collect(),
            None => last.clone(),
        };
        let mut out = self.out_proj.matvec(&dropped);
        add_into(&mut out, self.out_bias.as_slice());
        Ok((
            Vec64::from_raw(out),
            TextCache {
                layers: [c1, c2],
                mask,
                dropped,
            },
        ))
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/d(output)`.
    pub fn backward(&self, cache: &TextCache, grad_out: &[f64], grads: &mut Self) {
        debug_assert_eq!(grad_out.len(), self.style_dim());
        grads.out_proj.add_outer(grad_out, &cache.dropped);
        add_into(grads.out_bias.as_mut_slice(), grad_out);

        let mut d_last = vec![0.0; self.hidden()];
        self.out_proj.matvec_t_acc(grad_out, &mut d_last);
        if let Some(mask) = &cache.mask {
            for (d, m) in d_last.iter_mut().zip(mask) {
                *d *= m;
            }
        }

        let len = cache.layers[1].steps.len();
        let mut d_top = vec![vec![0.0; self.hidden()]; len];
        d_top[len - 1] = d_last;
        let [g1, g2] = &mut grads.layers;
        let d_mid = self.layers[1].backward(&cache.layers[1], &d_top, g2);
        self.layers[0].backward(&cache.layers[0], &d_mid, g1);
    }
}
