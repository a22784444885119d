use alloc::vec::Vec;

use crate::encoders::CalmParams;
use crate::tensor::Mat64;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over an ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Mat64>,
    pub v: Vec<Mat64>,
    /// Number of updates applied.
    pub t: u64,
}

impl Adam {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Mat64>) -> Self {
        let m: Vec<Mat64> = shapes
            .into_iter()
            .map(|p| Mat64::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// `frozen[i]` leaves tensor `i` and its moments untouched.
    pub fn step(&mut self, params: Vec<&mut Mat64>, grads: Vec<&Mat64>, frozen: &[bool], cfg: &AdamConfig) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(cfg.beta1, t);
        let bc2 = 1.0 - libm::pow(cfg.beta2, t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (((pj, &gj), mj), vj) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
                *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *pj -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
        }
    }
}

/// Adam state for the full encoder parameter set, tensors in
/// [`CalmParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub inner: Adam,
}

impl AdamState {
    pub fn new(params: &CalmParams) -> Self {
        Self {
            inner: Adam::new(params.tensors().into_iter().map(|(_, t)| t)),
        }
    }

    pub fn step(&mut self, params: &mut CalmParams, grads: &CalmParams, freeze_style: bool, cfg: &AdamConfig) {
        let names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
        let frozen: Vec<bool> = names
            .iter()
            .map(|n| freeze_style && n.starts_with("style."))
            .collect();
        let p = params.tensors_mut().into_iter().map(|(_, t)| t).collect();
        let g = grads.tensors().into_iter().map(|(_, t)| t).collect();
        self.inner.step(p, g, &frozen, cfg);
    }
}
