//! Contrastive and proxy losses, and their analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::FeaturePair;
use crate::encoders::{CalmParams, Encoders, Mode, StyleCache, TextCache};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sampling::{ContrastiveBatch, StyleTable};
use crate::tensor::{cosine_slices, dot, mse, norm, softmax_backward, softmax_slice, Mat64, Vec64, ZERO_NORM};

/// The `2K × 2K` ±1 target for a batch of `K` positives followed by `K`
/// negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMatrix {
    pub m: Mat64,
}

impl GroundTruthMatrix {
    pub fn k(&self) -> usize {
        self.m.rows() / 2
    }
}

/// `+1` where both indices are positives or on the diagonal of the negative
/// block, `-1` elsewhere.
pub fn build_ground_truth(k: usize) -> Result<GroundTruthMatrix> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1"));
    }
    let n = 2 * k;
    let m = Mat64::from_fn(n, n, |i, j| {
        if (i < k && j < k) || (i == j && i >= k) {
            1.0
        } else {
            -1.0
        }
    });
    Ok(GroundTruthMatrix { m })
}

/// Entry `(i, j)` is the cosine between the style embedding of member `i`
/// and the STF of member `j`, members ordered positives first.
///
/// STFs are drawn in member order, so `rng` consumption matches training.
pub fn predict_similarity_matrix<E: Encoders + ?Sized>(
    batch: &ContrastiveBatch,
    dataset: &[FeaturePair],
    encoders: &E,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Mat64> {
    let members: Vec<&FeaturePair> = batch.members().map(|i| &dataset[i]).collect();
    let styles = members
        .iter()
        .map(|it| encoders.style_embedding(it))
        .collect::<Result<Vec<_>>>()?;
    let stfs = members
        .iter()
        .map(|it| encoders.stf(it, mode, rng))
        .collect::<Result<Vec<_>>>()?;
    similarity_matrix(&styles, &stfs)
}

fn similarity_matrix(styles: &[Vec64], stfs: &[Vec64]) -> Result<Mat64> {
    let n = styles.len();
    let mut m = Mat64::zeros(n, n);
    for (i, s) in styles.iter().enumerate() {
        for (j, t) in stfs.iter().enumerate() {
            m[(i, j)] = cosine_slices(s.as_slice(), t.as_slice())?;
        }
    }
    Ok(m)
}

/// Mean squared error between predicted and target similarity matrices.
pub fn calm_loss(pred: &Mat64, truth: &GroundTruthMatrix) -> Result<f64> {
    mse(pred, &truth.m)
}

/// Softmax weights over `T·t0` and the weighted sum of the style rows.
pub(crate) fn weighted_style(stfs: &[&[f64]], t0: &[f64], styles: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = stfs.iter().map(|t| dot(t, t0)).collect();
    let w = softmax_slice(&logits);
    let mut out = vec![0.0; styles[0].len()];
    for (wk, s) in w.iter().zip(styles) {
        for (o, x) in out.iter_mut().zip(*s) {
            *o += wk * x;
        }
    }
    (w, out)
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Reconstruct the anchor's frozen style embedding from its positives,
/// weighting their style embeddings by the softmax over STF dot products.
pub fn proxy_tts_loss<E: Encoders + ?Sized>(
    batch: &ContrastiveBatch,
    dataset: &[FeaturePair],
    encoders: &E,
    table: &StyleTable,
    mode: Mode,
    rng: &mut Rng,
) -> Result<f64> {
    let target = table.embedding(batch.anchor);
    let mut stfs = Vec::with_capacity(batch.k());
    let mut styles = Vec::with_capacity(batch.k());
    for &p in &batch.positives {
        styles.push(encoders.style_embedding(&dataset[p])?);
        stfs.push(encoders.stf(&dataset[p], mode, rng)?);
    }
    let t0 = encoders.stf(&dataset[batch.anchor], mode, rng)?;
    let stf_rows: Vec<&[f64]> = stfs.iter().map(|v| v.as_slice()).collect();
    let style_rows: Vec<&[f64]> = styles.iter().map(|v| v.as_slice()).collect();
    if target.dim() != style_rows[0].len() {
        return Err(Error::DimMismatch {
            expected: style_rows[0].len(),
            got: target.dim(),
        });
    }
    let (_, final_style) = weighted_style(&stf_rows, t0.as_slice(), &style_rows);
    Ok(mean_sq_diff(&final_style, target.as_slice()))
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub l_calm: f64,
    pub l_tts_proxy: f64,
    pub l_total: f64,
}

struct Forward {
    styles: Vec<(Vec64, StyleCache)>,
    stfs: Vec<(Vec64, TextCache)>,
    anchor: (Vec64, TextCache),
    pred: Mat64,
    weights: Vec<f64>,
    final_style: Vec<f64>,
    parts: LossParts,
}

fn forward(
    params: &CalmParams,
    dataset: &[FeaturePair],
    batch: &ContrastiveBatch,
    target: &Vec64,
    lambda: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Forward> {
    let k = batch.k();
    let members: Vec<usize> = batch.members().collect();
    let styles = members
        .iter()
        .map(|&i| params.style.forward(&dataset[i].speech_frames))
        .collect::<Result<Vec<_>>>()?;
    let stfs = members
        .iter()
        .map(|&i| params.text.forward(&dataset[i].text_tokens, mode, rng))
        .collect::<Result<Vec<_>>>()?;
    let anchor = params.text.forward(&dataset[batch.anchor].text_tokens, mode, rng)?;

    let style_vecs: Vec<Vec64> = styles.iter().map(|(v, _)| v.clone()).collect();
    let stf_vecs: Vec<Vec64> = stfs.iter().map(|(v, _)| v.clone()).collect();
    let pred = similarity_matrix(&style_vecs, &stf_vecs)?;
    let l_calm = calm_loss(&pred, &build_ground_truth(k)?)?;

    let stf_rows: Vec<&[f64]> = stfs[..k].iter().map(|(v, _)| v.as_slice()).collect();
    let style_rows: Vec<&[f64]> = styles[..k].iter().map(|(v, _)| v.as_slice()).collect();
    let (weights, final_style) = weighted_style(&stf_rows, anchor.0.as_slice(), &style_rows);
    let l_tts_proxy = mean_sq_diff(&final_style, target.as_slice());

    Ok(Forward {
        styles,
        stfs,
        anchor,
        pred,
        weights,
        final_style,
        parts: LossParts {
            l_calm,
            l_tts_proxy,
            l_total: l_tts_proxy + lambda * l_calm,
        },
    })
}

/// `l_total = l_tts_proxy + λ·l_calm` without gradients.
pub fn batch_loss(
    params: &CalmParams,
    dataset: &[FeaturePair],
    batch: &ContrastiveBatch,
    target: &Vec64,
    lambda: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<LossParts> {
    forward(params, dataset, batch, target, lambda, mode, rng).map(|f| f.parts)
}

/// Accumulates `d cos(a, b)` into `da` and `db`, scaled by `g`.
fn cosine_backward(a: &[f64], b: &[f64], cos: f64, g: f64, da: &mut [f64], db: &mut [f64]) {
    let na = norm(a).max(ZERO_NORM);
    let nb = norm(b).max(ZERO_NORM);
    let inv = 1.0 / (na * nb);
    let ca = cos / (na * na);
    let cb = cos / (nb * nb);
    for i in 0..a.len() {
        da[i] += g * (b[i] * inv - ca * a[i]);
        db[i] += g * (a[i] * inv - cb * b[i]);
    }
}

/// Losses and the analytic gradient of `l_total` wrt every parameter.
pub fn batch_loss_and_grad(
    params: &CalmParams,
    dataset: &[FeaturePair],
    batch: &ContrastiveBatch,
    target: &Vec64,
    lambda: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(LossParts, CalmParams)> {
    let fw = forward(params, dataset, batch, target, lambda, mode, rng)?;
    let k = batch.k();
    let n = 2 * k;
    let d_e = params.style.style_dim();
    let truth = build_ground_truth(k)?;

    let mut d_styles = vec![vec![0.0; d_e]; n];
    let mut d_stfs = vec![vec![0.0; d_e]; n];
    let mut d_anchor = vec![0.0; d_e];

    // λ · d mse / d pred
    let coef = lambda * 2.0 / (n * n) as f64;
    if coef != 0.0 {
        for (i, ds) in d_styles.iter_mut().enumerate() {
            for (j, dt) in d_stfs.iter_mut().enumerate() {
                let g = coef * (fw.pred[(i, j)] - truth.m[(i, j)]);
                let (s, t) = (fw.styles[i].0.as_slice(), fw.stfs[j].0.as_slice());
                cosine_backward(s, t, fw.pred[(i, j)], g, ds, dt);
            }
        }
    }

    // proxy: final = Σ w_k s_k, w = softmax(t_k · t0)
    let d_final: Vec<f64> = fw
        .final_style
        .iter()
        .zip(target.as_slice())
        .map(|(f, y)| 2.0 * (f - y) / d_e as f64)
        .collect();
    let mut d_w = vec![0.0; k];
    for p in 0..k {
        let s = fw.styles[p].0.as_slice();
        d_w[p] = dot(&d_final, s);
        for (ds, df) in d_styles[p].iter_mut().zip(&d_final) {
            *ds += fw.weights[p] * df;
        }
    }
    let d_logits = softmax_backward(&fw.weights, &d_w);
    let t0 = fw.anchor.0.as_slice();
    for p in 0..k {
        let t = fw.stfs[p].0.as_slice();
        for c in 0..d_e {
            d_stfs[p][c] += d_logits[p] * t0[c];
            d_anchor[c] += d_logits[p] * t[c];
        }
    }

    let mut grads = params.zeros_like();
    for (i, (_, cache)) in fw.styles.iter().enumerate() {
        params.style.backward(cache, &d_styles[i], &mut grads.style);
    }
    for (j, (_, cache)) in fw.stfs.iter().enumerate() {
        params.text.backward(cache, &d_stfs[j], &mut grads.text);
    }
    params.text.backward(&fw.anchor.1, &d_anchor, &mut grads.text);
    Ok((fw.parts, grads))
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
}

/// Gradients smaller than this in both routes are compared on an absolute
/// scale: `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of `l_total` with central finite
/// differences over every parameter. Evaluated in eval mode (no dropout).
pub fn check_gradients(
    params: &CalmParams,
    dataset: &[FeaturePair],
    batch: &ContrastiveBatch,
    target: &Vec64,
    lambda: f64,
    h: f64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(0);
    let (_, grads) = batch_loss_and_grad(params, dataset, batch, target, lambda, Mode::Eval, &mut rng)?;
    let analytic = grads.flatten();
    let mut probe = params.clone();
    let mut failure = None;
    let numeric = crate::tensor::finite_diff_grad(
        |theta| {
            if probe.load_flat(theta).is_err() {
                return f64::NAN;
            }
            match batch_loss(&probe, dataset, batch, target, lambda, Mode::Eval, &mut rng) {
                Ok(p) => p.l_total,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &params.flatten(),
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let numeric = numeric?;

    let names: Vec<(&'static str, usize)> = params
        .tensors()
        .iter()
        .flat_map(|(name, t)| (0..t.as_slice().len()).map(move |i| (*name, i)))
        .collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: names[0].0,
        worst_index: 0,
        analytic: analytic[0],
        numeric: numeric[0],
        n_params: analytic.len(),
    };
    for (idx, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_tensor = names[idx].0;
            report.worst_index = names[idx].1;
            report.analytic = *a;
            report.numeric = *n;
        }
    }
    Ok(report)
}
