//! Joint training of the style and linguistic encoders.
//!
//! A run has three phases:
//!
//! 1. pretrain the style encoder alone on a reconstruction objective (a
//!    linear decoder must recover the mean speech frame from the style
//!    embedding), standing in for the TTS system it is normally trained in;
//! 2. freeze a copy of it, embed the training corpus into a [`StyleTable`]
//!    and draw one [`ContrastiveBatch`] per anchor;
//! 3. optimise `l_total = l_tts_proxy + λ·l_calm` with Adam, one anchor per
//!    step in seeded shuffled order.

mod adam;
mod objective;

use alloc::vec;
use alloc::vec::Vec;

pub use adam::{Adam, AdamConfig, AdamState};
pub use objective::{
    batch_loss, batch_loss_and_grad, build_ground_truth, calm_loss, check_gradients,
    predict_similarity_matrix, proxy_tts_loss, relative_error, GradCheckReport, GroundTruthMatrix,
    LossParts, REL_ERROR_FLOOR,
};

use crate::data::{validate_corpus, FeaturePair};
use crate::encoders::{init_params, xavier_bound, CalmParams, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sampling::{build_batches, ContrastiveBatch, StyleTable};
use crate::tensor::Mat64;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    /// Positives (and negatives) per batch.
    pub k: usize,
    /// Weight of `l_calm` in `l_total`.
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Joint training steps. Zero skips every phase, pretraining included.
    pub steps: usize,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub seed: u64,
    /// Keep the style encoder fixed during joint training.
    pub freeze_style: bool,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 20,
            lambda: 1.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            pretrain_steps: 500,
            pretrain_batch: 16,
            pretrain_lr: 1e-2,
            seed: 1,
            freeze_style: false,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.pretrain_lr >= 0.0) {
            return Err(Error::InvalidConfig("learning rates must be finite and >= 0"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1) and eps be positive"));
        }
        if self.pretrain_batch == 0 {
            return Err(Error::InvalidConfig("pretrain_batch must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Losses recorded before the update of joint step `step` (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_calm: f64,
    pub l_tts_proxy: f64,
    pub l_total: f64,
}

pub type TrainStats = Vec<StepRecord>;

/// Linear decoder used only while pretraining the style encoder.
#[derive(Debug, Clone)]
struct Reconstructor {
    weight: Mat64,
    bias: Mat64,
}

/// Pretrains the style encoder in place; returns the per-step loss.
pub fn pretrain_style(
    params: &mut CalmParams,
    dataset: &[FeaturePair],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let d_s = params.style.input_dim();
    let d_e = params.style.style_dim();
    let a = xavier_bound(d_s, d_e);
    let mut dec = Reconstructor {
        weight: Mat64::from_fn(d_s, d_e, |_, _| rng.uniform(-a, a)),
        bias: Mat64::zeros(d_s, 1),
    };
    let mut adam = Adam::new([
        &params.style.pool_proj,
        &params.style.token_bank,
        &params.style.key_proj,
        &dec.weight,
        &dec.bias,
    ]);
    let cfg = AdamConfig {
        lr: config.pretrain_lr,
        ..config.adam()
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(config.pretrain_steps);

    for step in 0..config.pretrain_steps {
        let mut g_style = params.style.zeros_like();
        let mut g_w = Mat64::zeros(d_s, d_e);
        let mut g_b = Mat64::zeros(d_s, 1);
        let scale = 2.0 / (d_s * config.pretrain_batch) as f64;
        let mut loss = 0.0;
        for _ in 0..config.pretrain_batch {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let item = &dataset[order[cursor]];
            cursor += 1;
            let (s, cache) = params.style.forward(&item.speech_frames)?;
            let target = mean_frame(item);
            let mut pred = dec.weight.matvec(s.as_slice());
            let mut d_pred = vec![0.0; d_s];
            for i in 0..d_s {
                pred[i] += dec.bias.as_slice()[i];
                let diff = pred[i] - target[i];
                loss += diff * diff;
                d_pred[i] = scale * diff;
            }
            g_w.add_outer(&d_pred, s.as_slice());
            for (gb, d) in g_b.as_mut_slice().iter_mut().zip(&d_pred) {
                *gb += d;
            }
            let mut d_s_emb = vec![0.0; d_e];
            dec.weight.matvec_t_acc(&d_pred, &mut d_s_emb);
            params.style.backward(&cache, &d_s_emb, &mut g_style);
        }
        let loss = loss / (d_s * config.pretrain_batch) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                l_calm: f64::NAN,
                l_tts_proxy: loss,
            });
        }
        losses.push(loss);
        adam.step(
            vec![
                &mut params.style.pool_proj,
                &mut params.style.token_bank,
                &mut params.style.key_proj,
                &mut dec.weight,
                &mut dec.bias,
            ],
            vec![&g_style.pool_proj, &g_style.token_bank, &g_style.key_proj, &g_w, &g_b],
            &[],
            &cfg,
        );
    }
    Ok(losses)
}

fn mean_frame(item: &FeaturePair) -> Vec<f64> {
    let mut m = vec![0.0; item.speech_frames[0].dim()];
    for f in &item.speech_frames {
        for (a, x) in m.iter_mut().zip(f.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / item.speech_frames.len() as f64;
    m.iter_mut().for_each(|a| *a *= inv);
    m
}

/// One joint update on `batch`. Mutates `params` and `adam`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    step: usize,
    batch: &ContrastiveBatch,
    dataset: &[FeaturePair],
    table: &StyleTable,
    params: &mut CalmParams,
    adam: &mut AdamState,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<StepRecord> {
    let target = table.embedding(batch.anchor);
    let (parts, grads) =
        batch_loss_and_grad(params, dataset, batch, target, config.lambda, Mode::Train, rng)?;
    if !parts.l_total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            l_calm: parts.l_calm,
            l_tts_proxy: parts.l_tts_proxy,
        });
    }
    adam.step(params, &grads, config.freeze_style, &config.adam());
    Ok(StepRecord {
        step,
        l_calm: parts.l_calm,
        l_tts_proxy: parts.l_tts_proxy,
        l_total: parts.l_total,
    })
}

/// Stream ids derived from the run seed.
mod streams {
    pub const INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const ORDER: u64 = 4;
    pub const DROPOUT: u64 = 5;
}

/// Stateful joint trainer; construction runs pretraining and sampling.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    dataset: &'a [FeaturePair],
    config: TrainConfig,
    params: CalmParams,
    adam: AdamState,
    table: StyleTable,
    batches: Vec<ContrastiveBatch>,
    order: Vec<usize>,
    cursor: usize,
    order_rng: Rng,
    dropout_rng: Rng,
    stats: TrainStats,
    pretrain_losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a [FeaturePair], config: TrainConfig) -> Result<Self> {
        let params = Self::initial_params(dataset, &config)?;
        Self::with_params(dataset, config, params)
    }

    /// Validated initial parameters for `config`.
    pub fn initial_params(dataset: &[FeaturePair], config: &TrainConfig) -> Result<CalmParams> {
        config.validate()?;
        let (speech_dim, text_dim) = validate_corpus(dataset)?;
        let enc = &config.encoder;
        if enc.speech_dim != speech_dim {
            return Err(Error::DimMismatch {
                expected: enc.speech_dim,
                got: speech_dim,
            });
        }
        if enc.text_dim != text_dim {
            return Err(Error::DimMismatch {
                expected: enc.text_dim,
                got: text_dim,
            });
        }
        let needed = 2 * config.k + 1;
        if dataset.len() < needed {
            return Err(Error::DatasetTooSmall {
                needed,
                got: dataset.len(),
            });
        }
        init_params(enc, &mut Rng::new(config.seed).derive(streams::INIT))
    }

    fn with_params(dataset: &'a [FeaturePair], config: TrainConfig, mut params: CalmParams) -> Result<Self> {
        let root = Rng::new(config.seed);
        let pretrain_losses = pretrain_style(&mut params, dataset, &config, &mut root.derive(streams::PRETRAIN))?;
        let table = StyleTable::from_corpus(dataset, &params)?;
        let batches = build_batches(&table, config.k, &mut root.derive(streams::SAMPLING))?;
        let mut order_rng = root.derive(streams::ORDER);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order_rng.shuffle(&mut order);
        Ok(Self {
            dataset,
            adam: AdamState::new(&params),
            params,
            table,
            batches,
            order,
            cursor: 0,
            order_rng,
            dropout_rng: root.derive(streams::DROPOUT),
            stats: Vec::with_capacity(config.steps),
            pretrain_losses,
            config,
        })
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        if self.cursor == self.order.len() {
            self.order_rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let anchor = self.order[self.cursor];
        self.cursor += 1;
        let record = train_step(
            self.stats.len(),
            &self.batches[anchor],
            self.dataset,
            &self.table,
            &mut self.params,
            &mut self.adam,
            &self.config,
            &mut self.dropout_rng,
        )?;
        self.stats.push(record);
        Ok(record)
    }

    pub fn steps_done(&self) -> usize {
        self.stats.len()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &CalmParams {
        &self.params
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    pub fn table(&self) -> &StyleTable {
        &self.table
    }

    pub fn batches(&self) -> &[ContrastiveBatch] {
        &self.batches
    }

    pub fn stats(&self) -> &[StepRecord] {
        &self.stats
    }

    pub fn pretrain_losses(&self) -> &[f64] {
        &self.pretrain_losses
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            params: self.params,
            optimizer: Some(self.adam),
            stats: self.stats,
            pretrain_losses: self.pretrain_losses,
            table: Some(self.table),
            batches: self.batches,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: CalmParams,
    /// `None` when no step ran.
    pub optimizer: Option<AdamState>,
    pub stats: TrainStats,
    pub pretrain_losses: Vec<f64>,
    pub table: Option<StyleTable>,
    pub batches: Vec<ContrastiveBatch>,
}

/// Runs every phase for `config.steps` joint steps.
pub fn train_loop(dataset: &[FeaturePair], config: &TrainConfig) -> Result<TrainOutcome> {
    if config.steps == 0 {
        return Ok(TrainOutcome {
            params: Trainer::initial_params(dataset, config)?,
            optimizer: None,
            stats: Vec::new(),
            pretrain_losses: Vec::new(),
            table: None,
            batches: Vec::new(),
        });
    }
    let mut trainer = Trainer::new(dataset, config.clone())?;
    for _ in 0..config.steps {
        trainer.step()?;
    }
    Ok(trainer.finish())
}
