//! The commands as library functions. Each reads its inputs from a
//! [`RunConfig`], writes its artifacts, and returns what it computed.

use std::path::Path;

use calm_core::data::{generate_synthetic, SynthSpec, SyntheticCorpus};
use calm_core::encoders::{CalmParams, Encoders};
use calm_core::evaluation::{semantic_index, Evaluator, Keying, PrecisionReport, QueryPrecision, SweepCurve};
use calm_core::retrieval::{summarize, IndexEntry, ReferenceSet, RetrievalIndex, SummaryResult};
use calm_core::trainer::{check_gradients, GradCheckReport, StepRecord, Trainer};
use calm_core::FeaturePair;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{check_fingerprint, fingerprint_hex, Checkpoint};
use crate::config::{existing, required, RunConfig};
use crate::dataset::{load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::index_file::{load_index, save_index};
use crate::reports;

/// Central-difference step and pass threshold of `--grad-check`.
pub const GRAD_CHECK_H: f64 = 1e-4;
pub const GRAD_CHECK_TOL: f64 = 1e-3;

/// Written into every report so readers know what the TTS term is.
pub const TTS_LOSS_NOTE: &str =
    "proxy: squared error between the softmax-weighted positive style embeddings and the anchor's frozen style embedding";

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Writes `train.jsonl`, `test.jsonl` and `spec.json` under `out_dir`.
pub fn gen_data(spec: &SynthSpec, out_dir: &Path) -> Result<SyntheticCorpus> {
    let corpus = generate_synthetic(spec)?;
    save_dataset(&corpus.train, &out_dir.join("train.jsonl"))?;
    if !corpus.test.is_empty() {
        save_dataset(&corpus.test, &out_dir.join("test.jsonl"))?;
    }
    reports::write_json(&out_dir.join("spec.json"), spec)?;
    Ok(corpus)
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub stats: Vec<StepRecord>,
    pub grad_check: Option<GradCheckReport>,
}

/// Pretraining, sampling and joint training; writes the checkpoint and
/// `stats.csv`. `progress` sees every step.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&StepRecord)) -> Result<TrainResult> {
    cfg.validate()?;
    let data_path = existing(&cfg.paths.dataset, "dataset")?;
    let ckpt_path = required(&cfg.paths.checkpoint, "checkpoint")?;
    let stats_path = cfg.report_dir().join("stats.csv");
    let data = load_dataset(data_path)?;

    if cfg.train.steps == 0 && !cfg.grad_check {
        let ck = Checkpoint::new(Trainer::initial_params(&data, &cfg.train)?);
        ck.save(ckpt_path)?;
        reports::write_stats(&stats_path, &[])?;
        return Ok(TrainResult {
            checkpoint: ck,
            stats: Vec::new(),
            grad_check: None,
        });
    }

    let mut trainer = Trainer::new(&data, cfg.train.clone())?;
    let grad_check = if cfg.grad_check {
        let batch = &trainer.batches()[0];
        let target = trainer.table().embedding(batch.anchor);
        let report = check_gradients(trainer.params(), &data, batch, target, cfg.train.lambda, GRAD_CHECK_H)?;
        if report.max_rel_error.is_nan() || report.max_rel_error >= GRAD_CHECK_TOL {
            return Err(Error::GradCheck {
                max_rel_error: report.max_rel_error,
                tensor: report.worst_tensor,
                index: report.worst_index,
            });
        }
        Some(report)
    } else {
        None
    };

    let snapshot = |t: &Trainer<'_>| Checkpoint {
        params: t.params().clone(),
        optimizer: Some(t.optimizer().clone()),
        step: t.steps_done() as u64,
    };
    for _ in 0..cfg.train.steps {
        let record = trainer.step()?;
        progress(&record);
        let done = trainer.steps_done();
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.train.steps {
            snapshot(&trainer).save(ckpt_path)?;
        }
    }
    let checkpoint = if trainer.steps_done() == 0 {
        Checkpoint::new(Trainer::initial_params(&data, &cfg.train)?)
    } else {
        snapshot(&trainer)
    };
    checkpoint.save(ckpt_path)?;
    reports::write_stats(&stats_path, trainer.stats())?;
    Ok(TrainResult {
        checkpoint,
        stats: trainer.stats().to_vec(),
        grad_check,
    })
}

/// Encodes every item of `data` in eval mode; order follows `data`.
pub fn build_index_parallel(
    data: &[FeaturePair],
    params: &CalmParams,
    fingerprint: [u8; 32],
    threads: usize,
) -> Result<RetrievalIndex> {
    if data.is_empty() {
        return Err(calm_core::Error::EmptyDataset.into());
    }
    let entries = pool(threads)?.install(|| {
        data.par_iter()
            .map(|item| {
                Ok(IndexEntry {
                    id: item.id.clone(),
                    stf: params.stf_eval(item)?,
                    style: params.style_embedding(item)?,
                    label: item.label.clone(),
                })
            })
            .collect::<calm_core::Result<Vec<_>>>()
    })?;
    Ok(RetrievalIndex::new(entries, fingerprint)?)
}

pub fn index(cfg: &RunConfig) -> Result<RetrievalIndex> {
    cfg.validate()?;
    let ckpt_path = existing(&cfg.paths.checkpoint, "checkpoint")?;
    let data_path = existing(&cfg.paths.dataset, "dataset")?;
    let out = required(&cfg.paths.index, "index")?;
    let ck = Checkpoint::load(ckpt_path)?;
    let data = load_dataset(data_path)?;
    let index = build_index_parallel(&data, &ck.params, ck.fingerprint(), cfg.threads)?;
    save_index(&index, out)?;
    Ok(index)
}

/// Checkpoint and index, verified to belong together.
pub fn load_pair(cfg: &RunConfig) -> Result<(Checkpoint, RetrievalIndex)> {
    let ck = Checkpoint::load(existing(&cfg.paths.checkpoint, "checkpoint")?)?;
    let index = load_index(existing(&cfg.paths.index, "index")?)?;
    check_fingerprint(index.fingerprint(), &ck.fingerprint())?;
    Ok((ck, index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub refs: ReferenceSet,
    pub summary: SummaryResult,
}

/// Top-N references and the summarized style for one query item.
pub fn retrieve(params: &CalmParams, index: &RetrievalIndex, query: &FeaturePair, n: usize, exclude_self: bool) -> Result<Retrieval> {
    let t0 = params.stf_eval(query)?;
    let refs = index.query_top_n_excluding(&t0, n, exclude_self.then_some(query.id.as_str()))?;
    let summary = summarize(&refs, &t0)?;
    Ok(Retrieval { refs, summary })
}

fn par_precision<E: Encoders + Sync + ?Sized>(ev: &Evaluator<'_, E>, test: &[FeaturePair], n: usize) -> Result<PrecisionReport> {
    if test.is_empty() {
        return Err(calm_core::Error::EmptyDataset.into());
    }
    let queries = test
        .par_iter()
        .map(|item| Ok(ev.precision(std::slice::from_ref(item), n)?.queries.remove(0)))
        .collect::<Result<Vec<QueryPrecision>>>()?;
    let mean_precision = queries.iter().fold(0.0, |a, q| a + q.precision) / queries.len() as f64;
    Ok(PrecisionReport { queries, mean_precision })
}

fn par_sweep<E: Encoders + Sync + ?Sized>(ev: &Evaluator<'_, E>, test: &[FeaturePair], n_values: &[usize]) -> Result<SweepCurve> {
    if test.is_empty() {
        return Err(calm_core::Error::EmptyDataset.into());
    }
    let per_item = test
        .par_iter()
        .map(|item| Ok(ev.sweep(std::slice::from_ref(item), n_values)?.points))
        .collect::<Result<Vec<_>>>()?;
    let count = test.len() as f64;
    let points = n_values
        .iter()
        .enumerate()
        .map(|(j, &n)| (n, per_item.iter().fold(0.0, |a, p| a + p[j].1) / count))
        .collect();
    Ok(SweepCurve {
        points,
        n_queries: test.len(),
        index_size: ev.index.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub mean_precision: f64,
    pub mean_style_similarity: f64,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub n: usize,
    pub calm: PrecisionReport,
    pub control: PrecisionReport,
    pub calm_similarity: f64,
    pub control_similarity: f64,
    pub fingerprint: [u8; 32],
}

impl EvalResult {
    pub fn calm_summary(&self) -> MethodSummary {
        MethodSummary {
            mean_precision: self.calm.mean_precision,
            mean_style_similarity: self.calm_similarity,
        }
    }

    pub fn control_summary(&self) -> MethodSummary {
        MethodSummary {
            mean_precision: self.control.mean_precision,
            mean_style_similarity: self.control_similarity,
        }
    }
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    n: usize,
    queries: usize,
    index_size: usize,
    allow_self_match: bool,
    checkpoint_fingerprint: String,
    calm: MethodSummary,
    semantic_control: MethodSummary,
    tts_loss: &'static str,
    config: &'a RunConfig,
}

/// Precision and style similarity at `cfg.n` for the STF retrieval and
/// for the raw-token semantic control. The control ranks the training
/// dataset by mean token vector, so `paths.dataset` is needed too.
pub fn evaluate(cfg: &RunConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let test_path = existing(&cfg.paths.test_dataset, "test dataset")?;
    let data_path = existing(&cfg.paths.dataset, "dataset")?;
    let (ck, index) = load_pair(cfg)?;
    let test = load_dataset(test_path)?;
    let data = load_dataset(data_path)?;
    let pool = pool(cfg.threads)?;
    let fp = ck.fingerprint();
    let result = pool.install(|| -> Result<EvalResult> {
        let control_index = semantic_index(&data, &ck.params, fp)?;
        let calm = Evaluator::new(&index, &ck.params).allow_self_match(cfg.allow_self_match);
        let control = Evaluator::new(&control_index, &ck.params)
            .keying(Keying::SemanticControl)
            .allow_self_match(cfg.allow_self_match);
        Ok(EvalResult {
            n: cfg.n,
            calm: par_precision(&calm, &test, cfg.n)?,
            control: par_precision(&control, &test, cfg.n)?,
            calm_similarity: par_sweep(&calm, &test, &[cfg.n])?.points[0].1,
            control_similarity: par_sweep(&control, &test, &[cfg.n])?.points[0].1,
            fingerprint: fp,
        })
    })?;
    let dir = cfg.report_dir();
    reports::write_precision(&dir.join("precision.csv"), &result.calm)?;
    reports::write_precision(&dir.join("precision_control.csv"), &result.control)?;
    reports::write_json(
        &dir.join("summary.json"),
        &EvalSummary {
            n: cfg.n,
            queries: test.len(),
            index_size: index.len(),
            allow_self_match: cfg.allow_self_match,
            checkpoint_fingerprint: fingerprint_hex(&fp),
            calm: result.calm_summary(),
            semantic_control: result.control_summary(),
            tts_loss: TTS_LOSS_NOTE,
            config: cfg,
        },
    )?;
    Ok(result)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    n_values: &'a [usize],
    queries: usize,
    index_size: usize,
    argmax_n: Option<usize>,
    checkpoint_fingerprint: String,
    tts_loss: &'static str,
    config: &'a RunConfig,
}

/// Style similarity over `cfg.n_values`; writes `sweep.csv`.
pub fn sweep(cfg: &RunConfig) -> Result<SweepCurve> {
    cfg.validate()?;
    let test_path = existing(&cfg.paths.test_dataset, "test dataset")?;
    let (ck, index) = load_pair(cfg)?;
    let test = load_dataset(test_path)?;
    let ev = Evaluator::new(&index, &ck.params).allow_self_match(cfg.allow_self_match);
    let curve = pool(cfg.threads)?.install(|| par_sweep(&ev, &test, &cfg.n_values))?;
    let dir = cfg.report_dir();
    reports::write_sweep(&dir.join("sweep.csv"), &curve)?;
    reports::write_json(
        &dir.join("sweep_summary.json"),
        &SweepSummary {
            n_values: &cfg.n_values,
            queries: curve.n_queries,
            index_size: curve.index_size,
            argmax_n: curve.argmax(),
            checkpoint_fingerprint: fingerprint_hex(&ck.fingerprint()),
            tts_loss: TTS_LOSS_NOTE,
            config: cfg,
        },
    )?;
    Ok(curve)
}
