//! Corpus items and the synthetic clustered corpus generator.
//!
//! Synthetic items carry a style cluster (the label) and an independent
//! topic. Speech frames only see the cluster. Token features see both: a
//! style block that weakly encodes the cluster and a louder confound block
//! that encodes the topic. A retriever working on raw token similarity is
//! therefore pulled toward same-topic neighbours instead of same-style ones.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Vec64;

/// One (speech, text) corpus item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub id: String,
    pub speech_frames: Vec<Vec64>,
    pub text_tokens: Vec<Vec64>,
    pub label: Option<String>,
}

impl FeaturePair {
    /// Mean of the raw token vectors; the key used by the semantic control.
    pub fn mean_token(&self) -> Vec64 {
        let dim = self.text_tokens[0].dim();
        let mut acc = alloc::vec![0.0; dim];
        for t in &self.text_tokens {
            for (a, x) in acc.iter_mut().zip(t.as_slice()) {
                *a += x;
            }
        }
        let inv = 1.0 / self.text_tokens.len() as f64;
        Vec64::from_raw(acc.into_iter().map(|a| a * inv).collect())
    }
}

/// Checks non-empty sequences, consistent dimensions and unique ids.
/// Returns `(speech_dim, text_dim)`.
pub fn validate_corpus(items: &[FeaturePair]) -> Result<(usize, usize)> {
    let first = items.first().ok_or(Error::EmptyDataset)?;
    let speech_dim = first.speech_frames.first().ok_or(Error::EmptySequence)?.dim();
    let text_dim = first.text_tokens.first().ok_or(Error::EmptySequence)?.dim();
    let mut seen = BTreeSet::new();
    for item in items {
        if item.speech_frames.is_empty() || item.text_tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        for (expected, seq) in [(speech_dim, &item.speech_frames), (text_dim, &item.text_tokens)] {
            if let Some(v) = seq.iter().find(|v| v.dim() != expected) {
                return Err(Error::DimMismatch {
                    expected,
                    got: v.dim(),
                });
            }
        }
        if !seen.insert(item.id.as_str()) {
            return Err(Error::DuplicateId(item.id.clone()));
        }
    }
    Ok((speech_dim, text_dim))
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SynthSpec {
    /// Number of style clusters (labels).
    pub n_clusters: usize,
    /// Training items per cluster.
    pub items_per_cluster: usize,
    /// Held-out items per cluster.
    pub test_per_cluster: usize,
    pub speech_dim: usize,
    pub text_dim: usize,
    /// Trailing token dimensions that carry the topic instead of the style.
    pub confound_dims: usize,
    pub n_topics: usize,
    /// Squared norm of a topic centroid relative to a style-block centroid.
    pub confound_ratio: f64,
    /// Per-frame speech noise standard deviation.
    pub style_noise: f64,
    /// Per-token noise standard deviation.
    pub text_noise: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_clusters: 6,
            items_per_cluster: 150,
            test_per_cluster: 10,
            speech_dim: 8,
            text_dim: 16,
            confound_dims: 8,
            n_topics: 30,
            confound_ratio: 4.0,
            style_noise: 0.75,
            text_noise: 0.3,
            min_frames: 4,
            max_frames: 8,
            min_tokens: 3,
            max_tokens: 6,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 2 {
            return Err(Error::InvalidConfig("need at least 2 clusters"));
        }
        if self.items_per_cluster < 2 {
            return Err(Error::InvalidConfig("need at least 2 items per cluster"));
        }
        if self.speech_dim == 0 {
            return Err(Error::InvalidConfig("speech_dim must be positive"));
        }
        if self.confound_dims == 0 || self.confound_dims >= self.text_dim {
            return Err(Error::InvalidConfig("confound_dims must lie in 1..text_dim"));
        }
        if self.n_topics == 0 {
            return Err(Error::InvalidConfig("need at least 1 topic"));
        }
        if !(self.style_noise >= 0.0 && self.text_noise >= 0.0 && self.confound_ratio >= 0.0) {
            return Err(Error::InvalidConfig("noise levels and confound ratio must be >= 0"));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::InvalidConfig("frame range must satisfy 1 <= min <= max"));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::InvalidConfig("token range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }

    pub fn style_dims(&self) -> usize {
        self.text_dim - self.confound_dims
    }
}

/// Generated corpus plus the hidden topic assignment of every item.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<FeaturePair>,
    pub test: Vec<FeaturePair>,
    pub train_topics: Vec<usize>,
    pub test_topics: Vec<usize>,
}

pub fn cluster_label(c: usize) -> String {
    format!("style{c}")
}

/// Unit directions; the first `min(count, dim)` are mutually orthogonal.
fn directions(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        if out.len() < dim {
            for u in &out {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        out.push(v);
    }
    out
}

/// Deterministic pure function of `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut geometry = root.derive(1);
    let speech_centroids = directions(spec.n_clusters, spec.speech_dim, &mut geometry);
    let style_centroids = directions(spec.n_clusters, spec.style_dims(), &mut geometry);
    let confound_scale = libm::sqrt(spec.confound_ratio);
    let topic_centroids: Vec<Vec<f64>> = directions(spec.n_topics, spec.confound_dims, &mut geometry)
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * confound_scale).collect())
        .collect();

    let mut items_rng = root.derive(2);
    let mut corpus = SyntheticCorpus {
        train: Vec::new(),
        test: Vec::new(),
        train_topics: Vec::new(),
        test_topics: Vec::new(),
    };
    let per_cluster = spec.items_per_cluster + spec.test_per_cluster;
    for k in 0..per_cluster {
        for c in 0..spec.n_clusters {
            let topic = items_rng.below(spec.n_topics);
            let n_frames = spec.min_frames + items_rng.below(spec.max_frames - spec.min_frames + 1);
            let n_tokens = spec.min_tokens + items_rng.below(spec.max_tokens - spec.min_tokens + 1);
            let speech_frames = (0..n_frames)
                .map(|_| {
                    let f = speech_centroids[c]
                        .iter()
                        .map(|m| m + spec.style_noise * items_rng.gaussian())
                        .collect();
                    Vec64::from_raw(f)
                })
                .collect();
            let text_tokens = (0..n_tokens)
                .map(|_| {
                    let t = style_centroids[c]
                        .iter()
                        .chain(&topic_centroids[topic])
                        .map(|m| m + spec.text_noise * items_rng.gaussian())
                        .collect();
                    Vec64::from_raw(t)
                })
                .collect();
            let (split, topics, prefix) = if k < spec.items_per_cluster {
                (&mut corpus.train, &mut corpus.train_topics, "tr")
            } else {
                (&mut corpus.test, &mut corpus.test_topics, "te")
            };
            split.push(FeaturePair {
                id: format!("{prefix}{:05}", split.len()),
                speech_frames,
                text_tokens,
                label: Some(cluster_label(c)),
            });
            topics.push(topic);
        }
    }
    Ok(corpus)
}
