//! Top-N reference selection and weighted style summarization.
//!
//! Ranking uses cosine similarity between the query STF and each indexed
//! STF. The summary weights use raw dot products, `w = softmax(T·t0)`, and
//! the final style embedding is `wᵀS`.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::FeaturePair;
use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::sampling::by_similarity_then_id;
use crate::tensor::{cosine_slices, dot, softmax_slice, Mat64, Vec64};

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    /// Ranking key; the STF for a trained index.
    pub stf: Vec64,
    pub style: Vec64,
    pub label: Option<String>,
}

/// Immutable table of indexed corpus items.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
    fingerprint: [u8; 32],
}

impl RetrievalIndex {
    pub fn new(entries: Vec<IndexEntry>, fingerprint: [u8; 32]) -> Result<Self> {
        let first = entries.first().ok_or(Error::EmptyDataset)?;
        let (kd, sd) = (first.stf.dim(), first.style.dim());
        let mut ids: Vec<&str> = Vec::with_capacity(entries.len());
        for e in &entries {
            if e.stf.dim() != kd {
                return Err(Error::DimMismatch { expected: kd, got: e.stf.dim() });
            }
            if e.style.dim() != sd {
                return Err(Error::DimMismatch { expected: sd, got: e.style.dim() });
            }
            ids.push(&e.id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateId(w[0].into()));
        }
        Ok(Self { entries, fingerprint })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn key_dim(&self) -> usize {
        self.entries[0].stf.dim()
    }

    pub fn style_dim(&self) -> usize {
        self.entries[0].style.dim()
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Every entry (except `exclude`) ranked by cosine to `t0`, descending,
    /// ties by ascending id.
    pub fn rank(&self, t0: &Vec64, exclude: Option<&str>) -> Result<Vec<(usize, f64)>> {
        if t0.dim() != self.key_dim() {
            return Err(Error::DimMismatch { expected: self.key_dim(), got: t0.dim() });
        }
        let mut ranked = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            if exclude != Some(e.id.as_str()) {
                ranked.push((i, cosine_slices(t0.as_slice(), e.stf.as_slice())?));
            }
        }
        ranked.sort_by(|a, b| self.cmp_ranked(a, b));
        Ok(ranked)
    }

    fn cmp_ranked(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        by_similarity_then_id(a.1, &self.entries[a.0].id, b.1, &self.entries[b.0].id)
    }

    /// Gathers already-ranked rows into a [`ReferenceSet`].
    pub fn references(&self, ranked: &[(usize, f64)]) -> Result<ReferenceSet> {
        if ranked.is_empty() {
            return Err(Error::NOutOfRange { n: 0, max: self.len() });
        }
        let mut t = Mat64::zeros(ranked.len(), self.key_dim());
        let mut s = Mat64::zeros(ranked.len(), self.style_dim());
        let mut ids = Vec::with_capacity(ranked.len());
        let mut sims = Vec::with_capacity(ranked.len());
        for (r, &(i, sim)) in ranked.iter().enumerate() {
            let e = &self.entries[i];
            t.row_mut(r).copy_from_slice(e.stf.as_slice());
            s.row_mut(r).copy_from_slice(e.style.as_slice());
            ids.push(e.id.clone());
            sims.push(sim);
        }
        Ok(ReferenceSet { ids, t, s, sims })
    }

    pub fn query_top_n(&self, t0: &Vec64, n: usize) -> Result<ReferenceSet> {
        self.query_top_n_excluding(t0, n, None)
    }

    /// As [`query_top_n`](Self::query_top_n), never returning `exclude`.
    pub fn query_top_n_excluding(&self, t0: &Vec64, n: usize, exclude: Option<&str>) -> Result<ReferenceSet> {
        let max = self.len() - usize::from(exclude.is_some_and(|id| self.get(id).is_some()));
        if n == 0 || n > max {
            return Err(Error::NOutOfRange { n, max });
        }
        let ranked = self.rank(t0, exclude)?;
        self.references(&ranked[..n])
    }
}

/// Index over `dataset` with eval-mode STFs and style embeddings.
pub fn build_index<E: Encoders + ?Sized>(
    dataset: &[FeaturePair],
    encoders: &E,
    fingerprint: [u8; 32],
) -> Result<RetrievalIndex> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let entries = dataset
        .iter()
        .map(|item| {
            Ok(IndexEntry {
                id: item.id.clone(),
                stf: encoders.stf_eval(item)?,
                style: encoders.style_embedding(item)?,
                label: item.label.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RetrievalIndex::new(entries, fingerprint)
}

/// Retrieved references, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub ids: Vec<String>,
    /// Reference STFs, one row per id.
    pub t: Mat64,
    /// Reference style embeddings, one row per id.
    pub s: Mat64,
    pub sims: Vec<f64>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryResult {
    pub weights: Vec64,
    pub final_style: Vec64,
}

pub fn summarize(refs: &ReferenceSet, t0: &Vec64) -> Result<SummaryResult> {
    if refs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if t0.dim() != refs.t.cols() {
        return Err(Error::DimMismatch { expected: refs.t.cols(), got: t0.dim() });
    }
    let logits: Vec<f64> = (0..refs.t.rows()).map(|r| dot(refs.t.row(r), t0.as_slice())).collect();
    let w = softmax_slice(&logits);
    let mut fin = alloc::vec![0.0; refs.s.cols()];
    for (r, wr) in w.iter().enumerate() {
        for (f, x) in fin.iter_mut().zip(refs.s.row(r)) {
            *f += wr * x;
        }
    }
    Ok(SummaryResult {
        weights: Vec64::new(w)?,
        final_style: Vec64::new(fin)?,
    })
}
