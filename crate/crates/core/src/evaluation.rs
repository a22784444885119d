//! Retrieval precision, style similarity to ground truth, and N sweeps.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::FeaturePair;
use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::retrieval::{summarize, IndexEntry, RetrievalIndex};
use crate::tensor::{cosine_similarity, Vec64};

/// Fraction of `retrieved` labels equal to `query`.
pub fn precision_at_n(query: Option<&str>, retrieved: &[Option<&str>]) -> Result<f64> {
    let q = query.ok_or_else(|| Error::UnlabeledItem(String::from("<query>")))?;
    if retrieved.is_empty() {
        return Err(Error::NOutOfRange { n: 0, max: 0 });
    }
    let mut hits = 0usize;
    for (i, l) in retrieved.iter().enumerate() {
        let l = l.ok_or_else(|| Error::UnlabeledItem(alloc::format!("<retrieved #{i}>")))?;
        hits += usize::from(l == q);
    }
    Ok(hits as f64 / retrieved.len() as f64)
}

/// How a query is keyed against the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keying {
    /// The query's eval-mode STF against indexed STFs.
    Stf,
    /// Mean raw token vector against indexed mean token vectors.
    SemanticControl,
}

/// An index keyed by mean raw token vectors, for the semantic control.
pub fn semantic_index<E: Encoders + ?Sized>(
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
                stf: item.mean_token(),
                style: encoders.style_embedding(item)?,
                label: item.label.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RetrievalIndex::new(entries, fingerprint)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPrecision {
    pub query_id: String,
    pub n: usize,
    pub n_plus: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub queries: Vec<QueryPrecision>,
    pub mean_precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    /// `(N, mean similarity)`, N strictly increasing.
    pub points: Vec<(usize, f64)>,
    pub n_queries: usize,
    pub index_size: usize,
}

impl SweepCurve {
    /// The N with the highest mean similarity; the smallest on ties.
    pub fn argmax(&self) -> Option<usize> {
        self.points
            .iter()
            .fold(None, |best: Option<(usize, f64)>, &(n, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((n, s)),
            })
            .map(|(n, _)| n)
    }
}

/// Evaluates test queries against an index.
///
/// Queries are excluded from their own results unless `allow_self_match`.
pub struct Evaluator<'a, E: ?Sized> {
    pub index: &'a RetrievalIndex,
    pub encoders: &'a E,
    pub keying: Keying,
    pub allow_self_match: bool,
}

impl<'a, E: Encoders + ?Sized> Evaluator<'a, E> {
    pub fn new(index: &'a RetrievalIndex, encoders: &'a E) -> Self {
        Self {
            index,
            encoders,
            keying: Keying::Stf,
            allow_self_match: false,
        }
    }

    pub fn keying(mut self, keying: Keying) -> Self {
        self.keying = keying;
        self
    }

    pub fn allow_self_match(mut self, allow: bool) -> Self {
        self.allow_self_match = allow;
        self
    }

    fn key(&self, item: &FeaturePair) -> Result<Vec64> {
        match self.keying {
            Keying::Stf => self.encoders.stf_eval(item),
            Keying::SemanticControl => Ok(item.mean_token()),
        }
    }

    fn exclude<'b>(&self, item: &'b FeaturePair) -> Option<&'b str> {
        (!self.allow_self_match).then_some(item.id.as_str())
    }

    fn max_n(&self, item: &FeaturePair) -> usize {
        let own = self.exclude(item).is_some_and(|id| self.index.get(id).is_some());
        self.index.len() - usize::from(own)
    }

    fn check_n(&self, item: &FeaturePair, n: usize) -> Result<()> {
        let max = self.max_n(item);
        if n == 0 || n > max {
            return Err(Error::NOutOfRange { n, max });
        }
        Ok(())
    }

    pub fn precision(&self, test: &[FeaturePair], n: usize) -> Result<PrecisionReport> {
        if test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut queries = Vec::with_capacity(test.len());
        for item in test {
            self.check_n(item, n)?;
            let label = item.label.as_deref().ok_or_else(|| Error::UnlabeledItem(item.id.clone()))?;
            let ranked = self.index.rank(&self.key(item)?, self.exclude(item))?;
            let mut n_plus = 0;
            for &(i, _) in &ranked[..n] {
                let e = &self.index.entries()[i];
                let l = e.label.as_deref().ok_or_else(|| Error::UnlabeledItem(e.id.clone()))?;
                n_plus += usize::from(l == label);
            }
            queries.push(QueryPrecision {
                query_id: item.id.clone(),
                n,
                n_plus,
                precision: n_plus as f64 / n as f64,
            });
        }
        let mean_precision = queries.iter().map(|q| q.precision).sum::<f64>() / queries.len() as f64;
        Ok(PrecisionReport { queries, mean_precision })
    }

    /// Mean cosine between each query's summarized style and its own.
    pub fn style_similarity(&self, test: &[FeaturePair], n: usize) -> Result<f64> {
        Ok(self.sweep(test, &[n])?.points[0].1)
    }

    /// [`style_similarity`](Self::style_similarity) at each N, ranking each
    /// query once.
    pub fn sweep(&self, test: &[FeaturePair], n_values: &[usize]) -> Result<SweepCurve> {
        if test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if n_values.is_empty() {
            return Err(Error::InvalidConfig("no N values"));
        }
        if n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("N values must be strictly increasing"));
        }
        let mut sums = alloc::vec![0.0; n_values.len()];
        for item in test {
            for &n in n_values {
                self.check_n(item, n)?;
            }
            let t0 = self.key(item)?;
            let truth = self.encoders.style_embedding(item)?;
            let ranked = self.index.rank(&t0, self.exclude(item))?;
            for (sum, &n) in sums.iter_mut().zip(n_values) {
                let refs = self.index.references(&ranked[..n])?;
                let out = summarize(&refs, &t0)?;
                *sum += cosine_similarity(&out.final_style, &truth)?;
            }
        }
        let count = test.len() as f64;
        Ok(SweepCurve {
            points: n_values.iter().zip(sums).map(|(&n, s)| (n, s / count)).collect(),
            n_queries: test.len(),
            index_size: self.index.len(),
        })
    }
}
