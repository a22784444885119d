//! Positive/negative selection for contrastive batches.
//!
//! Every corpus item is ranked against an anchor by cosine similarity of the
//! frozen style embeddings. The top `K` become positives; negatives are drawn
//! uniformly from the latter half of the ranking rather than taken from its
//! tail.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::FeaturePair;
use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{cosine_similarity, Vec64, ZERO_NORM};

/// Style embeddings of the training corpus, row `i` belonging to item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTable {
    ids: Vec<String>,
    embeddings: Vec<Vec64>,
}

impl StyleTable {
    pub fn new(rows: Vec<(String, Vec64)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut embeddings = Vec::with_capacity(rows.len());
        let mut seen = alloc::collections::BTreeSet::new();
        for (id, e) in rows {
            if let Some(first) = embeddings.first() {
                let first: &Vec64 = first;
                if first.dim() != e.dim() {
                    return Err(Error::DimMismatch {
                        expected: first.dim(),
                        got: e.dim(),
                    });
                }
            }
            if e.norm() < ZERO_NORM {
                return Err(Error::ZeroNorm);
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            embeddings.push(e);
        }
        Ok(Self { ids, embeddings })
    }

    /// Encodes every item's speech with `encoders`.
    pub fn from_corpus<E: Encoders + ?Sized>(items: &[FeaturePair], encoders: &E) -> Result<Self> {
        let rows = items
            .iter()
            .map(|it| Ok((it.id.clone(), encoders.style_embedding(it)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn embedding(&self, i: usize) -> &Vec64 {
        &self.embeddings[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// A ranked table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    /// Row index in the [`StyleTable`].
    pub index: usize,
    pub similarity: f64,
}

/// Descending similarity, ties by ascending id. `-0.0` ties with `0.0`.
pub(crate) fn by_similarity_then_id(a_sim: f64, a_id: &str, b_sim: f64, b_id: &str) -> Ordering {
    (b_sim + 0.0).total_cmp(&(a_sim + 0.0)).then_with(|| a_id.cmp(b_id))
}

/// All rows except the anchor, ordered by style similarity to the anchor.
pub fn rank_by_style(table: &StyleTable, anchor_id: &str) -> Result<Vec<Ranked>> {
    let anchor = table
        .position(anchor_id)
        .ok_or_else(|| Error::AnchorMissing(anchor_id.into()))?;
    rank_by_index(table, anchor)
}

pub(crate) fn rank_by_index(table: &StyleTable, anchor: usize) -> Result<Vec<Ranked>> {
    if table.len() < 2 {
        return Err(Error::TableTooSmall(table.len()));
    }
    let a = &table.embeddings[anchor];
    let mut ranked = Vec::with_capacity(table.len() - 1);
    for (i, e) in table.embeddings.iter().enumerate() {
        if i != anchor {
            ranked.push(Ranked {
                index: i,
                similarity: cosine_similarity(a, e)?,
            });
        }
    }
    ranked.sort_by(|x, y| {
        by_similarity_then_id(x.similarity, &table.ids[x.index], y.similarity, &table.ids[y.index])
    });
    Ok(ranked)
}

/// The first `k` ranked rows. Requires `2k` ranked rows so negatives remain.
pub fn select_positives(ranked: &[Ranked], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1"));
    }
    if ranked.len() < 2 * k {
        return Err(Error::InsufficientItems {
            needed: 2 * k,
            available: ranked.len(),
        });
    }
    Ok(ranked[..k].iter().map(|r| r.index).collect())
}

/// `k` rows drawn uniformly without replacement from positions
/// `⌊n/2⌋..n` of the ranking.
pub fn select_negatives(ranked: &[Ranked], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1"));
    }
    let pool = &ranked[ranked.len() / 2..];
    if pool.len() < k {
        return Err(Error::InsufficientItems {
            needed: k,
            available: pool.len(),
        });
    }
    Ok(rng
        .sample_indices(pool.len(), k)
        .into_iter()
        .map(|i| pool[i].index)
        .collect())
}

/// One anchor with its `K` positives and `K` negatives (row indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl ContrastiveBatch {
    pub fn k(&self) -> usize {
        self.positives.len()
    }

    /// Positives then negatives, the row/column order of the similarity matrix.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.positives.iter().chain(&self.negatives).copied()
    }
}

/// Batches for every row of the table, in row order.
pub fn build_batches(table: &StyleTable, k: usize, rng: &mut Rng) -> Result<Vec<ContrastiveBatch>> {
    (0..table.len())
        .map(|anchor| {
            let ranked = rank_by_index(table, anchor)?;
            Ok(ContrastiveBatch {
                anchor,
                positives: select_positives(&ranked, k)?,
                negatives: select_negatives(&ranked, k, rng)?,
            })
        })
        .collect()
}
