//! Cosine nearest-neighbour retrieval on track-mean embeddings.

use serde::{Deserialize, Serialize};

use super::metrics::{cosine_distance, key_weighted, tempo_acc};
use super::store::EmbeddingStore;
use crate::corpus::TAGS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Row in the store.
    pub row: usize,
    pub id: usize,
    pub distance: f64,
}

/// The `k` nearest other tracks to row `query`, ascending by cosine
/// distance. Equal distances are ordered by track id.
pub fn knn_retrieve(store: &EmbeddingStore, query: usize, k: usize) -> Result<Vec<Neighbor>> {
    if query >= store.len() {
        return Err(Error::param("query", format!("row {query} outside a store of {}", store.len())));
    }
    if k == 0 || k >= store.len() {
        return Err(Error::param("k", format!("need 0 < k < {} (store size), got {k}", store.len())));
    }
    let q = store.track_mean.row(query).to_vec();
    let mut all: Vec<Neighbor> = (0..store.len())
        .filter(|&r| r != query)
        .map(|r| Neighbor {
            row: r,
            id: store.ids[r],
            distance: cosine_distance(&q, &store.track_mean.row(r).to_vec()),
        })
        .collect();
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    all.truncate(k);
    Ok(all)
}

/// Label agreement between queries and their neighbours, averaged over queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub space: String,
    pub k: usize,
    /// Precision@k per tag over the queries carrying it, averaged over tags.
    pub tag_precision: f64,
    /// Weighted key score of the neighbours' keys against the query key.
    pub key_score: f64,
    /// Tempo acc1 of the neighbours' tempi against the query tempo.
    pub tempo_acc1: f64,
    pub n_queries: usize,
}

/// Scores for every `k` in `ks`, with every store entry used as a query.
/// Neighbours missing the query's label count as misses.
pub fn retrieval_scores(store: &EmbeddingStore, ks: &[usize]) -> Result<Vec<RetrievalScores>> {
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let lists = (0..store.len())
        .map(|q| knn_retrieve(store, q, kmax))
        .collect::<Result<Vec<_>>>()?;
    let label = |r: usize| store.labels[r].as_ref();
    ks.iter()
        .map(|&k| {
            let mut tag_sum = [0.0f64; TAGS.len()];
            let mut tag_n = [0usize; TAGS.len()];
            let (mut key_sum, mut key_n, mut tempo_sum, mut tempo_n) = (0.0, 0usize, 0.0, 0usize);
            for (q, list) in lists.iter().enumerate() {
                let Some(ql) = label(q) else { continue };
                let nb = &list[..k];
                for (j, tag) in TAGS.iter().enumerate() {
                    if ql.tags.contains(*tag) {
                        let hits = nb.iter().filter(|n| label(n.row).is_some_and(|l| l.tags.contains(*tag))).count();
                        tag_sum[j] += hits as f64 / k as f64;
                        tag_n[j] += 1;
                    }
                }
                if let Some(qk) = ql.key() {
                    let mut s = 0.0;
                    for n in nb {
                        if let Some(nk) = label(n.row).and_then(|l| l.key()) {
                            s += key_weighted(nk, qk)?;
                        }
                    }
                    key_sum += s / k as f64;
                    key_n += 1;
                }
                if let Some(qt) = ql.tempo_bpm() {
                    let mut s = 0.0;
                    for n in nb {
                        if let Some(nt) = label(n.row).and_then(|l| l.tempo_bpm()) {
                            s += tempo_acc(nt, qt, 1)?;
                        }
                    }
                    tempo_sum += s / k as f64;
                    tempo_n += 1;
                }
            }
            let tag_means: Vec<f64> = (0..TAGS.len()).filter(|&j| tag_n[j] > 0).map(|j| tag_sum[j] / tag_n[j] as f64).collect();
            let mean_or_nan = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
            Ok(RetrievalScores {
                space: store.space.clone(),
                k,
                tag_precision: mean_or_nan(tag_means.iter().sum(), tag_means.len()),
                key_score: mean_or_nan(key_sum, key_n),
                tempo_acc1: mean_or_nan(tempo_sum, tempo_n),
                n_queries: store.len(),
            })
        })
        .collect()
}
