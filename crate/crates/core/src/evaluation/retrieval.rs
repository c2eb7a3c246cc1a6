//! Exhaustive cosine retrieval and ranking metrics.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ViewKind};
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// Caption query, Front-view candidates.
    T2i,
    /// Front-view query, caption candidates.
    I2t,
    /// View query, all view candidates except itself.
    I2i,
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2i" => Ok(Self::T2i),
            "i2t" => Ok(Self::I2t),
            "i2i" => Ok(Self::I2i),
            other => Err(Error::Config(format!("retrieval mode must be t2i, i2t or i2i, got {other:?}"))),
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::T2i => "t2i",
            Self::I2t => "i2t",
            Self::I2i => "i2i",
        })
    }
}

/// Length of the ranking prefix kept in [`RetrievalResult::ranked_ids`].
pub const RANKING_DEPTH: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    /// Top of the ranking, at most [`RANKING_DEPTH`] ids.
    pub ranked_ids: Vec<String>,
    pub scores: Vec<f64>,
    /// Best 1-based rank among the relevant ids, if any was ranked.
    pub rank_of_ground_truth: Option<usize>,
    /// Ascending 1-based ranks of every relevant id present in the pool.
    pub relevant_ranks: Vec<usize>,
    pub relevant: BTreeSet<String>,
}

/// Sorts candidates by descending score, ties by ascending id.
pub fn rank_by_scores(
    query_id: &str,
    candidate_ids: &[String],
    scores: &[f64],
    relevant: BTreeSet<String>,
) -> Result<RetrievalResult> {
    let ids: Vec<&str> = candidate_ids.iter().map(String::as_str).collect();
    rank_ids(query_id, &ids, scores, relevant)
}

fn rank_ids(query_id: &str, ids: &[&str], scores: &[f64], relevant: BTreeSet<String>) -> Result<RetrievalResult> {
    if ids.is_empty() {
        return Err(Error::Config(format!("query {query_id:?} has no candidates")));
    }
    if ids.len() != scores.len() {
        return Err(Error::shape("rank_by_scores", &[ids.len()], &[scores.len()]));
    }
    let cmp = |a: &usize, b: &usize| match scores[*b].total_cmp(&scores[*a]) {
        Ordering::Equal => ids[*a].cmp(ids[*b]),
        o => o,
    };
    // a relevant item's rank is one plus the number of candidates ahead of it
    let mut relevant_ranks: Vec<usize> = (0..ids.len())
        .filter(|&i| relevant.contains(ids[i]))
        .map(|i| 1 + (0..ids.len()).filter(|j| cmp(j, &i) == Ordering::Less).count())
        .collect();
    relevant_ranks.sort_unstable();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    if order.len() > RANKING_DEPTH {
        order.select_nth_unstable_by(RANKING_DEPTH - 1, cmp);
        order.truncate(RANKING_DEPTH);
    }
    order.sort_by(cmp);
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranked_ids: order.iter().map(|&i| ids[i].to_string()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
        rank_of_ground_truth: relevant_ranks.first().copied(),
        relevant_ranks,
        relevant,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// One query against a candidate pool.
#[derive(Clone, Debug)]
pub struct Query {
    pub id: String,
    pub embedding: Vec<f64>,
    pub relevant: BTreeSet<String>,
}

/// Scores every query against every candidate by cosine similarity. With
/// `exclude_self`, a candidate whose id equals the query id is dropped.
pub fn retrieve_embeddings(
    queries: &[Query],
    candidates: &[(String, Vec<f64>)],
    exclude_self: bool,
) -> Result<Vec<RetrievalResult>> {
    queries
        .iter()
        .map(|q| {
            let (ids, scores): (Vec<&str>, Vec<f64>) = candidates
                .iter()
                .filter(|(id, _)| !(exclude_self && *id == q.id))
                .map(|(id, e)| (id.as_str(), cosine(&q.embedding, e)))
                .unzip();
            rank_ids(&q.id, &ids, &scores, q.relevant.clone())
        })
        .collect()
}

/// Id of one view of one record, as used by image-to-image retrieval.
pub fn view_id(record_id: &str, view: ViewKind) -> String {
    format!("{record_id}/{}", view.as_str())
}

/// Runs retrieval over every record of `corpus`, which serves as both the
/// query set and the candidate pool.
pub fn retrieve(model: &Model, corpus: &Corpus, mode: RetrievalMode) -> Result<Vec<RetrievalResult>> {
    if corpus.is_empty() {
        return Err(Error::Config("retrieval needs a nonempty candidate set".into()));
    }
    let ids: Vec<String> = corpus.records.iter().map(|r| r.id.clone()).collect();
    match mode {
        RetrievalMode::T2i | RetrievalMode::I2t => {
            let fronts: Vec<_> = corpus.records.iter().map(|r| r.front()).collect();
            let captions: Vec<&str> = corpus.records.iter().map(|r| r.caption.as_str()).collect();
            let images = model.encode_images(&fronts)?;
            let texts = model.encode_texts(&captions)?;
            let (q, c) = if mode == RetrievalMode::T2i {
                (texts, images)
            } else {
                (images, texts)
            };
            let queries: Vec<Query> = ids
                .iter()
                .zip(q)
                .map(|(id, e)| Query {
                    id: id.clone(),
                    embedding: e,
                    relevant: BTreeSet::from([id.clone()]),
                })
                .collect();
            let candidates: Vec<(String, Vec<f64>)> = ids.iter().cloned().zip(c).collect();
            retrieve_embeddings(&queries, &candidates, false)
        }
        RetrievalMode::I2i => {
            let mut keys = Vec::new();
            let mut imgs = Vec::new();
            for r in &corpus.records {
                for v in r.present_views() {
                    keys.push((r.id.as_str(), v));
                    imgs.push(r.view(v).expect("present view"));
                }
            }
            let embs = model.encode_images(&imgs)?;
            let candidates: Vec<(String, Vec<f64>)> = keys
                .iter()
                .map(|&(r, v)| view_id(r, v))
                .zip(embs)
                .collect();
            let present: BTreeSet<&str> = candidates.iter().map(|(c, _)| c.as_str()).collect();
            let queries: Vec<Query> = keys
                .iter()
                .zip(&candidates)
                .map(|(&(rid, v), (id, e))| Query {
                    id: id.clone(),
                    embedding: e.clone(),
                    relevant: ViewKind::ALL
                        .iter()
                        .filter(|&&o| o != v)
                        .map(|&o| view_id(rid, o))
                        .filter(|o| present.contains(o.as_str()))
                        .collect(),
                })
                .collect();
            retrieve_embeddings(&queries, &candidates, true)
        }
    }
}

/// Fraction of queries whose ground truth ranks within the top `k`.
pub fn recall_at_k(results: &[RetrievalResult], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let hits = results
        .iter()
        .filter(|r| r.rank_of_ground_truth.is_some_and(|g| g <= k))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean of per-query precision at each relevant item's rank, averaged over
/// relevants. Relevants missing from the ranking contribute zero.
pub fn average_precision(result: &RetrievalResult) -> Option<f64> {
    if result.relevant.is_empty() {
        return None;
    }
    let sum: f64 = result
        .relevant_ranks
        .iter()
        .enumerate()
        .map(|(hit, &rank)| (hit + 1) as f64 / rank as f64)
        .sum();
    Some(sum / result.relevant.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapSummary {
    pub value: f64,
    pub n_queries: usize,
    /// Queries skipped for having no relevant items.
    pub n_excluded: usize,
}

pub fn mean_average_precision(results: &[RetrievalResult]) -> MapSummary {
    let aps: Vec<f64> = results.iter().filter_map(average_precision).collect();
    let value = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    MapSummary {
        value,
        n_queries: aps.len(),
        n_excluded: results.len() - aps.len(),
    }
}

/// Recall@k restricted to the queries of each class. `None` for classes with
/// no queries.
pub fn per_class_recall_at_k(
    results: &[RetrievalResult],
    query_classes: &[usize],
    n_classes: usize,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    if results.len() != query_classes.len() {
        return Err(Error::shape("per_class_recall_at_k", &[results.len()], &[query_classes.len()]));
    }
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (r, &c) in results.iter().zip(query_classes) {
        if c >= n_classes {
            return Err(Error::Index { index: c, n_classes });
        }
        totals[c] += 1;
        hits[c] += usize::from(r.rank_of_ground_truth.is_some_and(|g| g <= k));
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}
