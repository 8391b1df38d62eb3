//! Full-catalog ranking evaluation and backward transfer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{ndcg_at_k, recall_at_k};
use crate::data::{BipartiteGraph, StreamSegment};
use crate::error::{Error, Result};
use crate::model::{rank_items, ForwardOptions};
use crate::train::ModelState;

/// Macro-averaged metrics over the users that had a nonempty truth set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Ranks every item for each test user with `scores(user)`, dropping items
/// `excluded(user, item)` accepts from both the ranking and the truth set.
pub fn evaluate_rankings<F, X>(test: &[(usize, usize)], k: usize, mut scores: F, excluded: X) -> Result<SegmentScore>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
    X: Fn(usize, usize) -> bool,
{
    let mut truth: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(u, i) in test {
        if !excluded(u, i) {
            truth.entry(u).or_default().insert(i);
        }
    }
    if truth.is_empty() {
        return Err(Error::EmptyEval);
    }
    let (mut recall, mut ndcg) = (0.0, 0.0);
    for (&u, items) in &truth {
        let ranked = rank_items(&scores(u)?, k, |i| excluded(u, i));
        recall += recall_at_k(&ranked, items, k)?;
        ndcg += ndcg_at_k(&ranked, items, k)?;
    }
    let n = truth.len() as f64;
    Ok(SegmentScore {
        recall: recall / n,
        ndcg: ndcg / n,
        users: truth.len(),
    })
}

/// Scores `segment`'s test split on `graph`, excluding each user's
/// training edges in `graph`.
pub fn evaluate_segment(
    state: &ModelState,
    graph: &BipartiteGraph,
    segment: &StreamSegment,
    k: usize,
) -> Result<SegmentScore> {
    let emb = state.model.embed(graph, &ForwardOptions::default())?;
    evaluate_rankings(&segment.test, k, |u| emb.scores(u), |u, i| graph.has_edge(u, i))
}

/// Mean of `B[t][s] − B[s][s]` over all `s < t`.
pub fn backward_transfer(b: &[Vec<f64>]) -> Result<f64> {
    if b.len() < 2 {
        return Err(Error::Contract(format!(
            "backward transfer needs at least 2 segments, got {}",
            b.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..b.len() {
        if b[t].len() < t {
            return Err(Error::Contract(format!("row {t} of the backward matrix is short")));
        }
        for (s, later) in b[t][..t].iter().enumerate() {
            total += later - b[s][s];
            count += 1;
        }
    }
    Ok(total / count as f64)
}
