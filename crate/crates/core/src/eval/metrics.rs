//! Binary-relevance ranking metrics.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

fn check(truth: &BTreeSet<usize>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Contract("K must be at least 1".into()));
    }
    if truth.is_empty() {
        return Err(Error::Contract("empty truth set".into()));
    }
    Ok(())
}

/// `|top-K ∩ truth| / |truth|`.
pub fn recall_at_k(ranked: &[usize], truth: &BTreeSet<usize>, k: usize) -> Result<f64> {
    check(truth, k)?;
    let hits = ranked.iter().take(k).filter(|i| truth.contains(i)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// DCG over the first `K` ranks with gain `1/log2(r+1)`, divided by the
/// DCG of a ranking that puts all truth items first.
pub fn ndcg_at_k(ranked: &[usize], truth: &BTreeSet<usize>, k: usize) -> Result<f64> {
    check(truth, k)?;
    let gain = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| truth.contains(i))
        .map(|(r, _)| gain(r + 1))
        .sum();
    let idcg: f64 = (1..=k.min(truth.len())).map(gain).sum();
    Ok(dcg / idcg)
}
