//! Pairwise ranking loss and negative sampling.

use std::sync::Arc;

use rand::Rng;

use super::ModelState;
use crate::data::BipartiteGraph;
use crate::error::{Error, Result};
use crate::model::{forward_all, ForwardOptions, ForwardOutput, Model};
use crate::numeric::{BoundParams, DenseMatrix, Tape, Var};

/// A user, an observed item and a sampled unobserved item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// `mean(−ln σ(u·p − u·n))` over the rows of three `B × d` matrices.
pub fn pairwise_loss(tape: &mut Tape, user: Var, pos: Var, neg: Var) -> Result<Var> {
    let sp = tape.row_dot(user, pos)?;
    let sn = tape.row_dot(user, neg)?;
    let margin = tape.sub(sp, sn)?;
    let ll = tape.log_sigmoid(margin);
    let mean = tape.mean(ll)?;
    Ok(tape.scale(mean, -1.0))
}

fn check_ids(graph: &BipartiteGraph, batch: &[Triple]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    for t in batch {
        if t.user >= graph.num_users() {
            return Err(Error::UnknownId {
                kind: "user",
                id: t.user,
            });
        }
        for i in [t.pos, t.neg] {
            if i >= graph.num_items() {
                return Err(Error::UnknownId { kind: "item", id: i });
            }
        }
    }
    Ok(())
}

/// Pairwise loss on final embeddings plus `reg · Σ‖e‖² / B` over the raw
/// embedding rows of the batch that the optimizer may update.
pub(crate) fn batch_objective(
    tape: &mut Tape,
    model: &Model,
    out: &ForwardOutput,
    graph: &BipartiteGraph,
    batch: &[Triple],
    reg: f64,
) -> Result<Var> {
    let nu = graph.num_users();
    let users: Arc<[usize]> = batch.iter().map(|t| t.user).collect();
    let pos: Arc<[usize]> = batch.iter().map(|t| nu + t.pos).collect();
    let neg: Arc<[usize]> = batch.iter().map(|t| nu + t.neg).collect();
    let xu = tape.gather_rows(out.output, Arc::clone(&users))?;
    let xp = tape.gather_rows(out.output, Arc::clone(&pos))?;
    let xn = tape.gather_rows(out.output, Arc::clone(&neg))?;
    let ranking = pairwise_loss(tape, xu, xp, xn)?;
    if reg == 0.0 {
        return Ok(ranking);
    }

    let ut = model.params.get(model.table.users);
    let it = model.params.get(model.table.items);
    let updatable = |node: usize| {
        if node < nu {
            ut.trainable && node >= ut.frozen_rows
        } else {
            it.trainable && node - nu >= it.frozen_rows
        }
    };
    let rows: Vec<usize> = users.iter().chain(pos.iter()).chain(neg.iter()).copied().collect();
    let mask = rows.iter().map(|&n| if updatable(n) { 1.0 } else { 0.0 }).collect();
    let mask = tape.constant(DenseMatrix::from_vec(rows.len(), 1, mask)?);
    let e = tape.gather_rows(out.table, rows.into())?;
    let sq = tape.row_dot(e, e)?;
    let masked = tape.mul(sq, mask)?;
    let total = tape.sum(masked);
    let penalty = tape.scale(total, reg / batch.len() as f64);
    tape.add(ranking, penalty)
}

/// Records the full forward pass and the batch objective on `tape`.
pub(crate) fn build_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundParams,
    graph: &BipartiteGraph,
    batch: &[Triple],
    reg: f64,
) -> Result<Var> {
    check_ids(graph, batch)?;
    let out = forward_all(tape, model, bound, graph, &ForwardOptions::default())?;
    batch_objective(tape, model, &out, graph, batch, reg)
}

/// Value of the training objective for `batch` under the current
/// trainability flags.
pub fn bpr_loss(state: &ModelState, graph: &BipartiteGraph, batch: &[Triple], reg: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = state.model.params.bind_constant(&mut tape);
    let loss = build_loss(&mut tape, &state.model, &bound, graph, batch, reg)?;
    Ok(tape.value(loss).get(0, 0))
}

/// One triple per pair and negative. Negatives are uniform over items the
/// user has no training edge to in `graph`.
pub fn sample_batch(
    pairs: &[(usize, usize)],
    graph: &BipartiteGraph,
    negatives_per_positive: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>> {
    let n = graph.num_items();
    let mut out = Vec::with_capacity(pairs.len() * negatives_per_positive);
    for &(user, pos) in pairs {
        if user >= graph.num_users() {
            return Err(Error::UnknownId { kind: "user", id: user });
        }
        let seen = graph.items_of(user);
        let free = n - seen.len();
        if free == 0 {
            return Err(Error::Sampling { user });
        }
        for _ in 0..negatives_per_positive {
            let neg = if 2 * seen.len() <= n {
                loop {
                    let i = rng.random_range(0..n);
                    if seen.binary_search(&i).is_err() {
                        break i;
                    }
                }
            } else {
                // dense history: pick the k-th unseen item directly
                let mut k = rng.random_range(0..free);
                let mut pick = 0;
                for i in 0..n {
                    if seen.binary_search(&i).is_err() {
                        if k == 0 {
                            pick = i;
                            break;
                        }
                        k -= 1;
                    }
                }
                pick
            };
            out.push(Triple { user, pos, neg });
        }
    }
    Ok(out)
}
