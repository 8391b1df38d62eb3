use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{build_loss, sample_batch};
use super::{configure_mode, ModelState, TrainConfig, TrainMode};
use crate::data::{BipartiteGraph, StreamSegment};
use crate::error::Result;
use crate::numeric::{adam_step, AdamState, Tape};

/// Mean batch loss of one epoch, recorded before each batch's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub segment: usize,
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// `replay_fraction · |history|` pairs drawn without replacement from the
/// train splits of `earlier`.
pub fn replay_pairs(earlier: &[StreamSegment], fraction: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let history: Vec<(usize, usize)> = earlier.iter().flat_map(|s| s.train.iter().copied()).collect();
    let amount = ((fraction * history.len() as f64).round() as usize).min(history.len());
    let mut picked = sample(rng, history.len(), amount).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| history[k]).collect()
}

/// Trains on `segment` for `config.epochs` epochs under `config.mode`.
///
/// `graph` must already contain the segment's train edges and `earlier`
/// holds the strictly earlier segments (read only for replay). The
/// optimizer state is reset on entry. Frozen mode and zero epochs leave
/// the state untouched and return an empty trace.
pub fn train_segment(
    state: &mut ModelState,
    segment: &StreamSegment,
    graph: &BipartiteGraph,
    earlier: &[StreamSegment],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    state.check_matches(config)?;
    if config.mode == TrainMode::Frozen || config.epochs == 0 {
        return Ok(Vec::new());
    }
    configure_mode(state, config.mode);
    state.optimizer = AdamState::new(&state.model.params);

    let mut pairs = segment.train.clone();
    if config.mode == TrainMode::UniformReplay {
        pairs.extend(replay_pairs(earlier, config.replay_fraction, rng));
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }

    let hyper = config.adam();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        pairs.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in pairs.chunks(config.batch_size) {
            let batch = sample_batch(chunk, graph, config.negatives_per_positive, rng)?;
            let mut tape = Tape::new();
            let bound = state.model.params.bind(&mut tape);
            let loss = build_loss(&mut tape, &state.model, &bound, graph, &batch, config.reg)?;
            let grads = tape.backward(loss)?;
            state.model.params.absorb(&bound, &grads);
            adam_step(&mut state.model.params, &mut state.optimizer, &hyper)?;
            total += tape.value(loss).get(0, 0) * batch.len() as f64;
            count += batch.len();
        }
        trace.push(EpochLoss {
            segment: segment.index,
            epoch,
            loss: total / count as f64,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    state.model.params.zero_grads();
    Ok(trace)
}
