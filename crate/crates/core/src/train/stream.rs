//! End-to-end continual run over a segmented stream.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::{init_new_entities, train_segment, trainable_parameters, EpochLoss, ModelState, TrainConfig, TrainMode};
use crate::data::{segment_stream, BipartiteGraph, GraphDelta, Interactions, StreamSegment};
use crate::error::{Error, Result};
use crate::eval::{evaluate_segment, MetricsReport, SegmentReport};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Writes `ckpt_t{t}.bin` here after every segment.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct StreamRun {
    pub report: MetricsReport,
    pub trace: Vec<EpochLoss>,
    pub state: ModelState,
    /// Cumulative graph after each segment.
    pub graphs: Vec<BipartiteGraph>,
}

/// Cuts `interactions` into `segments` windows and runs them.
pub fn run_stream(
    interactions: &Interactions,
    segments: usize,
    config: &TrainConfig,
    opts: &RunOptions,
) -> Result<StreamRun> {
    let segs = segment_stream(&interactions.events(), segments)?;
    run_segments(&segs, config, opts)
}

/// Trains segment by segment. Segment 0 always trains the full model; later
/// segments use `config.mode`. After segment `t` every segment `s ≤ t` is
/// evaluated on its own cumulative graph `G_s`, so forgetting shows up
/// only through changed parameters.
pub fn run_segments(segments: &[StreamSegment], config: &TrainConfig, opts: &RunOptions) -> Result<StreamRun> {
    if segments.is_empty() {
        return Err(Error::Contract("no segments to run".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = ModelState::new(config, &mut rng)?;
    let mut graph = BipartiteGraph::default();
    let mut graphs: Vec<BipartiteGraph> = Vec::with_capacity(segments.len());
    let mut trace = Vec::new();
    let mut reports = Vec::with_capacity(segments.len());
    let mut b_recall: Vec<Vec<f64>> = Vec::with_capacity(segments.len());
    let mut b_ndcg: Vec<Vec<f64>> = Vec::with_capacity(segments.len());
    let config_hash = config.hash();

    for (t, segment) in segments.iter().enumerate() {
        let nu = graph.num_users().max(segment.user_bound());
        let ni = graph.num_items().max(segment.item_bound());
        let delta = GraphDelta::new(segment.train.clone(), nu - graph.num_users(), ni - graph.num_items());
        graph = graph.apply_delta(&delta)?;
        init_new_entities(&mut state, segment, &mut rng);

        let mode = if t == 0 { TrainMode::FullFinetune } else { config.mode };
        let seg_config = TrainConfig { mode, ..config.clone() };
        let params = trainable_parameters(&state, mode);
        let losses = train_segment(&mut state, segment, &graph, &segments[..t], &seg_config, &mut rng)?;
        state.trained_through = Some(t);
        graphs.push(graph.clone());

        let mut row_r = Vec::with_capacity(t + 1);
        let mut row_n = Vec::with_capacity(t + 1);
        for s in 0..=t {
            let score = evaluate_segment(&state, &graphs[s], &segments[s], config.eval_k)?;
            row_r.push(score.recall);
            row_n.push(score.ndcg);
            if s == t {
                reports.push(SegmentReport {
                    index: t,
                    recall: score.recall,
                    ndcg: score.ndcg,
                    users: score.users,
                    trainable_parameters: params,
                    epochs_run: losses.len(),
                    final_loss: losses.last().map(|l| l.loss),
                    epoch_ms: (!losses.is_empty())
                        .then(|| losses.iter().map(|l| l.wall_ms).sum::<f64>() / losses.len() as f64),
                });
            }
        }
        b_recall.push(row_r);
        b_ndcg.push(row_n);
        trace.extend(losses);

        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_checkpoint(&dir.join(format!("ckpt_t{t}.bin")), &state, config)?;
        }
    }

    let report = MetricsReport::assemble(
        config.mode,
        config.eval_k,
        config.seed,
        config_hash,
        reports,
        b_recall,
        b_ndcg,
    )?;
    Ok(StreamRun {
        report,
        trace,
        state,
        graphs,
    })
}
