mod common;

use std::sync::Arc;

use common::{normal, random_graph, random_model, small_config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streamprompt::data::BipartiteGraph;
use streamprompt::model::{forward_all, AggregationMode, ForwardOptions, Model};
use streamprompt::numeric::{
    finite_difference, grad_eval, max_relative_error, BoundParams, DenseMatrix, ParamSet, Tape, Var,
};
use streamprompt::train::pairwise_loss;

/// Pairwise loss on a fixed batch plus a random linear read-out of every
/// final embedding, so each output entry carries gradient.
fn objective(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundParams,
    g: &BipartiteGraph,
    readout: &DenseMatrix,
) -> streamprompt::Result<Var> {
    let out = forward_all(tape, model, bound, g, &ForwardOptions::default())?;
    let nu = g.num_users();
    let users: Arc<[usize]> = vec![0, 1].into();
    let pos: Arc<[usize]> = vec![nu, nu + 1].into();
    let neg: Arc<[usize]> = vec![nu + 2, nu].into();
    let xu = tape.gather_rows(out.output, users)?;
    let xp = tape.gather_rows(out.output, pos)?;
    let xn = tape.gather_rows(out.output, neg)?;
    let ranking = pairwise_loss(tape, xu, xp, xn)?;
    let r = tape.constant(readout.clone());
    let weighted = tape.mul(out.output, r)?;
    let read = tape.sum(weighted);
    tape.add(ranking, read)
}

fn check_model(model: &mut Model, g: &BipartiteGraph, readout: &DenseMatrix) -> f64 {
    let snapshot = model.clone();
    let mut params = model.params.clone();
    grad_eval(&mut params, |tape, bound| objective(tape, &snapshot, bound, g, readout)).unwrap();
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        let numeric = finite_difference(&params, id, 1e-5, |p: &ParamSet| {
            let mut probe = snapshot.clone();
            probe.params = p.clone();
            let mut tape = Tape::new();
            let bound = probe.params.bind_constant(&mut tape);
            let loss = objective(&mut tape, &probe, &bound, g, readout)?;
            Ok(tape.value(loss).get(0, 0))
        })
        .unwrap();
        let err = max_relative_error(&params.get(id).grad, &numeric);
        assert!(err < 1e-4, "{}: relative error {err:e}", params.get(id).name);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn every_tensor_passes_finite_differences_on_six_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = BipartiteGraph::from_edges(3, 3, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]).unwrap();
    for mode in [AggregationMode::Prompted, AggregationMode::Initial] {
        let mut cfg = small_config(3, 2, 3);
        cfg.aggregation = mode;
        let mut model = random_model(&mut rng, cfg, 3, 3, 0.6);
        let readout = normal(&mut rng, 6, 3, 1.0);
        check_model(&mut model, &g, &readout);
    }
}

#[test]
fn gradients_reach_prompts_from_zero_initialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = random_graph(&mut rng, 3, 3, 0.5);
    let model = Model::new(small_config(3, 2, 2), 3, 3, &mut rng).unwrap();
    let readout = normal(&mut rng, 6, 3, 1.0);
    let mut params = model.params.clone();
    grad_eval(&mut params, |tape, bound| objective(tape, &model, bound, &g, &readout)).unwrap();
    for id in model
        .prompts
        .node
        .prompts
        .iter()
        .chain(&model.prompts.structure.prompts)
    {
        assert!(params.get(*id).grad.as_slice().iter().any(|&v| v != 0.0));
    }
}
