#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};
use streamprompt::data::BipartiteGraph;
use streamprompt::model::{Model, ModelConfig};
use streamprompt::numeric::DenseMatrix;

pub fn small_config(dim: usize, views: usize, prompts: usize) -> ModelConfig {
    ModelConfig {
        dim,
        layers: 2,
        views,
        node_prompts: prompts,
        struct_prompts: prompts,
        codebook: prompts,
        ..ModelConfig::default()
    }
}

pub fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    let dist = Normal::new(0.0, std).unwrap();
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// A model whose every tensor, prompts included, is drawn from N(0, std²).
pub fn random_model(rng: &mut impl Rng, config: ModelConfig, users: usize, items: usize, std: f64) -> Model {
    let mut model = Model::new(config, users, items, rng).unwrap();
    for id in model.params.ids().collect::<Vec<_>>() {
        let (r, c) = model.params.get(id).shape();
        let value = normal(rng, r, c, std);
        model.params.get_mut(id).set_value(value);
    }
    model
}

/// Random bipartite graph where every user has at least one edge.
pub fn random_graph(rng: &mut impl Rng, users: usize, items: usize, p: f64) -> BipartiteGraph {
    let mut edges = Vec::new();
    for u in 0..users {
        edges.push((u, rng.random_range(0..items)));
        for i in 0..items {
            if rng.random_bool(p) {
                edges.push((u, i));
            }
        }
    }
    BipartiteGraph::from_edges(users, items, &edges).unwrap()
}

pub fn assert_close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let diff = a.max_abs_diff(b);
    assert!(diff <= tol, "max abs diff {diff:e} exceeds {tol:e}");
}
