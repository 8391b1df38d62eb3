//! Backbone embeddings plus the prompt bank that adapts them.
//!
//! The forward pass runs in five stages over every node of the cumulative
//! graph:
//!
//! 1. normalized-adjacency propagation of the raw embedding table,
//! 2. disentanglement into `N` views by per-view linear maps,
//! 3. node-level prompts added to each view by attention,
//! 4. structure-level prompts passed along edges by nested attention,
//! 5. attention over the views, driven either by a plain linear query or by
//!    a query shifted with a read from a small prompt codebook.
//!
//! All parameters live in one [`ParamSet`]; the structs below only hold
//! [`ParamId`]s into it.

pub mod forward;
pub mod rank;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BoundParams, DenseMatrix, ParamId, ParamSet, ParamTensor, Tape, Var};

pub use forward::{
    aggregate_views, apply_node_prompts, apply_structure_prompts, backbone_propagate, disentangle, forward_all,
    AggregateOutput, EdgeIndex, ForwardOptions, ForwardOutput, StructureOutput,
};
pub use rank::{rank_items, FinalEmbeddings};

/// Standard deviation of the normal initializer for embeddings and weights.
pub const INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Attention over views with query `Linear(x)`.
    Initial,
    /// Attention over views with query `Linear(x + z)`, `z` read from the codebook.
    Prompted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub views: usize,
    pub node_prompts: usize,
    pub struct_prompts: usize,
    pub codebook: usize,
    pub aggregation: AggregationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            layers: 2,
            views: 4,
            node_prompts: 32,
            struct_prompts: 32,
            codebook: 32,
            aggregation: AggregationMode::Prompted,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.views == 0 {
            return Err(Error::Contract("dim and views must be positive".into()));
        }
        if self.node_prompts == 0 || self.struct_prompts == 0 || self.codebook == 0 {
            return Err(Error::Contract("prompt counts must be positive".into()));
        }
        Ok(())
    }
}

/// `y = x W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn bind(&self, bound: &BoundParams) -> LinearVars {
        LinearVars {
            weight: bound[self.weight],
            bias: bound[self.bias],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_bias(y, self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub users: ParamId,
    pub items: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewBank {
    pub maps: Vec<Linear>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePromptSet {
    /// One `L × d` matrix per view.
    pub prompts: Vec<ParamId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructurePromptSet {
    /// One `K × d` matrix per view.
    pub prompts: Vec<ParamId>,
    /// `2d × d` map applied to concatenated endpoint embeddings.
    pub edge_map: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrossViewPromptBank {
    /// `N_z × d` codebook.
    pub codebook: ParamId,
    pub query: Linear,
    pub legacy_query: Linear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptBank {
    pub views: ViewBank,
    pub node: NodePromptSet,
    pub structure: StructurePromptSet,
    pub cross_view: CrossViewPromptBank,
    pub mode: AggregationMode,
}

impl PromptBank {
    /// Every tensor of the bank; the backbone table is not included.
    pub fn tensors(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for m in &self.views.maps {
            ids.extend([m.weight, m.bias]);
        }
        ids.extend(&self.node.prompts);
        ids.extend(&self.structure.prompts);
        ids.extend([self.structure.edge_map.weight, self.structure.edge_map.bias]);
        let cv = &self.cross_view;
        ids.extend([cv.codebook, cv.query.weight, cv.query.bias]);
        ids.extend([cv.legacy_query.weight, cv.legacy_query.bias]);
        ids
    }

    /// Tensors the forward pass actually reads under the current mode.
    pub fn active_tensors(&self) -> Vec<ParamId> {
        let cv = &self.cross_view;
        let unused: &[ParamId] = match self.mode {
            AggregationMode::Initial => &[cv.codebook, cv.query.weight, cv.query.bias],
            AggregationMode::Prompted => &[cv.legacy_query.weight, cv.legacy_query.bias],
        };
        self.tensors().into_iter().filter(|id| !unused.contains(id)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub table: EmbeddingTable,
    pub prompts: PromptBank,
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let dist = Normal::new(0.0, INIT_STD).expect("valid normal");
    let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, values).expect("finite init")
}

impl Model {
    /// Embeddings and linear weights ~ N(0, 0.01²), biases and all prompt
    /// tensors zero.
    pub fn new<R: Rng>(config: ModelConfig, num_users: usize, num_items: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut params = ParamSet::new();
        let users = params.push(ParamTensor::new("user_embedding", normal_matrix(rng, num_users, d)));
        let items = params.push(ParamTensor::new("item_embedding", normal_matrix(rng, num_items, d)));
        let linear = |params: &mut ParamSet, name: &str, input: usize, rng: &mut R| Linear {
            weight: params.push(ParamTensor::new(format!("{name}.weight"), normal_matrix(rng, input, d))),
            bias: params.push(ParamTensor::new(format!("{name}.bias"), DenseMatrix::zeros(1, d))),
        };
        let maps = (0..config.views)
            .map(|v| linear(&mut params, &format!("view{v}"), d, rng))
            .collect();
        let node = (0..config.views)
            .map(|v| {
                params.push(ParamTensor::new(
                    format!("node_prompt{v}"),
                    DenseMatrix::zeros(config.node_prompts, d),
                ))
            })
            .collect();
        let structure = (0..config.views)
            .map(|v| {
                params.push(ParamTensor::new(
                    format!("struct_prompt{v}"),
                    DenseMatrix::zeros(config.struct_prompts, d),
                ))
            })
            .collect();
        let edge_map = linear(&mut params, "edge_map", 2 * d, rng);
        let codebook = params.push(ParamTensor::new("codebook", DenseMatrix::zeros(config.codebook, d)));
        let query = linear(&mut params, "query", d, rng);
        let legacy_query = linear(&mut params, "legacy_query", d, rng);
        let prompts = PromptBank {
            views: ViewBank { maps },
            node: NodePromptSet { prompts: node },
            structure: StructurePromptSet {
                prompts: structure,
                edge_map,
            },
            cross_view: CrossViewPromptBank {
                codebook,
                query,
                legacy_query,
            },
            mode: config.aggregation,
        };
        Ok(Self {
            config,
            params,
            table: EmbeddingTable { users, items },
            prompts,
        })
    }

    /// Rebuilds the typed layout around loaded parameters, checking that the
    /// names and shapes match what `config` implies.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let num_users = params
            .find("user_embedding")
            .map(|id| params.get(id).value.rows())
            .ok_or_else(|| Error::Contract("missing user_embedding".into()))?;
        let num_items = params
            .find("item_embedding")
            .map(|id| params.get(id).value.rows())
            .ok_or_else(|| Error::Contract("missing item_embedding".into()))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Model::new(config, num_users, num_items, &mut rng)?;
        model.params.check_same_layout(&params)?;
        model.params = params;
        Ok(model)
    }

    pub fn num_users(&self) -> usize {
        self.params.get(self.table.users).value.rows()
    }

    pub fn num_items(&self) -> usize {
        self.params.get(self.table.items).value.rows()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Appends freshly initialized rows so the tables hold at least the
    /// given counts. Existing rows are left untouched.
    pub fn grow(&mut self, num_users: usize, num_items: usize, rng: &mut impl Rng) -> (usize, usize) {
        let d = self.dim();
        let mut added = [0usize; 2];
        for (slot, (id, target)) in [(self.table.users, num_users), (self.table.items, num_items)]
            .into_iter()
            .enumerate()
        {
            let current = self.params.get(id).value.rows();
            if target <= current {
                continue;
            }
            let fresh = normal_matrix(rng, target - current, d);
            let mut value = self.params.get(id).value.clone();
            value.append_rows(&fresh).expect("same width");
            self.params.get_mut(id).set_value(value);
            added[slot] = target - current;
        }
        (added[0], added[1])
    }

    /// Final embeddings for every node of `graph`, computed without
    /// gradient tracking.
    pub fn embed(&self, graph: &crate::data::BipartiteGraph, opts: &ForwardOptions) -> Result<FinalEmbeddings> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let out = forward_all(&mut tape, self, &bound, graph, opts)?;
        Ok(FinalEmbeddings::new(
            tape.value(out.output).clone(),
            graph.num_users(),
            graph.num_items(),
        ))
    }
}
