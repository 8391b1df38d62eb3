//! Forward stages on the tape. Every stage works on whole node matrices,
//! users first, then items.

use std::sync::Arc;

use super::{AggregationMode, LinearVars, Model};
use crate::data::BipartiteGraph;
use crate::error::{Error, Result};
use crate::numeric::{BoundParams, CsrMatrix, Tape, Var};

/// Directed edge list in CSR order: edge `k` runs from `source[k]` (the
/// receiving node) to `target[k]`, grouped by source via `offsets`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    pub num_nodes: usize,
    pub source: Arc<[usize]>,
    pub target: Arc<[usize]>,
    pub offsets: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn from_adjacency(adj: &CsrMatrix) -> Self {
        let source: Vec<usize> = (0..adj.rows)
            .flat_map(|r| std::iter::repeat_n(r, adj.offsets[r + 1] - adj.offsets[r]))
            .collect();
        Self {
            num_nodes: adj.rows,
            source: source.into(),
            target: adj.indices.clone().into(),
            offsets: adj.offsets.clone().into(),
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Stage switches; every stage runs by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub node_prompts: bool,
    pub structure_prompts: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            node_prompts: true,
            structure_prompts: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StructureOutput {
    pub output: Var,
    /// `E × K` attention of each edge over the structure prompts.
    pub prompt_attention: Var,
    /// `E × 1` weights, summing to one over each node's neighbors.
    pub neighbor_weights: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AggregateOutput {
    pub output: Var,
    /// `n × N` attention over views.
    pub view_weights: Var,
    /// `n × N_z` codebook read weights (prompted mode only).
    pub codebook_weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Raw embedding rows of the graph's nodes.
    pub table: Var,
    /// Propagated backbone embeddings `x`.
    pub base: Var,
    /// Disentangled views before prompting.
    pub views: Vec<Var>,
    /// Views after node and structure prompts.
    pub prompted: Vec<Var>,
    pub node_attention: Vec<Var>,
    pub structure: Vec<StructureOutput>,
    pub aggregate: AggregateOutput,
    pub output: Var,
}

/// Mean of `Âˡ E` over `l = 0..=layers`.
pub fn backbone_propagate(tape: &mut Tape, adjacency: &Arc<CsrMatrix>, table: Var, layers: usize) -> Result<Var> {
    let mut acc = table;
    let mut current = table;
    for _ in 0..layers {
        current = tape.spmm(Arc::clone(adjacency), current)?;
        acc = tape.add(acc, current)?;
    }
    Ok(tape.scale(acc, 1.0 / (layers + 1) as f64))
}

/// One `x W_v + b_v` per view.
pub fn disentangle(tape: &mut Tape, x: Var, maps: &[LinearVars]) -> Result<Vec<Var>> {
    maps.iter().map(|m| m.apply(tape, x)).collect()
}

/// `x̃ + softmax(x̃ Pᵀ) P`; returns the output and the attention.
pub fn apply_node_prompts(tape: &mut Tape, view: Var, prompts: Var) -> Result<(Var, Var)> {
    let logits = tape.matmul_t(view, prompts)?;
    let alpha = tape.softmax_rows(logits)?;
    let read = tape.matmul(alpha, prompts)?;
    Ok((tape.add(view, read)?, alpha))
}

/// Edge-conditioned prompts weighted per receiving node.
///
/// For edge `(i, j)`: `u_ij = softmax(edge_map(x̃_i ‖ x̃_j) Qᵀ) Q`, then
/// `β_ij` is the softmax of `x̃_i · u_ij` over `i`'s neighbors and
/// `out_i = x̃_i + Σ_j β_ij u_ij`. Nodes without neighbors pass through.
pub fn apply_structure_prompts(
    tape: &mut Tape,
    view: Var,
    edges: &EdgeIndex,
    prompts: Var,
    edge_map: &LinearVars,
) -> Result<StructureOutput> {
    let (n, _) = tape.shape(view);
    if n != edges.num_nodes {
        return Err(Error::shape("structure_prompts", (n, 0), (edges.num_nodes, 0)));
    }
    let xi = tape.gather_rows(view, Arc::clone(&edges.source))?;
    let xj = tape.gather_rows(view, Arc::clone(&edges.target))?;
    let pair = tape.concat_cols(&[xi, xj])?;
    let hidden = edge_map.apply(tape, pair)?;
    let logits = tape.matmul_t(hidden, prompts)?;
    let prompt_attention = tape.softmax_rows(logits)?;
    let message = tape.matmul(prompt_attention, prompts)?;
    let score = tape.row_dot(xi, message)?;
    let neighbor_weights = tape.segment_softmax(score, Arc::clone(&edges.offsets))?;
    let weighted = tape.scale_rows(message, neighbor_weights)?;
    let summed = tape.scatter_add_rows(weighted, Arc::clone(&edges.source), n)?;
    Ok(StructureOutput {
        output: tape.add(view, summed)?,
        prompt_attention,
        neighbor_weights,
    })
}

/// Cross-view attention: `x̂ = x + Σ_j softmax_j(q · x̃_j) x̃_j`.
///
/// In [`AggregationMode::Initial`] the query is `legacy(x)`; in
/// [`AggregationMode::Prompted`] it is `query(x + softmax(x Zᵀ) Z)`.
pub fn aggregate_views(
    tape: &mut Tape,
    x: Var,
    views: &[Var],
    mode: AggregationMode,
    codebook: Var,
    query: &LinearVars,
    legacy_query: &LinearVars,
) -> Result<AggregateOutput> {
    if views.is_empty() {
        return Err(Error::Contract("aggregation needs at least one view".into()));
    }
    let (q, codebook_weights) = match mode {
        AggregationMode::Initial => (legacy_query.apply(tape, x)?, None),
        AggregationMode::Prompted => {
            let logits = tape.matmul_t(x, codebook)?;
            let w = tape.softmax_rows(logits)?;
            let z = tape.matmul(w, codebook)?;
            let shifted = tape.add(x, z)?;
            (query.apply(tape, shifted)?, Some(w))
        }
    };
    let scores = views.iter().map(|&v| tape.row_dot(q, v)).collect::<Result<Vec<_>>>()?;
    let logits = tape.concat_cols(&scores)?;
    let view_weights = tape.softmax_rows(logits)?;
    let mut output = x;
    for (j, &v) in views.iter().enumerate() {
        let w = tape.column(view_weights, j)?;
        let term = tape.scale_rows(v, w)?;
        output = tape.add(output, term)?;
    }
    Ok(AggregateOutput {
        output,
        view_weights,
        codebook_weights,
    })
}

fn prefix(tape: &mut Tape, table: Var, rows: usize, what: &str) -> Result<Var> {
    let have = tape.shape(table).0;
    match have.cmp(&rows) {
        std::cmp::Ordering::Equal => Ok(table),
        std::cmp::Ordering::Greater => tape.gather_rows(table, (0..rows).collect::<Vec<_>>().into()),
        std::cmp::Ordering::Less => Err(Error::Contract(format!(
            "graph has {rows} {what} but the embedding table holds {have}"
        ))),
    }
}

/// Full pipeline over every node of `graph`. Embedding tables may be longer
/// than the graph; only their leading rows are read.
pub fn forward_all(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundParams,
    graph: &BipartiteGraph,
    opts: &ForwardOptions,
) -> Result<ForwardOutput> {
    let users = prefix(tape, bound[model.table.users], graph.num_users(), "users")?;
    let items = prefix(tape, bound[model.table.items], graph.num_items(), "items")?;
    let table = tape.concat_rows(&[users, items])?;
    let base = backbone_propagate(tape, graph.adjacency(), table, model.config.layers)?;

    let bank = &model.prompts;
    let maps: Vec<LinearVars> = bank.views.maps.iter().map(|m| m.bind(bound)).collect();
    let views = disentangle(tape, base, &maps)?;

    let edges = EdgeIndex::from_adjacency(graph.adjacency());
    let edge_map = bank.structure.edge_map.bind(bound);
    let mut prompted = Vec::with_capacity(views.len());
    let mut node_attention = Vec::new();
    let mut structure = Vec::new();
    for (v, &view) in views.iter().enumerate() {
        let mut current = view;
        if opts.node_prompts {
            let (out, alpha) = apply_node_prompts(tape, current, bound[bank.node.prompts[v]])?;
            node_attention.push(alpha);
            current = out;
        }
        if opts.structure_prompts {
            let s = apply_structure_prompts(tape, current, &edges, bound[bank.structure.prompts[v]], &edge_map)?;
            structure.push(s);
            current = s.output;
        }
        prompted.push(current);
    }

    let cv = &bank.cross_view;
    let aggregate = aggregate_views(
        tape,
        base,
        &prompted,
        bank.mode,
        bound[cv.codebook],
        &cv.query.bind(bound),
        &cv.legacy_query.bind(bound),
    )?;
    Ok(ForwardOutput {
        table,
        base,
        views,
        prompted,
        node_attention,
        structure,
        output: aggregate.output,
        aggregate,
    })
}
