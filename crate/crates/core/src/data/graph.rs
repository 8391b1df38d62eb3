//! Cumulative user–item graph with symmetric degree normalization.
//!
//! Nodes are laid out users first, then items: user `u` is node `u` and
//! item `i` is node `num_users + i`. The normalized adjacency
//! `D^{-1/2} A D^{-1/2}` is kept in compressed sparse row form, each row's
//! neighbors in ascending node order.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::CsrMatrix;

/// Additive change to a [`BipartiteGraph`]: new users get ids
/// `num_users..num_users + new_users` (likewise items), then edges are added.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphDelta {
    pub edges: Vec<(usize, usize)>,
    pub new_users: usize,
    pub new_items: usize,
}

impl GraphDelta {
    /// Deduplicated, sorted edges.
    pub fn new(mut edges: Vec<(usize, usize)>, new_users: usize, new_items: usize) -> Self {
        edges.sort_unstable();
        edges.dedup();
        Self {
            edges,
            new_users,
            new_items,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.new_users == 0 && self.new_items == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    user_adj: Vec<Vec<usize>>,
    item_adj: Vec<Vec<usize>>,
    adjacency: Arc<CsrMatrix>,
}

impl Default for BipartiteGraph {
    fn default() -> Self {
        Self::empty(0, 0)
    }
}

impl BipartiteGraph {
    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self::assemble(vec![Vec::new(); num_users], vec![Vec::new(); num_items])
    }

    /// One-shot construction; duplicate edges collapse to one.
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::empty(0, 0).apply_delta(&GraphDelta::new(edges.to_vec(), num_users, num_items))
    }

    fn assemble(mut user_adj: Vec<Vec<usize>>, mut item_adj: Vec<Vec<usize>>) -> Self {
        for list in user_adj.iter_mut().chain(item_adj.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let nu = user_adj.len();
        let n = nu + item_adj.len();
        let nnz: usize = user_adj.iter().map(Vec::len).sum::<usize>() * 2;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        offsets.push(0);
        for (u, items) in user_adj.iter().enumerate() {
            for &i in items {
                indices.push(nu + i);
                values.push(norm_weight(user_adj[u].len(), item_adj[i].len()));
            }
            offsets.push(indices.len());
        }
        for (i, users) in item_adj.iter().enumerate() {
            for &u in users {
                indices.push(u);
                values.push(norm_weight(user_adj[u].len(), item_adj[i].len()));
            }
            offsets.push(indices.len());
        }
        let adjacency = Arc::new(CsrMatrix {
            rows: n,
            cols: n,
            offsets,
            indices,
            values,
        });
        Self {
            user_adj,
            item_adj,
            adjacency,
        }
    }

    /// `G_t = G_{t-1} + ΔG_t`. Edges already present are ignored; every
    /// normalization weight is recomputed.
    pub fn apply_delta(&self, delta: &GraphDelta) -> Result<Self> {
        if delta.is_empty() {
            return Ok(self.clone());
        }
        let nu = self.num_users() + delta.new_users;
        let ni = self.num_items() + delta.new_items;
        let mut user_adj = self.user_adj.clone();
        let mut item_adj = self.item_adj.clone();
        user_adj.resize(nu, Vec::new());
        item_adj.resize(ni, Vec::new());
        for &(u, i) in &delta.edges {
            if u >= nu || i >= ni {
                return Err(Error::Delta(format!(
                    "edge ({u}, {i}) references a node outside {nu} users x {ni} items"
                )));
            }
            if user_adj[u].binary_search(&i).is_err() {
                user_adj[u].push(i);
                item_adj[i].push(u);
            }
        }
        Ok(Self::assemble(user_adj, item_adj))
    }

    pub fn num_users(&self) -> usize {
        self.user_adj.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_adj.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users() + self.num_items()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_adj[u].len()
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_adj[i].len()
    }

    pub fn items_of(&self, u: usize) -> &[usize] {
        &self.user_adj[u]
    }

    pub fn users_of(&self, i: usize) -> &[usize] {
        &self.item_adj[i]
    }

    pub fn has_edge(&self, u: usize, i: usize) -> bool {
        self.user_adj.get(u).is_some_and(|l| l.binary_search(&i).is_ok())
    }

    /// Stored weight of edge `(u, i)` as seen from the user row.
    pub fn weight(&self, u: usize, i: usize) -> Option<f64> {
        let node = self.num_users() + i;
        let range = self.adjacency.row_range(u);
        let row = &self.adjacency.indices[range.clone()];
        row.binary_search(&node)
            .ok()
            .map(|k| self.adjacency.values[range.start + k])
    }

    /// Stored weight of edge `(u, i)` as seen from the item row.
    pub fn weight_from_item(&self, i: usize, u: usize) -> Option<f64> {
        let range = self.adjacency.row_range(self.num_users() + i);
        let row = &self.adjacency.indices[range.clone()];
        row.binary_search(&u)
            .ok()
            .map(|k| self.adjacency.values[range.start + k])
    }

    /// All edges in ascending `(user, item)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_adj
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
    }

    /// Normalized adjacency over all nodes, users first.
    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }
}

fn norm_weight(du: usize, di: usize) -> f64 {
    1.0 / ((du * di) as f64).sqrt()
}
