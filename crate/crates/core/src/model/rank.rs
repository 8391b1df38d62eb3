//! Dot-product scoring and top-K retrieval over final embeddings.

use crate::error::{Error, Result};
use crate::numeric::matrix::dot;
use crate::numeric::DenseMatrix;

/// Final node embeddings, users first, then items.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalEmbeddings {
    matrix: DenseMatrix,
    num_users: usize,
    num_items: usize,
}

impl FinalEmbeddings {
    pub fn new(matrix: DenseMatrix, num_users: usize, num_items: usize) -> Self {
        debug_assert_eq!(matrix.rows(), num_users + num_items);
        Self {
            matrix,
            num_users,
            num_items,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn user(&self, u: usize) -> Result<&[f64]> {
        if u >= self.num_users {
            return Err(Error::UnknownId { kind: "user", id: u });
        }
        Ok(self.matrix.row(u))
    }

    pub fn item(&self, i: usize) -> Result<&[f64]> {
        if i >= self.num_items {
            return Err(Error::UnknownId { kind: "item", id: i });
        }
        Ok(self.matrix.row(self.num_users + i))
    }

    /// `x̂_u · x̂_i`.
    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        Ok(dot(self.user(u)?, self.item(i)?))
    }

    /// Scores of user `u` against every item.
    pub fn scores(&self, u: usize) -> Result<Vec<f64>> {
        let user = self.user(u)?;
        Ok((0..self.num_items)
            .map(|i| dot(user, self.matrix.row(self.num_users + i)))
            .collect())
    }

    /// Top `k` items for `u`, skipping those `exclude` rejects.
    pub fn recommend_topk(&self, u: usize, k: usize, exclude: impl Fn(usize) -> bool) -> Result<Vec<usize>> {
        Ok(rank_items(&self.scores(u)?, k, exclude))
    }
}

/// Indices of the `k` highest scores, descending, ties broken by ascending
/// index. Excluded indices never appear; fewer than `k` candidates yields
/// all of them.
pub fn rank_items(scores: &[f64], k: usize, exclude: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| !exclude(i)).collect();
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(order);
    candidates
}
