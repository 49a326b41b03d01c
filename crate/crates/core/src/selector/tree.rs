//! CART regression tree over meta features, used as a residual selector.
//!
//! The tree is grown on raw residuals with squared-error (variance
//! reduction) splits. Leaves keep the indices of the training records routed
//! to them; selection returns the leaf a future point lands in.

use serde::{Deserialize, Serialize};

use super::{Feature, MetaSource};
use crate::backtest::ResidualCollection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Node<T> {
    /// `value <= threshold` goes left; everything else (including NaN) right.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    Leaf { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegressionTree<T> {
    features: Vec<Feature>,
    nodes: Vec<Node<T>>,
    n_records: usize,
    max_depth: usize,
    min_leaf: usize,
}

struct Best<T> {
    gain: T,
    feature: usize,
    threshold: T,
    split_at: usize,
    order: Vec<usize>,
}

/// Sum of squared deviations from the mean.
fn sse<T: Scalar>(vals: impl Iterator<Item = T> + Clone) -> T {
    let (n, s) = vals.clone().fold((0usize, T::zero()), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return T::zero();
    }
    let m = s / T::of_usize(n);
    vals.map(|v| (v - m) * (v - m)).sum()
}

impl<T: Scalar> RegressionTree<T> {
    /// Grows a tree on `coll`, predicting `eps` from `features`.
    pub fn fit(coll: &ResidualCollection<T>, features: &[Feature], max_depth: usize, min_leaf: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("tree selector needs at least one feature".into()));
        }
        if features.contains(&Feature::Observed) {
            return Err(Error::InvalidInput("tree selector cannot use `observed`".into()));
        }
        let min_leaf = min_leaf.max(1);
        if coll.is_empty() || coll.len() < min_leaf {
            return Err(Error::InsufficientData(format!(
                "tree selector needs at least min_leaf = {min_leaf} records, collection has {}",
                coll.len()
            )));
        }
        let mut x: Vec<Vec<T>> = Vec::with_capacity(features.len());
        for f in features {
            let col = coll
                .records()
                .iter()
                .map(|r| r.meta.feature(f).ok_or_else(|| Error::UnknownFeature(f.to_string())))
                .collect::<Result<Vec<T>>>()?;
            x.push(col);
        }
        let y = coll.eps();
        let mut tree = Self { features: features.to_vec(), nodes: Vec::new(), n_records: coll.len(), max_depth, min_leaf };
        tree.grow((0..coll.len()).collect(), 0, &x, &y);
        Ok(tree)
    }

    fn grow(&mut self, indices: Vec<usize>, depth: usize, x: &[Vec<T>], y: &[T]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { indices: Vec::new() });
        let best = if depth < self.max_depth && indices.len() >= 2 * self.min_leaf {
            self.best_split(&indices, x, y)
        } else {
            None
        };
        match best {
            None => self.nodes[id] = Node::Leaf { indices },
            Some(b) => {
                let (l, r) = b.order.split_at(b.split_at);
                let (mut l, mut r) = (l.to_vec(), r.to_vec());
                l.sort_unstable();
                r.sort_unstable();
                let left = self.grow(l, depth + 1, x, y);
                let right = self.grow(r, depth + 1, x, y);
                self.nodes[id] = Node::Split { feature: b.feature, threshold: b.threshold, left, right };
            }
        }
        id
    }

    fn best_split(&self, indices: &[usize], x: &[Vec<T>], y: &[T]) -> Option<Best<T>> {
        let n = indices.len();
        let parent = sse(indices.iter().map(|&i| y[i]));
        let floor = parent * T::of(1e-12);
        if !(parent > T::zero()) {
            return None;
        }
        let mean = indices.iter().map(|&i| y[i]).sum::<T>() / T::of_usize(n);
        let mut best: Option<Best<T>> = None;
        for (f, col) in x.iter().enumerate() {
            let mut order = indices.to_vec();
            order.sort_by(|&a, &b| {
                col[a].partial_cmp(&col[b]).unwrap_or_else(|| col[a].is_nan().cmp(&col[b].is_nan())).then(a.cmp(&b))
            });
            // Prefix sums of centered targets keep the SSE computation stable.
            let mut s = Vec::with_capacity(n + 1);
            let mut q = Vec::with_capacity(n + 1);
            s.push(T::zero());
            q.push(T::zero());
            for &i in &order {
                let v = y[i] - mean;
                s.push(*s.last().unwrap() + v);
                q.push(*q.last().unwrap() + v * v);
            }
            let side = |a: usize, b: usize| {
                let cnt = T::of_usize(b - a);
                let ss = s[b] - s[a];
                (q[b] - q[a]) - ss * ss / cnt
            };
            let mut local: Option<(T, usize)> = None;
            for k in self.min_leaf..=(n - self.min_leaf) {
                let (lo, hi) = (col[order[k - 1]], col[order[k]]);
                if !(lo < hi) {
                    continue;
                }
                let gain = parent - side(0, k) - side(k, n);
                if gain > floor && local.is_none_or(|(g, _)| gain > g) {
                    local = Some((gain, k));
                }
            }
            if let Some((gain, k)) = local {
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (lo, hi) = (col[order[k - 1]], col[order[k]]);
                    let threshold = lo + (hi - lo) / T::of(2.0);
                    best = Some(Best { gain, feature: f, threshold, split_at: k, order });
                }
            }
        }
        best
    }

    /// Index of the leaf node that `meta` routes to.
    pub fn route(&self, meta: &impl MetaSource<T>) -> Result<usize> {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { .. } => return Ok(node),
                Node::Split { feature, threshold, left, right } => {
                    let f = &self.features[*feature];
                    let v = meta.feature(f).ok_or_else(|| Error::UnknownFeature(f.to_string()))?;
                    node = if v <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_indices(&self, node: usize) -> &[usize] {
        match &self.nodes[node] {
            Node::Leaf { indices } => indices,
            Node::Split { .. } => &[],
        }
    }

    /// Leaf node ids in depth-first order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i], Node::Leaf { .. })).collect()
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    /// Readable path of split conditions leading to `leaf`.
    pub fn describe_leaf(&self, leaf: usize) -> String {
        fn walk<T: Scalar>(t: &RegressionTree<T>, node: usize, target: usize, path: &mut Vec<String>) -> bool {
            if node == target {
                return true;
            }
            if let Node::Split { feature, threshold, left, right } = &t.nodes[node] {
                let f = &t.features[*feature];
                path.push(format!("{f} <= {threshold}"));
                if walk(t, *left, target, path) {
                    return true;
                }
                path.pop();
                path.push(format!("{f} > {threshold}"));
                if walk(t, *right, target, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        walk(self, 0, leaf, &mut path);
        if path.is_empty() {
            "root".into()
        } else {
            path.join(" and ")
        }
    }
}
