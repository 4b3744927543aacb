//! Random forests of CART trees.
//!
//! Each tree is grown on a bootstrap resample (drawn as per-row
//! multiplicities) with a random subset of features considered at every
//! split. Split search walks feature columns presorted once per fit, and a
//! split stably partitions every presorted column, so no node re-sorts.
//!
//! Rows are first put in a canonical order (lexicographic on covariates, then
//! target) and every random draw is keyed to that order, which makes a
//! fitted forest independent of the order rows were supplied in.
//!
//! Leaf values are the mean target of all training rows routed to the leaf,
//! in-bag or not; for a classifier that is the fraction of ones.

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::runtime::Executor;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Weighted sum of squared deviations (variance reduction).
    Variance,
    /// Weighted Gini impurity for 0/1 targets.
    Gini,
}

impl Criterion {
    /// Impurity of a node with total weight `w`, weighted target sum `s` and
    /// weighted sum of squares `ss`.
    #[inline]
    fn impurity<F: Scalar>(self, w: F, s: F, ss: F) -> F {
        match self {
            Criterion::Variance => ss - s * s / w,
            Criterion::Gini => F::of(2.0) * s * (w - s) / w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Depth 0 is a single leaf.
    pub max_depth: usize,
    /// Minimum bootstrap weight on each side of a split.
    pub min_leaf: usize,
    /// Fraction of features tried at each split.
    pub max_features: f64,
}

impl ForestParams {
    pub fn features_per_split(&self, d: usize) -> usize {
        if d == 0 {
            return 0;
        }
        let raw = (self.max_features * d as f64 - 1e-9).ceil();
        (raw.max(1.0) as usize).min(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<F> {
    Split { feature: u32, threshold: F, left: u32, right: u32 },
    Leaf { value: F },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<F> {
    pub nodes: Vec<Node<F>>,
}

impl<F: Scalar> Tree<F> {
    fn leaf_index(&self, row: impl Fn(usize) -> F) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split { feature, threshold, left, right } => {
                    at = if row(*feature as usize) <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<F>) -> F {
        match &self.nodes[self.leaf_index(|j| row[j])] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<F>(nodes: &[Node<F>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest<F> {
    pub criterion: Criterion,
    pub trees: Vec<Tree<F>>,
}

impl<F: Scalar> Forest<F> {
    /// Mean of the trees' leaf values for each row.
    pub fn predict(&self, x: ArrayView2<F>) -> Array1<F> {
        let k = F::of(self.trees.len() as f64);
        Array1::from_iter(x.rows().into_iter().map(|row| {
            let mut s = F::zero();
            for tree in &self.trees {
                s += tree.predict_row(row);
            }
            s / k
        }))
    }
}

/// Training data in canonical row order, column-major, with one presorted
/// row-index list per feature.
struct Prepared<F> {
    cols: Vec<Vec<F>>,
    target: Vec<F>,
    sorted: Vec<Vec<u32>>,
}

fn prepare<F: Scalar>(x: ArrayView2<F>, target: ArrayView1<F>) -> Prepared<F> {
    let (n, d) = x.dim();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| {
        for j in 0..d {
            match x[[a, j]].total_cmp(&x[[b, j]]) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        target[a].total_cmp(&target[b])
    });
    let cols: Vec<Vec<F>> = (0..d).map(|j| perm.iter().map(|&i| x[[i, j]]).collect()).collect();
    let target: Vec<F> = perm.iter().map(|&i| target[i]).collect();
    let sorted = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();
    Prepared { cols, target, sorted }
}

pub fn fit_forest<F: Scalar>(
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    params: &ForestParams,
    criterion: Criterion,
    seed: u64,
    exec: &Executor,
) -> Result<Forest<F>> {
    let data = prepare(x, target);
    let trees = exec.run_indexed(params.n_trees, |t| Ok(grow_tree(&data, params, criterion, seed, t as u64)))?;
    Ok(Forest { criterion, trees })
}

struct Best<F> {
    score: F,
    feature: usize,
    threshold: F,
}

fn grow_tree<F: Scalar>(
    data: &Prepared<F>,
    params: &ForestParams,
    criterion: Criterion,
    seed: u64,
    tree_index: u64,
) -> Tree<F> {
    let n = data.target.len();
    let d = data.cols.len();
    let mut rng = seed::rng(seed, &[tree_index]);

    let mut weight = vec![0u32; n];
    for _ in 0..n {
        weight[rng.random_range(0..n)] += 1;
    }
    let mut order: Vec<Vec<u32>> =
        data.sorted.iter().map(|idx| idx.iter().copied().filter(|&i| weight[i as usize] > 0).collect()).collect();
    let in_bag = weight.iter().filter(|&&w| w > 0).count();

    let mtry = params.features_per_split(d);
    let min_leaf = F::of(params.min_leaf as f64);
    let mut features: Vec<usize> = (0..d).collect();
    let mut goes_left = vec![false; n];
    let mut buf: Vec<u32> = Vec::with_capacity(in_bag);

    let mut nodes: Vec<Node<F>> = vec![Node::Leaf { value: F::zero() }];
    // (node id, start, end, depth); left children are popped first.
    let mut stack = vec![(0usize, 0usize, in_bag, 0usize)];
    while let Some((id, start, end, depth)) = stack.pop() {
        if depth >= params.max_depth || mtry == 0 {
            continue;
        }
        let (mut w_tot, mut s_tot, mut ss_tot) = (F::zero(), F::zero(), F::zero());
        let rows = if d > 0 { &order[0][start..end] } else { &[][..] };
        for &r in rows {
            let w = F::of(weight[r as usize] as f64);
            let y = data.target[r as usize];
            w_tot += w;
            s_tot += w * y;
            ss_tot += w * y * y;
        }
        if w_tot < min_leaf * F::of(2.0) {
            continue;
        }
        let parent = criterion.impurity(w_tot, s_tot, ss_tot);
        if !(parent > F::zero()) {
            continue;
        }

        for k in 0..mtry {
            let pick = rng.random_range(k..d);
            features.swap(k, pick);
        }
        let mut chosen = features[..mtry].to_vec();
        chosen.sort_unstable();

        let mut best: Option<Best<F>> = None;
        for &f in &chosen {
            let col = &data.cols[f];
            let list = &order[f][start..end];
            let (mut wl, mut sl, mut ssl) = (F::zero(), F::zero(), F::zero());
            for k in 0..list.len().saturating_sub(1) {
                let r = list[k] as usize;
                let w = F::of(weight[r] as f64);
                let y = data.target[r];
                wl += w;
                sl += w * y;
                ssl += w * y * y;
                let (v, v_next) = (col[r], col[list[k + 1] as usize]);
                if !(v_next > v) {
                    continue;
                }
                let wr = w_tot - wl;
                if wl < min_leaf || wr < min_leaf {
                    continue;
                }
                let score = criterion.impurity(wl, sl, ssl) + criterion.impurity(wr, s_tot - sl, ss_tot - ssl);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = (v + v_next) * F::of(0.5);
                    if !(threshold < v_next) {
                        threshold = v;
                    }
                    best = Some(Best { score, feature: f, threshold });
                }
            }
        }
        let Some(best) = best else { continue };
        if !(best.score < parent - parent * F::of(1e-12)) {
            continue;
        }

        let col = &data.cols[best.feature];
        for &r in &order[best.feature][start..end] {
            goes_left[r as usize] = col[r as usize] <= best.threshold;
        }
        let mut n_left = 0;
        for list in order.iter_mut() {
            buf.clear();
            let slice = &mut list[start..end];
            let mut write = 0;
            for k in 0..slice.len() {
                let r = slice[k];
                if goes_left[r as usize] {
                    slice[write] = r;
                    write += 1;
                } else {
                    buf.push(r);
                }
            }
            slice[write..].copy_from_slice(&buf);
            n_left = write;
        }
        let left = nodes.len();
        nodes.push(Node::Leaf { value: F::zero() });
        nodes.push(Node::Leaf { value: F::zero() });
        nodes[id] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: left as u32,
            right: left as u32 + 1,
        };
        stack.push((left + 1, start + n_left, end, depth + 1));
        stack.push((left, start, start + n_left, depth + 1));
    }

    let mut tree = Tree { nodes };
    let mut sums = vec![F::zero(); tree.nodes.len()];
    let mut counts = vec![0usize; tree.nodes.len()];
    for r in 0..n {
        let leaf = tree.leaf_index(|j| data.cols[j][r]);
        sums[leaf] += data.target[r];
        counts[leaf] += 1;
    }
    for (i, node) in tree.nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = if counts[i] > 0 { sums[i] / F::of(counts[i] as f64) } else { F::zero() };
        }
    }
    tree
}
