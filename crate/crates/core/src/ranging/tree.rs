use std::time::Instant;

use super::{check_training_set, finish, FitOptions, ModelKind, ModelParams, Result, SolverStatus, TrainReport};
use crate::dataset::RangingDataset;

/// One node of a preorder-encoded tree. A split's left child is the next
/// node; `right` is the index of its right child.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { threshold: f64, right: usize },
    Leaf { value: f64 },
}

/// Regression tree on a single input; `x <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn predict(&self, x: f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { threshold, right } => i = if x <= threshold { i + 1 } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> (usize, usize) {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => (0, i + 1),
                TreeNode::Split { right, .. } => {
                    let (dl, _) = walk(t, i + 1);
                    let (dr, end) = walk(t, right);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(self, 0).0
    }

    /// Split thresholds in preorder.
    pub fn thresholds(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { threshold, .. } => Some(*threshold),
                TreeNode::Leaf { .. } => None,
            })
            .collect()
    }

    /// Rebuilds the right-child links of a bare preorder list of
    /// `Some(threshold)` splits and `None`-marked leaves.
    pub(crate) fn from_preorder(items: Vec<std::result::Result<f64, f64>>) -> Option<Self> {
        fn build(items: &[std::result::Result<f64, f64>], i: usize, out: &mut Vec<TreeNode>) -> Option<usize> {
            match *items.get(i)? {
                Err(value) => {
                    out.push(TreeNode::Leaf { value });
                    Some(i + 1)
                }
                Ok(threshold) => {
                    let slot = out.len();
                    out.push(TreeNode::Split { threshold, right: 0 });
                    let right = build(items, i + 1, out)?;
                    if let TreeNode::Split { right: r, .. } = &mut out[slot] {
                        *r = right;
                    }
                    build(items, right, out)
                }
            }
        }
        let mut nodes = Vec::with_capacity(items.len());
        let end = build(&items, 0, &mut nodes)?;
        (end == items.len()).then_some(Self { nodes })
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            TreeNode::Split { threshold, .. } => threshold.is_finite(),
            TreeNode::Leaf { value } => value.is_finite(),
        })
    }
}

/// Growing-time node with the statistics pruning needs.
struct GrowNode {
    value: f64,
    sse: f64,
    split: Option<(f64, usize, usize)>,
}

struct Grown {
    nodes: Vec<GrowNode>,
}

fn sse_of(y: &[f64]) -> (f64, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    (mean, y.iter().map(|v| (v - mean).powi(2)).sum())
}

/// Best split of a sorted segment: `(reduction, position, threshold)`.
fn best_split(x: &[f64], y: &[f64], min_leaf: usize, parent_sse: f64, parent_mean: f64) -> Option<(f64, usize, f64)> {
    let n = y.len();
    let total: f64 = y.iter().map(|v| v - parent_mean).sum();
    let mut left = 0.0;
    let mut best: Option<(f64, usize, f64)> = None;
    for k in 1..n {
        left += y[k - 1] - parent_mean;
        if k < min_leaf || n - k < min_leaf || x[k - 1] == x[k] {
            continue;
        }
        // SSE reduction of a split equals the between-group sum of squares
        let right = total - left;
        let gain = left * left / k as f64 + right * right / (n - k) as f64 - total * total / n as f64;
        if best.is_none_or(|(g, _, _)| gain > g) {
            best = Some((gain, k, 0.5 * (x[k - 1] + x[k])));
        }
    }
    best.filter(|(g, _, _)| *g > 1e-12 * parent_sse.max(f64::MIN_POSITIVE))
}

fn grow(x: &[f64], y: &[f64], min_leaf: usize, max_depth: usize) -> Grown {
    fn rec(x: &[f64], y: &[f64], depth: usize, min_leaf: usize, max_depth: usize, out: &mut Vec<GrowNode>) -> usize {
        let (mean, sse) = sse_of(y);
        let id = out.len();
        out.push(GrowNode {
            value: mean,
            sse,
            split: None,
        });
        if depth >= max_depth || y.len() < 2 * min_leaf || sse <= 0.0 {
            return id;
        }
        if let Some((_, k, thr)) = best_split(x, y, min_leaf, sse, mean) {
            let l = rec(&x[..k], &y[..k], depth + 1, min_leaf, max_depth, out);
            let r = rec(&x[k..], &y[k..], depth + 1, min_leaf, max_depth, out);
            out[id].split = Some((thr, l, r));
        }
        id
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let xs: Vec<f64> = order.iter().map(|i| x[*i]).collect();
    let ys: Vec<f64> = order.iter().map(|i| y[*i]).collect();
    let mut nodes = Vec::new();
    rec(&xs, &ys, 0, min_leaf.max(1), max_depth, &mut nodes);
    Grown { nodes }
}

impl Grown {
    /// The α at which each internal node is collapsed by weakest-link
    /// pruning (`INFINITY` for leaves, which are never collapsed).
    fn prune_alphas(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut alpha = vec![f64::INFINITY; n];
        let mut collapsed = vec![false; n];
        let mut parent = vec![usize::MAX; n];
        for (p, node) in self.nodes.iter().enumerate() {
            if let Some((_, l, r)) = node.split {
                parent[l] = p;
                parent[r] = p;
            }
        }
        let hidden = |mut j: usize, collapsed: &[bool]| {
            while parent[j] != usize::MAX {
                j = parent[j];
                if collapsed[j] {
                    return true;
                }
            }
            false
        };
        let mut current = 0.0f64;
        loop {
            // (leaf SSE, leaf count) of each live subtree
            let mut stats = vec![(0.0, 0usize); n];
            for i in (0..n).rev() {
                stats[i] = match self.nodes[i].split {
                    Some((_, l, r)) if !collapsed[i] => (stats[l].0 + stats[r].0, stats[l].1 + stats[r].1),
                    _ => (self.nodes[i].sse, 1),
                };
            }
            let mut weakest = f64::INFINITY;
            let mut g = vec![f64::INFINITY; n];
            for i in 0..n {
                if self.nodes[i].split.is_some() && !collapsed[i] && !hidden(i, &collapsed) {
                    g[i] = ((self.nodes[i].sse - stats[i].0) / (stats[i].1 - 1) as f64).max(0.0);
                    weakest = weakest.min(g[i]);
                }
            }
            if !weakest.is_finite() {
                return alpha;
            }
            current = current.max(weakest);
            let cutoff = weakest + 1e-12 * weakest.abs().max(1e-300);
            for i in 0..n {
                if g[i] <= cutoff {
                    collapsed[i] = true;
                    alpha[i] = current;
                }
            }
        }
    }

    /// Subtree that keeps every split whose collapse α exceeds `alpha`.
    fn pruned(&self, alphas: &[f64], alpha: f64) -> RegressionTree {
        fn emit(g: &Grown, alphas: &[f64], alpha: f64, i: usize, out: &mut Vec<TreeNode>) {
            match g.nodes[i].split {
                Some((threshold, l, r)) if alphas[i] > alpha => {
                    let slot = out.len();
                    out.push(TreeNode::Split { threshold, right: 0 });
                    emit(g, alphas, alpha, l, out);
                    let right = out.len();
                    out[slot] = TreeNode::Split { threshold, right };
                    emit(g, alphas, alpha, r, out);
                }
                _ => out.push(TreeNode::Leaf {
                    value: g.nodes[i].value,
                }),
            }
        }
        let mut nodes = Vec::new();
        emit(self, alphas, alpha, 0, &mut nodes);
        RegressionTree { nodes }
    }
}

/// Grows an unpruned tree; `min_leaf` bounds leaf sizes and `max_depth`
/// the number of splits on any path.
pub fn grow_tree(x: &[f64], y: &[f64], min_leaf: usize, max_depth: usize) -> RegressionTree {
    if x.is_empty() {
        return RegressionTree::leaf(0.0);
    }
    let g = grow(x, y, min_leaf, max_depth);
    g.pruned(&vec![f64::INFINITY; g.nodes.len()], 0.0)
}

/// Cost-complexity pruned tree with α chosen by k-fold cross-validation.
fn prune_by_cv(x: &[f64], y: &[f64], opts: &FitOptions) -> RegressionTree {
    let full = grow(x, y, opts.cart_min_leaf, opts.cart_max_depth);
    let alphas = full.prune_alphas();
    let mut levels: Vec<f64> = alphas.iter().copied().filter(|a| a.is_finite()).collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let folds = opts.cart_folds;
    if folds < 2 || levels.len() == 1 || x.len() < folds {
        return full.pruned(&alphas, 0.0);
    }
    let candidates: Vec<f64> = (0..levels.len())
        .map(|k| match levels.get(k + 1) {
            Some(next) => (levels[k] * next).sqrt(),
            None => levels[k],
        })
        .collect();

    let mut cv_err = vec![0.0; candidates.len()];
    for f in 0..folds {
        let (mut xt, mut yt, mut xv, mut yv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if i % folds == f {
                xv.push(x[i]);
                yv.push(y[i]);
            } else {
                xt.push(x[i]);
                yt.push(y[i]);
            }
        }
        let g = grow(&xt, &yt, opts.cart_min_leaf, opts.cart_max_depth);
        let ga = g.prune_alphas();
        for (c, err) in candidates.iter().zip(cv_err.iter_mut()) {
            let tree = g.pruned(&ga, *c);
            *err += xv
                .iter()
                .zip(&yv)
                .map(|(xi, yi)| (tree.predict(*xi) - yi).powi(2))
                .sum::<f64>();
        }
    }
    let mut best = 0;
    for k in 1..candidates.len() {
        // ties go to the simpler (more pruned) tree
        if cv_err[k] <= cv_err[best] {
            best = k;
        }
    }
    full.pruned(&alphas, levels[best])
}

pub fn fit_cart(train: &RangingDataset, opts: &FitOptions) -> Result<TrainReport> {
    let started = Instant::now();
    check_training_set(ModelKind::Cart, train, 1)?;
    let x = train.rssi();
    let y = train.distances();
    let tree = if opts.cart_prune {
        prune_by_cv(&x, &y, opts)
    } else {
        grow_tree(&x, &y, opts.cart_min_leaf, opts.cart_max_depth)
    };
    finish(train, ModelParams::Cart(tree), opts, SolverStatus::Exact, started)
}
