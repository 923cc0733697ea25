//! Gradient-boosted regression trees on the logistic loss with exact greedy
//! split search.
//!
//! Each round fits one tree to the per-row gradient `g = p − y` and hessian
//! `h = p(1 − p)`. Leaves hold the Newton weight `−G/(H + λ)`; predictions add
//! `learning_rate · Σ leaf` to the prevalence log-odds. Depth-wise growth
//! splits every splittable node level by level; leaf-wise growth repeatedly
//! splits the leaf with the largest gain.

use serde::{Deserialize, Serialize};

use super::{check_training_data, ClassifierModel, HyperParams, ModelError, Parameters, MODEL_FORMAT_VERSION};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, softplus, total_cmp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    Depthwise,
    Leafwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    /// `None` leaves depth unbounded (leaf-wise only).
    pub max_depth: Option<usize>,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    /// Leaf budget for leaf-wise growth.
    pub num_leaves: Option<usize>,
    pub min_data_in_leaf: usize,
    /// A split is made only if its gain exceeds this.
    pub min_gain_to_split: f64,
    /// L2 penalty on leaf weights.
    pub reg_lambda: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self::depthwise_default()
    }
}

impl GbdtParams {
    pub fn depthwise_default() -> Self {
        Self {
            learning_rate: 0.02,
            n_estimators: 765,
            max_depth: Some(3),
            min_child_weight: 8.0,
            num_leaves: None,
            min_data_in_leaf: 1,
            min_gain_to_split: 0.0,
            reg_lambda: 1.0,
        }
    }

    pub fn leafwise_default() -> Self {
        Self {
            learning_rate: 0.1,
            n_estimators: 210,
            max_depth: Some(1),
            min_child_weight: 1e-3,
            num_leaves: Some(550),
            min_data_in_leaf: 17,
            min_gain_to_split: 0.0,
            reg_lambda: 1.0,
        }
    }

    pub(crate) fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match name {
            "learning_rate" | "eta" | "lr" => self.learning_rate = value,
            "n_estimators" => self.n_estimators = value.round() as usize,
            "max_depth" => self.max_depth = (value >= 0.0).then(|| value.round() as usize),
            "min_child_weight" => self.min_child_weight = value,
            "num_leaves" => self.num_leaves = Some(value.round() as usize),
            "min_data_in_leaf" => self.min_data_in_leaf = value.round() as usize,
            "min_gain_to_split" => self.min_gain_to_split = value,
            "reg_lambda" | "lambda" => self.reg_lambda = value,
            _ => return Err(ModelError::InvalidParam(format!("gbdt has no parameter {name}"))),
        }
        Ok(())
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParam(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1".into());
        }
        if self.num_leaves.is_some_and(|l| l < 2) {
            return bad("num_leaves must be at least 2".into());
        }
        if self.min_child_weight < 0.0 || self.min_gain_to_split < 0.0 || self.reg_lambda < 0.0 {
            return bad("min_child_weight, min_gain_to_split and reg_lambda must be non-negative".into());
        }
        Ok(())
    }

    fn check_growth(&self, growth: Growth) -> Result<(), ModelError> {
        self.validate()?;
        if growth == Growth::Depthwise && self.max_depth.is_none() {
            return Err(ModelError::InvalidParam("depth-wise growth needs max_depth".into()));
        }
        if growth == Growth::Leafwise && self.num_leaves.is_none() && self.max_depth.is_none() {
            return Err(ModelError::InvalidParam("leaf-wise growth needs num_leaves or max_depth".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<T> {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    Leaf { value: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn predict(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

pub fn train_gbdt<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    params: &GbdtParams,
    growth: Growth,
) -> Result<ClassifierModel<T>, ModelError> {
    train_gbdt_traced(x, y, params, growth).map(|(m, _)| m)
}

/// Trains and also returns the mean training log-loss before the first
/// round and after every round.
pub fn train_gbdt_traced<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    params: &GbdtParams,
    growth: Growth,
) -> Result<(ClassifierModel<T>, Vec<T>), ModelError> {
    params.check_growth(growth)?;
    check_training_data(x, y, false)?;
    let n = x.nrows();
    let n_pos = y.iter().filter(|&&v| v).count();
    // Clamp so a single-class fit stays finite.
    let prior = (n_pos as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let base_score = T::lit((prior / (1.0 - prior)).ln());
    let lr = T::lit(params.learning_rate);
    let target: Vec<T> = y.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();

    let sorted = presort(x);
    let mut margin = vec![base_score; n];
    let mut grad = vec![T::zero(); n];
    let mut hess = vec![T::zero(); n];
    let mut trace = Vec::with_capacity(params.n_estimators + 1);
    trace.push(mean_logloss(&margin, &target));
    let mut trees = Vec::with_capacity(params.n_estimators);

    for _ in 0..params.n_estimators {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - target[i];
            hess[i] = p * (T::one() - p);
        }
        let (tree, leaf_of) = grow_tree(x, &sorted, &grad, &hess, params, growth);
        for i in 0..n {
            if let Node::Leaf { value } = tree.nodes[leaf_of[i]] {
                margin[i] += lr * value;
            }
        }
        trace.push(mean_logloss(&margin, &target));
        trees.push(tree);
    }

    let hyperparameters = match growth {
        Growth::Depthwise => HyperParams::GbdtDepthwise(params.clone()),
        Growth::Leafwise => HyperParams::GbdtLeafwise(params.clone()),
    };
    Ok((
        ClassifierModel {
            format_version: MODEL_FORMAT_VERSION,
            hyperparameters,
            n_features: x.ncols(),
            parameters: Parameters::Trees {
                base_score,
                learning_rate: lr,
                trees,
            },
            platt: None,
            seed: 0,
        },
        trace,
    ))
}

fn mean_logloss<T: Scalar>(margin: &[T], target: &[T]) -> T {
    let s: T = margin.iter().zip(target).map(|(&m, &t)| softplus(m) - t * m).sum();
    s / T::from_count(margin.len())
}

/// Row indices sorted by each feature, ties by row index.
fn presort<T: Scalar>(x: &Matrix<T>) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .map(|j| {
            let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
            idx.sort_by(|&a, &b| total_cmp(&x.get(a as usize, j), &x.get(b as usize, j)).then(a.cmp(&b)));
            idx
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Split<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

/// A node under construction: its rows in per-feature sorted order.
struct Pending<T> {
    node: usize,
    depth: usize,
    sorted: Vec<Vec<u32>>,
    g: T,
    h: T,
    best: Option<Split<T>>,
}

fn leaf_weight<T: Scalar>(g: T, h: T, lambda: T) -> T {
    let denom = h + lambda;
    if denom > T::zero() {
        -g / denom
    } else {
        T::zero()
    }
}

fn score<T: Scalar>(g: T, h: T, lambda: T) -> T {
    let denom = h + lambda;
    if denom > T::zero() {
        g * g / denom
    } else {
        T::zero()
    }
}

fn best_split<T: Scalar>(
    x: &Matrix<T>,
    sorted: &[Vec<u32>],
    grad: &[T],
    hess: &[T],
    g_tot: T,
    h_tot: T,
    params: &GbdtParams,
) -> Option<Split<T>> {
    let lambda = T::lit(params.reg_lambda);
    let mcw = T::lit(params.min_child_weight);
    let min_gain = T::lit(params.min_gain_to_split);
    let min_leaf = params.min_data_in_leaf.max(1);
    let parent = score(g_tot, h_tot, lambda);
    let n = sorted.first().map_or(0, Vec::len);
    if n < 2 * min_leaf {
        return None;
    }
    let mut best: Option<Split<T>> = None;
    for (j, rows) in sorted.iter().enumerate() {
        let (mut gl, mut hl) = (T::zero(), T::zero());
        for k in 0..n - 1 {
            let r = rows[k] as usize;
            gl += grad[r];
            hl += hess[r];
            let (a, b) = (x.get(r, j), x.get(rows[k + 1] as usize, j));
            if a == b || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let (gr, hr) = (g_tot - gl, h_tot - hl);
            if hl < mcw || hr < mcw {
                continue;
            }
            let gain = T::half() * (score(gl, hl, lambda) + score(gr, hr, lambda) - parent);
            if gain > min_gain && best.is_none_or(|s| gain > s.gain) {
                let mut thr = a + (b - a) * T::half();
                if thr >= b {
                    thr = a;
                }
                best = Some(Split {
                    feature: j,
                    threshold: thr,
                    gain,
                });
            }
        }
    }
    best
}

fn grow_tree<T: Scalar>(
    x: &Matrix<T>,
    sorted: &[Vec<u32>],
    grad: &[T],
    hess: &[T],
    params: &GbdtParams,
    growth: Growth,
) -> (Tree<T>, Vec<usize>) {
    let lambda = T::lit(params.reg_lambda);
    let n = x.nrows();
    let g: T = grad.iter().copied().sum();
    let h: T = hess.iter().copied().sum();
    let mut nodes = vec![Node::Leaf {
        value: leaf_weight(g, h, lambda),
    }];
    let mut leaf_of = vec![0usize; n];
    let depth_ok = |d: usize| params.max_depth.is_none_or(|m| d < m);
    let leaf_cap = match growth {
        Growth::Depthwise => usize::MAX,
        Growth::Leafwise => params.num_leaves.unwrap_or(usize::MAX),
    };

    let evaluate = |p: &mut Pending<T>| {
        p.best = if depth_ok(p.depth) {
            best_split(x, &p.sorted, grad, hess, p.g, p.h, params)
        } else {
            None
        };
    };
    let mut root = Pending {
        node: 0,
        depth: 0,
        sorted: sorted.to_vec(),
        g,
        h,
        best: None,
    };
    evaluate(&mut root);
    let mut open = vec![root];
    let mut n_leaves = 1;
    let mut in_left = vec![false; n];

    while n_leaves < leaf_cap {
        // Depth-wise takes the shallowest splittable node first (creation
        // order within a level); leaf-wise the largest gain.
        let pick = match growth {
            Growth::Depthwise => open.iter().position(|p| p.best.is_some()),
            Growth::Leafwise => {
                let mut best: Option<usize> = None;
                for (i, p) in open.iter().enumerate() {
                    if let Some(s) = p.best {
                        if best.is_none_or(|b| s.gain > open[b].best.unwrap().gain) {
                            best = Some(i);
                        }
                    }
                }
                best
            }
        };
        let Some(i) = pick else { break };
        let p = open.remove(i);
        let s = p.best.expect("picked node has a split");

        for &r in &p.sorted[0] {
            in_left[r as usize] = x.get(r as usize, s.feature) <= s.threshold;
        }
        let (mut ls, mut rs) = (Vec::with_capacity(p.sorted.len()), Vec::with_capacity(p.sorted.len()));
        for rows in &p.sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| in_left[r as usize]);
            ls.push(l);
            rs.push(r);
        }
        let sum = |rows: &[u32], v: &[T]| rows.iter().map(|&r| v[r as usize]).sum::<T>();
        let (gl, hl) = (sum(&ls[0], grad), sum(&ls[0], hess));
        let (gr, hr) = (p.g - gl, p.h - hl);

        let left = nodes.len();
        nodes.push(Node::Leaf {
            value: leaf_weight(gl, hl, lambda),
        });
        nodes.push(Node::Leaf {
            value: leaf_weight(gr, hr, lambda),
        });
        nodes[p.node] = Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            left,
            right: left + 1,
        };
        for &r in &ls[0] {
            leaf_of[r as usize] = left;
        }
        for &r in &rs[0] {
            leaf_of[r as usize] = left + 1;
        }
        n_leaves += 1;

        for (node, sorted, g, h) in [(left, ls, gl, hl), (left + 1, rs, gr, hr)] {
            let mut c = Pending {
                node,
                depth: p.depth + 1,
                sorted,
                g,
                h,
                best: None,
            };
            evaluate(&mut c);
            open.push(c);
        }
    }
    (Tree { nodes }, leaf_of)
}
