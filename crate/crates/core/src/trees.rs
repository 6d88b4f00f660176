//! Regression trees and the two ensembles built from them: bagged random
//! forests and gradient-boosted trees with leaf regularization.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid tree config: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("early stopping requires a validation set")]
    EarlyStopWithoutValid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    pub depth: usize,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    fn add_feature_counts(&self, counts: &mut [u64]) {
        for n in &self.nodes {
            if let Node::Split { feature, .. } = n {
                counts[*feature] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    /// `None` grows until the other limits stop it.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Leaf shrinkage: a leaf predicts `Σy / (n + lambda)`.
    pub lambda: f64,
    /// Features examined per split; `None` means all, else a fresh random
    /// subset of this size at every node.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            lambda: 0.0,
            max_features: None,
        }
    }
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    params: &'a TreeParams,
    dim: usize,
    nodes: Vec<Node>,
    depth: usize,
    rng: Option<rng::Rng>,
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
    n_left: usize,
}

impl Builder<'_> {
    fn leaf_value(&self, sum: f64, n: usize) -> f64 {
        sum / (n as f64 + self.params.lambda)
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        match (self.params.max_features, self.rng.as_mut()) {
            (Some(k), Some(r)) if k < self.dim => {
                let mut f = index::sample(r, self.dim, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.dim).collect(),
        }
    }

    /// Best split of `idx` by the regularized score
    /// `SL²/(nL+λ) + SR²/(nR+λ) - S²/(n+λ)`, which for λ = 0 is the SSE
    /// reduction. Ties within a relative 1e-9 keep the earlier candidate,
    /// i.e. the lower feature and then the lower threshold.
    fn best_split(&mut self, idx: &[usize]) -> Option<Best> {
        let lam = self.params.lambda;
        let min_leaf = self.params.min_samples_leaf;
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.ys[i]).sum();
        let parent = total * total / (n as f64 + lam);
        let scale: f64 = idx.iter().map(|&i| self.ys[i] * self.ys[i]).sum::<f64>().max(f64::MIN_POSITIVE);
        let mut best: Option<Best> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for f in self.candidate_features() {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.xs[i][f], self.ys[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += pairs[k].1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right = total - left;
                let score = left * left / (nl as f64 + lam) + right * right / (nr as f64 + lam) - parent;
                let better = match &best {
                    None => true,
                    Some(b) => score > b.score + 1e-9 * b.score.abs(),
                };
                if better {
                    best = Some(Best {
                        feature: f,
                        threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                        score,
                        n_left: nl,
                    });
                }
            }
        }
        best.filter(|b| b.score > 1e-12 * scale)
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let sum: f64 = idx.iter().map(|&i| self.ys[i]).sum();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(sum, idx.len()),
        });
        self.depth = self.depth.max(depth);
        let can_split = idx.len() >= self.params.min_samples_split.max(2)
            && self.params.max_depth.is_none_or(|d| depth < d);
        if !can_split {
            return id;
        }
        let Some(b) = self.best_split(idx) else {
            return id;
        };
        let xs = self.xs;
        idx.sort_by(|&a, &c| {
            let (va, vc) = (xs[a][b.feature] <= b.threshold, xs[c][b.feature] <= b.threshold);
            vc.cmp(&va).then(a.cmp(&c))
        });
        debug_assert_eq!(idx.iter().filter(|&&i| xs[i][b.feature] <= b.threshold).count(), b.n_left);
        let (l, r) = idx.split_at_mut(b.n_left);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: b.feature,
            threshold: b.threshold,
            left,
            right,
        };
        id
    }
}

fn check_rows(xs: &[Vec<f64>], ys: &[f64]) -> Result<usize, TreeError> {
    if xs.len() != ys.len() {
        return Err(TreeError::Dimension(format!("{} rows but {} targets", xs.len(), ys.len())));
    }
    if xs.is_empty() {
        return Err(TreeError::Dimension("no rows".into()));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(TreeError::Dimension("rows differ in length".into()));
    }
    Ok(dim)
}

/// Greedy top-down tree on the rows `idx` (repeats allowed, as in a bootstrap).
pub fn fit_tree_on(
    xs: &[Vec<f64>],
    ys: &[f64],
    idx: &[usize],
    params: &TreeParams,
    rng: Option<rng::Rng>,
) -> RegressionTree {
    let dim = xs.first().map_or(0, |x| x.len());
    let mut b = Builder {
        xs,
        ys,
        params,
        dim,
        nodes: Vec::new(),
        depth: 0,
        rng,
    };
    let mut idx = idx.to_vec();
    b.grow(&mut idx, 0);
    RegressionTree {
        nodes: b.nodes,
        depth: b.depth,
    }
}

pub fn fit_tree(xs: &[Vec<f64>], ys: &[f64], params: &TreeParams) -> Result<RegressionTree, TreeError> {
    check_rows(xs, ys)?;
    let idx: Vec<usize> = (0..xs.len()).collect();
    Ok(fit_tree_on(xs, ys, &idx, params, None))
}

// ---------------------------------------------------------------------------
// Random forest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: 4,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub trees: Vec<RegressionTree>,
}

impl RfModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_rf(cfg: &RfConfig, xs: &[Vec<f64>], ys: &[f64]) -> Result<RfModel, TreeError> {
    let dim = check_rows(xs, ys)?;
    if xs.len() < 2 {
        return Err(TreeError::Dimension("random forest needs >= 2 rows".into()));
    }
    if cfg.n_estimators == 0 || cfg.min_samples_leaf == 0 || cfg.max_features == 0 {
        return Err(TreeError::Config("counts must be >= 1".into()));
    }
    if cfg.min_samples_split < 2 * cfg.min_samples_leaf {
        return Err(TreeError::Config("min_samples_split must be >= 2 * min_samples_leaf".into()));
    }
    if cfg.max_features > dim {
        return Err(TreeError::Config(format!("max_features {} exceeds {dim} features", cfg.max_features)));
    }
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_samples_split: cfg.min_samples_split,
        min_samples_leaf: cfg.min_samples_leaf,
        lambda: 0.0,
        max_features: Some(cfg.max_features),
    };
    let n = xs.len();
    let trees = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(cfg.seed, t as u64);
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on(xs, ys, &idx, &params, Some(r))
        })
        .collect();
    Ok(RfModel { trees })
}

// ---------------------------------------------------------------------------
// Gradient boosting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    pub subsample: f64,
    /// Stop after this many rounds without validation improvement; 0 = off.
    pub early_stopping_rounds: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_rounds: 300,
            learning_rate: 0.1,
            max_depth: Some(4),
            min_samples_leaf: 1,
            lambda: 1.0,
            subsample: 1.0,
            early_stopping_rounds: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
}

impl GbtModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base, |acc, t| acc + self.learning_rate * t.predict(x))
    }

    /// Split count per feature index over all trees.
    pub fn feature_importance(&self, dim: usize) -> Vec<u64> {
        let mut counts = vec![0; dim];
        for t in &self.trees {
            t.add_feature_counts(&mut counts);
        }
        counts
    }
}

fn mse(pred: &[f64], ys: &[f64]) -> f64 {
    pred.iter().zip(ys).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / ys.len() as f64
}

pub fn fit_gbt(
    cfg: &GbtConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
    valid: Option<(&[Vec<f64>], &[f64])>,
) -> Result<GbtModel, TreeError> {
    check_rows(xs, ys)?;
    if xs.len() < 2 {
        return Err(TreeError::Dimension("boosting needs >= 2 rows".into()));
    }
    if cfg.n_rounds == 0 || cfg.min_samples_leaf == 0 {
        return Err(TreeError::Config("n_rounds and min_samples_leaf must be >= 1".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) {
        return Err(TreeError::Config("learning_rate must lie in (0, 1]".into()));
    }
    if !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) {
        return Err(TreeError::Config("subsample must lie in (0, 1]".into()));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(TreeError::Config("lambda must be >= 0".into()));
    }
    if cfg.early_stopping_rounds > 0 && valid.is_none() {
        return Err(TreeError::EarlyStopWithoutValid);
    }
    if let Some((vx, vy)) = valid {
        check_rows(vx, vy)?;
    }

    let n = xs.len();
    let base = ys.iter().sum::<f64>() / n as f64;
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_samples_split: 2 * cfg.min_samples_leaf,
        min_samples_leaf: cfg.min_samples_leaf,
        lambda: cfg.lambda,
        max_features: None,
    };
    let take = ((cfg.subsample * n as f64).floor() as usize).clamp(1, n);
    let mut pred = vec![base; n];
    let mut vpred: Vec<f64> = valid.map(|(vx, _)| vec![base; vx.len()]).unwrap_or_default();
    let mut model = GbtModel {
        base,
        learning_rate: cfg.learning_rate,
        trees: Vec::new(),
        train_loss: Vec::new(),
        valid_loss: Vec::new(),
    };
    let mut best = (f64::INFINITY, 0usize);
    let mut residual = vec![0.0; n];
    let mut all: Vec<usize> = (0..n).collect();
    for round in 0..cfg.n_rounds {
        for i in 0..n {
            residual[i] = ys[i] - pred[i];
        }
        let idx: Vec<usize> = if take == n {
            all.clone()
        } else {
            let mut r = rng::stream(cfg.seed, round as u64);
            all.shuffle(&mut r);
            let mut s = all[..take].to_vec();
            s.sort_unstable();
            s
        };
        let tree = fit_tree_on(xs, &residual, &idx, &params, None);
        for i in 0..n {
            pred[i] += cfg.learning_rate * tree.predict(&xs[i]);
        }
        model.train_loss.push(mse(&pred, ys));
        if let Some((vx, vy)) = valid {
            for (p, x) in vpred.iter_mut().zip(vx) {
                *p += cfg.learning_rate * tree.predict(x);
            }
            let vl = mse(&vpred, vy);
            model.valid_loss.push(vl);
            if vl < best.0 {
                best = (vl, round + 1);
            }
        }
        model.trees.push(tree);
        if cfg.early_stopping_rounds > 0 && round + 1 - best.1 >= cfg.early_stopping_rounds {
            break;
        }
    }
    if cfg.early_stopping_rounds > 0 {
        let keep = best.1.max(1);
        model.trees.truncate(keep);
        model.train_loss.truncate(keep);
        model.valid_loss.truncate(keep);
    }
    Ok(model)
}
