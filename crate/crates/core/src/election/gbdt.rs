//! Gradient-boosted decision trees for binary classification.
//!
//! Trees are grown level by level with exact greedy splits over presorted
//! feature columns. Leaf weights are second-order (Newton) steps on the
//! binary logloss, `-G / (H + lambda)`, shrunk by the learning rate.
//!
//! Each tree picks its splits on a seeded random half of the rows
//! (`subsample`) but takes leaf weights from all rows. A step that would
//! raise the training loss is halved until it does not, so the training
//! loss never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::features::FeatureVector;

const N_FEATURES: usize = 4;
const MIN_HESSIAN: f64 = 1e-16;
const MIN_GAIN: f64 = 1e-12;
const MIN_STEP_SCALE: f64 = 1.0 / 1024.0;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    Empty,
    #[error("training set holds a single class")]
    SingleClass,
    #[error("invalid training parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub rounds: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian mass per child.
    pub min_child_weight: f64,
    /// Fraction of rows each tree is fit on; 1.0 disables sampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            max_depth: 6,
            rounds: 2000,
            lambda: 1.0,
            min_child_weight: 1e-3,
            subsample: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf(v) = node {
                *v *= factor;
            }
        }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Log-odds of the positive-class prior.
    pub base_score: f64,
}

impl BoostedEnsemble {
    pub fn margin(&self, f: &FeatureVector) -> f64 {
        let x = f.as_array();
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(&x)).sum::<f64>()
    }

    /// Probability of the candidate class.
    pub fn predict_proba(&self, f: &FeatureVector) -> f64 {
        sigmoid(self.margin(f))
    }

    pub fn predict(&self, f: &FeatureVector) -> bool {
        self.predict_proba(f) >= 0.5
    }
}

/// Per-round loss curves recorded during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// Training logloss after each round.
    pub train_logloss: Vec<f64>,
    /// Held-out logloss after each round, when an evaluation set was given.
    pub eval_logloss: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean binary logloss of probabilities against labels.
pub fn logloss(probs: &[f64], labels: &[bool]) -> f64 {
    let eps = 1e-15;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

/// Fraction of equal entries.
pub fn accuracy(predictions: &[bool], labels: &[bool]) -> Option<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return None;
    }
    let correct = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    Some(correct as f64 / predictions.len() as f64)
}

pub fn train_classifier(
    data: &[(FeatureVector, bool)],
    params: &TrainParams,
) -> Result<(BoostedEnsemble, TrainingHistory), TrainError> {
    train_with_eval(data, &[], params)
}

/// Trains and records the loss on `eval` after every round.
pub fn train_with_eval(
    data: &[(FeatureVector, bool)],
    eval: &[(FeatureVector, bool)],
    params: &TrainParams,
) -> Result<(BoostedEnsemble, TrainingHistory), TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if params.rounds == 0 {
        return Err(TrainError::InvalidParams("rounds must be at least 1"));
    }
    if !(params.learning_rate > 0.0) {
        return Err(TrainError::InvalidParams("learning rate must be positive"));
    }
    if params.max_depth == 0 {
        return Err(TrainError::InvalidParams("max depth must be at least 1"));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(TrainError::InvalidParams("subsample must lie in (0, 1]"));
    }
    if params.lambda < 0.0 || params.min_child_weight < 0.0 {
        return Err(TrainError::InvalidParams("regularization must be non-negative"));
    }
    let positives = data.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == data.len() {
        return Err(TrainError::SingleClass);
    }

    let xs: Vec<[f64; N_FEATURES]> = data.iter().map(|(f, _)| f.as_array()).collect();
    let ys: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
    let prior = positives as f64 / data.len() as f64;
    let base_score = (prior / (1.0 - prior)).ln();

    let sorted: Vec<Vec<usize>> = (0..N_FEATURES)
        .map(|f| {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let eval_xs: Vec<[f64; N_FEATURES]> = eval.iter().map(|(f, _)| f.as_array()).collect();
    let eval_ys: Vec<bool> = eval.iter().map(|(_, y)| *y).collect();
    let mut eval_margin = vec![base_score; eval.len()];

    let mut margin = vec![base_score; xs.len()];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut history = TrainingHistory::default();
    let mut last_loss = logloss(&vec![prior; xs.len()], &ys);
    let mut grad = vec![0.0; xs.len()];
    let mut hess = vec![0.0; xs.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut in_bag = vec![true; xs.len()];
    for _ in 0..params.rounds {
        if params.subsample < 1.0 {
            in_bag.iter_mut().for_each(|b| *b = rng.gen_bool(params.subsample));
        }
        for i in 0..xs.len() {
            let p = sigmoid(margin[i]);
            grad[i] = p - if ys[i] { 1.0 } else { 0.0 };
            hess[i] = (p * (1.0 - p)).max(MIN_HESSIAN);
        }
        let (mut tree, leaf_of) = grow_tree(&xs, &sorted, &grad, &hess, &in_bag, params);
        // Backtrack until the step does not raise the training loss.
        let mut scale = 1.0;
        let (next_margin, loss) = loop {
            let step: Vec<f64> = margin
                .iter()
                .zip(&leaf_of)
                .map(|(&m, &leaf)| match tree.nodes[leaf] {
                    Node::Leaf(v) => m + scale * params.learning_rate * v,
                    Node::Split { .. } => m,
                })
                .collect();
            let probs: Vec<f64> = step.iter().map(|&m| sigmoid(m)).collect();
            let loss = logloss(&probs, &ys);
            if loss <= last_loss || scale < MIN_STEP_SCALE {
                break (step, loss);
            }
            scale *= 0.5;
        };
        if scale < 1.0 {
            tree.scale_leaves(if loss <= last_loss { scale } else { 0.0 });
        }
        if loss <= last_loss {
            margin = next_margin;
            last_loss = loss;
        }
        history.train_logloss.push(last_loss);
        if !eval.is_empty() {
            for (m, x) in eval_margin.iter_mut().zip(&eval_xs) {
                *m += params.learning_rate * tree.predict(x);
            }
            let probs: Vec<f64> = eval_margin.iter().map(|&m| sigmoid(m)).collect();
            history.eval_logloss.push(logloss(&probs, &eval_ys));
        }
        trees.push(tree);
    }

    Ok((
        BoostedEnsemble {
            trees,
            learning_rate: params.learning_rate,
            base_score,
        },
        history,
    ))
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree; returns it with the leaf index of every training row.
fn grow_tree(
    xs: &[[f64; N_FEATURES]],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    in_bag: &[bool],
    params: &TrainParams,
) -> (Tree, Vec<usize>) {
    let lambda = params.lambda;
    let objective = |g: f64, h: f64| g * g / (h + lambda);

    let mut nodes = vec![Node::Leaf(0.0)];
    let bagged = |v: &[f64]| v.iter().zip(in_bag).filter(|(_, &b)| b).map(|(x, _)| x).sum::<f64>();
    let mut totals = vec![(bagged(grad), bagged(hess))];
    let mut node_of = vec![0usize; xs.len()];
    let mut frontier = vec![0usize];

    for _ in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Dense per-level slot for each frontier node.
        let mut slot = vec![usize::MAX; nodes.len()];
        for (k, &n) in frontier.iter().enumerate() {
            slot[n] = k;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];

        for (feature, order) in sorted.iter().enumerate() {
            let mut acc = vec![(0.0f64, 0.0f64, f64::NAN); frontier.len()];
            for &i in order {
                let k = slot[node_of[i]];
                if k == usize::MAX || !in_bag[i] {
                    continue;
                }
                let x = xs[i][feature];
                let (gl, hl, last) = acc[k];
                if !last.is_nan() && x > last {
                    let (g, h) = totals[frontier[k]];
                    let (gr, hr) = (g - gl, h - hl);
                    if hl >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = objective(gl, hl) + objective(gr, hr) - objective(g, h);
                        if gain > MIN_GAIN && best[k].is_none_or(|b| gain > b.gain) {
                            best[k] = Some(Candidate {
                                gain,
                                feature,
                                threshold: 0.5 * (last + x),
                            });
                        }
                    }
                }
                acc[k] = (gl + grad[i], hl + hess[i], x);
            }
        }

        let mut next = Vec::new();
        let mut split_of: Vec<Option<(usize, f64, usize, usize)>> = vec![None; nodes.len()];
        for (k, &n) in frontier.iter().enumerate() {
            let Some(c) = best[k] else { continue };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            totals.push((0.0, 0.0));
            totals.push((0.0, 0.0));
            nodes[n] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
            split_of.push(None);
            split_of.push(None);
            split_of[n] = Some((c.feature, c.threshold, left, right));
            next.push(left);
            next.push(right);
        }
        for i in 0..xs.len() {
            if let Some((feature, threshold, left, right)) = split_of[node_of[i]] {
                let child = if xs[i][feature] < threshold { left } else { right };
                node_of[i] = child;
                if !in_bag[i] {
                    continue;
                }
                totals[child].0 += grad[i];
                totals[child].1 += hess[i];
            }
        }
        frontier = next;
    }

    // Structure comes from the bag, leaf weights from every row.
    let mut leaf_totals = vec![(0.0, 0.0); nodes.len()];
    for (i, &n) in node_of.iter().enumerate() {
        leaf_totals[n].0 += grad[i];
        leaf_totals[n].1 += hess[i];
    }
    for (n, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf(v) = node {
            let (g, h) = leaf_totals[n];
            *v = -g / (h + lambda);
        }
    }
    (Tree { nodes }, node_of)
}
