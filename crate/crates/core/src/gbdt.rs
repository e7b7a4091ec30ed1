//! Gradient-boosted regression trees on a log-latency target.
//!
//! Exact greedy splitting over presorted feature columns, leaf-wise (best
//! first) growth bounded by `num_leaves` and `max_depth`, L1/L2-regularized
//! leaf values and seeded row subsampling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_TRAINING_SAMPLES: usize = 50;
pub const MODEL_FORMAT_VERSION: u32 = 1;

// Splits whose regularized gain does not clear this are treated as noise.
const MIN_SPLIT_GAIN: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub num_leaves: usize,
    pub l1: f64,
    pub l2: f64,
    pub subsample: f64,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: usize,
}

fn default_min_samples_leaf() -> usize {
    2
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            n_estimators: 300,
            max_depth: 10,
            num_leaves: 64,
            l1: 1e-6,
            l2: 1e-3,
            subsample: 0.8,
            min_samples_leaf: default_min_samples_leaf(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.n_estimators >= 1
            && self.max_depth >= 1
            && self.num_leaves >= 2
            && self.l1 >= 0.0
            && self.l2 >= 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.min_samples_leaf >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Training(format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Closed ranges searched by [`tune`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub learning_rate: (f64, f64),
    pub n_estimators: (usize, usize),
    pub max_depth: (usize, usize),
    pub num_leaves: (usize, usize),
    pub l1: (f64, f64),
    pub l2: (f64, f64),
    pub subsample: (f64, f64),
    /// Not searched.
    pub min_samples_leaf: usize,
}

impl Default for HyperparameterSpace {
    fn default() -> Self {
        Self {
            learning_rate: (0.01, 0.2),
            n_estimators: (100, 1000),
            max_depth: (5, 20),
            num_leaves: (16, 512),
            l1: (1e-8, 1.0),
            l2: (1e-8, 1.0),
            subsample: (0.5, 1.0),
            min_samples_leaf: default_min_samples_leaf(),
        }
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn uniform_int(rng: &mut impl Rng, (lo, hi): (usize, usize)) -> usize {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl HyperparameterSpace {
    /// The space containing only `hp`.
    pub fn point(hp: &Hyperparams) -> Self {
        Self {
            learning_rate: (hp.learning_rate, hp.learning_rate),
            n_estimators: (hp.n_estimators, hp.n_estimators),
            max_depth: (hp.max_depth, hp.max_depth),
            num_leaves: (hp.num_leaves, hp.num_leaves),
            l1: (hp.l1, hp.l1),
            l2: (hp.l2, hp.l2),
            subsample: (hp.subsample, hp.subsample),
            min_samples_leaf: hp.min_samples_leaf,
        }
    }

    /// Scale-like parameters are drawn log-uniformly, the rest uniformly.
    pub fn sample(&self, rng: &mut impl Rng) -> Hyperparams {
        let (nl_lo, nl_hi) = self.num_leaves;
        let num_leaves = log_uniform(rng, (nl_lo as f64, nl_hi as f64))
            .round()
            .clamp(nl_lo as f64, nl_hi as f64) as usize;
        Hyperparams {
            learning_rate: log_uniform(rng, self.learning_rate),
            n_estimators: uniform_int(rng, self.n_estimators),
            max_depth: uniform_int(rng, self.max_depth),
            num_leaves,
            l1: log_uniform(rng, self.l1),
            l2: log_uniform(rng, self.l2),
            subsample: uniform(rng, self.subsample),
            min_samples_leaf: self.min_samples_leaf,
        }
    }

    pub fn contains(&self, hp: &Hyperparams) -> bool {
        let inf = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
        let inu = |v: usize, (lo, hi): (usize, usize)| lo <= v && v <= hi;
        inf(hp.learning_rate, self.learning_rate)
            && inu(hp.n_estimators, self.n_estimators)
            && inu(hp.max_depth, self.max_depth)
            && inu(hp.num_leaves, self.num_leaves)
            && inf(hp.l1, self.l1)
            && inf(hp.l2, self.l2)
            && inf(hp.subsample, self.subsample)
    }
}

/// Feature rows with strictly positive latency targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub latency_us: Vec<f64>,
}

impl TrainingSet {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, latency_us: Vec<f64>) -> Result<Self> {
        let set = Self {
            feature_names,
            rows,
            latency_us,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.rows.len() != self.latency_us.len() {
            return Err(Error::Training("row and target counts differ".into()));
        }
        if self.feature_names.is_empty() {
            return Err(Error::Training("no features".into()));
        }
        let width = self.feature_names.len();
        for (i, (row, &y)) in self.rows.iter().zip(&self.latency_us).enumerate() {
            if row.len() != width {
                return Err(Error::Training(format!(
                    "row {i} has {} features, schema has {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("row {i} has a non-finite feature")));
            }
            if !(y.is_finite() && y > 0.0) {
                return Err(Error::Training(format!("row {i} has non-positive latency {y}")));
            }
        }
        Ok(())
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            latency_us: idx.iter().map(|&i| self.latency_us[i]).collect(),
        }
    }

    /// Seeded shuffle into `(train, validation)` with `holdout` of the rows
    /// held out.
    pub fn split(&self, holdout: f64, seed: u64) -> (TrainingSet, TrainingSet) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let n_val = ((self.len() as f64) * holdout).round() as usize;
        let (val, train) = idx.split_at(n_val);
        (self.subset(train), self.subset(val))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Node {
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

/// One regression tree; `x[feature] <= threshold` goes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "NestedNode", try_from = "NestedNode")]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Node id of the leaf that `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NestedNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<NestedNode>,
        right: Box<NestedNode>,
    },
    Leaf {
        leaf: f64,
    },
}

impl From<Tree> for NestedNode {
    fn from(t: Tree) -> Self {
        fn go(nodes: &[Node], id: usize) -> NestedNode {
            match nodes[id] {
                Node::Leaf { value } => NestedNode::Leaf { leaf: value },
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => NestedNode::Split {
                    feature,
                    threshold,
                    left: Box::new(go(nodes, left)),
                    right: Box::new(go(nodes, right)),
                },
            }
        }
        go(&t.nodes, 0)
    }
}

impl TryFrom<NestedNode> for Tree {
    type Error = String;

    fn try_from(root: NestedNode) -> std::result::Result<Self, String> {
        fn go(n: NestedNode, nodes: &mut Vec<Node>) -> usize {
            let id = nodes.len();
            match n {
                NestedNode::Leaf { leaf } => nodes.push(Node::Leaf { value: leaf }),
                NestedNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    nodes.push(Node::Leaf { value: 0.0 });
                    let l = go(*left, nodes);
                    let r = go(*right, nodes);
                    nodes[id] = Node::Split {
                        feature,
                        threshold,
                        left: l,
                        right: r,
                    };
                }
            }
            id
        }
        let mut nodes = Vec::new();
        go(root, &mut nodes);
        Ok(Tree { nodes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Per-feature squared-error reduction summed over all splits.
    pub gain: Vec<f64>,
}

impl GbdtModel {
    /// Log-latency prediction using only the first `n_trees` trees.
    pub fn predict_log_prefix(&self, x: &[f64], n_trees: usize) -> f64 {
        let sum: f64 = self.trees.iter().take(n_trees).map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict_log(&self, x: &[f64]) -> f64 {
        self.predict_log_prefix(x, self.trees.len())
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_log(x).exp()
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// `(feature, gain)` pairs in schema order.
    pub fn gain_importance(&self) -> Vec<(String, f64)> {
        self.feature_names
            .iter()
            .cloned()
            .zip(self.gain.iter().copied())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::Training(format!(
                "model format version {} unsupported (expected {MODEL_FORMAT_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }
}

/// Mean absolute percentage error, in percent.
pub fn mape(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    if predictions.len() != actuals.len() || actuals.is_empty() {
        return Err(Error::contract(format!(
            "mape needs equal non-empty inputs, got {} and {}",
            predictions.len(),
            actuals.len()
        )));
    }
    if actuals.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::contract("mape needs positive actuals"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| (p - a).abs() / a)
        .sum();
    Ok(100.0 * sum / actuals.len() as f64)
}

fn soft_threshold(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    /// Number of samples going left.
    n_left: usize,
    left_sum: f64,
    gain: f64,
    sse_gain: f64,
}

struct Candidate {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    sum: f64,
    best: Option<SplitChoice>,
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    residual: &'a [f64],
    hp: &'a Hyperparams,
    /// Per-feature sample order; each node owns the same `[start, end)` range
    /// in every feature's array.
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
}

impl Grower<'_> {
    fn score(&self, g: f64, n: usize) -> f64 {
        let s = soft_threshold(g, self.hp.l1);
        s * s / (n as f64 + self.hp.l2)
    }

    fn find_split(&self, start: usize, end: usize, sum: f64) -> Option<SplitChoice> {
        let n = end - start;
        let min_leaf = self.hp.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let parent = self.score(sum, n);
        let mut best: Option<SplitChoice> = None;
        for (f, col) in self.cols.iter().enumerate() {
            let idx = &self.order[f][start..end];
            let mut left = 0.0;
            for p in 0..n - 1 {
                left += self.residual[idx[p] as usize];
                let n_left = p + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                let (v, next) = (col[idx[p] as usize], col[idx[p + 1] as usize]);
                if v == next {
                    continue;
                }
                let right = sum - left;
                let gain = self.score(left, n_left) + self.score(right, n - n_left) - parent;
                if gain > MIN_SPLIT_GAIN && best.is_none_or(|b| gain > b.gain) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    let (nl, nr) = (n_left as f64, (n - n_left) as f64);
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        n_left,
                        left_sum: left,
                        gain,
                        sse_gain: left * left / nl + right * right / nr - sum * sum / n as f64,
                    });
                }
            }
        }
        best
    }

    /// Stable-partition every feature's `[start, end)` so the left child's
    /// samples come first.
    fn partition(&mut self, start: usize, end: usize, split: &SplitChoice) {
        let f = split.feature;
        for &i in &self.order[f][start..start + split.n_left] {
            self.goes_left[i as usize] = true;
        }
        for g in 0..self.order.len() {
            if g == f {
                continue;
            }
            self.scratch.clear();
            let seg = &mut self.order[g][start..end];
            let mut w = 0;
            for r in 0..seg.len() {
                let i = seg[r];
                if self.goes_left[i as usize] {
                    seg[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
        }
        for &i in &self.order[f][start..start + split.n_left] {
            self.goes_left[i as usize] = false;
        }
    }

    fn grow(&mut self, n_sampled: usize, gain: &mut [f64]) -> Tree {
        let total: f64 = self.order[0][..n_sampled]
            .iter()
            .map(|&i| self.residual[i as usize])
            .sum();
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut leaves: Vec<Candidate> = vec![Candidate {
            node: 0,
            start: 0,
            end: n_sampled,
            depth: 0,
            sum: total,
            best: None,
        }];
        leaves[0].best = self.candidate_split(&leaves[0]);
        while leaves.len() < self.hp.num_leaves {
            // Highest gain wins; equal gains go to the earliest-created leaf.
            let pick = leaves
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.best.map(|b| (i, c.node, b.gain)))
                .max_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)));
            let Some((i, _, _)) = pick else { break };
            let c = leaves.swap_remove(i);
            let split = c.best.expect("picked leaf has a split");
            self.partition(c.start, c.end, &split);
            gain[split.feature] += split.sse_gain;
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[c.node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: l,
                right: r,
            };
            let mid = c.start + split.n_left;
            for (node, start, end, sum) in [
                (l, c.start, mid, split.left_sum),
                (r, mid, c.end, c.sum - split.left_sum),
            ] {
                let mut child = Candidate {
                    node,
                    start,
                    end,
                    depth: c.depth + 1,
                    sum,
                    best: None,
                };
                child.best = self.candidate_split(&child);
                leaves.push(child);
            }
        }
        for c in &leaves {
            let n = (c.end - c.start) as f64;
            nodes[c.node] = Node::Leaf {
                value: soft_threshold(c.sum, self.hp.l1) / (n + self.hp.l2),
            };
        }
        // Renumber into preorder so equal trees compare equal after a JSON
        // round trip.
        Tree::try_from(NestedNode::from(Tree { nodes })).expect("well-formed tree")
    }

    fn candidate_split(&self, c: &Candidate) -> Option<SplitChoice> {
        if c.depth >= self.hp.max_depth {
            None
        } else {
            self.find_split(c.start, c.end, c.sum)
        }
    }
}

/// Fit a boosted ensemble to `log(latency_us)`.
pub fn fit_gbdt(set: &TrainingSet, hp: &Hyperparams, seed: u64) -> Result<GbdtModel> {
    set.validate()?;
    hp.validate()?;
    let n = set.len();
    if n < MIN_TRAINING_SAMPLES {
        return Err(Error::Training(format!(
            "need at least {MIN_TRAINING_SAMPLES} samples, got {n}"
        )));
    }
    let n_features = set.feature_names.len();
    let target: Vec<f64> = set.latency_us.iter().map(|y| y.ln()).collect();
    let base_score = target.iter().sum::<f64>() / n as f64;
    let cols: Vec<Vec<f64>> = (0..n_features)
        .map(|f| set.rows.iter().map(|r| r[f]).collect())
        .collect();
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let n_sampled = if hp.subsample >= 1.0 {
        n
    } else {
        ((n as f64 * hp.subsample).round() as usize).clamp(1, n)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pred = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut in_sample = vec![true; n];
    let mut gain = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(hp.n_estimators);
    let mut order: Vec<Vec<u32>> = sorted.clone();

    for _ in 0..hp.n_estimators {
        for i in 0..n {
            residual[i] = target[i] - pred[i];
        }
        if n_sampled < n {
            in_sample.iter_mut().for_each(|b| *b = false);
            for i in index::sample(&mut rng, n, n_sampled) {
                in_sample[i] = true;
            }
        }
        for (o, s) in order.iter_mut().zip(&sorted) {
            o.clear();
            o.extend(s.iter().copied().filter(|&i| in_sample[i as usize]));
        }
        let mut grower = Grower {
            cols: &cols,
            residual: &residual,
            hp,
            order: std::mem::take(&mut order),
            goes_left: vec![false; n],
            scratch: Vec::with_capacity(n_sampled),
        };
        let tree = grower.grow(n_sampled, &mut gain);
        order = grower.order;
        for (p, row) in pred.iter_mut().zip(&set.rows) {
            *p += hp.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }

    Ok(GbdtModel {
        version: MODEL_FORMAT_VERSION,
        feature_names: set.feature_names.clone(),
        base_score,
        learning_rate: hp.learning_rate,
        trees,
        gain,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub params: Hyperparams,
    pub validation_mape: f64,
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    /// Best model, fit on the training part of the split.
    pub model: GbdtModel,
    pub params: Hyperparams,
    pub validation_mape: f64,
    pub trials: Vec<TrialResult>,
}

/// Random search over `space` with a seeded 80/20 split. The lowest
/// validation MAPE wins; ties go to the earlier trial.
pub fn tune(set: &TrainingSet, space: &HyperparameterSpace, trials: usize, seed: u64) -> Result<TuneResult> {
    use rayon::prelude::*;

    if trials == 0 {
        return Err(Error::contract("at least one tuning trial is required"));
    }
    let (train, val) = set.split(0.2, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7475_6e65);
    let configs: Vec<Hyperparams> = (0..trials).map(|_| space.sample(&mut rng)).collect();
    let fitted: Vec<(GbdtModel, f64)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, hp)| {
            let model = fit_gbdt(&train, hp, seed.wrapping_add(i as u64))?;
            let err = mape(&model.predict_all(&val.rows), &val.latency_us)?;
            Ok((model, err))
        })
        .collect::<Result<_>>()?;
    let best = fitted
        .iter()
        .enumerate()
        .fold(0, |b, (i, (_, e))| if *e < fitted[b].1 { i } else { b });
    let trial_log = configs
        .iter()
        .zip(&fitted)
        .map(|(p, (_, e))| TrialResult {
            params: p.clone(),
            validation_mape: *e,
        })
        .collect();
    let (model, validation_mape) = fitted.into_iter().nth(best).expect("non-empty");
    Ok(TuneResult {
        model,
        params: configs[best].clone(),
        validation_mape,
        trials: trial_log,
    })
}
