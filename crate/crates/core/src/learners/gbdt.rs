//! Histogram gradient-boosted decision trees.
//!
//! Second-order boosting with ≤256 quantile bins per feature, depth-limited
//! exact greedy splits over the binned values, per-split missing-value
//! routing, row/column subsampling, L1 (soft-threshold) and L2 leaf
//! regularization, and patience-based early stopping on a validation set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{FeatureMatrix, LearnerConfig};
use crate::metrics::{compute_metric, Predictions, PROB_CLIP};
use crate::table::Task;

/// Bin marker for missing values; real bins never reach it.
const MISSING_BIN: u8 = u8::MAX;
/// Real bins per feature (≤ 255 edges would collide with the marker).
const MAX_BINS: usize = 255;

#[derive(Debug, Clone, Copy)]
struct GbdtParams {
    n_estimators: usize,
    patience: usize,
    learning_rate: f64,
    max_depth: usize,
    colsample_bytree: f64,
    subsample: f64,
    min_child_weight: f64,
    reg_alpha: f64,
    reg_lambda: f64,
}

impl GbdtParams {
    fn from_config(cfg: &LearnerConfig) -> Result<GbdtParams> {
        let p = GbdtParams {
            n_estimators: cfg.usize_param("n_estimators", 4000)?,
            patience: cfg.usize_param("patience", cfg.patience.unwrap_or(200))?,
            learning_rate: cfg.f64_param("learning_rate", 0.3)?,
            max_depth: cfg.usize_param("max_depth", 6)?,
            colsample_bytree: cfg.f64_param("colsample_bytree", 1.0)?,
            subsample: cfg.f64_param("subsample", 1.0)?,
            min_child_weight: cfg.f64_param("min_child_weight", 1.0)?,
            reg_alpha: cfg.f64_param("reg_alpha", 0.0)?,
            reg_lambda: cfg.f64_param("reg_lambda", 1.0)?,
        };
        let ok = p.learning_rate >= 0.0
            && p.max_depth >= 1
            && p.colsample_bytree > 0.0
            && p.colsample_bytree <= 1.0
            && p.subsample > 0.0
            && p.subsample <= 1.0
            && p.min_child_weight >= 0.0
            && p.reg_alpha >= 0.0
            && p.reg_lambda >= 0.0;
        if !ok {
            return Err(Error::Config("gbdt hyperparameters out of range".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Raw-value threshold (a bin edge): x ≤ threshold goes left.
        threshold: f64,
        missing_left: bool,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                } => {
                    let x = row[*feature];
                    let go_left = if x.is_nan() { *missing_left } else { x <= *threshold };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    pub task: Task,
    pub n_features: usize,
    /// One entry for regression/binary (mean / log-odds), k for multiclass.
    pub base_score: Vec<f64>,
    /// One round = one tree per output.
    pub trees: Vec<Vec<Tree>>,
    /// Rounds used at predict time (early-stopping best iteration).
    pub best_rounds: usize,
    pub train_loss_trace: Vec<f64>,
    pub valid_metric_trace: Vec<f64>,
}

/// Leaf weight −Tα(G)/(H+λ) with the L1 soft threshold Tα.
fn leaf_weight(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    let t = if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    };
    -t / (h + lambda)
}

fn split_score(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    let t = (g.abs() - alpha).max(0.0);
    t * t / (h + lambda)
}

/// Quantile bin edges over the non-missing values of one feature. Small
/// columns get exact between-value splits; larger ones ≤254 quantile cuts.
fn bin_edges(values: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() <= 1 {
        return Vec::new();
    }
    if sorted.len() <= MAX_BINS {
        sorted.pop();
        return sorted;
    }
    let n = sorted.len();
    let mut edges = Vec::with_capacity(MAX_BINS - 1);
    for j in 1..MAX_BINS {
        let v = sorted[j * n / MAX_BINS];
        if v < sorted[n - 1] && edges.last() != Some(&v) {
            edges.push(v);
        }
    }
    edges
}

fn bin_of(edges: &[f64], x: f64) -> u8 {
    if x.is_nan() {
        return MISSING_BIN;
    }
    edges.partition_point(|&e| e < x) as u8
}

struct BinnedFeatures {
    edges: Vec<Vec<f64>>,
    /// Column-major bin index per row.
    bins: Vec<Vec<u8>>,
}

fn bin_features(x: &FeatureMatrix) -> Result<BinnedFeatures> {
    if x
        .columns
        .iter()
        .any(|c| c.iter().any(|v| v.is_infinite()))
    {
        return Err(Error::NonFiniteInput);
    }
    let edges: Vec<Vec<f64>> = x.columns.iter().map(|c| bin_edges(c)).collect();
    let bins = x
        .columns
        .iter()
        .zip(&edges)
        .map(|(col, e)| col.iter().map(|&v| bin_of(e, v)).collect())
        .collect();
    Ok(BinnedFeatures { edges, bins })
}

struct TreeBuilder<'a> {
    binned: &'a BinnedFeatures,
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    params: &'a GbdtParams,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: usize,
    missing_left: bool,
}

impl TreeBuilder<'_> {
    fn build(&self, rows: Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        nodes.push(Node::Leaf { value: 0.0 }); // placeholder root
        self.grow(&mut nodes, 0, rows, 0);
        Tree { nodes }
    }

    fn grow(&self, nodes: &mut Vec<Node>, node: usize, rows: Vec<usize>, depth: usize) {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let p = self.params;
        let best = if depth < p.max_depth {
            // zero-gain splits are worth keeping only if the children can
            // split again (XOR-style interactions have no first-level gain)
            self.best_split(&rows, g, h, depth + 1 < p.max_depth)
        } else {
            None
        };
        match best {
            None => {
                nodes[node] = Node::Leaf {
                    value: p.learning_rate * leaf_weight(g, h, p.reg_alpha, p.reg_lambda),
                };
            }
            Some(s) => {
                let edges = &self.binned.edges[s.feature];
                let bins = &self.binned.bins[s.feature];
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&r| {
                        let b = bins[r];
                        if b == MISSING_BIN {
                            s.missing_left
                        } else {
                            (b as usize) <= s.bin
                        }
                    });
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                // bin == edges.len() is the present-vs-missing position:
                // every finite value goes left, missing goes right. f64::MAX
                // (not infinity) so fitted trees survive a JSON round-trip.
                let threshold = if s.bin < edges.len() {
                    edges[s.bin]
                } else {
                    f64::MAX
                };
                nodes[node] = Node::Split {
                    feature: s.feature,
                    threshold,
                    missing_left: s.missing_left,
                    left,
                    right,
                };
                self.grow(nodes, left, left_rows, depth + 1);
                self.grow(nodes, right, right_rows, depth + 1);
            }
        }
    }

    /// Exact greedy over histogram bins; missing values try both sides, and
    /// the extra position after the last bin separates present from missing.
    /// Ties keep the first candidate (feature order, bin order, left-first).
    /// With `allow_fallback`, a node with no positive-gain split takes the
    /// first structurally valid zero-gain split instead, so interactions
    /// with no marginal signal (XOR) still get separated one level down.
    fn best_split(
        &self,
        rows: &[usize],
        g_total: f64,
        h_total: f64,
        allow_fallback: bool,
    ) -> Option<BestSplit> {
        let p = self.params;
        let parent = split_score(g_total, h_total, p.reg_alpha, p.reg_lambda);
        let mut best: Option<BestSplit> = None;
        let mut fallback: Option<BestSplit> = None;
        for &f in self.features {
            let edges = &self.binned.edges[f];
            let bins = &self.binned.bins[f];
            let n_bins = edges.len() + 1;
            let mut hist_g = vec![0.0; n_bins];
            let mut hist_h = vec![0.0; n_bins];
            let (mut g_miss, mut h_miss) = (0.0, 0.0);
            for &r in rows {
                let b = bins[r];
                if b == MISSING_BIN {
                    g_miss += self.grad[r];
                    h_miss += self.hess[r];
                } else {
                    hist_g[b as usize] += self.grad[r];
                    hist_h[b as usize] += self.hess[r];
                }
            }
            let (mut g_left, mut h_left) = (0.0, 0.0);
            for b in 0..n_bins {
                g_left += hist_g[b];
                h_left += hist_h[b];
                let all_present_left = b + 1 == n_bins;
                for missing_left in [true, false] {
                    if all_present_left && (missing_left || h_miss == 0.0) {
                        continue;
                    }
                    let (gl, hl) = if missing_left {
                        (g_left + g_miss, h_left + h_miss)
                    } else {
                        (g_left, h_left)
                    };
                    let (gr, hr) = (g_total - gl, h_total - hl);
                    // per-row hessians are strictly positive, so this also
                    // rejects splits with an empty child
                    if hl <= 0.0 || hr <= 0.0 {
                        continue;
                    }
                    if hl < p.min_child_weight || hr < p.min_child_weight {
                        continue;
                    }
                    let gain = 0.5
                        * (split_score(gl, hl, p.reg_alpha, p.reg_lambda)
                            + split_score(gr, hr, p.reg_alpha, p.reg_lambda)
                            - parent);
                    if gain > 1e-12 {
                        if best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(BestSplit {
                                gain,
                                feature: f,
                                bin: b,
                                missing_left,
                            });
                        }
                    } else if gain > -1e-12 && fallback.is_none() {
                        fallback = Some(BestSplit {
                            gain: 0.0,
                            feature: f,
                            bin: b,
                            missing_left,
                        });
                    }
                }
            }
        }
        best.or(if allow_fallback { fallback } else { None })
    }
}

fn softmax_inplace(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scores → output probabilities/values for metric evaluation.
fn scores_to_predictions(task: Task, f: &[f64], n_rows: usize) -> Predictions {
    match task {
        Task::Regression => Predictions::single(f.to_vec()),
        Task::Binary => Predictions::single(f.iter().map(|&v| sigmoid(v)).collect()),
        Task::Multiclass(k) => {
            let mut values = f.to_vec();
            for r in 0..n_rows {
                softmax_inplace(&mut values[r * k..(r + 1) * k]);
            }
            Predictions::new(values, k).expect("shape by construction")
        }
    }
}

fn train_loss(task: Task, f: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    match task {
        Task::Regression => {
            f.iter().zip(y).map(|(&p, &t)| (p - t) * (p - t)).sum::<f64>() / n
        }
        Task::Binary => {
            f.iter()
                .zip(y)
                .map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z)
                .sum::<f64>()
                / n
        }
        Task::Multiclass(k) => {
            let mut s = 0.0;
            for (r, &t) in y.iter().enumerate() {
                let mut row = f[r * k..(r + 1) * k].to_vec();
                softmax_inplace(&mut row);
                s += -row[t as usize].max(1e-300).ln();
            }
            s / n
        }
    }
}

/// Per-row gradient/hessian of the boosting loss at the current scores.
fn grad_hess(task: Task, f: &[f64], y: &[f64], class: usize) -> (Vec<f64>, Vec<f64>) {
    match task {
        Task::Regression => (
            f.iter().zip(y).map(|(&p, &t)| p - t).collect(),
            vec![1.0; y.len()],
        ),
        Task::Binary => {
            let mut g = Vec::with_capacity(y.len());
            let mut h = Vec::with_capacity(y.len());
            for (&z, &t) in f.iter().zip(y) {
                let p = sigmoid(z);
                g.push(p - t);
                h.push((p * (1.0 - p)).max(1e-16));
            }
            (g, h)
        }
        Task::Multiclass(k) => {
            let mut g = Vec::with_capacity(y.len());
            let mut h = Vec::with_capacity(y.len());
            for (r, &t) in y.iter().enumerate() {
                let mut row = f[r * k..(r + 1) * k].to_vec();
                softmax_inplace(&mut row);
                let p = row[class];
                g.push(p - if t as usize == class { 1.0 } else { 0.0 });
                h.push((p * (1.0 - p)).max(1e-16));
            }
            (g, h)
        }
    }
}

fn base_scores(task: Task, y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    match task {
        Task::Regression => vec![y.iter().sum::<f64>() / n],
        Task::Binary => {
            let p = (y.iter().sum::<f64>() / n).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            vec![(p / (1.0 - p)).ln()]
        }
        Task::Multiclass(k) => (0..k)
            .map(|c| {
                let p = (y.iter().filter(|&&t| t as usize == c).count() as f64 / n)
                    .clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                p.ln()
            })
            .collect(),
    }
}

pub fn fit(
    cfg: &LearnerConfig,
    task: Task,
    x: &FeatureMatrix,
    y: &[f64],
    valid: Option<(&FeatureMatrix, &[f64])>,
) -> Result<GbdtModel> {
    let params = GbdtParams::from_config(cfg)?;
    if params.patience > 0 && valid.is_none() {
        return Err(Error::EmptyValidation);
    }
    let n = x.n_rows;
    let k = match task {
        Task::Multiclass(k) => k,
        _ => 1,
    };
    let metric_name = cfg.metric.clone().unwrap_or_else(|| {
        if task.is_classification() {
            "logloss".to_string()
        } else {
            "rmse".to_string()
        }
    });
    let binned = bin_features(x)?;
    let base = base_scores(task, y);
    let rows_train: Vec<Vec<f64>> = (0..n).map(|r| x.row(r)).collect();
    // row-major scores: n × k (k = 1 collapses to a flat vector)
    let mut f_train: Vec<f64> = (0..n * k).map(|i| base[i % k]).collect();
    let (valid_rows, mut f_valid, y_valid) = match valid {
        Some((xv, yv)) => {
            if xv.n_features() != x.n_features() {
                return Err(Error::FeatureCountMismatch {
                    expected: x.n_features(),
                    got: xv.n_features(),
                });
            }
            let rows: Vec<Vec<f64>> = (0..xv.n_rows).map(|r| xv.row(r)).collect();
            let fv: Vec<f64> = (0..xv.n_rows * k).map(|i| base[i % k]).collect();
            (rows, fv, yv.to_vec())
        }
        None => (Vec::new(), Vec::new(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trees: Vec<Vec<Tree>> = Vec::new();
    let mut train_loss_trace = Vec::new();
    let mut valid_metric_trace = Vec::new();
    let mut best_obj = f64::INFINITY;
    let mut best_rounds = 0usize;

    for round in 0..params.n_estimators {
        // row subsample, shared by the k per-class trees of this round
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let take = ((params.subsample * n as f64).floor() as usize).max(1);
            let mut s = all[..take].to_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = if params.colsample_bytree < 1.0 {
            let mut all: Vec<usize> = (0..x.n_features()).collect();
            all.shuffle(&mut rng);
            let take = ((params.colsample_bytree * x.n_features() as f64).ceil() as usize)
                .clamp(1, x.n_features());
            let mut s = all[..take].to_vec();
            s.sort_unstable();
            s
        } else {
            (0..x.n_features()).collect()
        };

        // all k class trees of a round share the round-start gradients
        let f_round_start = f_train.clone();
        let mut round_trees = Vec::with_capacity(k);
        for class in 0..k {
            let (grad, hess) = grad_hess(task, &f_round_start, y, class);
            let builder = TreeBuilder {
                binned: &binned,
                grad: &grad,
                hess: &hess,
                features: &features,
                params: &params,
            };
            let tree = builder.build(rows.clone());
            // update train scores on ALL rows for the next round's gradients
            for (r, row) in rows_train.iter().enumerate() {
                f_train[r * k + class] += tree.eval(row);
            }
            for (i, row) in valid_rows.iter().enumerate() {
                f_valid[i * k + class] += tree.eval(row);
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);
        train_loss_trace.push(train_loss(task, &f_train, y));

        if !valid_rows.is_empty() {
            let preds = scores_to_predictions(task, &f_valid, valid_rows.len());
            let mv = compute_metric(&metric_name, &y_valid, &preds)?;
            valid_metric_trace.push(mv.value);
            let obj = mv.objective();
            if obj < best_obj {
                best_obj = obj;
                best_rounds = round + 1;
            } else if params.patience > 0 && round + 1 - best_rounds >= params.patience {
                break;
            }
        } else {
            best_rounds = round + 1;
        }
    }
    if !valid_rows.is_empty() && params.patience == 0 {
        // no early stopping: use every round, trace kept for inspection
        best_rounds = trees.len();
    }
    if trees.is_empty() {
        best_rounds = 0;
    }

    Ok(GbdtModel {
        task,
        n_features: x.n_features(),
        base_score: base,
        trees,
        best_rounds,
        train_loss_trace,
        valid_metric_trace,
    })
}

pub fn predict(m: &GbdtModel, x: &FeatureMatrix) -> Result<Predictions> {
    let k = match m.task {
        Task::Multiclass(k) => k,
        _ => 1,
    };
    let mut f: Vec<f64> = (0..x.n_rows * k).map(|i| m.base_score[i % k]).collect();
    for r in 0..x.n_rows {
        let row = x.row(r);
        if row.iter().any(|v| v.is_infinite()) {
            return Err(Error::NonFiniteInput);
        }
        for round in &m.trees[..m.best_rounds] {
            for (class, tree) in round.iter().enumerate() {
                f[r * k + class] += tree.eval(&row);
            }
        }
    }
    Ok(scores_to_predictions(m.task, &f, x.n_rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::ParamValue;
    use crate::learners::LearnerKind;

    fn xm(cols: Vec<Vec<f64>>) -> FeatureMatrix {
        let n_rows = cols[0].len();
        FeatureMatrix {
            names: (0..cols.len()).map(|i| format!("f{i}")).collect(),
            columns: cols,
            n_rows,
        }
    }

    fn cfg(pairs: &[(&str, ParamValue)]) -> LearnerConfig {
        let mut c = LearnerConfig::new(LearnerKind::Gbdt);
        for (k, v) in pairs {
            c.hyperparameters.insert(k.to_string(), v.clone());
        }
        c
    }

    /// XOR truth table replicated so leaves clear min_child_weight.
    fn xor_data() -> (FeatureMatrix, Vec<f64>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut y = Vec::new();
        for _ in 0..50 {
            for (p, q) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                a.push(p);
                b.push(q);
                y.push(if p != q { 1.0 } else { 0.0 });
            }
        }
        (xm(vec![a, b]), y)
    }

    #[test]
    fn xor_reaches_perfect_train_accuracy_at_depth_two() {
        let (x, y) = xor_data();
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(30)),
            ("max_depth", ParamValue::Int(2)),
            ("learning_rate", ParamValue::Float(0.5)),
            ("patience", ParamValue::Int(0)),
        ]);
        let m = fit(&c, Task::Binary, &x, &y, None).unwrap();
        let p = predict(&m, &x).unwrap();
        let acc = p
            .col0()
            .iter()
            .zip(&y)
            .filter(|(&p, &t)| (p >= 0.5) as u8 as f64 == t)
            .count();
        assert_eq!(acc, y.len());
    }

    #[test]
    fn train_loss_non_increasing_without_sampling() {
        let (x, y) = xor_data();
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(40)),
            ("max_depth", ParamValue::Int(2)),
            ("learning_rate", ParamValue::Float(0.3)),
            ("patience", ParamValue::Int(0)),
        ]);
        let m = fit(&c, Task::Binary, &x, &y, None).unwrap();
        for w in m.train_loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace rose: {:?}", w);
        }
    }

    #[test]
    fn zero_learning_rate_predicts_base_score() {
        let (x, y) = xor_data();
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(5)),
            ("learning_rate", ParamValue::Float(0.0)),
            ("patience", ParamValue::Int(0)),
        ]);
        let m = fit(&c, Task::Binary, &x, &y, None).unwrap();
        let base_prob = sigmoid(m.base_score[0]);
        for &p in &predict(&m, &x).unwrap().col0() {
            assert_eq!(p, base_prob);
        }
    }

    #[test]
    fn patience_without_validation_rejected() {
        let (x, y) = xor_data();
        let c = cfg(&[("patience", ParamValue::Int(10))]);
        assert!(matches!(
            fit(&c, Task::Binary, &x, &y, None),
            Err(Error::EmptyValidation)
        ));
    }

    #[test]
    fn early_stopping_truncates_rounds() {
        // validation target is noise: metric stops improving quickly
        let (x, y) = xor_data();
        let xv = xm(vec![vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]]);
        let yv = vec![1.0, 1.0, 0.0, 0.0];
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(500)),
            ("max_depth", ParamValue::Int(2)),
            ("patience", ParamValue::Int(3)),
        ]);
        let m = fit(&c, Task::Binary, &x, &y, Some((&xv, &yv))).unwrap();
        assert!(m.trees.len() < 500, "early stopping never fired");
        assert!(m.best_rounds <= m.trees.len());
        // best iteration is at least as good as every later trace entry
        let best = m.valid_metric_trace[m.best_rounds - 1];
        for &v in &m.valid_metric_trace[m.best_rounds..] {
            assert!(best <= v + 1e-15);
        }
    }

    #[test]
    fn leaf_regularization_monotonic_in_lambda() {
        for (g, h) in [(5.0, 2.0), (-3.0, 1.0), (0.5, 0.1)] {
            let mut prev = f64::INFINITY;
            for lambda in [0.0, 0.5, 1.0, 5.0, 50.0] {
                let w = leaf_weight(g, h, 0.0, lambda).abs();
                assert!(w <= prev + 1e-15);
                prev = w;
            }
        }
    }

    #[test]
    fn soft_threshold_zeroes_small_gradients() {
        assert_eq!(leaf_weight(0.5, 1.0, 1.0, 0.0), 0.0);
        assert!(leaf_weight(2.0, 1.0, 1.0, 0.0) < 0.0);
        assert!(leaf_weight(-2.0, 1.0, 1.0, 0.0) > 0.0);
    }

    #[test]
    fn missing_values_routed_to_better_side() {
        // feature is missing exactly when y = 1: splits must exploit it
        let xs: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { f64::NAN } else { 1.0 })
            .collect();
        let y: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let x = xm(vec![xs, (0..100).map(|i| i as f64).collect()]);
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(20)),
            ("max_depth", ParamValue::Int(2)),
            ("patience", ParamValue::Int(0)),
            ("min_child_weight", ParamValue::Float(0.0)),
        ]);
        let m = fit(&c, Task::Binary, &x, &y, None).unwrap();
        let p = predict(&m, &x).unwrap().col0();
        let correct = p
            .iter()
            .zip(&y)
            .filter(|(&p, &t)| (p >= 0.5) as u8 as f64 == t)
            .count();
        assert!(correct >= 95, "{correct}/100");
    }

    #[test]
    fn multiclass_probabilities_sum_to_one() {
        let xs: Vec<f64> = (0..60).map(|i| (i % 3) as f64 * 3.0).collect();
        let y: Vec<f64> = (0..60).map(|i| (i % 3) as f64).collect();
        let x = xm(vec![xs]);
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(20)),
            ("max_depth", ParamValue::Int(2)),
            ("patience", ParamValue::Int(0)),
        ]);
        let m = fit(&c, Task::Multiclass(3), &x, &y, None).unwrap();
        let p = predict(&m, &x).unwrap();
        for (r, &label) in y.iter().enumerate() {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let argmax = (0..3).max_by(|&a, &b| p.row(r)[a].total_cmp(&p.row(r)[b]));
            assert_eq!(argmax, Some(label as usize));
        }
    }

    #[test]
    fn deterministic_under_seed_with_sampling() {
        let (x, y) = xor_data();
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(15)),
            ("subsample", ParamValue::Float(0.7)),
            ("colsample_bytree", ParamValue::Float(0.5)),
            ("patience", ParamValue::Int(0)),
        ]);
        let a = fit(&c, Task::Binary, &x, &y, None).unwrap();
        let b = fit(&c, Task::Binary, &x, &y, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn regression_fits_step_function() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v < 50.0 { 1.0 } else { 9.0 }).collect();
        let x = xm(vec![xs]);
        let c = cfg(&[
            ("n_estimators", ParamValue::Int(30)),
            ("max_depth", ParamValue::Int(3)),
            ("patience", ParamValue::Int(0)),
        ]);
        let m = fit(&c, Task::Regression, &x, &y, None).unwrap();
        let p = predict(&m, &x).unwrap().col0();
        let err: f64 = p
            .iter()
            .zip(&y)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.5, "max abs err {err}");
    }
}
