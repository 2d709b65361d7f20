//! Length-of-stay classifiers (kNN, multinomial logistic regression, linear
//! SVM, AdaBoost, random forest) and evaluation metrics.
//!
//! Every model predicts over the five [`LosCategory`] classes in code order,
//! whether or not a class was present in training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LosCategory;
use crate::features::FeatureMatrix;
use crate::par::Execution;
use crate::util::argmax;

const C: usize = LosCategory::COUNT;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("training data has fewer than two classes")]
    DegenerateData,
    #[error("non-finite feature value at row {0}")]
    NonFinite(usize),
    #[error("feature width {found}, model expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("test set is empty")]
    EmptyTest,
    #[error("invalid classifier spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    #[serde(rename = "mlr")]
    MultinomialLogistic,
    #[serde(rename = "svm")]
    LinearSvm,
    #[serde(rename = "adaboost")]
    AdaBoost,
    RandomForest,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::Knn,
        ClassifierKind::MultinomialLogistic,
        ClassifierKind::LinearSvm,
        ClassifierKind::AdaBoost,
        ClassifierKind::RandomForest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::MultinomialLogistic => "mlr",
            ClassifierKind::LinearSvm => "svm",
            ClassifierKind::AdaBoost => "adaboost",
            ClassifierKind::RandomForest => "random_forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlrParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub regularization: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub max_depth: usize,
    pub bootstrap: bool,
}

impl Default for MlrParams {
    fn default() -> Self {
        Self { learning_rate: 0.1, l2: 1e-4, max_iter: 500, tol: 1e-6 }
    }
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { regularization: 1.0, epochs: 200 }
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { max_depth: 12, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub knn_k: usize,
    pub n_estimators: usize,
    pub mlr: MlrParams,
    pub svm: SvmParams,
    pub rf: ForestParams,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        Self {
            kind,
            knn_k: 3,
            n_estimators: 100,
            mlr: MlrParams::default(),
            svm: SvmParams::default(),
            rf: ForestParams::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<(), LearnError> {
        if self.knn_k == 0 || self.n_estimators == 0 {
            return Err(LearnError::BadSpec("knn_k and n_estimators must be at least 1".into()));
        }
        if !(self.svm.regularization > 0.0) || !(self.mlr.learning_rate > 0.0) {
            return Err(LearnError::BadSpec("regularization and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A single-feature threshold rule: `x[feature] <= threshold` → `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

impl Stump {
    pub fn predict(&self, x: &[f64]) -> usize {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { distribution: Vec<f64> },
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

impl TreeNode {
    pub fn leaf_distribution(&self, x: &[f64]) -> &[f64] {
        match self {
            TreeNode::Leaf { distribution } => distribution,
            TreeNode::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.leaf_distribution(x)
                } else {
                    right.leaf_distribution(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Knn { rows: Vec<Vec<f64>>, labels: Vec<usize> },
    /// Row-major C × (F + 1); the last column is the bias.
    MultinomialLogistic { weights: Vec<f64> },
    /// Per class: weights (F + 1, bias last) and Platt parameters (a, b).
    LinearSvm { weights: Vec<Vec<f64>>, platt: Vec<(f64, f64)> },
    AdaBoost { stumps: Vec<(Stump, f64)> },
    RandomForest { trees: Vec<TreeNode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    pub n_features: usize,
    pub classes: Vec<LosCategory>,
    pub model: Model,
}

fn design(matrix: &FeatureMatrix) -> Result<(Vec<Vec<f64>>, Vec<usize>), LearnError> {
    let mut x = Vec::with_capacity(matrix.len());
    let mut y = Vec::with_capacity(matrix.len());
    for (i, r) in matrix.rows.iter().enumerate() {
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite(i));
        }
        x.push(r.values.clone());
        y.push(r.label.code());
    }
    Ok((x, y))
}

pub fn train(spec: &ClassifierSpec, matrix: &FeatureMatrix) -> Result<TrainedClassifier, LearnError> {
    train_with(spec, matrix, Execution::default())
}

pub fn train_with(spec: &ClassifierSpec, matrix: &FeatureMatrix, exec: Execution) -> Result<TrainedClassifier, LearnError> {
    spec.validate()?;
    let (x, y) = design(matrix)?;
    let mut present = [false; C];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(LearnError::DegenerateData);
    }
    let model = match spec.kind {
        ClassifierKind::Knn => Model::Knn { rows: x, labels: y },
        ClassifierKind::MultinomialLogistic => Model::MultinomialLogistic { weights: fit_mlr(&x, &y, &spec.mlr) },
        ClassifierKind::LinearSvm => fit_svm(&x, &y, &spec.svm, spec.seed, exec),
        ClassifierKind::AdaBoost => Model::AdaBoost { stumps: fit_adaboost(&x, &y, spec.n_estimators) },
        ClassifierKind::RandomForest => Model::RandomForest { trees: fit_forest(&x, &y, spec, exec) },
    };
    Ok(TrainedClassifier { spec: spec.clone(), n_features: matrix.width(), classes: LosCategory::ALL.to_vec(), model })
}

// ---- kNN ----

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest training rows; ties go to the lower index.
pub fn knn_neighbors(rows: &[Vec<f64>], query: &[f64], k: usize) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, r) in rows.iter().enumerate() {
        let d = squared_distance(r, query);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let at = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(at, (d, i));
        best.truncate(k);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

// ---- multinomial logistic regression ----

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

fn mlr_scores(weights: &[f64], x: &[f64]) -> Vec<f64> {
    let f = x.len();
    (0..C)
        .map(|c| {
            let w = &weights[c * (f + 1)..(c + 1) * (f + 1)];
            w[..f].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[f]
        })
        .collect()
}

/// Mean cross-entropy plus `l2/2 · ||W||²` (bias excluded), and its gradient.
pub fn mlr_loss_and_gradient(weights: &[f64], x: &[Vec<f64>], y: &[usize], l2: f64) -> (f64, Vec<f64>) {
    let f = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let mut p = mlr_scores(weights, xi);
        let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + p.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        loss -= p[yi] - lse;
        softmax(&mut p);
        for c in 0..C {
            let g = (p[c] - f64::from(u8::from(c == yi))) / n;
            let row = &mut grad[c * (f + 1)..(c + 1) * (f + 1)];
            row[..f].iter_mut().zip(xi).for_each(|(r, v)| *r += g * v);
            row[f] += g;
        }
    }
    loss /= n;
    for c in 0..C {
        for j in 0..f {
            let i = c * (f + 1) + j;
            loss += 0.5 * l2 * weights[i] * weights[i];
            grad[i] += l2 * weights[i];
        }
    }
    (loss, grad)
}

/// Full-batch gradient descent. A step that raises the loss is retried at
/// half the rate.
fn fit_mlr(x: &[Vec<f64>], y: &[usize], p: &MlrParams) -> Vec<f64> {
    let f = x[0].len();
    let mut w = vec![0.0; C * (f + 1)];
    let (mut loss, mut grad) = mlr_loss_and_gradient(&w, x, y, p.l2);
    let mut rate = p.learning_rate;
    for _ in 0..p.max_iter {
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - rate * g).collect();
            let (cl, cg) = mlr_loss_and_gradient(&cand, x, y, p.l2);
            if cl <= loss {
                let delta = loss - cl;
                w = cand;
                loss = cl;
                grad = cg;
                accepted = delta >= p.tol;
                break;
            }
            rate *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    w
}

// ---- linear SVM ----

fn dot_bias(w: &[f64], x: &[f64]) -> f64 {
    w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
}

/// Pegasos subgradient descent on the one-vs-rest hinge objective
/// `λ/2 ||w||² + mean hinge`, with `λ = 1 / (C · n)`.
fn fit_hinge(x: &[Vec<f64>], target: &[f64], p: &SvmParams, seed: u64) -> Vec<f64> {
    let n = x.len();
    let f = x[0].len();
    let lambda = 1.0 / (p.regularization * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; f + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0.0;
    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1.0;
            let eta = 1.0 / (lambda * t);
            let margin = target[i] * dot_bias(&w, &x[i]);
            w.iter_mut().for_each(|v| *v *= 1.0 - eta * lambda);
            if margin < 1.0 {
                let step = eta * target[i];
                w[..f].iter_mut().zip(&x[i]).for_each(|(v, xv)| *v += step * xv);
                w[f] += step;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
        }
    }
    w
}

fn sigmoid_prob(a: f64, b: f64, f: f64) -> f64 {
    let z = a * f + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Platt scaling: fits `P(y=1 | f) = 1 / (1 + exp(a f + b))` by Newton's
/// method with smoothed targets.
pub fn fit_platt(decision: &[f64], positive: &[bool]) -> (f64, f64) {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        decision
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = a * f + b;
                // -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in decision.iter().zip(&t) {
            let p = sigmoid_prob(a, b, f);
            let d2 = p * (1.0 - p);
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn fit_svm(x: &[Vec<f64>], y: &[usize], p: &SvmParams, seed: u64, exec: Execution) -> Model {
    let fits = exec.map_range(C, |c| {
        let target: Vec<f64> = y.iter().map(|&yi| if yi == c { 1.0 } else { -1.0 }).collect();
        let w = fit_hinge(x, &target, p, seed.wrapping_add(c as u64));
        let decision: Vec<f64> = x.iter().map(|xi| dot_bias(&w, xi)).collect();
        let positive: Vec<bool> = y.iter().map(|&yi| yi == c).collect();
        (w, fit_platt(&decision, &positive))
    });
    let (weights, platt) = fits.into_iter().unzip();
    Model::LinearSvm { weights, platt }
}

// ---- AdaBoost ----

fn best_class(w: &[f64; C]) -> usize {
    argmax(w)
}

/// Weighted-error-minimizing stump over all features and midpoint
/// thresholds. Errors within 1e-12 tie; ties go to the lower feature, then
/// the lower threshold. With no candidate threshold the stump is constant.
pub fn best_stump(x: &[Vec<f64>], y: &[usize], weights: &[f64]) -> (Stump, f64) {
    let f = x[0].len();
    let mut total = [0.0; C];
    for (&yi, &wi) in y.iter().zip(weights) {
        total[yi] += wi;
    }
    let total_mass: f64 = total.iter().sum();
    let majority = best_class(&total);
    let mut best: Option<(Stump, f64)> = None;
    let mut order: Vec<usize> = (0..x.len()).collect();
    for feature in 0..f {
        order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let mut left = [0.0; C];
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            left[y[i]] += weights[i];
            let (v, next) = (x[i][feature], x[order[pos + 1]][feature]);
            if v == next {
                continue;
            }
            let right: [f64; C] = std::array::from_fn(|c| total[c] - left[c]);
            let (l, r) = (best_class(&left), best_class(&right));
            let err = total_mass - left[l] - right[r];
            let mid = v + (next - v) / 2.0;
            let threshold = if mid < next { mid } else { v };
            if best.as_ref().is_none_or(|(_, e)| err < e - 1e-12) {
                best = Some((Stump { feature, threshold, left: l, right: r }, err));
            }
        }
    }
    best.unwrap_or_else(|| {
        (Stump { feature: 0, threshold: f64::INFINITY, left: majority, right: majority }, total_mass - total[majority])
    })
}

/// SAMME over stumps. The class count in the weight formula is the number
/// of classes present in training.
fn fit_adaboost(x: &[Vec<f64>], y: &[usize], rounds: usize) -> Vec<(Stump, f64)> {
    let n = x.len();
    let k = {
        let mut p = [false; C];
        y.iter().for_each(|&c| p[c] = true);
        p.iter().filter(|&&b| b).count() as f64
    };
    let mut w = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();
    for _ in 0..rounds {
        let (stump, err_mass) = best_stump(x, y, &w);
        let total: f64 = w.iter().sum();
        let err = (err_mass / total).max(0.0);
        if err <= 1e-10 {
            let alpha = ((1.0 - 1e-10) / 1e-10f64).ln() + (k - 1.0).ln();
            stumps.push((stump, alpha));
            break;
        }
        if err >= 1.0 - 1.0 / k {
            if stumps.is_empty() {
                stumps.push((stump, 1.0));
            }
            break;
        }
        let alpha = ((1.0 - err) / err).ln() + (k - 1.0).ln();
        for i in 0..n {
            if stump.predict(&x[i]) != y[i] {
                w[i] *= alpha.exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        stumps.push((stump, alpha));
    }
    stumps
}

// ---- random forest ----

fn gini(counts: &[f64; C], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    max_depth: usize,
    features_per_split: usize,
    rng: ChaCha8Rng,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let mut d = vec![0.0; C];
        idx.iter().for_each(|&i| d[self.y[i]] += 1.0);
        let n = idx.len() as f64;
        d.iter_mut().for_each(|v| *v /= n);
        TreeNode::Leaf { distribution: d }
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let first = self.y[idx[0]];
        if depth >= self.max_depth || idx.len() < 2 || idx.iter().all(|&i| self.y[i] == first) {
            return self.leaf(idx);
        }
        let n_features = self.x[0].len();
        let mut features: Vec<usize> = (0..n_features).collect();
        features.shuffle(&mut self.rng);
        features.truncate(self.features_per_split);
        features.sort_unstable();

        let mut total = [0.0; C];
        idx.iter().for_each(|&i| total[self.y[i]] += 1.0);
        let n = idx.len() as f64;
        let parent = gini(&total, n);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = [0.0; C];
            for pos in 0..idx.len() - 1 {
                left[self.y[idx[pos]]] += 1.0;
                let (v, next) = (self.x[idx[pos]][f], self.x[idx[pos + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = (pos + 1) as f64;
                let right: [f64; C] = std::array::from_fn(|c| total[c] - left[c]);
                let impurity = (nl * gini(&left, nl) + (n - nl) * gini(&right, n - nl)) / n;
                if best.is_none_or(|(b, _, _)| impurity < b - 1e-12) {
                    // Adjacent floats can round the midpoint up to `next`.
                    let mid = v + (next - v) / 2.0;
                    best = Some((impurity, f, if mid < next { mid } else { v }));
                }
            }
        }
        match best {
            Some((impurity, feature, threshold)) if impurity < parent - 1e-12 => {
                let (mut l, mut r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let left = Box::new(self.build(&mut l, depth + 1));
                let right = Box::new(self.build(&mut r, depth + 1));
                TreeNode::Split { feature, threshold, left, right }
            }
            _ => self.leaf(idx),
        }
    }
}

pub fn features_per_split(n_features: usize) -> usize {
    ((n_features as f64).sqrt().floor() as usize).max(1)
}

/// Tree `t` draws from seed `spec.seed + t`, so trees are independent of
/// scheduling.
fn fit_forest(x: &[Vec<f64>], y: &[usize], spec: &ClassifierSpec, exec: Execution) -> Vec<TreeNode> {
    let n = x.len();
    exec.map_range(spec.n_estimators, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(t as u64));
        let mut idx: Vec<usize> =
            if spec.rf.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
        let mut builder = TreeBuilder {
            x,
            y,
            max_depth: spec.rf.max_depth,
            features_per_split: features_per_split(x[0].len()),
            rng,
        };
        builder.build(&mut idx, 0)
    })
}

// ---- prediction ----

impl TrainedClassifier {
    fn proba_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.model {
            Model::Knn { rows, labels } => {
                let k = self.spec.knn_k.min(rows.len());
                let mut p = vec![0.0; C];
                for i in knn_neighbors(rows, x, k) {
                    p[labels[i]] += 1.0 / k as f64;
                }
                p
            }
            Model::MultinomialLogistic { weights } => {
                let mut z = mlr_scores(weights, x);
                softmax(&mut z);
                z
            }
            Model::LinearSvm { weights, platt } => {
                let mut p: Vec<f64> =
                    weights.iter().zip(platt).map(|(w, &(a, b))| sigmoid_prob(a, b, dot_bias(w, x))).collect();
                let s: f64 = p.iter().sum();
                if s > 0.0 {
                    p.iter_mut().for_each(|v| *v /= s);
                } else {
                    p = vec![1.0 / C as f64; C];
                }
                p
            }
            Model::AdaBoost { stumps } => {
                let mut p = vec![0.0; C];
                for (s, alpha) in stumps {
                    p[s.predict(x)] += alpha;
                }
                let total: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= total);
                p
            }
            Model::RandomForest { trees } => {
                let mut p = vec![0.0; C];
                for t in trees {
                    p.iter_mut().zip(t.leaf_distribution(x)).for_each(|(a, b)| *a += b);
                }
                p.iter_mut().for_each(|v| *v /= trees.len() as f64);
                p
            }
        }
    }

    /// Class probabilities, one row of five per input row.
    pub fn predict_proba(&self, rows: &[Vec<f64>], exec: Execution) -> Result<Vec<Vec<f64>>, LearnError> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.n_features) {
            return Err(LearnError::WidthMismatch { expected: self.n_features, found: r.len() });
        }
        Ok(exec.map(rows, |r| self.proba_row(r)))
    }

    pub fn predict(&self, rows: &[Vec<f64>], exec: Execution) -> Result<Vec<LosCategory>, LearnError> {
        Ok(self
            .predict_proba(rows, exec)?
            .iter()
            .map(|p| LosCategory::from_code(argmax(p)).unwrap())
            .collect())
    }
}

// ---- metrics ----

/// Rank-based AUC with tied scores counted one half. `None` unless both
/// classes are present.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * mid_rank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: LosCategory,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Row = true class, column = predicted class.
    pub labels: Vec<LosCategory>,
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub accuracy: f64,
    pub roc_auc_macro_ovr: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
}

/// Metrics from true labels and probability rows. Precision and recall are
/// averaged over all five classes (undefined terms count as 0); AUC is
/// averaged over the classes present in `truth`.
pub fn metrics(truth: &[LosCategory], proba: &[Vec<f64>]) -> Result<EvalReport, LearnError> {
    if truth.is_empty() {
        return Err(LearnError::EmptyTest);
    }
    let mut counts = vec![vec![0usize; C]; C];
    for (t, p) in truth.iter().zip(proba) {
        counts[t.code()][argmax(p)] += 1;
    }
    let trace: usize = (0..C).map(|c| counts[c][c]).sum();
    let per_class: Vec<ClassMetrics> = LosCategory::ALL
        .iter()
        .map(|&class| {
            let c = class.code();
            let support: usize = counts[c].iter().sum();
            let predicted: usize = (0..C).map(|r| counts[r][c]).sum();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let scores: Vec<f64> = proba.iter().map(|p| p[c]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == class).collect();
            ClassMetrics {
                class,
                support,
                precision: ratio(counts[c][c], predicted),
                recall: ratio(counts[c][c], support),
                auc: binary_auc(&scores, &positive),
            }
        })
        .collect();
    let aucs: Vec<f64> = per_class.iter().filter_map(|m| m.auc).collect();
    Ok(EvalReport {
        precision_macro: per_class.iter().map(|m| m.precision).sum::<f64>() / C as f64,
        recall_macro: per_class.iter().map(|m| m.recall).sum::<f64>() / C as f64,
        accuracy: trace as f64 / truth.len() as f64,
        roc_auc_macro_ovr: if aucs.is_empty() { 0.5 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 },
        confusion: ConfusionMatrix { labels: LosCategory::ALL.to_vec(), counts },
        per_class,
    })
}

pub fn evaluate(model: &TrainedClassifier, test: &FeatureMatrix, exec: Execution) -> Result<EvalReport, LearnError> {
    if test.is_empty() {
        return Err(LearnError::EmptyTest);
    }
    let rows: Vec<Vec<f64>> = test.rows.iter().map(|r| r.values.clone()).collect();
    let truth: Vec<LosCategory> = test.rows.iter().map(|r| r.label).collect();
    metrics(&truth, &model.predict_proba(&rows, exec)?)
}
