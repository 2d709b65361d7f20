//! LDA by weighted collapsed Gibbs sampling, topic labeling, coherence
//! measures, and per-patient topic trajectories.
//!
//! Every `(document, term)` entry of a [`DocVector`] holds one topic
//! assignment that carries the entry's weight. Count statistics accumulate
//! weights rather than unit increments, so BOW input (integer weights) and
//! TF-IDF input (fractional weights) share one sampler.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::util::argmax;
use crate::vectorize::{DocVector, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum TopicError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("document {0:?} has no in-vocabulary terms")]
    EmptyDocument(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("vocabulary mismatch: model {expected}, input {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("topic {topic} out of range for k={k}")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("model file line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    /// Symmetric document-topic prior; `None` means `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub const DEFAULT_BETA: f64 = 0.01;
    pub const DEFAULT_ITERATIONS: usize = 1000;
    pub const DEFAULT_BURN_IN: usize = 800;

    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            alpha: None,
            beta: Self::DEFAULT_BETA,
            iterations: Self::DEFAULT_ITERATIONS,
            burn_in: Self::DEFAULT_BURN_IN,
            seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }

    pub fn validate(&self) -> Result<(), TopicError> {
        let bad = |m: String| Err(TopicError::DegenerateConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.alpha() > 0.0 && self.alpha().is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.burn_in >= self.iterations {
            return bad(format!("burn_in {} must be below iterations {}", self.burn_in, self.iterations));
        }
        Ok(())
    }
}

/// Collapsed Gibbs state over weighted entries.
pub struct GibbsSampler<'a> {
    docs: &'a [DocVector],
    k: usize,
    v: usize,
    alpha: f64,
    beta: f64,
    assignments: Vec<Vec<usize>>,
    /// doc-major, `d * k + topic`
    n_dk: Vec<f64>,
    /// word-major, `w * k + topic`
    n_kw: Vec<f64>,
    n_k: Vec<f64>,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    /// Assigns every entry a uniformly random topic.
    pub fn new(docs: &'a [DocVector], vocab_size: usize, config: &LdaConfig) -> Result<Self, TopicError> {
        config.validate()?;
        if docs.is_empty() || vocab_size == 0 {
            return Err(TopicError::EmptyCorpus);
        }
        if let Some(d) = docs.iter().find(|d| d.is_empty()) {
            return Err(TopicError::EmptyDocument(d.doc_id.clone()));
        }
        let k = config.k;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut n_dk = vec![0.0; docs.len() * k];
        let mut n_kw = vec![0.0; vocab_size * k];
        let mut n_k = vec![0.0; k];
        let mut assignments = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut z = Vec::with_capacity(doc.entries.len());
            for &(w, weight) in &doc.entries {
                if w >= vocab_size {
                    return Err(TopicError::DegenerateConfig(format!("term id {w} out of vocabulary")));
                }
                let t = rng.random_range(0..k);
                n_dk[d * k + t] += weight;
                n_kw[w * k + t] += weight;
                n_k[t] += weight;
                z.push(t);
            }
            assignments.push(z);
        }
        Ok(Self {
            docs,
            k,
            v: vocab_size,
            alpha: config.alpha(),
            beta: config.beta,
            assignments,
            n_dk,
            n_kw,
            n_k,
            rng,
            scratch: vec![0.0; k],
        })
    }

    /// One pass over every entry in document order.
    pub fn sweep(&mut self) {
        let (k, alpha, beta) = (self.k, self.alpha, self.beta);
        let v_beta = self.v as f64 * beta;
        for (d, doc) in self.docs.iter().enumerate() {
            let dk = &mut self.n_dk[d * k..(d + 1) * k];
            for (e, &(w, weight)) in doc.entries.iter().enumerate() {
                let old = self.assignments[d][e];
                let kw = &mut self.n_kw[w * k..(w + 1) * k];
                dk[old] = (dk[old] - weight).max(0.0);
                kw[old] = (kw[old] - weight).max(0.0);
                self.n_k[old] = (self.n_k[old] - weight).max(0.0);

                let mut total = 0.0;
                for t in 0..k {
                    total += (dk[t] + alpha) * (kw[t] + beta) / (self.n_k[t] + v_beta);
                    self.scratch[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.scratch.iter().position(|&c| u < c).unwrap_or(k - 1);

                dk[new] += weight;
                kw[new] += weight;
                self.n_k[new] += weight;
                self.assignments[d][e] = new;
            }
        }
    }

    /// Current `(n_kw + β) / (n_k + Vβ)`, topic-major.
    pub fn phi(&self) -> Vec<Vec<f64>> {
        let v_beta = self.v as f64 * self.beta;
        (0..self.k)
            .map(|t| (0..self.v).map(|w| (self.n_kw[w * self.k + t] + self.beta) / (self.n_k[t] + v_beta)).collect())
            .collect()
    }

    /// Current `(n_dk + α) / (n_d + Kα)`.
    pub fn theta(&self) -> Vec<Vec<f64>> {
        let k_alpha = self.k as f64 * self.alpha;
        self.n_dk
            .chunks(self.k)
            .map(|row| {
                let n_d: f64 = row.iter().sum();
                row.iter().map(|&c| (c + self.alpha) / (n_d + k_alpha)).collect()
            })
            .collect()
    }

    /// Largest deviation of the count tables from the entry weights they
    /// should sum to.
    pub fn conservation_error(&self) -> f64 {
        let k = self.k;
        let mut worst: f64 = 0.0;
        let mut doc_total = 0.0;
        for (d, doc) in self.docs.iter().enumerate() {
            let row: f64 = self.n_dk[d * k..(d + 1) * k].iter().sum();
            worst = worst.max((row - doc.mass()).abs());
            doc_total += row;
        }
        let word_total: f64 = self.n_kw.iter().sum();
        let topic_total: f64 = self.n_k.iter().sum();
        worst.max((word_total - doc_total).abs()).max((topic_total - doc_total).abs())
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }
}

/// A fitted topic model. `phi` is K×V, `theta` is D×K in `doc_ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub config: LdaConfig,
    pub terms: Vec<String>,
    pub vocab_digest: String,
    pub phi: Vec<Vec<f64>>,
    pub doc_ids: Vec<String>,
    pub theta: Vec<Vec<f64>>,
}

/// Fits LDA; `phi` and `theta` are posterior means averaged over every
/// sweep after burn-in.
pub fn fit_lda(vectors: &[DocVector], vocab: &Vocabulary, config: &LdaConfig) -> Result<TopicModel, TopicError> {
    let mut sampler = GibbsSampler::new(vectors, vocab.len(), config)?;
    let (k, v, d) = (config.k, vocab.len(), vectors.len());
    let mut phi_sum = vec![vec![0.0; v]; k];
    let mut theta_sum = vec![vec![0.0; k]; d];
    for sweep in 1..=config.iterations {
        sampler.sweep();
        if sweep > config.burn_in {
            for (acc, row) in phi_sum.iter_mut().zip(sampler.phi()) {
                acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
            }
            for (acc, row) in theta_sum.iter_mut().zip(sampler.theta()) {
                acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
            }
        }
    }
    let samples = (config.iterations - config.burn_in) as f64;
    let mean = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter().map(|r| r.into_iter().map(|x| x / samples).collect()).collect()
    };
    let mut config = config.clone();
    config.alpha = Some(config.alpha());
    Ok(TopicModel {
        config,
        terms: vocab.terms().to_vec(),
        vocab_digest: vocab.digest(),
        phi: mean(phi_sum),
        doc_ids: vectors.iter().map(|d| d.doc_id.clone()).collect(),
        theta: mean(theta_sum),
    })
}

impl TopicModel {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn theta_for(&self, doc_id: &str) -> Option<&[f64]> {
        self.doc_ids.iter().position(|d| d == doc_id).map(|i| self.theta[i].as_slice())
    }

    pub fn assignments(&self) -> Vec<TopicAssignment> {
        self.doc_ids.iter().zip(&self.theta).map(|(id, row)| TopicAssignment::from_theta(id, row)).collect()
    }

    /// Relabels topics so that new topic `i` is old topic `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> TopicModel {
        let mut out = self.clone();
        out.phi = perm.iter().map(|&p| self.phi[p].clone()).collect();
        out.theta = self.theta.iter().map(|row| perm.iter().map(|&p| row[p]).collect()).collect();
        out
    }

    /// `LDA-MODEL v1` text: header, `phi` rows by (topic, term id), then
    /// `theta` rows by doc id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "LDA-MODEL v1 k={} v={} alpha={} beta={} seed={} vocab={}",
            self.k(),
            self.vocab_size(),
            self.config.alpha(),
            self.config.beta,
            self.config.seed,
            self.vocab_digest
        )
        .unwrap();
        for (t, row) in self.phi.iter().enumerate() {
            for (w, p) in row.iter().enumerate() {
                writeln!(out, "phi\t{t}\t{}\t{p}", self.terms[w]).unwrap();
            }
        }
        let mut order: Vec<usize> = (0..self.doc_ids.len()).collect();
        order.sort_by(|&a, &b| self.doc_ids[a].cmp(&self.doc_ids[b]));
        for i in order {
            let row: Vec<String> = self.theta[i].iter().map(|p| p.to_string()).collect();
            writeln!(out, "theta\t{}\t{}", self.doc_ids[i], row.join(",")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TopicModel, TopicError> {
        let err = |line: usize, detail: &str| TopicError::Parse { line, detail: detail.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some("LDA-MODEL") || fields.next() != Some("v1") {
            return Err(err(1, "not an LDA-MODEL v1 file"));
        }
        let kv: BTreeMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        let get = |key: &str| kv.get(key).copied().ok_or_else(|| err(1, &format!("missing {key}")));
        let num = |key: &str| -> Result<f64, TopicError> {
            get(key)?.parse::<f64>().map_err(|_| err(1, &format!("bad {key}")))
        };
        let k = num("k")? as usize;
        let v = num("v")? as usize;
        let mut config = LdaConfig::new(k, get("seed")?.parse().map_err(|_| err(1, "bad seed"))?);
        config.alpha = Some(num("alpha")?);
        config.beta = num("beta")?;
        let vocab_digest = get("vocab")?.to_string();

        let mut phi = vec![Vec::with_capacity(v); k];
        let mut terms = Vec::with_capacity(v);
        let mut doc_ids = Vec::new();
        let mut theta = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.as_slice() {
                ["phi", t, term, p] => {
                    let t: usize = t.parse().map_err(|_| err(n, "bad topic"))?;
                    if t >= k {
                        return Err(err(n, "topic out of range"));
                    }
                    if t == 0 {
                        terms.push(term.to_string());
                    } else if terms.get(phi[t].len()).map(String::as_str) != Some(*term) {
                        return Err(err(n, "term order differs between topics"));
                    }
                    phi[t].push(p.parse().map_err(|_| err(n, "bad probability"))?);
                }
                ["theta", doc, row] => {
                    let row: Vec<f64> =
                        row.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|_| err(n, "bad theta"))?;
                    if row.len() != k {
                        return Err(err(n, "theta width differs from k"));
                    }
                    doc_ids.push(doc.to_string());
                    theta.push(row);
                }
                [""] => {}
                _ => return Err(err(n, "unrecognized row")),
            }
        }
        if terms.len() != v || phi.iter().any(|r| r.len() != v) {
            return Err(err(0, "phi rows do not cover the vocabulary"));
        }
        Ok(TopicModel { config, terms, vocab_digest, phi, doc_ids, theta })
    }
}

pub const DEFAULT_FOLD_IN_SWEEPS: usize = 100;

/// Fold-in estimate of θ for an unseen document with `phi` held fixed.
/// The returned vector averages the second half of the sweeps.
pub fn infer_theta(
    model: &TopicModel,
    doc: &DocVector,
    vocab_digest: &str,
    sweeps: usize,
    seed: u64,
) -> Result<Vec<f64>, TopicError> {
    if vocab_digest != model.vocab_digest {
        return Err(TopicError::VocabMismatch { expected: model.vocab_digest.clone(), found: vocab_digest.to_string() });
    }
    let k = model.k();
    let alpha = model.config.alpha();
    if doc.is_empty() {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_dk = vec![0.0; k];
    let mut z: Vec<usize> = Vec::with_capacity(doc.entries.len());
    for &(_, weight) in &doc.entries {
        let t = rng.random_range(0..k);
        n_dk[t] += weight;
        z.push(t);
    }
    let mass = doc.mass();
    let sweeps = sweeps.max(1);
    let keep_from = sweeps / 2;
    let mut acc = vec![0.0; k];
    let mut cum = vec![0.0; k];
    for s in 0..sweeps {
        for (e, &(w, weight)) in doc.entries.iter().enumerate() {
            n_dk[z[e]] = (n_dk[z[e]] - weight).max(0.0);
            let mut total = 0.0;
            for t in 0..k {
                total += (n_dk[t] + alpha) * model.phi[t][w];
                cum[t] = total;
            }
            let u = rng.random::<f64>() * total;
            let new = cum.iter().position(|&c| u < c).unwrap_or(k - 1);
            n_dk[new] += weight;
            z[e] = new;
        }
        if s >= keep_from {
            for t in 0..k {
                acc[t] += (n_dk[t] + alpha) / (mass + k as f64 * alpha);
            }
        }
    }
    let total: f64 = acc.iter().sum();
    Ok(acc.into_iter().map(|x| x / total).collect())
}

/// Argmax with lowest-index tie-break, and the maximum value.
pub fn dominant_topic(theta_row: &[f64]) -> (usize, f64) {
    let i = argmax(theta_row);
    (i, theta_row[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub doc_id: String,
    pub dominant_topic: usize,
    pub contribution: f64,
    pub full_theta: Vec<f64>,
}

impl TopicAssignment {
    pub fn from_theta(doc_id: &str, theta: &[f64]) -> Self {
        let (dominant_topic, contribution) = dominant_topic(theta);
        Self { doc_id: doc_id.to_string(), dominant_topic, contribution, full_theta: theta.to_vec() }
    }
}

fn ranked_terms(model: &TopicModel, topic: usize) -> Vec<usize> {
    let row = &model.phi[topic];
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| model.terms[a].cmp(&model.terms[b])));
    ids
}

/// The `n` most probable terms of a topic, ties broken lexicographically.
pub fn top_keywords(model: &TopicModel, topic_id: usize, n: usize) -> Result<Vec<(String, f64)>, TopicError> {
    if topic_id >= model.k() {
        return Err(TopicError::TopicOutOfRange { topic: topic_id, k: model.k() });
    }
    Ok(ranked_terms(model, topic_id)
        .into_iter()
        .take(n)
        .map(|w| (model.terms[w].clone(), model.phi[topic_id][w]))
        .collect())
}

/// `term (0.027), term (0.019), ...`
pub fn format_keywords(keywords: &[(String, f64)]) -> String {
    keywords.iter().map(|(t, p)| format!("{t} ({p:.3})")).collect::<Vec<_>>().join(", ")
}

pub const REPRESENTATIVE_THRESHOLD: f64 = 0.80;

/// Documents dominated by `topic_id` with contribution at least
/// `threshold`, highest contribution first.
pub fn representative_docs(assignments: &[TopicAssignment], topic_id: usize, threshold: f64) -> Vec<String> {
    let mut hits: Vec<&TopicAssignment> = assignments
        .iter()
        .filter(|a| a.dominant_topic == topic_id && a.contribution >= threshold)
        .collect();
    hits.sort_by(|a, b| b.contribution.total_cmp(&a.contribution).then_with(|| a.doc_id.cmp(&b.doc_id)));
    hits.into_iter().map(|a| a.doc_id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

impl CoherenceScore {
    fn from_topics(per_topic: Vec<f64>) -> Self {
        let mean = if per_topic.is_empty() { 0.0 } else { per_topic.iter().sum::<f64>() / per_topic.len() as f64 };
        Self { per_topic, mean }
    }
}

/// UMass coherence over document co-occurrence: per topic,
/// `Σ_{i<j} ln((D(w_i, w_j) + 1) / D(w_j))` with terms in φ order.
pub fn coherence_umass(model: &TopicModel, bow: &[DocVector], top_n: usize) -> CoherenceScore {
    let per_topic = (0..model.k())
        .map(|t| {
            let top: Vec<usize> = ranked_terms(model, t).into_iter().take(top_n).collect();
            let present: Vec<Vec<bool>> = bow
                .iter()
                .map(|d| top.iter().map(|w| d.entries.binary_search_by_key(w, |e| e.0).is_ok()).collect())
                .collect();
            let df = |i: usize| present.iter().filter(|p| p[i]).count();
            let co = |i: usize, j: usize| present.iter().filter(|p| p[i] && p[j]).count();
            let mut score = 0.0;
            for j in 1..top.len() {
                let dj = df(j);
                if dj == 0 {
                    continue;
                }
                for i in 0..j {
                    score += ((co(i, j) as f64 + 1.0) / dj as f64).ln();
                }
            }
            score
        })
        .collect();
    CoherenceScore::from_topics(per_topic)
}

pub const CV_WINDOW: usize = 110;
const NPMI_EPSILON: f64 = 1e-12;

/// Boolean sliding-window counts for a term set: (windows, singles, pairs).
/// A document no longer than the window is a single window.
pub fn window_counts<S: AsRef<str>>(
    streams: &[Vec<S>],
    terms: &[&str],
    window: usize,
) -> (usize, Vec<usize>, Vec<Vec<usize>>) {
    let n = terms.len();
    let mut singles = vec![0; n];
    let mut pairs = vec![vec![0; n]; n];
    let mut windows = 0;
    let window = window.max(1);
    for stream in streams {
        let ids: Vec<Option<usize>> = stream.iter().map(|t| terms.iter().position(|x| *x == t.as_ref())).collect();
        if ids.is_empty() {
            continue;
        }
        let mut inside = vec![0usize; n];
        let span = window.min(ids.len());
        for id in ids[..span].iter().flatten() {
            inside[*id] += 1;
        }
        let mut record = |inside: &[usize]| {
            let present: Vec<usize> = (0..n).filter(|&i| inside[i] > 0).collect();
            for &a in &present {
                singles[a] += 1;
                for &b in &present {
                    pairs[a][b] += 1;
                }
            }
        };
        record(&inside);
        windows += 1;
        for start in 1..=ids.len() - span {
            if let Some(out) = ids[start - 1] {
                inside[out] -= 1;
            }
            if let Some(inn) = ids[start + span - 1] {
                inside[inn] += 1;
            }
            record(&inside);
            windows += 1;
        }
    }
    (windows, singles, pairs)
}

/// Normalized PMI from window probabilities. A pair present in every window
/// counts as perfectly associated.
fn npmi(p_ij: f64, p_i: f64, p_j: f64) -> f64 {
    if p_i == 0.0 || p_j == 0.0 {
        return 0.0;
    }
    if p_ij >= 1.0 {
        return 1.0;
    }
    ((p_ij + NPMI_EPSILON) / (p_i * p_j)).ln() / -(p_ij + NPMI_EPSILON).ln()
}

/// C_v of one term set: NPMI context vectors, cosine of each term's vector
/// against the sum over the set, averaged.
pub fn cv_for_terms<S: AsRef<str>>(streams: &[Vec<S>], terms: &[&str], window: usize) -> f64 {
    if terms.len() <= 1 {
        return 1.0;
    }
    let (windows, singles, pairs) = window_counts(streams, terms, window);
    if windows == 0 {
        return 0.0;
    }
    let nw = windows as f64;
    let n = terms.len();
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| npmi(pairs[i][j] as f64 / nw, singles[i] as f64 / nw, singles[j] as f64 / nw))
                .collect()
        })
        .collect();
    let total: Vec<f64> = (0..n).map(|j| vectors.iter().map(|v| v[j]).sum()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let total_norm = norm(&total);
    let cosines = vectors.iter().map(|v| {
        let denom = norm(v) * total_norm;
        if denom == 0.0 {
            0.0
        } else {
            v.iter().zip(&total).map(|(a, b)| a * b).sum::<f64>() / denom
        }
    });
    cosines.sum::<f64>() / n as f64
}

/// C_v coherence of every topic's `top_n` terms over token streams.
pub fn coherence_cv<S: AsRef<str> + Sync>(
    model: &TopicModel,
    streams: &[Vec<S>],
    top_n: usize,
    window: usize,
    exec: Execution,
) -> CoherenceScore {
    let per_topic = exec.map_range(model.k(), |t| {
        let top: Vec<&str> =
            ranked_terms(model, t).into_iter().take(top_n).map(|w| model.terms[w].as_str()).collect();
        cv_for_terms(streams, &top, window)
    });
    CoherenceScore::from_topics(per_topic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceMeasure {
    #[serde(rename = "umass")]
    UMass,
    #[default]
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    /// K → (UMass, C_v) means.
    pub scores: BTreeMap<usize, (f64, f64)>,
    pub selected_k: usize,
    pub measure_used: CoherenceMeasure,
}

/// Inputs to a coherence scan. `vectors` feed the fits; `bow` and `streams`
/// feed UMass and C_v.
pub struct CoherenceCorpus<'a, S> {
    pub vectors: &'a [DocVector],
    pub bow: &'a [DocVector],
    pub streams: &'a [Vec<S>],
    pub vocab: &'a Vocabulary,
}

pub const DEFAULT_TOP_N: usize = 10;

/// Fits one model per K (seed `template.seed + K`, α = 50/K unless the
/// template fixes it) and selects the K maximizing `measure`; ties go to the
/// smallest K.
pub fn coherence_scan<S: AsRef<str> + Sync>(
    corpus: &CoherenceCorpus<'_, S>,
    k_range: &[usize],
    template: &LdaConfig,
    measure: CoherenceMeasure,
    exec: Execution,
) -> Result<CoherenceReport, TopicError> {
    if k_range.is_empty() {
        return Err(TopicError::DegenerateConfig("empty k range".into()));
    }
    if let Some(&k) = k_range.iter().find(|&&k| k < 2) {
        return Err(TopicError::DegenerateConfig(format!("scan K must be at least 2, got {k}")));
    }
    let fits = exec.map(k_range, |&k| {
        let mut config = template.clone();
        config.k = k;
        config.seed = template.seed.wrapping_add(k as u64);
        let model = fit_lda(corpus.vectors, corpus.vocab, &config)?;
        let umass = coherence_umass(&model, corpus.bow, DEFAULT_TOP_N).mean;
        let cv = coherence_cv(&model, corpus.streams, DEFAULT_TOP_N, CV_WINDOW, Execution::Sequential).mean;
        Ok((k, (umass, cv)))
    });
    let scores: BTreeMap<usize, (f64, f64)> = fits.into_iter().collect::<Result<_, TopicError>>()?;
    let value = |s: &(f64, f64)| match measure {
        CoherenceMeasure::UMass => s.0,
        CoherenceMeasure::Cv => s.1,
    };
    let mut selected_k = *scores.keys().next().unwrap();
    for (&k, s) in &scores {
        if value(s) > value(&scores[&selected_k]) {
            selected_k = k;
        }
    }
    Ok(CoherenceReport { scores, selected_k, measure_used: measure })
}

/// Dominant topics of one encounter, as input to trajectories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterLabels {
    pub encounter_id: String,
    pub patient_id: String,
    pub admit_date: NaiveDate,
    pub diag_dominant: Option<usize>,
    pub proc_dominant: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub encounter_id: String,
    pub admit_date: NaiveDate,
    pub diag_dominant: Option<usize>,
    pub proc_dominant: Option<usize>,
}

/// One patient's encounters in admission order (encounter id breaks ties).
pub fn topic_trajectory(patient_id: &str, labels: &[EncounterLabels]) -> Result<Vec<TrajectoryRow>, TopicError> {
    let mut rows: Vec<&EncounterLabels> = labels.iter().filter(|l| l.patient_id == patient_id).collect();
    if rows.is_empty() {
        return Err(TopicError::UnknownPatient(patient_id.to_string()));
    }
    rows.sort_by(|a, b| a.admit_date.cmp(&b.admit_date).then_with(|| a.encounter_id.cmp(&b.encounter_id)));
    Ok(rows
        .into_iter()
        .map(|l| TrajectoryRow {
            encounter_id: l.encounter_id.clone(),
            admit_date: l.admit_date,
            diag_dominant: l.diag_dominant,
            proc_dominant: l.proc_dominant,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorize::{bow_vectors, tfidf_vectors};
    use proptest::prelude::*;

    fn corpus(raw: &[&str]) -> (Vec<(String, Vec<String>)>, Vocabulary) {
        let docs: Vec<(String, Vec<String>)> = raw
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i:02}"), d.split_whitespace().map(String::from).collect()))
            .collect();
        let toks: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
        let vocab = Vocabulary::build(&toks, 1).unwrap();
        (docs, vocab)
    }

    fn quick(k: usize, seed: u64) -> LdaConfig {
        LdaConfig { iterations: 60, burn_in: 40, ..LdaConfig::new(k, seed) }
    }

    #[test]
    fn config_validation() {
        assert!(LdaConfig::new(0, 1).validate().is_err());
        assert!(LdaConfig { burn_in: 1000, ..LdaConfig::new(2, 1) }.validate().is_err());
        assert!(LdaConfig { beta: 0.0, ..LdaConfig::new(2, 1) }.validate().is_err());
        assert_eq!(LdaConfig::new(4, 1).alpha(), 12.5);
    }

    #[test]
    fn single_topic_closed_form() {
        let (docs, vocab) = corpus(&["a b b c", "c c d", "a d d d e"]);
        for vectors in [bow_vectors(&docs, &vocab), tfidf_vectors(&docs, &vocab)] {
            let model = fit_lda(&vectors, &vocab, &quick(1, 7)).unwrap();
            let n_total: f64 = vectors.iter().map(DocVector::mass).sum();
            let v = vocab.len() as f64;
            for w in 0..vocab.len() {
                let n_w: f64 = vectors.iter().flat_map(|d| &d.entries).filter(|e| e.0 == w).map(|e| e.1).sum();
                let expected = (n_w + 0.01) / (n_total + v * 0.01);
                assert!((model.phi[0][w] - expected).abs() < 1e-12);
            }
            assert!(model.theta.iter().all(|r| r == &vec![1.0]));
        }
    }

    #[test]
    fn determinism_and_empty_documents() {
        let (docs, vocab) = corpus(&["a b c a", "d e f d", "a b e", "c f f"]);
        let v = bow_vectors(&docs, &vocab);
        let a = fit_lda(&v, &vocab, &quick(2, 11)).unwrap();
        let b = fit_lda(&v, &vocab, &quick(2, 11)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = fit_lda(&v, &vocab, &quick(2, 12)).unwrap();
        assert_ne!(a.phi, c.phi);

        let mut with_empty = v.clone();
        with_empty.push(DocVector { doc_id: "z".into(), entries: vec![] });
        assert_eq!(fit_lda(&with_empty, &vocab, &quick(2, 1)), Err(TopicError::EmptyDocument("z".into())));
        assert_eq!(fit_lda(&[], &vocab, &quick(2, 1)), Err(TopicError::EmptyCorpus));
    }

    #[test]
    fn conservation_after_every_sweep() {
        let (docs, vocab) = corpus(&["a b c a b", "d e f d", "a b e e", "c f f a", "b b b d"]);
        for vectors in [bow_vectors(&docs, &vocab), tfidf_vectors(&docs, &vocab)] {
            let mut s = GibbsSampler::new(&vectors, vocab.len(), &quick(3, 5)).unwrap();
            for _ in 0..50 {
                s.sweep();
                assert!(s.conservation_error() < 1e-6);
            }
        }
    }

    #[test]
    fn rows_are_stochastic_and_positive() {
        let (docs, vocab) = corpus(&["a b c a", "d e f d", "a b e", "c f f"]);
        let m = fit_lda(&tfidf_vectors(&docs, &vocab), &vocab, &quick(3, 2)).unwrap();
        for row in m.phi.iter().chain(&m.theta) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn model_text_round_trip() {
        let (docs, vocab) = corpus(&["b a c a", "d e f d", "a b e"]);
        let m = fit_lda(&bow_vectors(&docs, &vocab), &vocab, &quick(2, 3)).unwrap();
        let text = m.to_text();
        assert!(text.starts_with(&format!("LDA-MODEL v1 k=2 v=6 alpha=25 beta=0.01 seed=3 vocab={}\n", vocab.digest())));
        assert!(text.lines().nth(1).unwrap().starts_with("phi\t0\ta\t"));
        let back = TopicModel::from_text(&text).unwrap();
        assert_eq!(back.phi, m.phi);
        assert_eq!(back.theta, m.theta);
        assert_eq!(back.to_text(), text);
        assert!(TopicModel::from_text("LDA-MODEL v2").is_err());
    }

    #[test]
    fn fold_in() {
        let (docs, vocab) = corpus(&["a a b b", "c c d d", "a b a b", "c d c d"]);
        let v = bow_vectors(&docs, &vocab);
        let m = fit_lda(&v, &vocab, &quick(2, 1)).unwrap();
        let empty = DocVector { doc_id: "x".into(), entries: vec![] };
        assert_eq!(infer_theta(&m, &empty, &vocab.digest(), 100, 0).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(infer_theta(&m, &v[0], "other", 100, 0), Err(TopicError::VocabMismatch { .. })));
        let one = fit_lda(&v, &vocab, &quick(1, 1)).unwrap();
        assert_eq!(infer_theta(&one, &v[0], &vocab.digest(), 100, 0).unwrap(), vec![1.0]);
        let th = infer_theta(&m, &v[1], &vocab.digest(), 100, 9).unwrap();
        assert!((th.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_topic_examples() {
        assert_eq!(dominant_topic(&[0.7, 0.3]), (0, 0.7));
        assert_eq!(dominant_topic(&[0.5, 0.5]), (0, 0.5));
        assert_eq!(dominant_topic(&[0.1, 0.2, 0.7]), (2, 0.7));
    }

    fn toy_model() -> TopicModel {
        TopicModel {
            config: LdaConfig::new(2, 0),
            terms: vec!["a".into(), "b".into(), "c".into()],
            vocab_digest: "x".into(),
            phi: vec![vec![0.2, 0.5, 0.3], vec![0.4, 0.2, 0.4]],
            doc_ids: vec!["d0".into(), "d1".into()],
            theta: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
        }
    }

    #[test]
    fn keywords() {
        let m = toy_model();
        let kw = top_keywords(&m, 1, 10).unwrap();
        assert_eq!(kw.len(), 3);
        assert_eq!(kw[0], ("a".to_string(), 0.4));
        assert_eq!(kw[1], ("c".to_string(), 0.4));
        assert!(kw.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(top_keywords(&m, 2, 10).is_err());
        assert_eq!(format_keywords(&[("respiratory signs and symptoms".into(), 0.027)]), "respiratory signs and symptoms (0.027)");
    }

    #[test]
    fn representatives() {
        let a = vec![
            TopicAssignment::from_theta("x", &[0.8, 0.2]),
            TopicAssignment::from_theta("y", &[0.95, 0.05]),
            TopicAssignment::from_theta("z", &[0.79, 0.21]),
            TopicAssignment::from_theta("w", &[0.1, 0.9]),
        ];
        assert_eq!(representative_docs(&a, 0, 0.80), vec!["y", "x"]);
        assert!(representative_docs(&a, 1, 0.95).is_empty());
        let ones: Vec<_> = ["p", "q"].iter().map(|id| TopicAssignment::from_theta(id, &[1.0])).collect();
        assert_eq!(representative_docs(&ones, 0, 0.80).len(), 2);
    }

    #[test]
    fn permutation_equivariance() {
        let m = toy_model();
        let p = m.permuted(&[1, 0]);
        let before = m.assignments();
        let after = p.assignments();
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(a.dominant_topic, 1 - b.dominant_topic);
            assert_eq!(a.contribution, b.contribution);
        }
        assert_eq!(top_keywords(&p, 0, 3).unwrap(), top_keywords(&m, 1, 3).unwrap());
    }

    /// Brute-force UMass straight from the formula.
    fn umass_oracle(top: &[&str], docs: &[Vec<String>]) -> f64 {
        let has = |d: &Vec<String>, w: &str| d.iter().any(|t| t == w);
        let mut s = 0.0;
        for j in 1..top.len() {
            for i in 0..j {
                let dj = docs.iter().filter(|d| has(d, top[j])).count() as f64;
                let dij = docs.iter().filter(|d| has(d, top[i]) && has(d, top[j])).count() as f64;
                s += ((dij + 1.0) / dj).ln();
            }
        }
        s
    }

    #[test]
    fn umass_examples() {
        let (docs, vocab) = corpus(&["a b", "a b c", "b a"]);
        let model = TopicModel {
            config: LdaConfig::new(1, 0),
            terms: vocab.terms().to_vec(),
            vocab_digest: vocab.digest(),
            phi: vec![vec![0.5, 0.4, 0.1]],
            doc_ids: vec![],
            theta: vec![],
        };
        let bow = bow_vectors(&docs, &vocab);
        let s = coherence_umass(&model, &bow, 2);
        assert!((s.per_topic[0] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((s.per_topic[0] - 0.28768207245178).abs() < 1e-9);

        let doubled: Vec<_> = docs.iter().chain(&docs).cloned().collect();
        let bow2 = bow_vectors(&doubled, &vocab);
        let toks: Vec<Vec<String>> = doubled.iter().map(|d| d.1.clone()).collect();
        let s2 = coherence_umass(&model, &bow2, 3);
        assert!((s2.per_topic[0] - umass_oracle(&["a", "b", "c"], &toks)).abs() < 1e-12);
    }

    /// Windows listed explicitly, then counted.
    fn cv_oracle(streams: &[Vec<String>], top: &[&str], window: usize) -> f64 {
        let mut windows: Vec<&[String]> = Vec::new();
        for s in streams {
            if s.is_empty() {
                continue;
            }
            if s.len() <= window {
                windows.push(s);
            } else {
                for i in 0..=s.len() - window {
                    windows.push(&s[i..i + window]);
                }
            }
        }
        let nw = windows.len() as f64;
        let p = |ws: &[&str]| windows.iter().filter(|w| ws.iter().all(|t| w.iter().any(|x| x == t))).count() as f64 / nw;
        let n = top.len();
        let vecs: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| npmi(p(&[top[i], top[j]]), p(&[top[i]]), p(&[top[j]]))).collect())
            .collect();
        let sum: Vec<f64> = (0..n).map(|j| vecs.iter().map(|v| v[j]).sum()).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        vecs.iter()
            .map(|v| v.iter().zip(&sum).map(|(a, b)| a * b).sum::<f64>() / (norm(v) * norm(&sum)))
            .sum::<f64>()
            / n as f64
    }

    fn streams(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter().map(|d| d.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn cv_perfect_cooccurrence() {
        let s = streams(&["a b c x", "y z", "c b a", "x y", "a c b z"]);
        let score = cv_for_terms(&s, &["a", "b", "c"], CV_WINDOW);
        assert!((score - 1.0).abs() < 1e-6);
        assert_eq!(cv_for_terms(&s, &["a"], CV_WINDOW), 1.0);
    }

    #[test]
    fn cv_matches_window_oracle() {
        let s = streams(&["a b c d a b", "c d e f", "a e", "b f c a d", "f f e"]);
        for window in [2, 3, 110] {
            let top = ["a", "b", "c", "e"];
            let got = cv_for_terms(&s, &top, window);
            assert!((got - cv_oracle(&s, &top, window)).abs() < 1e-12, "window {window}");
            assert!((-1.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn scan_rejects_bad_ranges() {
        let (docs, vocab) = corpus(&["a b", "c d"]);
        let v = bow_vectors(&docs, &vocab);
        let toks: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
        let c = CoherenceCorpus { vectors: &v, bow: &v, streams: &toks, vocab: &vocab };
        let t = quick(2, 0);
        assert!(coherence_scan(&c, &[], &t, CoherenceMeasure::Cv, Execution::Sequential).is_err());
        assert!(coherence_scan(&c, &[1, 2], &t, CoherenceMeasure::Cv, Execution::Sequential).is_err());
        let r = coherence_scan(&c, &[3], &t, CoherenceMeasure::Cv, Execution::Sequential).unwrap();
        assert_eq!(r.selected_k, 3);
    }

    #[test]
    fn trajectories() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let labels = vec![
            EncounterLabels { encounter_id: "e2".into(), patient_id: "p".into(), admit_date: d("2020-03-01"), diag_dominant: Some(1), proc_dominant: Some(0) },
            EncounterLabels { encounter_id: "e1".into(), patient_id: "p".into(), admit_date: d("2020-01-01"), diag_dominant: Some(0), proc_dominant: Some(2) },
            EncounterLabels { encounter_id: "e3".into(), patient_id: "q".into(), admit_date: d("2020-01-01"), diag_dominant: Some(0), proc_dominant: None },
        ];
        let t = topic_trajectory("p", &labels).unwrap();
        assert_eq!(t.iter().map(|r| r.encounter_id.as_str()).collect::<Vec<_>>(), vec!["e1", "e2"]);
        assert_eq!(topic_trajectory("q", &labels).unwrap().len(), 1);
        assert_eq!(topic_trajectory("r", &labels), Err(TopicError::UnknownPatient("r".into())));
    }

    proptest! {
        #[test]
        fn umass_matches_oracle(raw in proptest::collection::vec("[a-e]( [a-e]){0,5}", 2..8), seed in 0u64..5) {
            let refs: Vec<&str> = raw.iter().map(String::as_str).collect();
            let (docs, vocab) = corpus(&refs);
            let model = fit_lda(&bow_vectors(&docs, &vocab), &vocab, &quick(2, seed)).unwrap();
            let toks: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
            let all = coherence_umass(&model, &bow_vectors(&docs, &vocab), 4);
            for t in 0..2 {
                let top: Vec<String> = top_keywords(&model, t, 4).unwrap().into_iter().map(|x| x.0).collect();
                let top: Vec<&str> = top.iter().map(String::as_str).collect();
                prop_assert!((all.per_topic[t] - umass_oracle(&top, &toks)).abs() < 1e-9);
            }
        }

        #[test]
        fn cv_oracle_agreement(raw in proptest::collection::vec("[a-f]( [a-f]){0,9}", 1..6), window in 1usize..6) {
            let s: Vec<Vec<String>> = raw.iter().map(|d| d.split_whitespace().map(String::from).collect()).collect();
            let top = ["a", "b", "c"];
            let present = |t: &str| s.iter().any(|d| d.iter().any(|x| x == t));
            prop_assume!(top.iter().all(|t| present(t)));
            let got = cv_for_terms(&s, &top, window);
            let want = cv_oracle(&s, &top, window);
            prop_assert!((got - want).abs() < 1e-9 || (got.is_nan() && want.is_nan()));
        }
    }
}
