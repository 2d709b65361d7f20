//! Vocabulary construction and sparse BOW / TF-IDF vectors.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorizeError {
    #[error("corpus has no non-empty document")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Tfidf,
    Bow,
}

impl Weighting {
    pub const ALL: [Weighting; 2] = [Weighting::Tfidf, Weighting::Bow];

    pub fn name(self) -> &'static str {
        match self {
            Weighting::Tfidf => "tfidf",
            Weighting::Bow => "bow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    /// Sorted vocabulary of all terms with document frequency at least
    /// `min_doc_freq`. `n_docs` counts every input document.
    pub fn build<D, S>(docs: &[D], min_doc_freq: usize) -> Result<Self, VectorizeError>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        if docs.iter().all(|d| d.as_ref().is_empty()) {
            return Err(VectorizeError::EmptyCorpus);
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.as_ref().iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let (terms, doc_freq): (Vec<String>, Vec<usize>) = df
            .into_iter()
            .filter(|&(_, n)| n >= min_doc_freq.max(1))
            .map(|(t, n)| (t.to_string(), n))
            .unzip();
        if terms.is_empty() {
            return Err(VectorizeError::EmptyCorpus);
        }
        Ok(Self::from_parts(terms, doc_freq, docs.len()))
    }

    pub fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>, n_docs: usize) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { terms, index, doc_freq, n_docs }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, id: usize) -> &str {
        &self.terms[id]
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, id: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[id] as f64)).ln() + 1.0
    }

    /// Short content hash over the term list.
    pub fn digest(&self) -> String {
        sha256_hex(self.terms.join("\n").as_bytes())[..16].to_string()
    }
}

/// Sparse vector with strictly increasing term ids and positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVector {
    pub doc_id: String,
    pub entries: Vec<(usize, f64)>,
}

impl DocVector {
    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Term counts of one document; out-of-vocabulary tokens are counted
/// separately.
fn counts<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> (BTreeMap<usize, usize>, usize) {
    let mut counts = BTreeMap::new();
    let mut oov = 0;
    for t in tokens {
        match vocab.id(t.as_ref()) {
            Some(id) => *counts.entry(id).or_default() += 1,
            None => oov += 1,
        }
    }
    (counts, oov)
}

pub fn bow_vector<S: AsRef<str>>(doc_id: &str, tokens: &[S], vocab: &Vocabulary) -> DocVector {
    let (c, _) = counts(tokens, vocab);
    DocVector { doc_id: doc_id.to_string(), entries: c.into_iter().map(|(id, n)| (id, n as f64)).collect() }
}

pub fn tfidf_vector<S: AsRef<str>>(doc_id: &str, tokens: &[S], vocab: &Vocabulary) -> DocVector {
    let (c, _) = counts(tokens, vocab);
    DocVector {
        doc_id: doc_id.to_string(),
        entries: c.into_iter().map(|(id, n)| (id, n as f64 * vocab.idf(id))).collect(),
    }
}

pub fn bow_vectors<S: AsRef<str>>(docs: &[(String, Vec<S>)], vocab: &Vocabulary) -> Vec<DocVector> {
    docs.iter().map(|(id, t)| bow_vector(id, t, vocab)).collect()
}

pub fn tfidf_vectors<S: AsRef<str>>(docs: &[(String, Vec<S>)], vocab: &Vocabulary) -> Vec<DocVector> {
    docs.iter().map(|(id, t)| tfidf_vector(id, t, vocab)).collect()
}

pub fn vectors<S: AsRef<str>>(docs: &[(String, Vec<S>)], vocab: &Vocabulary, weighting: Weighting) -> Vec<DocVector> {
    match weighting {
        Weighting::Tfidf => tfidf_vectors(docs, vocab),
        Weighting::Bow => bow_vectors(docs, vocab),
    }
}

/// Total out-of-vocabulary tokens across documents.
pub fn oov_count<S: AsRef<str>>(docs: &[(String, Vec<S>)], vocab: &Vocabulary) -> usize {
    docs.iter().map(|(_, t)| counts(t, vocab).1).sum()
}

/// `doc_id<TAB>term_id:weight,...` lines.
pub fn to_tsv(vectors: &[DocVector]) -> String {
    let mut out = String::new();
    for v in vectors {
        out.push_str(&v.doc_id);
        out.push('\t');
        for (i, (id, w)) in v.entries.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{id}:{w}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(raw: &[&[&str]]) -> Vec<(String, Vec<String>)> {
        raw.iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i}"), d.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    fn tokens_only(d: &[(String, Vec<String>)]) -> Vec<Vec<String>> {
        d.iter().map(|(_, t)| t.clone()).collect()
    }

    #[test]
    fn vocabulary_examples() {
        let d = docs(&[&["a", "b"], &["b"]]);
        let v = Vocabulary::build(&tokens_only(&d), 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.doc_freq(v.id("a").unwrap()), 1);
        assert_eq!(v.doc_freq(v.id("b").unwrap()), 2);
        let v2 = Vocabulary::build(&tokens_only(&d), 2).unwrap();
        assert_eq!(v2.terms(), &["b".to_string()]);
        let empty: Vec<Vec<String>> = vec![vec![], vec![]];
        assert_eq!(Vocabulary::build(&empty, 1), Err(VectorizeError::EmptyCorpus));
    }

    #[test]
    fn bow_examples() {
        let d = docs(&[&["b", "b", "a"], &[]]);
        let v = Vocabulary::build(&tokens_only(&d), 1).unwrap();
        let vecs = bow_vectors(&d, &v);
        assert_eq!(vecs[0].entries, vec![(0, 1.0), (1, 2.0)]);
        assert!(vecs[1].is_empty());
        assert_eq!(oov_count(&docs(&[&["a", "zzz"]]), &v), 1);
    }

    #[test]
    fn tfidf_examples() {
        let single = docs(&[&["x", "x", "y"]]);
        let v = Vocabulary::build(&tokens_only(&single), 1).unwrap();
        let bow = bow_vectors(&single, &v);
        let tf = tfidf_vectors(&single, &v);
        assert_eq!(bow, tf);

        let two = docs(&[&["a", "a", "a", "c"], &["c"]]);
        let v = Vocabulary::build(&tokens_only(&two), 1).unwrap();
        assert_eq!(v.idf(v.id("c").unwrap()), 1.0);
        let tf = tfidf_vectors(&two, &v);
        // 3 * (ln(3/2) + 1)
        assert!((tf[0].entries[0].1 - 4.216395324324).abs() < 1e-9);
    }

    #[test]
    fn tsv_format() {
        let d = docs(&[&["b", "b", "a"]]);
        let v = Vocabulary::build(&tokens_only(&d), 1).unwrap();
        assert_eq!(to_tsv(&bow_vectors(&d, &v)), "d0\t0:1,1:2\n");
    }

    fn corpus() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..12),
            1..10,
        )
        .prop_map(|ds| {
            ds.into_iter()
                .enumerate()
                .map(|(i, d)| (format!("d{i}"), d.into_iter().map(String::from).collect()))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn vector_invariants(d in corpus()) {
            let v = Vocabulary::build(&tokens_only(&d), 1).unwrap();
            let bow = bow_vectors(&d, &v);
            let tf = tfidf_vectors(&d, &v);
            let total: usize = d.iter().map(|(_, t)| t.len()).sum();
            let mass: f64 = bow.iter().map(DocVector::mass).sum();
            prop_assert_eq!(mass as usize, total);
            for (b, t) in bow.iter().zip(&tf) {
                prop_assert!(b.entries.windows(2).all(|w| w[0].0 < w[1].0));
                let bi: Vec<usize> = b.entries.iter().map(|e| e.0).collect();
                let ti: Vec<usize> = t.entries.iter().map(|e| e.0).collect();
                prop_assert_eq!(bi, ti);
                prop_assert!(t.entries.iter().all(|e| e.1 > 0.0));
            }
            for id in 0..v.len() {
                prop_assert!(v.idf(id) >= 1.0);
                prop_assert!(v.doc_freq(id) >= 1 && v.doc_freq(id) <= v.n_docs());
            }
            prop_assert_eq!(to_tsv(&tf), to_tsv(&tfidf_vectors(&d, &v)));
        }
    }
}
