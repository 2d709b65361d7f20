//! Synthetic corpora and cohorts with known ground truth.
//!
//! [`generate_lda_corpus`] samples documents from a known LDA model.
//! [`generate_cohort`] writes a whole cohort in the ingest file formats.
//! Its diagnostic codes and procedure findings come from two independent
//! LDA generators, and its length-of-stay class is planted as a noisy
//! function of the two true dominant topics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClassHistogram, LosCategory};
use crate::textprep::{lexicon_lines, BUNDLED_GAZETTEER};
use crate::util::argmax;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A draw from a symmetric Dirichlet via normalized Gamma variates. If every
/// variate underflows, one coordinate gets all the mass.
pub fn dirichlet(rng: &mut ChaCha8Rng, concentration: f64, dim: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut x: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 && total.is_finite() {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        x = vec![0.0; dim];
        x[rng.random_range(0..dim)] = 1.0;
    }
    x
}

/// Splits `0..n` into `k` contiguous blocks whose sizes differ by at most 1.
pub fn block_ranges(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn disjoint_phi(k: usize, v: usize) -> Vec<Vec<f64>> {
    block_ranges(v, k)
        .into_iter()
        .map(|r| {
            let p = 1.0 / r.len() as f64;
            (0..v).map(|w| if r.contains(&w) { p } else { 0.0 }).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaCorpusSpec {
    pub true_k: usize,
    pub vocab_size: usize,
    pub n_docs: usize,
    pub doc_len: usize,
    pub alpha: f64,
    /// Topic-word concentration when not disjoint.
    pub beta: f64,
    pub seed: u64,
    pub disjoint: bool,
}

impl LdaCorpusSpec {
    pub fn disjoint(true_k: usize, vocab_size: usize, n_docs: usize, doc_len: usize, seed: u64) -> Self {
        Self { true_k, vocab_size, n_docs, doc_len, alpha: 0.1, beta: 0.1, seed, disjoint: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaManifest {
    pub spec: LdaCorpusSpec,
    pub vocabulary: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub token_count: usize,
}

pub type SynthDoc = (String, Vec<String>);

pub fn word_name(i: usize) -> String {
    format!("w{i:03}")
}

pub fn generate_lda_corpus(spec: &LdaCorpusSpec) -> Result<(Vec<SynthDoc>, LdaManifest), SynthError> {
    let (k, v) = (spec.true_k, spec.vocab_size);
    if k == 0 || v == 0 {
        return Err(SynthError::BadDimensions("true_k and vocab_size must be positive".into()));
    }
    if spec.disjoint && v < k {
        return Err(SynthError::BadDimensions(format!("vocab_size {v} below true_k {k}")));
    }
    if !(spec.alpha > 0.0 && spec.beta > 0.0) {
        return Err(SynthError::BadDimensions("alpha and beta must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi = if spec.disjoint { disjoint_phi(k, v) } else { (0..k).map(|_| dirichlet(&mut rng, spec.beta, v)).collect() };
    let vocabulary: Vec<String> = (0..v).map(word_name).collect();
    let word_dists: Vec<WeightedIndex<f64>> = phi.iter().map(|r| WeightedIndex::new(r).unwrap()).collect();
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut theta = Vec::with_capacity(spec.n_docs);
    for d in 0..spec.n_docs {
        let th = if k == 1 { vec![1.0] } else { dirichlet(&mut rng, spec.alpha, k) };
        let topic_dist = WeightedIndex::new(&th).unwrap();
        let tokens = (0..spec.doc_len)
            .map(|_| vocabulary[word_dists[topic_dist.sample(&mut rng)].sample(&mut rng)].clone())
            .collect();
        docs.push((format!("doc{d:04}"), tokens));
        theta.push(th);
    }
    let manifest =
        LdaManifest { spec: spec.clone(), vocabulary, phi, theta, token_count: spec.n_docs * spec.doc_len };
    Ok((docs, manifest))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn check_dims(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(), SynthError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(SynthError::DimensionMismatch(format!("{} vs {} topics", a.len(), b.len())));
    }
    let v = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != v) {
        return Err(SynthError::DimensionMismatch("rows differ in vocabulary size".into()));
    }
    Ok(())
}

const EXHAUSTIVE_MAX_K: usize = 8;

/// `perm[i]` is the estimated topic matched to true topic `i`, minimizing
/// summed total-variation distance. Exhaustive up to K=8, greedy beyond.
pub fn match_topics(true_phi: &[Vec<f64>], est_phi: &[Vec<f64>]) -> Result<Vec<usize>, SynthError> {
    check_dims(true_phi, est_phi)?;
    let k = true_phi.len();
    let cost: Vec<Vec<f64>> =
        true_phi.iter().map(|t| est_phi.iter().map(|e| total_variation(t, e)).collect()).collect();
    if k <= EXHAUSTIVE_MAX_K {
        let mut best = (f64::INFINITY, Vec::new());
        let mut perm: Vec<usize> = (0..k).collect();
        permute(&mut perm, 0, &cost, &mut best);
        return Ok(best.1);
    }
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| cost[a.0][a.1].total_cmp(&cost[b.0][b.1]).then(a.cmp(b)));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (i, j) in pairs {
        if perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
        }
    }
    Ok(perm)
}

fn permute(perm: &mut Vec<usize>, depth: usize, cost: &[Vec<f64>], best: &mut (f64, Vec<usize>)) {
    if depth == perm.len() {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if total < best.0 {
            *best = (total, perm.clone());
        }
        return;
    }
    for i in depth..perm.len() {
        perm.swap(depth, i);
        permute(perm, depth + 1, cost, best);
        perm.swap(depth, i);
    }
}

/// Mean total-variation distance over optimally matched topic pairs.
pub fn topic_recovery_score(true_phi: &[Vec<f64>], est_phi: &[Vec<f64>]) -> Result<f64, SynthError> {
    let perm = match_topics(true_phi, est_phi)?;
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| total_variation(&true_phi[i], &est_phi[j])).sum();
    Ok(total / true_phi.len() as f64)
}

/// Length-of-stay class planted for a (diagnostic, procedure) topic pair.
/// Cells are dealt round-robin starting at `Short`, so with 4 x 4 topics
/// `Short` gets four cells and every other class three. Keeping the map
/// close to balanced leaves each class enough clean positives for one-vs-rest
/// AUC to stay well above what the flip noise alone allows.
pub fn planted_class(diag_topic: usize, proc_topic: usize, k_proc: usize) -> LosCategory {
    LosCategory::from_code((diag_topic * k_proc + proc_topic + 1) % LosCategory::ALL.len()).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_encounters: usize,
    pub k_diag: usize,
    pub k_proc: usize,
    pub seed: u64,
    pub flip_prob: f64,
    pub negation_rate: f64,
    /// Document-topic concentration of both generators.
    pub alpha: f64,
    pub diag_vocab_size: usize,
    pub codes_per_encounter: (usize, usize),
    pub findings_per_note: (usize, usize),
    pub encounters_per_patient: f64,
    pub empty_code_rate: f64,
    pub unmapped_code_rate: f64,
    pub sectionless_note_rate: f64,
    pub orphan_note_rate: f64,
}

impl CohortSpec {
    pub fn new(n_encounters: usize, k_diag: usize, k_proc: usize, seed: u64) -> Self {
        Self {
            n_encounters,
            k_diag,
            k_proc,
            seed,
            flip_prob: 0.1,
            negation_rate: 0.2,
            alpha: 0.03,
            diag_vocab_size: 12 * k_diag,
            codes_per_encounter: (10, 16),
            findings_per_note: (8, 14),
            encounters_per_patient: 3.0,
            empty_code_rate: 0.01,
            unmapped_code_rate: 0.02,
            sectionless_note_rate: 0.02,
            orphan_note_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub k: usize,
    pub vocabulary: Vec<String>,
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterTruth {
    pub encounter_id: String,
    pub patient_id: String,
    pub admit_date: NaiveDate,
    pub diag_theta: Vec<f64>,
    pub proc_theta: Vec<f64>,
    pub diag_dominant: usize,
    pub proc_dominant: usize,
    pub planted_class: LosCategory,
    pub label: LosCategory,
    pub flipped: bool,
    pub los_days: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedCounts {
    pub encounter_rows: usize,
    pub encounters_with_codes: usize,
    pub dropped_no_codes: usize,
    pub notes: usize,
    pub orphan_notes: usize,
    pub sectionless_notes: usize,
    pub unmapped_codes: usize,
    pub ccsr_rows: usize,
    pub diag_vocab_size: usize,
    pub proc_vocab_size: usize,
    pub patients: usize,
    pub class_histogram: ClassHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub spec: CohortSpec,
    pub diag: GeneratorTruth,
    pub proc: GeneratorTruth,
    /// LOS day ranges per class name as sampled: inclusive bounds.
    pub los_rule: BTreeMap<String, (i64, i64)>,
    pub encounters: Vec<EncounterTruth>,
    /// Patient id → encounter ids in admission order.
    pub trajectories: BTreeMap<String, Vec<String>>,
    pub counts: EmittedCounts,
}

impl GeneratorManifest {
    /// Share of encounters whose label equals the planted rule.
    pub fn planted_accuracy(&self) -> f64 {
        let hits = self.encounters.iter().filter(|e| e.label == e.planted_class).count();
        hits as f64 / self.encounters.len() as f64
    }

    pub fn truth(&self, encounter_id: &str) -> Option<&EncounterTruth> {
        self.encounters.iter().find(|e| e.encounter_id == encounter_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub encounters_csv: String,
    pub notes_jsonl: String,
    pub ccsr_csv: String,
    pub manifest: GeneratorManifest,
}

pub const HEART_FAILURE_CODE: &str = "I50.9";
const UNMAPPED_CODE: &str = "Z99.89";
const VERY_LONG_MAX_DAYS: i64 = 40;

const SYLLABLES: [&str; 20] =
    ["ba", "ce", "di", "fo", "gu", "ka", "le", "mi", "no", "pu", "ra", "se", "ti", "vo", "zu", "ha", "je", "ly", "qo", "xe"];
const SUFFIXES: [&str; 5] = ["itis", "osis", "emia", "algia", "opathy"];

/// Unique pronounceable pseudo-word for diagnostic category `i`.
pub fn pseudo_term(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[(i / n) % n], SYLLABLES[i % n], SUFFIXES[(i / (n * n)) % SUFFIXES.len()])
}

/// Single-word disease terms of the bundled gazetteer, sorted.
pub fn procedure_vocabulary() -> Vec<String> {
    let mut v: Vec<String> =
        lexicon_lines(BUNDLED_GAZETTEER).filter(|l| !l.starts_with('!') && !l.contains(' ')).collect();
    v.sort();
    v.dedup();
    v
}

fn diag_code(i: usize) -> String {
    format!("U{:02}.{}", 10 + i / 10, i % 10)
}

const NEGATED: [&str; 3] = ["No {} is visualized.", "There is no {}.", "Negative for {}."];
const AFFIRMED: [&str; 4] = ["There is mild {}.", "There is moderate {}.", "Findings consistent with {}.", "{} is noted."];
const FILLER: [&str; 3] = ["Lines and tubes are unchanged.", "Technique is adequate.", "Comparison is made to the prior study."];
const PROCEDURES: [&str; 4] = ["CHEST X-RAY (PA, LATERAL)", "CT ABDOMEN AND PELVIS", "ECHOCARDIOGRAM", "CT CHEST WITHOUT CONTRAST"];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

fn finding_sentence(rng: &mut ChaCha8Rng, term: &str, negation_rate: f64) -> String {
    let template = if rng.random_bool(negation_rate) { NEGATED.choose(rng) } else { AFFIRMED.choose(rng) };
    let s = template.unwrap().replace("{}", term);
    capitalize(&s)
}

fn report(rng: &mut ChaCha8Rng, findings: &[String]) -> String {
    let procedure = PROCEDURES.choose(rng).unwrap();
    let body = findings.join(" ");
    let filler = FILLER.choose(rng).unwrap();
    match rng.random_range(0..10) {
        0..=6 => format!("PROCEDURE: {procedure}.\n\nFINDINGS: {filler}\n\nIMPRESSION: {body}\n"),
        7..=8 => format!("EXAM: {procedure}.\n\nCONCLUSION: {body}\n"),
        _ => format!("PROCEDURE: {procedure}.\n\nFINDINGS: {body}\n"),
    }
}

fn sample_words(rng: &mut ChaCha8Rng, theta: &[f64], phi: &[WeightedIndex<f64>], n: usize) -> Vec<usize> {
    let topic = WeightedIndex::new(theta).unwrap();
    (0..n).map(|_| phi[topic.sample(rng)].sample(rng)).collect()
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<SyntheticCohort, SynthError> {
    let bad = |m: String| Err(SynthError::BadDimensions(m));
    if spec.n_encounters < 50 {
        return bad(format!("n_encounters {} below 50", spec.n_encounters));
    }
    let proc_vocab = procedure_vocabulary();
    if spec.k_diag < 1 || spec.k_proc < 1 || spec.diag_vocab_size < spec.k_diag || proc_vocab.len() < spec.k_proc {
        return bad("topic counts must be positive and no larger than their vocabularies".into());
    }
    if spec.codes_per_encounter.0 == 0 || spec.findings_per_note.0 == 0 {
        return bad("each encounter needs at least one code and one finding".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let diag_vocab: Vec<String> = (0..spec.diag_vocab_size).map(pseudo_term).collect();
    let diag = GeneratorTruth { k: spec.k_diag, phi: disjoint_phi(spec.k_diag, diag_vocab.len()), vocabulary: diag_vocab };
    let proc = GeneratorTruth { k: spec.k_proc, phi: disjoint_phi(spec.k_proc, proc_vocab.len()), vocabulary: proc_vocab };
    let diag_words: Vec<WeightedIndex<f64>> = diag.phi.iter().map(|r| WeightedIndex::new(r).unwrap()).collect();
    let proc_words: Vec<WeightedIndex<f64>> = proc.phi.iter().map(|r| WeightedIndex::new(r).unwrap()).collect();

    let n_patients = ((spec.n_encounters as f64 / spec.encounters_per_patient).ceil() as usize).max(1);
    let base = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let mut counts = EmittedCounts::default();
    let mut truths = Vec::with_capacity(spec.n_encounters);
    let mut enc_rows: Vec<[String; 5]> = Vec::new();
    let mut notes: Vec<(String, String)> = Vec::new();

    for i in 0..spec.n_encounters {
        let encounter_id = format!("E{i:05}");
        let patient_id = format!("P{:04}", rng.random_range(0..n_patients));
        let admit_date = base + Days::new(rng.random_range(0..1500));
        let draw = |rng: &mut ChaCha8Rng, k| if k == 1 { vec![1.0] } else { dirichlet(rng, spec.alpha, k) };
        let diag_theta = draw(&mut rng, spec.k_diag);
        let proc_theta = draw(&mut rng, spec.k_proc);

        let n_codes = rng.random_range(spec.codes_per_encounter.0..=spec.codes_per_encounter.1);
        let mut words = sample_words(&mut rng, &diag_theta, &diag_words, n_codes);
        words.sort_unstable();
        words.dedup();
        let mut codes: Vec<String> = words.iter().map(|&w| diag_code(w)).collect();
        codes.push(HEART_FAILURE_CODE.to_string());
        if rng.random_bool(spec.unmapped_code_rate) {
            codes.push(UNMAPPED_CODE.to_string());
            counts.unmapped_codes += 1;
        }

        let n_notes = if rng.random_bool(0.3) { 2 } else { 1 };
        for _ in 0..n_notes {
            let n = rng.random_range(spec.findings_per_note.0..=spec.findings_per_note.1);
            let findings: Vec<String> = sample_words(&mut rng, &proc_theta, &proc_words, n)
                .into_iter()
                .map(|w| finding_sentence(&mut rng, &proc.vocabulary[w], spec.negation_rate))
                .collect();
            notes.push((encounter_id.clone(), report(&mut rng, &findings)));
        }
        if rng.random_bool(spec.sectionless_note_rate) {
            notes.push((encounter_id.clone(), "Patient tolerated the procedure well.".to_string()));
            counts.sectionless_notes += 1;
        }

        let diag_dominant = argmax(&diag_theta);
        let proc_dominant = argmax(&proc_theta);
        let planted = planted_class(diag_dominant, proc_dominant, spec.k_proc);
        let flipped = rng.random_bool(spec.flip_prob);
        let label = if flipped {
            let others: Vec<LosCategory> = LosCategory::ALL.iter().copied().filter(|&c| c != planted).collect();
            *others.choose(&mut rng).unwrap()
        } else {
            planted
        };
        let (lo, hi) = label.day_range();
        let los_days = rng.random_range(lo..=hi.unwrap_or(VERY_LONG_MAX_DAYS));
        let discharge = admit_date + Days::new(los_days as u64);
        enc_rows.push([
            encounter_id.clone(),
            patient_id.clone(),
            admit_date.to_string(),
            discharge.to_string(),
            codes.join(";"),
        ]);
        truths.push(EncounterTruth {
            encounter_id,
            patient_id,
            admit_date,
            diag_theta,
            proc_theta,
            diag_dominant,
            proc_dominant,
            planted_class: planted,
            label,
            flipped,
            los_days,
        });
    }

    let n_dropped = (spec.n_encounters as f64 * spec.empty_code_rate).round() as usize;
    for j in 0..n_dropped {
        let admit = base + Days::new(rng.random_range(0..1500));
        enc_rows.push([
            format!("X{j:05}"),
            format!("P{:04}", rng.random_range(0..n_patients)),
            admit.to_string(),
            (admit + Days::new(rng.random_range(0..10))).to_string(),
            String::new(),
        ]);
    }
    let n_orphans = (spec.n_encounters as f64 * spec.orphan_note_rate).round() as usize;
    for j in 0..n_orphans {
        let term = proc.vocabulary.choose(&mut rng).unwrap().clone();
        let findings = vec![finding_sentence(&mut rng, &term, spec.negation_rate)];
        notes.push((format!("ORPHAN{j:04}"), report(&mut rng, &findings)));
    }

    let mut encounters_csv = csv::Writer::from_writer(Vec::new());
    encounters_csv
        .write_record(["encounter_id", "patient_id", "admit_date", "discharge_date", "icd10_codes"])
        .and_then(|_| enc_rows.iter().try_for_each(|r| encounters_csv.write_record(r)))
        .expect("in-memory csv");
    let encounters_csv = String::from_utf8(encounters_csv.into_inner().expect("in-memory csv")).unwrap();

    let mut notes_jsonl = String::new();
    for (id, text) in &notes {
        let line = serde_json::json!({ "encounter_id": id, "text": text });
        writeln!(notes_jsonl, "{line}").unwrap();
    }

    let mut ccsr = csv::Writer::from_writer(Vec::new());
    ccsr.write_record(["icd10_code", "ccsr_description"]).expect("in-memory csv");
    for (i, term) in diag.vocabulary.iter().enumerate() {
        ccsr.write_record([diag_code(i).as_str(), capitalize(term).as_str()]).expect("in-memory csv");
    }
    ccsr.write_record([HEART_FAILURE_CODE, "Heart failure"]).expect("in-memory csv");
    let ccsr_csv = String::from_utf8(ccsr.into_inner().expect("in-memory csv")).unwrap();

    let mut by_patient: BTreeMap<String, Vec<&EncounterTruth>> = BTreeMap::new();
    for t in &truths {
        by_patient.entry(t.patient_id.clone()).or_default().push(t);
    }
    let trajectories = by_patient
        .into_iter()
        .map(|(p, mut ts)| {
            ts.sort_by(|a, b| a.admit_date.cmp(&b.admit_date).then_with(|| a.encounter_id.cmp(&b.encounter_id)));
            (p, ts.into_iter().map(|t| t.encounter_id.clone()).collect())
        })
        .collect::<BTreeMap<_, Vec<_>>>();

    counts.encounter_rows = enc_rows.len();
    counts.encounters_with_codes = spec.n_encounters;
    counts.dropped_no_codes = n_dropped;
    counts.notes = notes.len();
    counts.orphan_notes = n_orphans;
    counts.ccsr_rows = diag.vocabulary.len() + 1;
    counts.diag_vocab_size = diag.vocabulary.len();
    counts.proc_vocab_size = proc.vocabulary.len();
    counts.patients = trajectories.len();
    counts.class_histogram = ClassHistogram::from_labels(truths.iter().map(|t| t.label));

    let los_rule = LosCategory::ALL
        .iter()
        .map(|c| {
            let (lo, hi) = c.day_range();
            (c.name().to_string(), (lo, hi.unwrap_or(VERY_LONG_MAX_DAYS)))
        })
        .collect();
    let manifest =
        GeneratorManifest { spec: spec.clone(), diag, proc, los_rule, encounters: truths, trajectories, counts };
    Ok(SyntheticCohort { encounters_csv, notes_jsonl, ccsr_csv, manifest })
}

pub const ENCOUNTERS_FILE: &str = "encounters.csv";
pub const NOTES_FILE: &str = "notes.jsonl";
pub const CCSR_FILE: &str = "ccsr.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl SyntheticCohort {
    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n"
    }

    /// Writes the four cohort files into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| SynthError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let manifest = self.manifest_json();
        for (name, body) in [
            (ENCOUNTERS_FILE, &self.encounters_csv),
            (NOTES_FILE, &self.notes_jsonl),
            (CCSR_FILE, &self.ccsr_csv),
            (MANIFEST_FILE, &manifest),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io(&path))?;
        }
        Ok(())
    }
}
