//! Configuration, stage artifacts, and the end-to-end pipeline.
//!
//! Each stage reads the artifacts of earlier stages from the work
//! directory and writes its own. Text artifacts start with a header line
//! `# <kind> v1 key=value ...` that records the digests of the inputs they
//! were built from. A stage refuses an input whose recorded upstream
//! digests no longer match the files on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CohortDataset, Encounter, LosCategory, Provenance};
use crate::features::{
    assemble_features, smote, split_indices, FeatureError, FeatureMatrix, FeatureMode, FeatureSource, SmoteConfig,
    SplitSpec,
};
use crate::ingest::{load_ccsr_map, load_cohort, IngestError};
use crate::learn::{
    evaluate, train_with, ClassifierKind, ClassifierSpec, EvalReport, ForestParams, LearnError, MlrParams, SvmParams,
    TrainedClassifier,
};
use crate::par::Execution;
use crate::synth::{generate_cohort, CohortSpec, SynthError};
use crate::textprep::{DiseaseGazetteer, DocSource, NegexLexicon, Preprocessor, StopWords};
use crate::topics::{
    coherence_scan, fit_lda, format_keywords, representative_docs, top_keywords, topic_trajectory, CoherenceCorpus,
    CoherenceMeasure, EncounterLabels, LdaConfig, TopicAssignment, TopicError, TopicModel, REPRESENTATIVE_THRESHOLD,
};
use crate::util::{hash64, sha256_hex};
use crate::vectorize::{bow_vectors, vectors, DocVector, VectorizeError, Vocabulary, Weighting};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error in `{field}`: {detail}")]
    Config { field: String, detail: String },
    #[error("missing artifact {path}; run the earlier stage first")]
    MissingArtifact { path: String },
    #[error("stale input {file}: recorded digest {expected}, found {found}")]
    DigestMismatch { file: String, expected: String, found: String },
    #[error("data error in {context}: {detail}")]
    Data { context: String, detail: String },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl PipelineError {
    /// 2 for configuration problems, 3 for data and artifact problems, 4 for
    /// violated internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::MissingArtifact { .. }
            | PipelineError::DigestMismatch { .. }
            | PipelineError::Data { .. } => 3,
            PipelineError::Internal(_) => 4,
        }
    }

    fn config(field: &str, detail: impl ToString) -> Self {
        PipelineError::Config { field: field.to_string(), detail: detail.to_string() }
    }

    fn data(context: impl ToString, detail: impl ToString) -> Self {
        PipelineError::Data { context: context.to_string(), detail: detail.to_string() }
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::data("ingest", e)
    }
}

impl From<VectorizeError> for PipelineError {
    fn from(e: VectorizeError) -> Self {
        PipelineError::data("vectorize", e)
    }
}

impl From<TopicError> for PipelineError {
    fn from(e: TopicError) -> Self {
        match e {
            TopicError::DegenerateConfig(d) => PipelineError::config("topics", d),
            other => PipelineError::data("topics", other),
        }
    }
}

impl From<FeatureError> for PipelineError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::BadFraction(_) => PipelineError::config("features.train_fraction", e),
            FeatureError::BadNeighbors => PipelineError::config("features.k_neighbors", e),
            other => PipelineError::data("features", other),
        }
    }
}

impl From<LearnError> for PipelineError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::BadSpec(d) => PipelineError::config("classifiers", d),
            other => PipelineError::data("learn", other),
        }
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadDimensions(d) => PipelineError::config("synth", d),
            other => PipelineError::data("synth", other),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

// ---- configuration ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub encounters: PathBuf,
    pub notes: PathBuf,
    pub ccsr: PathBuf,
    pub gazetteer: Option<PathBuf>,
    pub negex: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            encounters: "encounters.csv".into(),
            notes: "notes.jsonl".into(),
            ccsr: "ccsr.csv".into(),
            gazetteer: None,
            negex: None,
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicsConfig {
    pub weightings: Vec<Weighting>,
    /// Fixed topic counts; when absent, taken from the coherence scan.
    pub k_diag: Option<usize>,
    pub k_proc: Option<usize>,
    /// Inclusive K range for the coherence scan.
    pub scan: Option<[usize; 2]>,
    pub measure: CoherenceMeasure,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub min_doc_freq: usize,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            weightings: Weighting::ALL.to_vec(),
            k_diag: None,
            k_proc: None,
            scan: None,
            measure: CoherenceMeasure::Cv,
            alpha: None,
            beta: LdaConfig::DEFAULT_BETA,
            iterations: LdaConfig::DEFAULT_ITERATIONS,
            burn_in: LdaConfig::DEFAULT_BURN_IN,
            min_doc_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub mode: FeatureMode,
    pub train_fraction: f64,
    pub stratified: bool,
    pub smote: bool,
    pub smote_before_split: bool,
    pub k_neighbors: usize,
    /// The matrix copied to `features.csv`.
    pub primary_weighting: Weighting,
    pub primary_source: FeatureSource,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Dominant,
            train_fraction: 0.7,
            stratified: true,
            smote: true,
            smote_before_split: false,
            k_neighbors: 5,
            primary_weighting: Weighting::Tfidf,
            primary_source: FeatureSource::Combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifiersConfig {
    pub kinds: Vec<ClassifierKind>,
    pub knn_k: usize,
    pub n_estimators: usize,
    pub mlr: MlrParams,
    pub svm: SvmParams,
    pub rf: ForestParams,
}

impl Default for ClassifiersConfig {
    fn default() -> Self {
        let d = ClassifierSpec::new(ClassifierKind::Knn, 0);
        Self { kinds: ClassifierKind::ALL.to_vec(), knn_k: d.knn_k, n_estimators: d.n_estimators, mlr: d.mlr, svm: d.svm, rf: d.rf }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    pub paths: PathsConfig,
    pub topics: TopicsConfig,
    pub features: FeaturesConfig,
    pub classifiers: ClassifiersConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workdir: "work".into(),
            paths: PathsConfig::default(),
            topics: TopicsConfig::default(),
            features: FeaturesConfig::default(),
            classifiers: ClassifiersConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workdir: Option<PathBuf>,
    pub k_diag: Option<usize>,
    pub k_proc: Option<usize>,
    pub weightings: Option<Vec<Weighting>>,
    pub kinds: Option<Vec<ClassifierKind>>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| text[s].trim().to_string());
            PipelineError::config(&field, e.message())
        })?;
        resolve(base, &mut cfg.workdir);
        let p = &mut cfg.paths;
        for path in [&mut p.encounters, &mut p.notes, &mut p.ccsr] {
            resolve(base, path);
        }
        for path in [&mut p.gazetteer, &mut p.negex, &mut p.stopwords].into_iter().flatten() {
            resolve(base, path);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = &o.workdir {
            self.workdir = w.clone();
        }
        if o.k_diag.is_some() {
            self.topics.k_diag = o.k_diag;
        }
        if o.k_proc.is_some() {
            self.topics.k_proc = o.k_proc;
        }
        if let Some(w) = &o.weightings {
            self.topics.weightings = w.clone();
        }
        if let Some(k) = &o.kinds {
            self.classifiers.kinds = k.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.topics;
        if t.weightings.is_empty() {
            return Err(PipelineError::config("topics.weightings", "at least one weighting required"));
        }
        if !t.weightings.contains(&self.features.primary_weighting) {
            return Err(PipelineError::config("features.primary_weighting", "not among topics.weightings"));
        }
        if self.classifiers.kinds.is_empty() {
            return Err(PipelineError::config("classifiers.kinds", "at least one classifier required"));
        }
        for (field, k) in [("topics.k_diag", t.k_diag), ("topics.k_proc", t.k_proc)] {
            match k {
                Some(0) => return Err(PipelineError::config(field, "must be at least 1")),
                None if t.scan.is_none() => return Err(PipelineError::config(field, "set it or configure topics.scan")),
                _ => {}
            }
        }
        if let Some([lo, hi]) = t.scan {
            if lo < 2 || hi < lo {
                return Err(PipelineError::config("topics.scan", "need 2 <= low <= high"));
            }
        }
        self.lda_template(1, 0).validate()?;
        let f = self.features.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(PipelineError::config("features.train_fraction", "must lie in (0, 1)"));
        }
        if self.features.k_neighbors == 0 {
            return Err(PipelineError::config("features.k_neighbors", "must be at least 1"));
        }
        Ok(())
    }

    fn lda_template(&self, k: usize, seed: u64) -> LdaConfig {
        LdaConfig {
            k,
            alpha: self.topics.alpha,
            beta: self.topics.beta,
            iterations: self.topics.iterations,
            burn_in: self.topics.burn_in,
            seed,
        }
    }

    /// Seed of a named stage: the global seed plus a hash of the name.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        self.seed.wrapping_add(hash64(stage.as_bytes()))
    }

    fn classifier_spec(&self, kind: ClassifierKind, seed: u64) -> ClassifierSpec {
        let c = &self.classifiers;
        ClassifierSpec {
            kind,
            knn_k: c.knn_k,
            n_estimators: c.n_estimators,
            mlr: c.mlr.clone(),
            svm: c.svm.clone(),
            rf: c.rf.clone(),
            seed,
        }
    }
}

// ---- artifacts ----

pub const COHORT_FILE: &str = "cohort.jsonl";
pub const DOCUMENTS_FILE: &str = "documents.tsv";
pub const COHERENCE_FILE: &str = "coherence.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRAJECTORY_FILE: &str = "trajectory.tsv";

const TOPIC_SOURCES: [DocSource; 2] = [DocSource::Diagnostic, DocSource::Procedure];

pub fn model_file(w: Weighting, s: DocSource) -> String {
    format!("model_{}_{}.lda", w.name(), s.short())
}

pub fn labels_file(w: Weighting) -> String {
    format!("labels_{}.tsv", w.name())
}

pub fn features_file(w: Weighting, s: FeatureSource) -> String {
    format!("features_{}_{}.csv", w.name(), s.name())
}

pub fn classifier_file(k: ClassifierKind, w: Weighting, s: FeatureSource) -> String {
    format!("classifier_{}_{}_{}.json", k.name(), w.name(), s.name())
}

pub fn topics_file(s: DocSource) -> String {
    format!("topics_{}.tsv", s.short())
}

/// Short content digest used in artifact headers.
pub fn digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|_| PipelineError::MissingArtifact { path: path.display().to_string() })?;
    Ok(digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Header {
    kind: String,
    fields: BTreeMap<String, String>,
}

impl Header {
    fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), fields: BTreeMap::new() }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.insert(key.to_string(), value.to_string());
        self
    }

    fn line(&self) -> String {
        let mut s = format!("# {} v1", self.kind);
        for (k, v) in &self.fields {
            write!(s, " {k}={v}").unwrap();
        }
        s.push('\n');
        s
    }

    fn parse(line: &str, kind: &str, file: &str) -> Result<Self> {
        let bad = || PipelineError::data(file, format!("expected a `# {kind} v1` header"));
        let mut parts = line.split(' ');
        if parts.next() != Some("#") || parts.next() != Some(kind) || parts.next() != Some("v1") {
            return Err(bad());
        }
        let fields = parts
            .map(|p| p.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(bad))
            .collect::<Result<_>>()?;
        Ok(Self { kind: kind.to_string(), fields })
    }

    fn get(&self, key: &str, file: &str) -> Result<&str> {
        self.fields.get(key).map(String::as_str).ok_or_else(|| PipelineError::data(file, format!("header lacks {key}")))
    }
}

/// One pipeline run against a work directory.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub exec: Execution,
}

/// Topic-model inputs for one source: documents with at least one
/// in-vocabulary term, in encounter order.
struct SourceCorpus {
    docs: Vec<(String, Vec<String>)>,
    vocab: Vocabulary,
}

impl SourceCorpus {
    fn vectors(&self, w: Weighting) -> Vec<DocVector> {
        vectors(&self.docs, &self.vocab, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub classifier: ClassifierKind,
    pub weighting: Weighting,
    pub source: FeatureSource,
    pub train_rows: usize,
    pub test_rows: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub detail: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub seed: u64,
    pub feature_mode: FeatureMode,
    pub smote: bool,
    pub metric_cells: usize,
    pub inputs: BTreeMap<String, String>,
    pub results: Vec<GridCell>,
}

impl Report {
    pub fn cell(&self, k: ClassifierKind, w: Weighting, s: FeatureSource) -> Option<&GridCell> {
        self.results.iter().find(|c| c.classifier == k && c.weighting == w && c.source == s)
    }
}

/// One feature matrix split into its recorded partitions.
#[derive(Debug, Clone)]
pub struct Partitions {
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub features_digest: String,
    pub split_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ClassifierArtifact {
    format: String,
    features: String,
    split: String,
    synthetic_rows: usize,
    classifier: TrainedClassifier,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, exec: Execution) -> Self {
        Self { config, exec }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.workdir.join(name)
    }

    fn read(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        std::fs::read_to_string(&p).map_err(|_| PipelineError::MissingArtifact { path: p.display().to_string() })
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        std::fs::create_dir_all(&self.config.workdir)
            .and_then(|_| std::fs::write(self.path(name), body))
            .map_err(|e| PipelineError::data(name, e))
    }

    /// Reads an artifact, returning its header and the remaining text.
    fn read_artifact(&self, name: &str, kind: &str) -> Result<(Header, String, String)> {
        let text = self.read(name)?;
        let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
        let header = Header::parse(first, kind, name)?;
        let rest = rest.to_string();
        Ok((header, rest, digest(text.as_bytes())))
    }

    /// Checks that the work-directory artifact `name` still has the digest
    /// recorded under `key` in `header`.
    fn check_artifact(&self, header: &Header, key: &str, name: &str, owner: &str) -> Result<()> {
        self.check_digest(header.get(key, owner)?, &self.path(name))
    }

    fn check_digest(&self, expected: &str, path: &Path) -> Result<()> {
        let found = file_digest(path)?;
        if found != expected {
            return Err(PipelineError::DigestMismatch { file: path.display().to_string(), expected: expected.into(), found });
        }
        Ok(())
    }

    fn require(&self, field: &str, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(PipelineError::config(field, format!("{} does not exist", path.display())));
        }
        Ok(())
    }

    // ---- ingest ----

    pub fn ingest(&self) -> Result<()> {
        let p = &self.config.paths;
        self.require("paths.encounters", &p.encounters)?;
        self.require("paths.notes", &p.notes)?;
        self.require("paths.ccsr", &p.ccsr)?;
        let dataset = load_cohort(&p.encounters, &p.notes)?;
        load_ccsr_map(&p.ccsr)?;
        let header = Header::new("cohort")
            .with("ccsr", file_digest(&p.ccsr)?)
            .with("encounters", file_digest(&p.encounters)?)
            .with("notes", file_digest(&p.notes)?);
        let mut out = header.line();
        let mut provenance = dataset.provenance.clone();
        for s in &mut provenance.sources {
            s.path = Path::new(&s.path).file_name().map_or(s.path.clone(), |f| f.to_string_lossy().into_owned());
        }
        out.push_str(&serde_json::to_string(&provenance).unwrap());
        out.push('\n');
        for e in dataset.encounters() {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        log::info!("ingested {} encounters", dataset.len());
        self.write(COHORT_FILE, &out)
    }

    fn load_cohort_artifact(&self) -> Result<(CohortDataset, String)> {
        let (header, body, d) = self.read_artifact(COHORT_FILE, "cohort")?;
        let p = &self.config.paths;
        self.check_digest(header.get("encounters", COHORT_FILE)?, &p.encounters)?;
        self.check_digest(header.get("notes", COHORT_FILE)?, &p.notes)?;
        self.check_digest(header.get("ccsr", COHORT_FILE)?, &p.ccsr)?;
        let mut lines = body.lines();
        let bad = |e: serde_json::Error| PipelineError::data(COHORT_FILE, e);
        let provenance: Provenance = serde_json::from_str(lines.next().unwrap_or("")).map_err(bad)?;
        let encounters: Vec<Encounter> = lines.map(|l| serde_json::from_str(l).map_err(bad)).collect::<Result<_>>()?;
        let ds = CohortDataset::new(encounters, provenance).map_err(|e| PipelineError::data(COHORT_FILE, e))?;
        Ok((ds, d))
    }

    // ---- preprocess ----

    fn preprocessor(&self) -> Result<(Preprocessor, String)> {
        let p = &self.config.paths;
        let io = |field: &str, e: std::io::Error| PipelineError::config(field, e);
        let negex = match &p.negex {
            Some(path) => NegexLexicon::load(path, NegexLexicon::DEFAULT_WINDOW).map_err(|e| io("paths.negex", e))?,
            None => NegexLexicon::bundled(),
        };
        let gazetteer = match &p.gazetteer {
            Some(path) => DiseaseGazetteer::load(path).map_err(|e| io("paths.gazetteer", e))?,
            None => DiseaseGazetteer::bundled(),
        };
        let stopwords = match &p.stopwords {
            Some(path) => StopWords::load(path).map_err(|e| io("paths.stopwords", e))?,
            None => StopWords::bundled(),
        };
        let mut lexicon_id = String::new();
        for path in [&p.negex, &p.gazetteer, &p.stopwords] {
            lexicon_id.push_str(&match path {
                Some(path) => file_digest(path)?,
                None => "bundled".into(),
            });
        }
        Ok((Preprocessor { negex, gazetteer, stopwords }, digest(lexicon_id.as_bytes())))
    }

    pub fn preprocess(&self) -> Result<()> {
        let (dataset, cohort_digest) = self.load_cohort_artifact()?;
        let ccsr = load_ccsr_map(&self.config.paths.ccsr)?;
        let (pre, lexicons) = self.preprocessor()?;
        let docs = pre.process(&dataset, &ccsr, self.exec);
        let unmapped: usize = docs.iter().map(|d| d.unmapped_codes).sum();
        let mut out = Header::new("documents")
            .with("cohort", cohort_digest)
            .with("lexicons", lexicons)
            .with("unmapped_codes", unmapped)
            .line();
        for d in &docs {
            for doc in [&d.diagnostic, &d.procedure] {
                writeln!(out, "{}\t{}\t{}", doc.encounter_id, doc.source.short(), doc.tokens.join(" ")).unwrap();
            }
        }
        self.write(DOCUMENTS_FILE, &out)
    }

    /// Per-source corpora from `documents.tsv`, and that file's digest.
    fn load_corpora(&self) -> Result<(BTreeMap<DocSource, SourceCorpus>, String)> {
        let (header, body, d) = self.read_artifact(DOCUMENTS_FILE, "documents")?;
        self.check_artifact(&header, "cohort", COHORT_FILE, DOCUMENTS_FILE)?;
        let mut raw: BTreeMap<DocSource, Vec<(String, Vec<String>)>> = BTreeMap::new();
        for (i, line) in body.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, src, tokens] = cols.as_slice() else {
                return Err(PipelineError::data(DOCUMENTS_FILE, format!("line {}: expected 3 columns", i + 2)));
            };
            let source = TOPIC_SOURCES
                .into_iter()
                .find(|s| s.short() == *src)
                .ok_or_else(|| PipelineError::data(DOCUMENTS_FILE, format!("line {}: unknown source {src}", i + 2)))?;
            let tokens: Vec<String> = tokens.split_whitespace().map(String::from).collect();
            if !tokens.is_empty() {
                raw.entry(source).or_default().push((id.to_string(), tokens));
            }
        }
        let mut out = BTreeMap::new();
        for source in TOPIC_SOURCES {
            let docs = raw.remove(&source).unwrap_or_default();
            let toks: Vec<&Vec<String>> = docs.iter().map(|d| &d.1).collect();
            let vocab = Vocabulary::build(&toks, self.config.topics.min_doc_freq)
                .map_err(|e| PipelineError::data(format!("{} documents", source.name()), e))?;
            let kept: Vec<(String, Vec<String>)> = docs
                .into_iter()
                .map(|(id, t)| (id, t.into_iter().filter(|w| vocab.id(w).is_some()).collect::<Vec<_>>()))
                .filter(|(_, t)| !t.is_empty())
                .collect();
            out.insert(source, SourceCorpus { docs: kept, vocab });
        }
        Ok((out, d))
    }

    // ---- coherence ----

    pub fn coherence(&self) -> Result<()> {
        let Some([lo, hi]) = self.config.topics.scan else {
            return Err(PipelineError::config("topics.scan", "needed by the coherence stage"));
        };
        let (corpora, docs_digest) = self.load_corpora()?;
        let ks: Vec<usize> = (lo..=hi).collect();
        let measure = self.config.topics.measure;
        let mut out = Header::new("coherence")
            .with("documents", docs_digest)
            .with("measure", serde_plain(&measure))
            .line();
        out.push_str("source\tweighting\tk\tumass\tcv\tselected\n");
        for &w in &self.config.topics.weightings {
            for source in TOPIC_SOURCES {
                let c = &corpora[&source];
                let fit = c.vectors(w);
                let bow = bow_vectors(&c.docs, &c.vocab);
                let streams: Vec<Vec<String>> = c.docs.iter().map(|d| d.1.clone()).collect();
                let corpus = CoherenceCorpus { vectors: &fit, bow: &bow, streams: &streams, vocab: &c.vocab };
                let template = self.config.lda_template(2, self.config.stage_seed(&format!("coherence/{}/{}", w.name(), source.short())));
                let report = coherence_scan(&corpus, &ks, &template, measure, self.exec)?;
                for (k, (umass, cv)) in &report.scores {
                    let sel = u8::from(*k == report.selected_k);
                    writeln!(out, "{}\t{}\t{k}\t{umass}\t{cv}\t{sel}", source.short(), w.name()).unwrap();
                }
            }
        }
        self.write(COHERENCE_FILE, &out)
    }

    /// Topic count per (weighting, source): configured, or selected by the
    /// coherence stage.
    fn topic_count(&self, w: Weighting, source: DocSource, docs_digest: &str) -> Result<usize> {
        let fixed = match source {
            DocSource::Diagnostic => self.config.topics.k_diag,
            DocSource::Procedure => self.config.topics.k_proc,
        };
        if let Some(k) = fixed {
            return Ok(k);
        }
        let (header, body, _) = self.read_artifact(COHERENCE_FILE, "coherence")?;
        let recorded = header.get("documents", COHERENCE_FILE)?;
        if recorded != docs_digest {
            return Err(PipelineError::DigestMismatch {
                file: self.path(DOCUMENTS_FILE).display().to_string(),
                expected: recorded.to_string(),
                found: docs_digest.to_string(),
            });
        }
        body.lines()
            .skip(1)
            .map(|l| l.split('\t').collect::<Vec<_>>())
            .find(|c| c.len() == 6 && c[0] == source.short() && c[1] == w.name() && c[5] == "1")
            .and_then(|c| c[2].parse().ok())
            .ok_or_else(|| PipelineError::data(COHERENCE_FILE, format!("no selection for {} {}", source.short(), w.name())))
    }

    // ---- fit-topics ----

    pub fn fit_topics(&self) -> Result<()> {
        let (corpora, docs_digest) = self.load_corpora()?;
        let mut jobs = Vec::new();
        for &w in &self.config.topics.weightings {
            for source in TOPIC_SOURCES {
                jobs.push((w, source, self.topic_count(w, source, &docs_digest)?));
            }
        }
        let fits = self.exec.map(&jobs, |&(w, source, k)| {
            let c = &corpora[&source];
            let seed = self.config.stage_seed(&format!("lda/{}/{}", w.name(), source.short()));
            fit_lda(&c.vectors(w), &c.vocab, &self.config.lda_template(k, seed))
        });
        for (&(w, source, _), fit) in jobs.iter().zip(fits) {
            let model = fit?;
            check_stochastic(&model)?;
            self.write(&model_file(w, source), &model.to_text())?;
        }
        Ok(())
    }

    fn load_model(&self, w: Weighting, source: DocSource, vocab: &Vocabulary) -> Result<(TopicModel, String)> {
        let name = model_file(w, source);
        let text = self.read(&name)?;
        let model = TopicModel::from_text(&text)?;
        if model.vocab_digest != vocab.digest() {
            return Err(PipelineError::DigestMismatch {
                file: self.path(&name).display().to_string(),
                expected: model.vocab_digest,
                found: vocab.digest(),
            });
        }
        Ok((model, digest(text.as_bytes())))
    }

    // ---- label ----

    pub fn label(&self) -> Result<()> {
        let (corpora, docs_digest) = self.load_corpora()?;
        for &w in &self.config.topics.weightings {
            let mut header = Header::new("labels").with("documents", &docs_digest);
            let mut rows = String::from("encounter_id\tsource\tdominant_topic\tcontribution\ttheta\n");
            for source in TOPIC_SOURCES {
                let (model, d) = self.load_model(w, source, &corpora[&source].vocab)?;
                header = header.with(&format!("model_{}", source.short()), d);
                for a in model.assignments() {
                    let theta: Vec<String> = a.full_theta.iter().map(f64::to_string).collect();
                    writeln!(rows, "{}\t{}\t{}\t{}\t{}", a.doc_id, source.short(), a.dominant_topic, a.contribution, theta.join(","))
                        .unwrap();
                }
            }
            self.write(&labels_file(w), &(header.line() + &rows))?;
        }
        Ok(())
    }

    fn load_labels(&self, w: Weighting) -> Result<(BTreeMap<DocSource, Vec<TopicAssignment>>, String)> {
        let name = labels_file(w);
        let (header, body, d) = self.read_artifact(&name, "labels")?;
        self.check_artifact(&header, "documents", DOCUMENTS_FILE, &name)?;
        for source in TOPIC_SOURCES {
            self.check_artifact(&header, &format!("model_{}", source.short()), &model_file(w, source), &name)?;
        }
        let mut out: BTreeMap<DocSource, Vec<TopicAssignment>> = BTreeMap::new();
        for (i, line) in body.lines().enumerate().skip(1) {
            let bad = || PipelineError::data(&name, format!("line {}", i + 2));
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, src, _, _, theta] = cols.as_slice() else { return Err(bad()) };
            let source = TOPIC_SOURCES.into_iter().find(|s| s.short() == *src).ok_or_else(bad)?;
            let theta: Vec<f64> = theta.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
            out.entry(source).or_default().push(TopicAssignment::from_theta(id, &theta));
        }
        Ok((out, d))
    }

    // ---- features ----

    pub fn features(&self) -> Result<()> {
        let (dataset, _) = self.load_cohort_artifact()?;
        let los: BTreeMap<String, LosCategory> = dataset
            .encounters()
            .iter()
            .map(|e| Ok((e.encounter_id.clone(), e.los_category().map_err(|x| PipelineError::data(COHORT_FILE, x))?)))
            .collect::<Result<_>>()?;
        let fc = &self.config.features;
        let mut split_out = String::from("weighting\tsource\tencounter_id\tpartition\n");
        let mut split_header = Header::new("split").with("seed", self.config.stage_seed("split"));
        for &w in &self.config.topics.weightings {
            let (labels, labels_digest) = self.load_labels(w)?;
            let empty = Vec::new();
            let diag = labels.get(&DocSource::Diagnostic).unwrap_or(&empty);
            let proc = labels.get(&DocSource::Procedure).unwrap_or(&empty);
            for source in FeatureSource::ALL {
                let mut m = assemble_features(diag, proc, &los, fc.mode, source)?;
                if fc.smote && fc.smote_before_split {
                    let seed = self.config.stage_seed(&format!("smote/{}/{}", w.name(), source.name()));
                    m = smote(&m, &SmoteConfig { k_neighbors: fc.k_neighbors, seed })?.matrix;
                }
                let spec = SplitSpec { train_fraction: fc.train_fraction, seed: self.config.stage_seed("split"), stratified: fc.stratified };
                let train = split_indices(&m, &spec)?;
                let mut is_train = vec![false; m.len()];
                train.iter().for_each(|&i| is_train[i] = true);
                for (r, t) in m.rows.iter().zip(&is_train) {
                    let part = if *t { "train" } else { "test" };
                    writeln!(split_out, "{}\t{}\t{}\t{part}", w.name(), source.name(), r.encounter_id).unwrap();
                }
                let cols: Vec<String> = m.topic_columns.iter().map(|(c, k)| format!("{c}:{k}")).collect();
                let body = Header::new("features")
                    .with("labels", &labels_digest)
                    .with("dropped", m.dropped)
                    .with("topic_columns", if cols.is_empty() { "none".to_string() } else { cols.join(",") })
                    .line()
                    + &m.to_csv();
                let name = features_file(w, source);
                split_header = split_header.with(&name.replace(".csv", ""), digest(body.as_bytes()));
                self.write(&name, &body)?;
                if w == fc.primary_weighting && source == fc.primary_source {
                    self.write(FEATURES_FILE, &body)?;
                }
            }
        }
        self.write(SPLIT_FILE, &(split_header.line() + &split_out))
    }

    fn load_features(&self, w: Weighting, s: FeatureSource) -> Result<(FeatureMatrix, String)> {
        let name = features_file(w, s);
        let (header, body, d) = self.read_artifact(&name, "features")?;
        self.check_artifact(&header, "labels", &labels_file(w), &name)?;
        let topic_columns = match header.get("topic_columns", &name)? {
            "none" => Vec::new(),
            spec => spec
                .split(',')
                .map(|p| {
                    let (c, k) = p.split_once(':')?;
                    Some((c.parse().ok()?, k.parse().ok()?))
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| PipelineError::data(&name, "bad topic_columns"))?,
        };
        let m = FeatureMatrix::from_csv(&body, topic_columns).map_err(|e| PipelineError::data(&name, e))?;
        Ok((m, d))
    }

    /// (train, test) partitions of one matrix, and the split file digest.
    fn load_split(&self, w: Weighting, s: FeatureSource, m: &FeatureMatrix, features_digest: &str) -> Result<(FeatureMatrix, FeatureMatrix, String)> {
        let (header, body, d) = self.read_artifact(SPLIT_FILE, "split")?;
        let key = features_file(w, s).replace(".csv", "");
        if header.get(&key, SPLIT_FILE)? != features_digest {
            return Err(PipelineError::DigestMismatch {
                file: self.path(SPLIT_FILE).display().to_string(),
                expected: header.get(&key, SPLIT_FILE)?.to_string(),
                found: features_digest.to_string(),
            });
        }
        let train_ids: std::collections::HashSet<&str> = body
            .lines()
            .skip(1)
            .map(|l| l.split('\t').collect::<Vec<_>>())
            .filter(|c| c.len() == 4 && c[0] == w.name() && c[1] == s.name() && c[3] == "train")
            .map(|c| c[2])
            .collect();
        let (train, test): (Vec<_>, Vec<_>) =
            m.rows.iter().cloned().partition(|r| train_ids.contains(r.encounter_id.as_str()));
        let part = |rows| FeatureMatrix { columns: m.columns.clone(), rows, topic_columns: m.topic_columns.clone(), dropped: m.dropped };
        Ok((part(train), part(test), d))
    }

    fn grid(&self) -> Vec<(ClassifierKind, Weighting, FeatureSource)> {
        let mut cells = Vec::new();
        for &w in &self.config.topics.weightings {
            for s in FeatureSource::ALL {
                for &k in &self.config.classifiers.kinds {
                    cells.push((k, w, s));
                }
            }
        }
        cells
    }

    // ---- train ----

    /// Train and test partitions of one feature matrix, as recorded by the
    /// features stage.
    pub fn partitions(&self, w: Weighting, s: FeatureSource) -> Result<Partitions> {
        let (m, features_digest) = self.load_features(w, s)?;
        let (train, test, split_digest) = self.load_split(w, s, &m, &features_digest)?;
        Ok(Partitions { train, test, features_digest, split_digest })
    }

    /// SMOTE as the train stage applies it to one training partition.
    pub fn oversample(&self, w: Weighting, s: FeatureSource, train: &FeatureMatrix) -> Result<crate::features::SmoteOutput> {
        let seed = self.config.stage_seed(&format!("smote/{}/{}", w.name(), s.name()));
        let out = smote(train, &SmoteConfig { k_neighbors: self.config.features.k_neighbors, seed })?;
        for rec in &out.synthetic {
            log::debug!(
                "smote {} {}: parents {} {} u={} raw={:?}",
                w.name(),
                s.name(),
                train.rows[rec.parent].encounter_id,
                train.rows[rec.neighbor].encounter_id,
                rec.u,
                rec.raw
            );
        }
        Ok(out)
    }

    pub fn train(&self) -> Result<()> {
        let fc = &self.config.features;
        for &w in &self.config.topics.weightings {
            for s in FeatureSource::ALL {
                let Partitions { mut train, features_digest, split_digest, .. } = self.partitions(w, s)?;
                let mut synthetic_rows = 0;
                if fc.smote && !fc.smote_before_split {
                    let out = self.oversample(w, s, &train)?;
                    synthetic_rows = out.synthetic.len();
                    train = out.matrix;
                }
                for &k in &self.config.classifiers.kinds {
                    let seed = self.config.stage_seed(&format!("classifier/{}/{}/{}", k.name(), w.name(), s.name()));
                    let clf = train_with(&self.config.classifier_spec(k, seed), &train, self.exec)?;
                    let art = ClassifierArtifact {
                        format: "classifier v1".into(),
                        features: features_digest.clone(),
                        split: split_digest.clone(),
                        synthetic_rows,
                        classifier: clf,
                    };
                    self.write(&classifier_file(k, w, s), &(serde_json::to_string_pretty(&art).unwrap() + "\n"))?;
                }
            }
        }
        Ok(())
    }

    // ---- evaluate ----

    pub fn evaluate(&self) -> Result<Report> {
        let mut results = Vec::new();
        let mut inputs = BTreeMap::new();
        for (k, w, s) in self.grid() {
            let Partitions { train, test, features_digest: fd, split_digest } = self.partitions(w, s)?;
            let name = classifier_file(k, w, s);
            let text = self.read(&name)?;
            let art: ClassifierArtifact = serde_json::from_str(&text).map_err(|e| PipelineError::data(&name, e))?;
            if art.features != fd || art.split != split_digest {
                return Err(PipelineError::DigestMismatch {
                    file: self.path(&name).display().to_string(),
                    expected: format!("{}/{}", art.features, art.split),
                    found: format!("{fd}/{split_digest}"),
                });
            }
            inputs.insert(name, digest(text.as_bytes()));
            let detail = evaluate(&art.classifier, &test, self.exec)?;
            check_report(&detail, test.len())?;
            results.push(GridCell {
                classifier: k,
                weighting: w,
                source: s,
                train_rows: train.len() + art.synthetic_rows,
                test_rows: test.len(),
                precision: detail.precision_macro,
                recall: detail.recall_macro,
                accuracy: detail.accuracy,
                roc_auc: detail.roc_auc_macro_ovr,
                detail,
            });
        }
        let report = Report {
            format: "report v1".into(),
            seed: self.config.seed,
            feature_mode: self.config.features.mode,
            smote: self.config.features.smote,
            metric_cells: results.len() * 4,
            inputs,
            results,
        };
        self.write(REPORT_FILE, &(serde_json::to_string_pretty(&report).unwrap() + "\n"))?;
        self.write_topic_tables()?;
        Ok(report)
    }

    /// Top-10 keywords per topic, one table per source.
    fn write_topic_tables(&self) -> Result<()> {
        let (corpora, _) = self.load_corpora()?;
        for source in TOPIC_SOURCES {
            let mut header = Header::new("topics").with("source", source.short());
            let mut rows = String::from("weighting\ttopic\trepresentative_docs\tkeywords\n");
            for &w in &self.config.topics.weightings {
                let (model, d) = self.load_model(w, source, &corpora[&source].vocab)?;
                header = header.with(&format!("model_{}", w.name()), d);
                let assignments = model.assignments();
                for t in 0..model.k() {
                    let reps = representative_docs(&assignments, t, REPRESENTATIVE_THRESHOLD).len();
                    let kw = format_keywords(&top_keywords(&model, t, 10)?);
                    writeln!(rows, "{}\t{}\t{reps}\t{kw}", w.name(), t + 1).unwrap();
                }
            }
            self.write(&topics_file(source), &(header.line() + &rows))?;
        }
        Ok(())
    }

    // ---- trajectory ----

    /// Dominant-topic trajectories under the primary weighting, for one
    /// patient or for all.
    pub fn trajectory(&self, patient: Option<&str>) -> Result<()> {
        let (dataset, _) = self.load_cohort_artifact()?;
        let w = self.config.features.primary_weighting;
        let (labels, labels_digest) = self.load_labels(w)?;
        let dominant = |s: DocSource| -> BTreeMap<&str, usize> {
            labels.get(&s).map(|v| v.iter().map(|a| (a.doc_id.as_str(), a.dominant_topic)).collect()).unwrap_or_default()
        };
        let (diag, proc) = (dominant(DocSource::Diagnostic), dominant(DocSource::Procedure));
        let all: Vec<EncounterLabels> = dataset
            .encounters()
            .iter()
            .map(|e| EncounterLabels {
                encounter_id: e.encounter_id.clone(),
                patient_id: e.patient_id.clone(),
                admit_date: e.admit_date,
                diag_dominant: diag.get(e.encounter_id.as_str()).copied(),
                proc_dominant: proc.get(e.encounter_id.as_str()).copied(),
            })
            .collect();
        let patients: Vec<String> = match patient {
            Some(p) => vec![p.to_string()],
            None => {
                let set: std::collections::BTreeSet<&str> = all.iter().map(|l| l.patient_id.as_str()).collect();
                set.into_iter().map(String::from).collect()
            }
        };
        let mut out = Header::new("trajectory").with("labels", labels_digest).with("weighting", w.name()).line();
        out.push_str("patient_id\tencounter_id\tadmit_date\tdiag_topic\tproc_topic\n");
        let show = |t: Option<usize>| t.map_or_else(|| "-".to_string(), |t| t.to_string());
        for p in patients {
            for row in topic_trajectory(&p, &all)? {
                writeln!(out, "{p}\t{}\t{}\t{}\t{}", row.encounter_id, row.admit_date, show(row.diag_dominant), show(row.proc_dominant))
                    .unwrap();
            }
        }
        self.write(TRAJECTORY_FILE, &out)
    }

    /// Every stage in order; the coherence scan runs when configured.
    pub fn run(&self) -> Result<Report> {
        self.config.validate()?;
        self.ingest()?;
        self.preprocess()?;
        if self.config.topics.scan.is_some() {
            self.coherence()?;
        }
        self.fit_topics()?;
        self.label()?;
        self.features()?;
        self.train()?;
        let report = self.evaluate()?;
        self.trajectory(None)?;
        Ok(report)
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn check_stochastic(model: &TopicModel) -> Result<()> {
    for row in model.phi.iter().chain(&model.theta) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(p > 0.0)) {
            return Err(PipelineError::Internal(format!("topic model row sums to {s}")));
        }
    }
    Ok(())
}

fn check_report(r: &EvalReport, n: usize) -> Result<()> {
    let total: usize = r.confusion.counts.iter().flatten().sum();
    if total != n {
        return Err(PipelineError::Internal(format!("confusion matrix holds {total} of {n} rows")));
    }
    Ok(())
}

/// Writes a synthetic cohort (ingest formats plus `manifest.json`) to `out`.
pub fn synth(spec: &CohortSpec, out: &Path) -> Result<()> {
    generate_cohort(spec)?.write(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = Header::new("labels").with("b", 2).with("a", "x");
        assert_eq!(h.line(), "# labels v1 a=x b=2\n");
        assert_eq!(Header::parse(h.line().trim_end(), "labels", "f").unwrap(), h);
        assert!(Header::parse("# other v1", "labels", "f").is_err());
    }

    #[test]
    fn config_parsing_and_precedence() {
        let base = Path::new("/data");
        let cfg = PipelineConfig::from_toml_str(
            "seed = 7\nworkdir = \"out\"\n[topics]\nk_diag = 3\nk_proc = 5\nweightings = [\"bow\"]\n[features]\nprimary_weighting = \"bow\"\n",
            base,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.workdir, Path::new("/data/out"));
        assert_eq!(cfg.paths.encounters, Path::new("/data/encounters.csv"));
        assert_eq!(cfg.topics.beta, 0.01);
        cfg.validate().unwrap();
        let mut over = cfg.clone();
        over.apply(&Overrides { seed: Some(9), k_diag: Some(4), ..Overrides::default() });
        assert_eq!((over.seed, over.topics.k_diag, over.topics.k_proc), (9, Some(4), Some(5)));

        let err = PipelineConfig::from_toml_str("[topics]\nbogus = 1\n", base).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let missing_k = PipelineConfig::default();
        assert!(matches!(missing_k.validate(), Err(PipelineError::Config { field, .. }) if field == "topics.k_diag"));
    }

    #[test]
    fn stage_seeds_differ_and_track_global_seed() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 2, ..PipelineConfig::default() };
        assert_ne!(a.stage_seed("split"), a.stage_seed("lda/bow/diag"));
        assert_ne!(a.stage_seed("split"), b.stage_seed("split"));
        assert_eq!(a.stage_seed("split"), a.stage_seed("split"));
    }

    #[test]
    fn missing_artifacts_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { workdir: dir.path().to_path_buf(), topics: TopicsConfig { k_diag: Some(2), k_proc: Some(2), ..TopicsConfig::default() }, ..PipelineConfig::default() };
        let p = Pipeline::new(cfg, Execution::Sequential);
        match p.preprocess() {
            Err(PipelineError::MissingArtifact { path }) => assert!(path.ends_with(COHORT_FILE)),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.ingest().unwrap_err().exit_code(), 2);
    }
}
