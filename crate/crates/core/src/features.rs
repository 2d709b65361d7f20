//! Per-encounter topic feature rows, stratified splitting, and SMOTE.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClassHistogram, LosCategory};
use crate::topics::TopicAssignment;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("no encounter has both topic sources and a label")]
    EmptyIntersection,
    #[error("class {class} has {count} rows, at least 2 required")]
    TooFewPerClass { class: LosCategory, count: usize },
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("k_neighbors must be at least 1")]
    BadNeighbors,
    #[error("features csv line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Dominant,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Diag,
    Proc,
    Combined,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 3] = [FeatureSource::Diag, FeatureSource::Proc, FeatureSource::Combined];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSource::Diag => "diag",
            FeatureSource::Proc => "proc",
            FeatureSource::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub encounter_id: String,
    pub values: Vec<f64>,
    pub label: LosCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
    /// (column index, topic count) of every topic-id column.
    pub topic_columns: Vec<(usize, usize)>,
    /// Encounters dropped for missing a source or a label.
    pub dropped: usize,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn histogram(&self) -> ClassHistogram {
        ClassHistogram::from_labels(self.rows.iter().map(|r| r.label))
    }

    fn with_rows(&self, rows: Vec<FeatureRow>) -> FeatureMatrix {
        FeatureMatrix { columns: self.columns.clone(), rows, topic_columns: self.topic_columns.clone(), dropped: self.dropped }
    }

    /// `encounter_id,<columns>,label` with the category name as label.
    pub fn to_csv(&self) -> String {
        let mut out = format!("encounter_id,{},label\n", self.columns.join(","));
        for r in &self.rows {
            out.push_str(&r.encounter_id);
            for v in &r.values {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", r.label).unwrap();
        }
        out
    }

    /// Parses [`FeatureMatrix::to_csv`] output. Topic counts are not part of
    /// the csv and are passed back in.
    pub fn from_csv(text: &str, topic_columns: Vec<(usize, usize)>) -> Result<FeatureMatrix, FeatureError> {
        let err = |line: usize, detail: &str| FeatureError::Parse { line, detail: detail.to_string() };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| err(1, "missing header"))?.split(',').collect();
        if header.len() < 2 || header[0] != "encounter_id" || header[header.len() - 1] != "label" {
            return Err(err(1, "header must be encounter_id,...,label"));
        }
        let columns: Vec<String> = header[1..header.len() - 1].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() + 2 {
                return Err(err(i + 2, "wrong number of cells"));
            }
            let values = cells[1..cells.len() - 1]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| err(i + 2, "bad number"))?;
            let label = cells[cells.len() - 1].parse().map_err(|_| err(i + 2, "bad label"))?;
            rows.push(FeatureRow { encounter_id: cells[0].to_string(), values, label });
        }
        Ok(FeatureMatrix { columns, rows, topic_columns, dropped: 0 })
    }
}

fn source_columns(prefix: &str, a: &TopicAssignment, mode: FeatureMode) -> (Vec<f64>, Vec<String>) {
    match mode {
        FeatureMode::Dominant => (
            vec![a.dominant_topic as f64, a.contribution],
            vec![format!("{prefix}_topic"), format!("{prefix}_contribution")],
        ),
        FeatureMode::Full => (
            a.full_theta.clone(),
            (0..a.full_theta.len()).map(|k| format!("{prefix}_theta{k}")).collect(),
        ),
    }
}

/// Feature rows for every encounter present in both assignment lists and
/// the label map, ordered by encounter id. Every source uses the same
/// intersection so the three matrices share rows.
pub fn assemble_features(
    diag: &[TopicAssignment],
    proc: &[TopicAssignment],
    labels: &BTreeMap<String, LosCategory>,
    mode: FeatureMode,
    source: FeatureSource,
) -> Result<FeatureMatrix, FeatureError> {
    let d: HashMap<&str, &TopicAssignment> = diag.iter().map(|a| (a.doc_id.as_str(), a)).collect();
    let p: HashMap<&str, &TopicAssignment> = proc.iter().map(|a| (a.doc_id.as_str(), a)).collect();
    let all: BTreeSet<&str> =
        d.keys().chain(p.keys()).copied().chain(labels.keys().map(String::as_str)).collect();
    let mut rows = Vec::new();
    let mut columns = Vec::new();
    let mut topic_columns = Vec::new();
    let mut dropped = 0;
    for id in all {
        let (Some(da), Some(pa), Some(&label)) = (d.get(id), p.get(id), labels.get(id)) else {
            dropped += 1;
            continue;
        };
        let mut values = Vec::new();
        let mut names = Vec::new();
        let mut ids = Vec::new();
        for (prefix, a, used) in [
            ("diag", da, source != FeatureSource::Proc),
            ("proc", pa, source != FeatureSource::Diag),
        ] {
            if used {
                let (v, n) = source_columns(prefix, a, mode);
                if mode == FeatureMode::Dominant {
                    ids.push((values.len(), a.full_theta.len()));
                }
                values.extend(v);
                names.extend(n);
            }
        }
        if columns.is_empty() {
            columns = names;
            topic_columns = ids;
        }
        rows.push(FeatureRow { encounter_id: id.to_string(), values, label });
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptyIntersection);
    }
    Ok(FeatureMatrix { columns, rows, topic_columns, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self { train_fraction: 0.7, seed, stratified: true }
    }
}

/// Row indices of the training partition.
pub fn split_indices(matrix: &FeatureMatrix, spec: &SplitSpec) -> Result<Vec<usize>, FeatureError> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(FeatureError::BadFraction(f));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    if spec.stratified {
        for class in LosCategory::ALL {
            let mut idx: Vec<usize> = (0..matrix.len()).filter(|&i| matrix.rows[i].label == class).collect();
            let count = idx.len();
            if count == 0 {
                continue;
            }
            if count < 2 {
                return Err(FeatureError::TooFewPerClass { class, count });
            }
            let n_train = ((f * count as f64).round() as usize).clamp(1, count - 1);
            idx.shuffle(&mut rng);
            train.extend_from_slice(&idx[..n_train]);
        }
    } else {
        let mut idx: Vec<usize> = (0..matrix.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = (f * matrix.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
    }
    train.sort_unstable();
    Ok(train)
}

/// (train, test), each in original row order.
pub fn stratified_split(matrix: &FeatureMatrix, spec: &SplitSpec) -> Result<(FeatureMatrix, FeatureMatrix), FeatureError> {
    let train_idx = split_indices(matrix, spec)?;
    let mut in_train = vec![false; matrix.len()];
    train_idx.iter().for_each(|&i| in_train[i] = true);
    let (train, test): (Vec<_>, Vec<_>) = matrix.rows.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        matrix.with_rows(train.into_iter().map(|r| r.0).collect()),
        matrix.with_rows(test.into_iter().map(|r| r.0).collect()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl SmoteConfig {
    pub fn new(seed: u64) -> Self {
        Self { k_neighbors: 5, seed }
    }
}

/// One synthetic row's lineage: its two parent rows (indices into the input
/// matrix), the interpolation weight, and the values before rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub class: LosCategory,
    pub parent: usize,
    pub neighbor: usize,
    pub u: f64,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    /// Input rows unchanged, followed by synthetic rows.
    pub matrix: FeatureMatrix,
    pub synthetic: Vec<SyntheticRecord>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other members of `members` to `members[at]`; ties go to
/// the lower row index.
fn nearest(matrix: &FeatureMatrix, members: &[usize], at: usize, k: usize) -> Vec<usize> {
    let x = &matrix.rows[members[at]].values;
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != at)
        .map(|(_, &i)| (squared_distance(x, &matrix.rows[i].values), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Oversamples every class up to the majority count. Classes absent from
/// the input stay absent.
pub fn smote(train: &FeatureMatrix, config: &SmoteConfig) -> Result<SmoteOutput, FeatureError> {
    if config.k_neighbors == 0 {
        return Err(FeatureError::BadNeighbors);
    }
    let hist = train.histogram();
    let majority = hist.0.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = train.rows.clone();
    let mut synthetic = Vec::new();
    for class in LosCategory::ALL {
        let count = hist.get(class);
        if count == 0 || count == majority {
            continue;
        }
        if count < 2 {
            return Err(FeatureError::TooFewPerClass { class, count });
        }
        let members: Vec<usize> = (0..train.len()).filter(|&i| train.rows[i].label == class).collect();
        let k = config.k_neighbors.min(count - 1);
        let neighbors: Vec<Vec<usize>> = (0..members.len()).map(|j| nearest(train, &members, j, k)).collect();
        for _ in count..majority {
            let j = rng.random_range(0..members.len());
            let parent = members[j];
            let neighbor = *neighbors[j].choose(&mut rng).unwrap();
            let u: f64 = rng.random();
            let (x, y) = (&train.rows[parent].values, &train.rows[neighbor].values);
            let raw: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + u * (b - a)).collect();
            let mut values = raw.clone();
            for &(col, k_topics) in &train.topic_columns {
                values[col] = values[col].round().clamp(0.0, (k_topics.max(1) - 1) as f64);
            }
            rows.push(FeatureRow { encounter_id: format!("synthetic{:05}", synthetic.len()), values, label: class });
            synthetic.push(SyntheticRecord { class, parent, neighbor, u, raw });
        }
    }
    Ok(SmoteOutput { matrix: train.with_rows(rows), synthetic })
}
