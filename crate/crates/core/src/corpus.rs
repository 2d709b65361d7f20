//! Encounters, procedure notes, and length-of-stay labels.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("invalid interval: discharge {discharge} precedes admission {admit}")]
    InvalidInterval { admit: String, discharge: String },
    #[error("unparseable date {0:?}")]
    BadDate(String),
    #[error("negative duration: {0} days")]
    NegativeDuration(i64),
    #[error("duplicate encounter id {0:?}")]
    DuplicateEncounter(String),
    #[error("note references unknown encounter {0:?}")]
    OrphanNote(String),
    #[error("unknown length-of-stay category {0:?}")]
    UnknownCategory(String),
}

/// Five length-of-stay classes in duration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosCategory {
    VeryShort,
    Short,
    Medium,
    Long,
    VeryLong,
}

impl LosCategory {
    pub const ALL: [LosCategory; 5] = [
        LosCategory::VeryShort,
        LosCategory::Short,
        LosCategory::Medium,
        LosCategory::Long,
        LosCategory::VeryLong,
    ];
    pub const COUNT: usize = 5;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LosCategory::VeryShort => "very_short",
            LosCategory::Short => "short",
            LosCategory::Medium => "medium",
            LosCategory::Long => "long",
            LosCategory::VeryLong => "very_long",
        }
    }

    /// Inclusive day range; `VeryLong` is open-ended.
    pub fn day_range(self) -> (i64, Option<i64>) {
        match self {
            LosCategory::VeryShort => (0, Some(1)),
            LosCategory::Short => (2, Some(7)),
            LosCategory::Medium => (8, Some(14)),
            LosCategory::Long => (15, Some(21)),
            LosCategory::VeryLong => (22, None),
        }
    }
}

impl fmt::Display for LosCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LosCategory {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| CorpusError::UnknownCategory(s.to_string()))
    }
}

/// Whole calendar days between admission and discharge.
pub fn compute_los(admit: NaiveDate, discharge: NaiveDate) -> Result<i64, CorpusError> {
    if discharge < admit {
        return Err(CorpusError::InvalidInterval {
            admit: admit.to_string(),
            discharge: discharge.to_string(),
        });
    }
    Ok((discharge - admit).num_days())
}

pub fn parse_date(s: &str) -> Result<NaiveDate, CorpusError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| CorpusError::BadDate(s.to_string()))
}

/// [`compute_los`] over ISO-8601 date strings.
pub fn compute_los_str(admit: &str, discharge: &str) -> Result<i64, CorpusError> {
    compute_los(parse_date(admit)?, parse_date(discharge)?)
}

pub fn bin_los(days: i64) -> Result<LosCategory, CorpusError> {
    Ok(match days {
        d if d < 0 => return Err(CorpusError::NegativeDuration(d)),
        0..=1 => LosCategory::VeryShort,
        2..=7 => LosCategory::Short,
        8..=14 => LosCategory::Medium,
        15..=21 => LosCategory::Long,
        _ => LosCategory::VeryLong,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureNote {
    pub encounter_id: String,
    pub raw_text: String,
    /// Section text chosen by the report-section extractor.
    pub extracted_text: Option<String>,
}

impl ProcedureNote {
    pub fn new(encounter_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            encounter_id: encounter_id.into(),
            raw_text: raw_text.into(),
            extracted_text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub encounter_id: String,
    pub patient_id: String,
    pub admit_date: NaiveDate,
    pub discharge_date: NaiveDate,
    /// Primary and secondary ICD-10-CM codes, in source order.
    pub diagnostic_codes: Vec<String>,
    pub procedure_notes: Vec<ProcedureNote>,
}

impl Encounter {
    pub fn los_days(&self) -> Result<i64, CorpusError> {
        compute_los(self.admit_date, self.discharge_date)
    }

    pub fn los_category(&self) -> Result<LosCategory, CorpusError> {
        bin_los(self.los_days()?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDigest {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
}

/// Where a dataset came from and what was filtered on the way in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<SourceDigest>,
    /// Encounter rows without any diagnostic code.
    pub dropped_no_codes: usize,
    /// Notes whose encounter is not in the dataset.
    pub orphan_notes: usize,
    /// Notes with no impression, conclusion, or findings section.
    pub notes_without_section: usize,
    pub unmapped_codes: usize,
    pub ccsr_overrides: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    encounters: Vec<Encounter>,
    pub provenance: Provenance,
}

impl CohortDataset {
    /// Validates id uniqueness and note ownership.
    pub fn new(encounters: Vec<Encounter>, provenance: Provenance) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(encounters.len());
        for e in &encounters {
            if !seen.insert(e.encounter_id.as_str()) {
                return Err(CorpusError::DuplicateEncounter(e.encounter_id.clone()));
            }
            if let Some(n) = e.procedure_notes.iter().find(|n| n.encounter_id != e.encounter_id) {
                return Err(CorpusError::OrphanNote(n.encounter_id.clone()));
            }
            if e.discharge_date < e.admit_date {
                return Err(CorpusError::InvalidInterval {
                    admit: e.admit_date.to_string(),
                    discharge: e.discharge_date.to_string(),
                });
            }
        }
        Ok(Self { encounters, provenance })
    }

    pub fn encounters(&self) -> &[Encounter] {
        &self.encounters
    }

    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }
}

/// Counts per length-of-stay class, indexed by category code.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram(pub [usize; LosCategory::COUNT]);

impl ClassHistogram {
    pub fn from_labels<I: IntoIterator<Item = LosCategory>>(labels: I) -> Self {
        let mut h = Self::default();
        for l in labels {
            h.0[l.code()] += 1;
        }
        h
    }

    pub fn get(&self, c: LosCategory) -> usize {
        self.0[c.code()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_map(&self) -> BTreeMap<LosCategory, usize> {
        LosCategory::ALL.iter().map(|&c| (c, self.get(c))).collect()
    }
}

pub fn class_histogram(dataset: &CohortDataset) -> Result<ClassHistogram, CorpusError> {
    let labels = dataset
        .encounters()
        .iter()
        .map(Encounter::los_category)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClassHistogram::from_labels(labels))
}
