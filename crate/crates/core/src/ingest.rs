//! Source-file parsing, ICD-10-CM to CCSR text conversion, and report
//! section extraction.
//!
//! File formats:
//!
//! * `encounters.csv`: `encounter_id,patient_id,admit_date,discharge_date,icd10_codes`,
//!   ISO dates, codes separated by `;`.
//! * `notes.jsonl`: one `{"encounter_id": "...", "text": "..."}` object per line.
//! * `ccsr.csv`: `icd10_code,ccsr_description`.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_date, CohortDataset, CorpusError, Encounter, ProcedureNote, Provenance, SourceDigest};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: missing column {column:?}")]
    Schema { file: String, column: String },
    #[error("{file}: duplicate encounter {id:?} at line {line}")]
    DuplicateEncounter { file: String, id: String, line: u64 },
    #[error("{file}: line {line}: {detail}")]
    BadDate { file: String, line: u64, detail: String },
    #[error("{file}: line {line}: {detail}")]
    BadRecord { file: String, line: u64, detail: String },
    #[error("{0}: file is empty")]
    EmptyFile(String),
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|source| IngestError::Io { file: path.display().to_string(), source })
}

/// Header name → column index, failing on the first missing required column.
fn column_index(file: &str, headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, IngestError> {
    required
        .iter()
        .map(|&col| {
            headers.iter().position(|h| h.trim() == col).ok_or_else(|| IngestError::Schema {
                file: file.to_string(),
                column: col.to_string(),
            })
        })
        .collect()
}

const ENCOUNTER_COLUMNS: [&str; 5] = ["encounter_id", "patient_id", "admit_date", "discharge_date", "icd10_codes"];

/// Parsed encounters plus row accounting.
#[derive(Debug, Clone)]
pub struct EncounterTable {
    pub encounters: Vec<Encounter>,
    pub input_rows: usize,
    pub dropped_no_codes: usize,
}

pub fn parse_encounters_bytes(bytes: &[u8], file: &str) -> Result<EncounterTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let csv_err = |source| IngestError::Csv { file: file.to_string(), source };
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.is_empty() {
        return Err(IngestError::EmptyFile(file.to_string()));
    }
    let idx = column_index(file, &headers, &ENCOUNTER_COLUMNS)?;

    let mut seen = HashSet::new();
    let mut encounters = Vec::new();
    let mut input_rows = 0;
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        input_rows += 1;
        let field = |i: usize| record.get(idx[i]).unwrap_or("").trim();

        let id = field(0);
        if id.is_empty() {
            return Err(IngestError::BadRecord { file: file.into(), line, detail: "empty encounter_id".into() });
        }
        let bad_date = |detail: String| IngestError::BadDate { file: file.into(), line, detail };
        let admit = parse_date(field(2)).map_err(|e| bad_date(e.to_string()))?;
        let discharge = parse_date(field(3)).map_err(|e| bad_date(e.to_string()))?;
        if discharge < admit {
            return Err(bad_date(format!("discharge {discharge} precedes admission {admit}")));
        }
        let codes: Vec<String> =
            field(4).split(';').map(str::trim).filter(|c| !c.is_empty()).map(str::to_string).collect();
        if !seen.insert(id.to_string()) {
            return Err(IngestError::DuplicateEncounter { file: file.into(), id: id.into(), line });
        }
        if codes.is_empty() {
            dropped += 1;
            continue;
        }
        encounters.push(Encounter {
            encounter_id: id.to_string(),
            patient_id: field(1).to_string(),
            admit_date: admit,
            discharge_date: discharge,
            diagnostic_codes: codes,
            procedure_notes: Vec::new(),
        });
    }
    Ok(EncounterTable { encounters, input_rows, dropped_no_codes: dropped })
}

/// Parses `encounters.csv`; rows with no diagnostic codes are dropped and
/// counted in the provenance.
pub fn parse_encounters(path: &Path) -> Result<CohortDataset, IngestError> {
    let bytes = read_file(path)?;
    let file = path.display().to_string();
    let table = parse_encounters_bytes(&bytes, &file)?;
    let provenance = Provenance {
        sources: vec![SourceDigest { path: file, sha256: sha256_hex(&bytes), rows: table.input_rows }],
        dropped_no_codes: table.dropped_no_codes,
        ..Provenance::default()
    };
    Ok(CohortDataset::new(table.encounters, provenance)?)
}

#[derive(Deserialize)]
struct NoteLine {
    encounter_id: String,
    text: String,
}

pub fn parse_notes_bytes(bytes: &[u8], file: &str) -> Result<Vec<ProcedureNote>, IngestError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IngestError::BadRecord { file: file.into(), line: 0, detail: e.to_string() })?;
    let mut notes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: NoteLine = serde_json::from_str(line).map_err(|e| IngestError::BadRecord {
            file: file.into(),
            line: i as u64 + 1,
            detail: e.to_string(),
        })?;
        notes.push(ProcedureNote::new(parsed.encounter_id, parsed.text));
    }
    Ok(notes)
}

pub fn parse_notes(path: &Path) -> Result<Vec<ProcedureNote>, IngestError> {
    parse_notes_bytes(&read_file(path)?, &path.display().to_string())
}

/// Extracts each note's analyzable section and attaches it to its encounter.
/// Notes with no recognized section and notes for unknown encounters are
/// discarded and counted.
pub fn attach_notes(dataset: CohortDataset, notes: Vec<ProcedureNote>) -> Result<CohortDataset, IngestError> {
    let mut provenance = dataset.provenance.clone();
    let mut encounters: Vec<Encounter> = dataset.encounters().to_vec();
    let index: HashMap<String, usize> =
        encounters.iter().enumerate().map(|(i, e)| (e.encounter_id.clone(), i)).collect();
    for mut note in notes {
        let Some(&i) = index.get(&note.encounter_id) else {
            provenance.orphan_notes += 1;
            continue;
        };
        let section = extract_report_section(&note.raw_text);
        if section.section_used == Section::None {
            provenance.notes_without_section += 1;
            continue;
        }
        note.extracted_text = Some(section.text);
        encounters[i].procedure_notes.push(note);
    }
    Ok(CohortDataset::new(encounters, provenance)?)
}

/// ICD-10-CM code → CCSR category description.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcsrMap {
    entries: HashMap<String, String>,
    /// Rows whose code was already present; the later row wins.
    pub overrides: usize,
}

/// Uppercase with dots and surrounding whitespace removed.
pub fn normalize_code(code: &str) -> String {
    code.trim().chars().filter(|&c| c != '.').flat_map(char::to_uppercase).collect()
}

impl CcsrMap {
    pub fn insert(&mut self, code: &str, description: &str) {
        if self.entries.insert(normalize_code(code), description.trim().to_string()).is_some() {
            self.overrides += 1;
        }
    }

    pub fn lookup(&self, code: &str) -> Option<&str> {
        self.entries.get(&normalize_code(code)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self, IngestError> {
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Err(IngestError::EmptyFile(file.to_string()));
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let csv_err = |source| IngestError::Csv { file: file.to_string(), source };
        let headers = reader.headers().map_err(csv_err)?.clone();
        let idx = column_index(file, &headers, &["icd10_code", "ccsr_description"])?;
        let mut map = CcsrMap::default();
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map_or(0, |p| p.line());
            let code = record.get(idx[0]).unwrap_or("").trim();
            let desc = record.get(idx[1]).unwrap_or("").trim();
            if code.is_empty() || desc.is_empty() {
                return Err(IngestError::BadRecord {
                    file: file.into(),
                    line,
                    detail: "empty code or description".into(),
                });
            }
            map.insert(code, desc);
        }
        Ok(map)
    }
}

pub fn load_ccsr_map(path: &Path) -> Result<CcsrMap, IngestError> {
    CcsrMap::from_bytes(&read_file(path)?, &path.display().to_string())
}

/// Category text for one encounter's codes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeText {
    pub categories: Vec<String>,
    pub unmapped: usize,
    pub removed_heart_failure: usize,
}

const EXCLUDED_CATEGORY: &str = "heart failure";

/// Maps codes to lowercase category descriptions, skipping unmapped codes
/// and removing the "heart failure" category.
pub fn codes_to_text(codes: &[String], map: &CcsrMap) -> CodeText {
    let mut out = CodeText::default();
    for code in codes {
        match map.lookup(code) {
            None => out.unmapped += 1,
            Some(desc) => {
                let desc = desc.trim().to_lowercase();
                if desc == EXCLUDED_CATEGORY {
                    out.removed_heart_failure += 1;
                } else {
                    out.categories.push(desc);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Section {
    Impression,
    Conclusion,
    Findings,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionExtraction {
    pub section_used: Section,
    pub text: String,
}

/// Headers that end a section without being candidates themselves.
const OTHER_HEADERS: &[&str] = &[
    "PROCEDURE",
    "EXAM",
    "EXAMINATION",
    "INDICATION",
    "INDICATIONS",
    "CLINICAL HISTORY",
    "HISTORY",
    "TECHNIQUE",
    "COMPARISON",
    "RECOMMENDATION",
    "RECOMMENDATIONS",
    "NOTE",
];

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let mut names = vec!["IMPRESSION", "CONCLUSION", "FINDINGS"];
        names.extend_from_slice(OTHER_HEADERS);
        Regex::new(&format!(r"(?im)^[ \t]*({})[ \t]*:", names.join("|"))).unwrap()
    })
}

fn section_of(name: &str) -> Section {
    match name.to_ascii_uppercase().as_str() {
        "IMPRESSION" => Section::Impression,
        "CONCLUSION" => Section::Conclusion,
        "FINDINGS" => Section::Findings,
        _ => Section::None,
    }
}

/// Picks the impression, else conclusion, else findings section of a
/// report. Headers count only at line start and followed by a colon.
pub fn extract_report_section(raw_text: &str) -> SectionExtraction {
    let headers: Vec<(Section, usize, usize)> = header_regex()
        .captures_iter(raw_text)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (section_of(&c[1]), whole.start(), whole.end())
        })
        .collect();
    for wanted in [Section::Impression, Section::Conclusion, Section::Findings] {
        for (i, &(section, _, body_start)) in headers.iter().enumerate() {
            if section != wanted {
                continue;
            }
            let body_end = headers.get(i + 1).map_or(raw_text.len(), |h| h.1);
            let text = raw_text[body_start..body_end].trim();
            if !text.is_empty() {
                return SectionExtraction { section_used: wanted, text: text.to_string() };
            }
        }
    }
    SectionExtraction { section_used: Section::None, text: String::new() }
}

/// Loads encounters, notes, and the CCSR map in one step.
pub fn load_cohort(encounters: &Path, notes: &Path) -> Result<CohortDataset, IngestError> {
    let dataset = parse_encounters(encounters)?;
    let note_bytes = read_file(notes)?;
    let parsed = parse_notes_bytes(&note_bytes, &notes.display().to_string())?;
    let mut dataset = attach_notes(dataset, parsed.clone())?;
    dataset.provenance.sources.push(SourceDigest {
        path: notes.display().to_string(),
        sha256: sha256_hex(&note_bytes),
        rows: parsed.len(),
    });
    Ok(dataset)
}
