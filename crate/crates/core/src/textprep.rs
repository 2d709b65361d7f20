//! Phrase segmentation, NegEx-style negation marking, disease-entity
//! filtering, and per-encounter document assembly.
//!
//! Procedure report sections go through `split_phrases` → `detect_negation`
//! → `entity_filter` → `merge_encounter`. Diagnostic category text skips the
//! negation and entity stages and is only tokenized.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CohortDataset, Encounter};
use crate::ingest::{codes_to_text, CcsrMap};
use crate::par::Execution;

pub const BUNDLED_GAZETTEER: &str = include_str!("../fixtures/gazetteer.txt");
pub const BUNDLED_STOPWORDS: &str = include_str!("../fixtures/stopwords.txt");
pub const BUNDLED_NEGEX: &str = include_str!("../fixtures/negex_triggers.txt");

/// Non-empty, trimmed, lowercased lines with `#` comments removed.
pub fn lexicon_lines(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines().filter_map(|line| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| line.to_lowercase())
    })
}

fn read_lexicon(path: &Path) -> std::io::Result<String> {
    std::fs::read_to_string(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phrase {
    pub text: String,
    pub negated: bool,
}

impl Phrase {
    pub fn affirmed(text: impl Into<String>) -> Self {
        Self { text: text.into(), negated: false }
    }

    pub fn negated(text: impl Into<String>) -> Self {
        Self { text: text.into(), negated: true }
    }

    pub fn render(&self) -> String {
        if self.negated {
            format!("no {}", self.text)
        } else {
            self.text.clone()
        }
    }
}

/// Splits on `.`, `;`, and newlines; trims and drops empty pieces.
pub fn split_phrases(section_text: &str) -> Vec<Phrase> {
    section_text
        .split(['.', ';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Phrase::affirmed)
        .collect()
}

/// Whitespace tokens with leading/trailing punctuation removed.
fn negex_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Lowercase alphanumeric runs, used for lexicon matching.
fn match_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Longest-match lookup of multi-token entries.
#[derive(Debug, Clone)]
struct PhraseTable<V> {
    entries: HashMap<Vec<String>, V>,
    max_len: usize,
}

impl<V> Default for PhraseTable<V> {
    fn default() -> Self {
        Self { entries: HashMap::new(), max_len: 0 }
    }
}

impl<V: Copy> PhraseTable<V> {
    fn insert(&mut self, phrase: &str, value: V, tokenize: impl Fn(&str) -> Vec<String>) {
        let key = tokenize(phrase);
        if key.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(key.len());
        self.entries.insert(key, value);
    }

    /// Longest entry starting at `start`, as (length, value).
    fn longest_at<S: AsRef<str>>(&self, tokens: &[S], start: usize) -> Option<(usize, V)> {
        let limit = self.max_len.min(tokens.len() - start);
        let mut key: Vec<String> = tokens[start..start + limit].iter().map(|t| t.as_ref().to_lowercase()).collect();
        for len in (1..=limit).rev() {
            key.truncate(len);
            if let Some(&v) = self.entries.get(&key) {
                return Some((len, v));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Cue {
    // Order doubles as priority for equal-length entries.
    Termination,
    Pre,
    Post,
    Pseudo,
}

/// Negation cues. Entries are lowercase; matching is case-insensitive.
#[derive(Debug, Clone)]
pub struct NegexLexicon {
    pre_triggers: Vec<String>,
    post_triggers: Vec<String>,
    pseudo_triggers: Vec<String>,
    termination_terms: Vec<String>,
    scope_window: usize,
    table: PhraseTable<Cue>,
}

fn lower_tokens(s: &str) -> Vec<String> {
    negex_tokens(s).into_iter().map(str::to_lowercase).collect()
}

impl NegexLexicon {
    pub const DEFAULT_WINDOW: usize = 5;

    pub fn new(
        pre_triggers: Vec<String>,
        post_triggers: Vec<String>,
        pseudo_triggers: Vec<String>,
        termination_terms: Vec<String>,
        scope_window: usize,
    ) -> Self {
        let pre_triggers: Vec<String> = pre_triggers.into_iter().map(|t| t.to_lowercase()).collect();
        let post_triggers: Vec<String> = post_triggers.into_iter().map(|t| t.to_lowercase()).collect();
        let pseudo_triggers: Vec<String> = pseudo_triggers.into_iter().map(|t| t.to_lowercase()).collect();
        let termination_terms: Vec<String> = termination_terms.into_iter().map(|t| t.to_lowercase()).collect();
        let mut table = PhraseTable::default();
        // Later inserts win on identical keys, so insert in ascending priority.
        for (list, cue) in [
            (&termination_terms, Cue::Termination),
            (&pre_triggers, Cue::Pre),
            (&post_triggers, Cue::Post),
            (&pseudo_triggers, Cue::Pseudo),
        ] {
            for phrase in list {
                table.insert(phrase, cue, lower_tokens);
            }
        }
        Self {
            pre_triggers,
            post_triggers,
            pseudo_triggers,
            termination_terms,
            scope_window,
            table,
        }
    }

    /// Parses `kind: phrase` lines; a line without a kind is a pre-trigger.
    pub fn from_text(text: &str, scope_window: usize) -> Self {
        let (mut pre, mut post, mut pseudo, mut term) = (vec![], vec![], vec![], vec![]);
        for line in lexicon_lines(text) {
            let (kind, phrase) = match line.split_once(':') {
                Some((k, p)) if ["pre", "post", "pseudo", "term"].contains(&k.trim()) => {
                    (k.trim().to_string(), p.trim().to_string())
                }
                _ => ("pre".to_string(), line.clone()),
            };
            match kind.as_str() {
                "post" => post.push(phrase),
                "pseudo" => pseudo.push(phrase),
                "term" => term.push(phrase),
                _ => pre.push(phrase),
            }
        }
        Self::new(pre, post, pseudo, term, scope_window)
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_NEGEX, Self::DEFAULT_WINDOW)
    }

    pub fn load(path: &Path, scope_window: usize) -> std::io::Result<Self> {
        Ok(Self::from_text(&read_lexicon(path)?, scope_window))
    }

    pub fn pre_triggers(&self) -> &[String] {
        &self.pre_triggers
    }

    pub fn post_triggers(&self) -> &[String] {
        &self.post_triggers
    }

    pub fn pseudo_triggers(&self) -> &[String] {
        &self.pseudo_triggers
    }

    pub fn termination_terms(&self) -> &[String] {
        &self.termination_terms
    }

    pub fn scope_window(&self) -> usize {
        self.scope_window
    }
}

impl Default for NegexLexicon {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Word,
    /// Part of a pseudo-trigger: kept as text, but no scope crosses it.
    Pseudo,
    Cue(Cue, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Claim {
    Free,
    /// Cue or termination tokens consumed by a scope.
    Consumed,
    Scope(usize),
}

/// Marks negated concepts in one phrase.
///
/// A pre-trigger negates up to `scope_window` following words, a
/// post-trigger up to `scope_window` preceding words; a scope stops early at
/// a termination term (which is consumed) or at another cue. Pseudo-triggers
/// stay in the text and bound scopes. Cues whose scope would be empty stay
/// in the text.
/// Negated spans are lowercased. Unclaimed words form affirmative phrases
/// in their original order. A phrase with no negation is returned unchanged.
pub fn detect_negation(phrase: &Phrase, lexicon: &NegexLexicon) -> Vec<Phrase> {
    let tokens = negex_tokens(&phrase.text);
    let n = tokens.len();
    if n == 0 {
        return Vec::new();
    }
    let table = &lexicon.table;

    let mut slots = vec![Slot::Word; n];
    let mut cues = Vec::new();
    let mut i = 0;
    while i < n {
        match table.longest_at(&tokens, i) {
            Some((len, Cue::Pseudo)) => {
                slots[i..i + len].fill(Slot::Pseudo);
                i += len;
            }
            Some((len, cue)) => {
                for slot in &mut slots[i..i + len] {
                    *slot = Slot::Cue(cue, i);
                }
                cues.push((cue, i, i + len));
                i += len;
            }
            None => i += 1,
        }
    }

    let mut claims = vec![Claim::Free; n];
    let mut scopes: Vec<(usize, usize)> = Vec::new();
    let window = lexicon.scope_window;

    let mut open_scope = |cue_start: usize, cue_end: usize, positions: &mut dyn Iterator<Item = usize>,
                          claims: &mut Vec<Claim>| {
        let id = scopes.len();
        let mut taken = Vec::new();
        let mut stop_term = None;
        for j in positions {
            if taken.len() == window {
                break;
            }
            match slots[j] {
                Slot::Word if claims[j] == Claim::Free => taken.push(j),
                Slot::Cue(Cue::Termination, start) if claims[j] == Claim::Free => {
                    stop_term = Some(start);
                    break;
                }
                _ => break,
            }
        }
        if taken.is_empty() {
            return;
        }
        let (lo, hi) = (*taken.iter().min().unwrap(), *taken.iter().max().unwrap());
        for &j in &taken {
            claims[j] = Claim::Scope(id);
        }
        for claim in &mut claims[cue_start..cue_end] {
            *claim = Claim::Consumed;
        }
        if let Some(start) = stop_term {
            for j in start..n {
                if slots[j] != Slot::Cue(Cue::Termination, start) {
                    break;
                }
                claims[j] = Claim::Consumed;
            }
        }
        scopes.push((lo, hi + 1));
    };

    for &(cue, start, end) in &cues {
        if cue == Cue::Pre {
            open_scope(start, end, &mut (end..n), &mut claims);
        }
    }
    for &(cue, start, end) in &cues {
        if cue == Cue::Post && claims[start] == Claim::Free {
            open_scope(start, end, &mut (0..start).rev(), &mut claims);
        }
    }

    if scopes.is_empty() {
        return vec![phrase.clone()];
    }

    let mut out = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let mut j = 0;
    while j < n {
        match claims[j] {
            Claim::Free => {
                run.push(tokens[j]);
                j += 1;
            }
            Claim::Consumed => {
                flush(&mut run, &mut out);
                j += 1;
            }
            Claim::Scope(id) => {
                flush(&mut run, &mut out);
                let (lo, hi) = scopes[id];
                out.push(Phrase::negated(tokens[lo..hi].join(" ").to_lowercase()));
                j = hi;
            }
        }
    }
    flush(&mut run, &mut out);
    out
}

fn flush(run: &mut Vec<&str>, out: &mut Vec<Phrase>) {
    if !run.is_empty() {
        out.push(Phrase::affirmed(run.join(" ")));
        run.clear();
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiseaseGazetteer {
    pub terms: BTreeSet<String>,
    pub stop_entities: BTreeSet<String>,
    term_table: PhraseTable<()>,
    stop_table: PhraseTable<()>,
}

impl DiseaseGazetteer {
    /// Builds from term and stop-entity lists. A term that is also listed as
    /// a stop entity is kept only as a stop entity.
    pub fn new<I, J>(terms: I, stop_entities: J) -> Self
    where
        I: IntoIterator<Item = String>,
        J: IntoIterator<Item = String>,
    {
        let stop_entities: BTreeSet<String> = stop_entities.into_iter().map(|s| s.to_lowercase()).collect();
        let terms: BTreeSet<String> =
            terms.into_iter().map(|s| s.to_lowercase()).filter(|t| !stop_entities.contains(t)).collect();
        let mut term_table = PhraseTable::default();
        for t in &terms {
            term_table.insert(t, (), match_tokens);
        }
        let mut stop_table = PhraseTable::default();
        for t in &stop_entities {
            stop_table.insert(t, (), match_tokens);
        }
        Self { terms, stop_entities, term_table, stop_table }
    }

    /// Terms one per line; `!`-prefixed lines are stop entities.
    pub fn from_text(text: &str) -> Self {
        let (stops, terms): (Vec<String>, Vec<String>) = lexicon_lines(text).partition(|l| l.starts_with('!'));
        Self::new(terms, stops.into_iter().map(|s| s.trim_start_matches('!').trim().to_string()))
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_GAZETTEER)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_text(&read_lexicon(path)?))
    }

    /// Non-overlapping longest matches of gazetteer terms, left to right.
    pub fn matched_terms(&self, text: &str) -> Vec<String> {
        let tokens = match_tokens(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.term_table.longest_at(&tokens, i) {
                Some((len, ())) => {
                    out.push(tokens[i..i + len].join(" "));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn has_stop_entity(&self, text: &str) -> bool {
        let tokens = match_tokens(text);
        (0..tokens.len()).any(|i| self.stop_table.longest_at(&tokens, i).is_some())
    }
}

/// Keeps phrases whose rendered text names a gazetteer term and no generic
/// stop entity.
pub fn entity_filter(phrases: &[Phrase], gazetteer: &DiseaseGazetteer) -> Vec<Phrase> {
    phrases
        .iter()
        .filter(|p| {
            let rendered = p.render();
            !gazetteer.matched_terms(&rendered).is_empty() && !gazetteer.has_stop_entity(&rendered)
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn from_text(text: &str) -> Self {
        Self(lexicon_lines(text).collect())
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_STOPWORDS)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_text(&read_lexicon(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_numeric(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_digit()) && token.chars().all(|c| c.is_ascii_digit() || c == '-')
}

/// Lowercase tokens split on non-alphanumeric characters (internal hyphens
/// kept), without stop words or purely numeric tokens.
pub fn tokenize(text: &str, stopwords: &StopWords) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty() && !is_numeric(t) && !stopwords.contains(t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocSource {
    Diagnostic,
    Procedure,
}

impl DocSource {
    pub fn name(self) -> &'static str {
        match self {
            DocSource::Diagnostic => "diagnostic",
            DocSource::Procedure => "procedure",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            DocSource::Diagnostic => "diag",
            DocSource::Procedure => "proc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterDocument {
    pub encounter_id: String,
    pub source: DocSource,
    pub tokens: Vec<String>,
}

impl EncounterDocument {
    /// Empty documents are excluded from topic fitting.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Concatenates rendered phrases note by note, keeps the first occurrence of
/// each rendered phrase, and tokenizes.
pub fn merge_encounter(
    phrases_by_note: &[Vec<Phrase>],
    encounter_id: &str,
    source: DocSource,
    stopwords: &StopWords,
) -> EncounterDocument {
    let mut seen = HashSet::new();
    let mut tokens = Vec::new();
    for phrase in phrases_by_note.iter().flatten() {
        let rendered = phrase.render().to_lowercase();
        let key = rendered.split_whitespace().collect::<Vec<_>>().join(" ");
        if seen.insert(key) {
            tokens.extend(tokenize(&rendered, stopwords));
        }
    }
    EncounterDocument { encounter_id: encounter_id.to_string(), source, tokens }
}

/// The lexicons for one preprocessing run.
#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    pub negex: NegexLexicon,
    pub gazetteer: DiseaseGazetteer,
    pub stopwords: StopWords,
}

/// Both documents for one encounter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterDocs {
    pub diagnostic: EncounterDocument,
    pub procedure: EncounterDocument,
    pub unmapped_codes: usize,
}

impl Preprocessor {
    pub fn bundled() -> Self {
        Self { negex: NegexLexicon::bundled(), gazetteer: DiseaseGazetteer::bundled(), stopwords: StopWords::bundled() }
    }

    /// Negation-marked, entity-filtered phrases of one report section.
    pub fn section_phrases(&self, section_text: &str) -> Vec<Phrase> {
        let phrases: Vec<Phrase> =
            split_phrases(section_text).iter().flat_map(|p| detect_negation(p, &self.negex)).collect();
        entity_filter(&phrases, &self.gazetteer)
    }

    pub fn procedure_document(&self, encounter: &Encounter) -> EncounterDocument {
        let per_note: Vec<Vec<Phrase>> = encounter
            .procedure_notes
            .iter()
            .filter_map(|n| n.extracted_text.as_deref())
            .map(|text| self.section_phrases(text))
            .collect();
        merge_encounter(&per_note, &encounter.encounter_id, DocSource::Procedure, &self.stopwords)
    }

    pub fn diagnostic_document(&self, encounter_id: &str, categories: &[String]) -> EncounterDocument {
        let tokens = categories.iter().flat_map(|c| tokenize(c, &self.stopwords)).collect();
        EncounterDocument { encounter_id: encounter_id.to_string(), source: DocSource::Diagnostic, tokens }
    }

    /// Both documents for every encounter, in dataset order.
    pub fn process(&self, dataset: &CohortDataset, ccsr: &CcsrMap, exec: Execution) -> Vec<EncounterDocs> {
        exec.map(dataset.encounters(), |e| {
            let text = codes_to_text(&e.diagnostic_codes, ccsr);
            EncounterDocs {
                diagnostic: self.diagnostic_document(&e.encounter_id, &text.categories),
                procedure: self.procedure_document(e),
                unmapped_codes: text.unmapped,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn neg(text: &str) -> Vec<Phrase> {
        detect_negation(&Phrase::affirmed(text), &NegexLexicon::bundled())
    }

    fn negated_rendered(text: &str) -> Vec<String> {
        neg(text).into_iter().filter(|p| p.negated).map(|p| p.render()).collect()
    }

    #[test]
    fn split_examples() {
        let texts: Vec<String> = split_phrases("A. B; C").into_iter().map(|p| p.text).collect();
        assert_eq!(texts, vec!["A", "B", "C"]);
        assert!(split_phrases("").is_empty());
        let findings = "There is redemonstration of moderate cardiomegaly. There is pulmonary vascular redistribution with interstitial opacity. The aorta is tortuous with calcifications of the arch. No pleural effusion is visualized. There is no pneumothorax.";
        let p = split_phrases(findings);
        assert_eq!(p.len(), 5);
        assert_eq!(p[0].text, "There is redemonstration of moderate cardiomegaly");
    }

    #[test]
    fn negation_examples() {
        assert_eq!(negated_rendered("No pleural effusion is visualized"), vec!["no pleural effusion"]);
        let enlarged = "The prostate gland is enlarged with pelvic lymphadenopathy";
        assert_eq!(neg(enlarged), vec![Phrase::affirmed(enlarged)]);
        assert_eq!(neg("no edema but effusion present"), vec![Phrase::negated("edema"), Phrase::affirmed("effusion present")]);
        assert_eq!(
            negated_rendered("The prostate gland is normal in size with no pelvic lymphadenopathy"),
            vec!["no pelvic lymphadenopathy"]
        );
        assert_eq!(negated_rendered("There is no pneumothorax"), vec!["no pneumothorax"]);
    }

    #[test]
    fn post_and_pseudo_triggers() {
        assert_eq!(negated_rendered("Pneumothorax is not seen"), vec!["no pneumothorax"]);
        assert!(negated_rendered("No change in cardiomegaly").is_empty());
        assert_eq!(negated_rendered("negative for pneumonia"), vec!["no pneumonia"]);
        // a trigger with nothing to negate stays as text
        assert_eq!(neg("effusion not"), vec![Phrase::affirmed("effusion not")]);
        assert_eq!(neg("no"), vec![Phrase::affirmed("no")]);
        // a post-trigger scope does not reach back into a pseudo-trigger
        assert_eq!(neg("no change not seen"), vec![Phrase::affirmed("no change not seen")]);
    }

    #[test]
    fn scope_window_limits_span() {
        let out = neg("no a b c d e f g");
        assert_eq!(out, vec![Phrase::negated("a b c d e"), Phrase::affirmed("f g")]);
    }

    #[test]
    fn entity_filter_examples() {
        let g = DiseaseGazetteer::bundled();
        let kept = entity_filter(&[Phrase::affirmed("moderate cardiomegaly")], &g);
        assert_eq!(kept.len(), 1);
        assert!(entity_filter(&[Phrase::affirmed("electronically signed")], &g).is_empty());
        assert!(entity_filter(&[Phrase::affirmed("pleural effusion electronically signed")], &g).is_empty());
        assert!(entity_filter(&[], &g).is_empty());
        assert!(entity_filter(&[Phrase::negated("pleural effusion")], &g).len() == 1);
        assert_eq!(g.matched_terms("left atrial enlargement and effusion"), vec!["left atrial enlargement", "effusion"]);
        assert!(g.terms.is_disjoint(&g.stop_entities));
    }

    #[test]
    fn merge_examples() {
        let sw = StopWords::bundled();
        let notes = vec![vec![Phrase::negated("pleural effusion")], vec![Phrase::negated("pleural effusion")]];
        let doc = merge_encounter(&notes, "e1", DocSource::Procedure, &sw);
        assert_eq!(doc.tokens, vec!["no", "pleural", "effusion"]);

        let doc = merge_encounter(&[vec![Phrase::affirmed("grade 2 edema")]], "e1", DocSource::Procedure, &sw);
        assert_eq!(doc.tokens, vec!["grade", "edema"]);

        let doc = merge_encounter(&[], "e1", DocSource::Procedure, &sw);
        assert!(doc.is_empty());
    }

    #[test]
    fn tokenizer_keeps_internal_hyphens() {
        let sw = StopWords::bundled();
        assert_eq!(tokenize("T-wave abnormality, -3 x 2-3 cm", &sw), vec!["t-wave", "abnormality", "x", "cm"]);
        assert!(!sw.contains("no"));
    }

    #[test]
    fn lexicon_files_parse() {
        let lex = NegexLexicon::bundled();
        assert!(lex.pre_triggers().contains(&"no".to_string()));
        assert!(lex.termination_terms().contains(&"but".to_string()));
        assert_eq!(lex.scope_window(), 5);
        assert!(lex.pre_triggers().iter().chain(lex.termination_terms()).all(|t| t == &t.to_lowercase()));
        assert!(StopWords::bundled().len() > 140);
    }

    #[test]
    fn fig1_procedure_document() {
        let p = Preprocessor::bundled();
        let phrases: Vec<String> = p
            .section_phrases("Redemonstration of moderate cardiomegaly with interstitial edema.")
            .iter()
            .map(Phrase::render)
            .collect();
        assert_eq!(phrases, vec!["Redemonstration of moderate cardiomegaly with interstitial edema"]);
    }

    fn sentence() -> impl Strategy<Value = String> {
        let words = vec![
            "no", "not", "without", "but", "is", "seen", "effusion", "pleural", "cardiomegaly", "mild", "there",
            "change", "negative", "for", "absent", "however", "edema", "not seen", "no evidence of", "the",
        ];
        proptest::collection::vec(proptest::sample::select(words), 0..12).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn negation_is_idempotent_on_rendered_text(s in sentence()) {
            let lex = NegexLexicon::bundled();
            for p in detect_negation(&Phrase::affirmed(s.clone()), &lex) {
                prop_assert!(!p.text.is_empty());
                prop_assert_eq!(p.text.trim(), p.text.as_str());
                let rendered = p.render();
                let again: Vec<String> =
                    detect_negation(&Phrase::affirmed(rendered.clone()), &lex).iter().map(Phrase::render).collect();
                prop_assert_eq!(again.join(" "), rendered.clone());
                if p.negated {
                    prop_assert!(!rendered.starts_with("no no "));
                }
            }
        }

        #[test]
        fn entity_filter_is_subset(s in proptest::collection::vec(sentence(), 0..6)) {
            let g = DiseaseGazetteer::bundled();
            let phrases: Vec<Phrase> = s.into_iter().filter(|t| !t.trim().is_empty()).map(Phrase::affirmed).collect();
            let kept = entity_filter(&phrases, &g);
            prop_assert!(kept.iter().all(|k| phrases.contains(k)));
        }

        #[test]
        fn documents_are_clean_and_stable(s in proptest::collection::vec(sentence(), 0..6)) {
            let sw = StopWords::bundled();
            let notes: Vec<Vec<Phrase>> = s.iter().map(|t| split_phrases(t)).collect();
            let a = merge_encounter(&notes, "e", DocSource::Procedure, &sw);
            let b = merge_encounter(&notes, "e", DocSource::Procedure, &sw);
            prop_assert_eq!(&a, &b);
            for t in &a.tokens {
                prop_assert_eq!(t, &t.to_lowercase());
                prop_assert!(!is_numeric(t));
                prop_assert!(!sw.contains(t));
            }
        }
    }
}
