//! Interchange types and file formats.
//!
//! Corpus, bundle, annotation and vector files are JSONL (one record per
//! line, UTF-8). Lexicons are plain text, one term per line with an
//! optional TAB-separated concept id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trie::CharTrie;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid record(s):\n{}", .0.len(), RecordErrors(.0))]
    Records(Vec<RecordError>),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
}

/// One rejected line of an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id {:?}): {}", self.line, id, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

struct RecordErrors<'a>(&'a [RecordError]);

impl fmt::Display for RecordErrors<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {e}")?;
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Chinese,
}

impl Language {
    /// Case folding used for every English comparison: simple per-character
    /// lowercase. Characters whose lowercase form is not a single character
    /// are kept as-is so character offsets survive folding.
    pub fn fold_char(self, c: char) -> char {
        match self {
            Language::Chinese => c,
            Language::English => {
                let mut lower = c.to_lowercase();
                match (lower.next(), lower.next()) {
                    (Some(l), None) => l,
                    _ => c,
                }
            }
        }
    }

    pub fn fold(self, s: &str) -> String {
        s.chars().map(|c| self.fold_char(c)).collect()
    }

    /// Whether matches must sit on word boundaries.
    pub fn uses_word_boundaries(self) -> bool {
        matches!(self, Language::English)
    }

    /// Separator used when joining text fragments.
    pub fn joiner(self) -> &'static str {
        match self {
            Language::English => " ",
            Language::Chinese => "",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::English => "english",
            Language::Chinese => "chinese",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Doctor,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Text(String),
    Dialogue(Vec<Utterance>),
}

/// A source document (or dialogue) paired with its reference summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRecord", into = "InstanceRecord")]
pub struct TrainingInstance {
    pub id: String,
    pub source: Source,
    pub reference: String,
    pub language: Language,
}

impl TrainingInstance {
    /// The whole source as one string; utterances are joined by newlines.
    pub fn source_text(&self) -> String {
        match &self.source {
            Source::Text(t) => t.clone(),
            Source::Dialogue(us) => us
                .iter()
                .map(|u| u.text.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }

    pub fn is_dialogue(&self) -> bool {
        matches!(self.source, Source::Dialogue(_))
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utterances: Option<Vec<Utterance>>,
    reference: String,
    language: Language,
}

impl TryFrom<InstanceRecord> for TrainingInstance {
    type Error = String;

    fn try_from(r: InstanceRecord) -> Result<Self, String> {
        if r.id.is_empty() {
            return Err("empty id".into());
        }
        if r.reference.trim().is_empty() {
            return Err("empty reference".into());
        }
        let source = match (r.source, r.utterances) {
            (Some(s), None) => Source::Text(s),
            (None, Some(us)) if us.is_empty() => return Err("dialogue has no utterances".into()),
            (None, Some(us)) => Source::Dialogue(us),
            (Some(_), Some(_)) => return Err("record has both `source` and `utterances`".into()),
            (None, None) => return Err("record has neither `source` nor `utterances`".into()),
        };
        Ok(TrainingInstance {
            id: r.id,
            source,
            reference: r.reference,
            language: r.language,
        })
    }
}

impl From<TrainingInstance> for InstanceRecord {
    fn from(i: TrainingInstance) -> Self {
        let (source, utterances) = match i.source {
            Source::Text(t) => (Some(t), None),
            Source::Dialogue(us) => (None, Some(us)),
        };
        InstanceRecord {
            id: i.id,
            source,
            utterances,
            reference: i.reference,
            language: i.language,
        }
    }
}

/// Pulls the `id` field out of a line that failed to deserialize, so the
/// error can name the record.
fn sniff_id(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("id")
        .or_else(|| v.get("instance_id"))?
        .as_str()
        .map(str::to_owned)
}

/// Parses JSONL records, collecting every bad line instead of stopping at
/// the first one. Blank lines are ignored.
pub fn parse_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                errors.push(RecordError {
                    line: n + 1,
                    id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(v) => out.push(v),
            Err(e) => errors.push(RecordError {
                line: n + 1,
                id: sniff_id(&line),
                message: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(CorpusError::Records(errors))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_jsonl(file)
}

/// Serializes records one per line, each line terminated by `\n`.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        // Serialization of these plain data types cannot fail.
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses a corpus and checks corpus-level invariants (unique ids).
pub fn parse_corpus<R: Read>(reader: R) -> Result<Vec<TrainingInstance>, CorpusError> {
    let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                errors.push(RecordError {
                    line: line_no,
                    id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrainingInstance>(&line) {
            Ok(inst) => {
                if let Some(first) = first_seen.get(&inst.id) {
                    errors.push(RecordError {
                        line: line_no,
                        id: Some(inst.id.clone()),
                        message: format!("duplicate id (first seen on line {first})"),
                    });
                } else {
                    first_seen.insert(inst.id.clone(), line_no);
                    out.push(inst);
                }
            }
            Err(e) => errors.push(RecordError {
                line: line_no,
                id: sniff_id(&line),
                message: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(CorpusError::Records(errors))
    }
}

/// Loads a JSONL corpus, preserving file order.
pub fn load_corpus(path: &Path) -> Result<Vec<TrainingInstance>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_corpus(file)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    /// Surface form as first seen in the lexicon file.
    pub surface: String,
    pub concept_id: Option<String>,
}

/// The set of recognized medical terms.
///
/// English terms are matched case-insensitively, Chinese terms exactly.
/// A lexicon always holds at least one term.
#[derive(Debug, Clone)]
pub struct MedicalLexicon {
    language: Language,
    entries: BTreeMap<String, LexiconEntry>,
    pub(crate) trie: CharTrie<String>,
}

impl MedicalLexicon {
    pub fn new<I, S>(language: Language, terms: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, Option<String>)>,
        S: AsRef<str>,
    {
        let mut entries: BTreeMap<String, LexiconEntry> = BTreeMap::new();
        for (term, concept_id) in terms {
            let term = term.as_ref().trim();
            if term.is_empty() {
                continue;
            }
            let key = language.fold(term);
            let entry = entries.entry(key).or_insert_with(|| LexiconEntry {
                surface: term.to_owned(),
                concept_id: None,
            });
            if entry.concept_id.is_none() {
                entry.concept_id = concept_id.filter(|c| !c.is_empty());
            }
        }
        if entries.is_empty() {
            return Err(CorpusError::EmptyLexicon);
        }
        let mut trie = CharTrie::default();
        for key in entries.keys() {
            trie.insert(key.chars(), key.clone());
        }
        Ok(MedicalLexicon {
            language,
            entries,
            trie,
        })
    }

    /// Parses the lexicon text format: one term per line, optionally
    /// followed by a TAB and a concept id. Blank lines are skipped.
    pub fn parse(language: Language, text: &str) -> Result<Self, CorpusError> {
        let terms =
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|line| match line.split_once('\t') {
                    Some((term, cid)) => (term.to_owned(), Some(cid.trim().to_owned())),
                    None => (line.to_owned(), None),
                });
        Self::new(language, terms)
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical matching key of an arbitrary string.
    pub fn canonical(&self, term: &str) -> String {
        self.language.fold(term)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(&self.canonical(term))
    }

    pub fn get(&self, term: &str) -> Option<&LexiconEntry> {
        self.entries.get(&self.canonical(term))
    }

    /// Canonical keys in sorted order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &LexiconEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Canonical text form: entries sorted by key, surface forms written.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for entry in self.entries.values() {
            out.push_str(&entry.surface);
            if let Some(cid) = &entry.concept_id {
                out.push('\t');
                out.push_str(cid);
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_lexicon(path: &Path, language: Language) -> Result<MedicalLexicon, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    MedicalLexicon::parse(language, &text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Which construction rule produced a summary in a contrastive bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ReferenceValidated,
    ReferenceFailedValidation,
    ExtractedSentence,
    BackTranslation,
    FirstUtterance,
    ConceptReplaced,
    ConceptAppended,
    AttributeChanged,
    EntitySwapped,
    LogicInverted,
}

impl Provenance {
    pub const ALL: [Provenance; 10] = [
        Provenance::ReferenceValidated,
        Provenance::ReferenceFailedValidation,
        Provenance::ExtractedSentence,
        Provenance::BackTranslation,
        Provenance::FirstUtterance,
        Provenance::ConceptReplaced,
        Provenance::ConceptAppended,
        Provenance::AttributeChanged,
        Provenance::EntitySwapped,
        Provenance::LogicInverted,
    ];

    pub fn polarity(self) -> Polarity {
        use Provenance::*;
        match self {
            ReferenceValidated | ExtractedSentence | BackTranslation | FirstUtterance => {
                Polarity::Positive
            }
            ReferenceFailedValidation
            | ConceptReplaced
            | ConceptAppended
            | AttributeChanged
            | EntitySwapped
            | LogicInverted => Polarity::Negative,
        }
    }

    pub fn as_str(self) -> &'static str {
        use Provenance::*;
        match self {
            ReferenceValidated => "reference_validated",
            ReferenceFailedValidation => "reference_failed_validation",
            ExtractedSentence => "extracted_sentence",
            BackTranslation => "back_translation",
            FirstUtterance => "first_utterance",
            ConceptReplaced => "concept_replaced",
            ConceptAppended => "concept_appended",
            AttributeChanged => "attribute_changed",
            EntitySwapped => "entity_swapped",
            LogicInverted => "logic_inverted",
        }
    }
}

/// A summary in a contrastive set together with how it was made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabeledSummaryRecord")]
pub struct LabeledSummary {
    pub text: String,
    pub polarity: Polarity,
    pub provenance: Provenance,
    /// Name of the paraphrase provider, set on back-translated summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphraser: Option<String>,
    /// Lexicon term inserted by concept replacement or appending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub introduced_term: Option<String>,
}

impl LabeledSummary {
    pub fn new(text: impl Into<String>, provenance: Provenance) -> Self {
        LabeledSummary {
            text: text.into(),
            polarity: provenance.polarity(),
            provenance,
            paraphraser: None,
            introduced_term: None,
        }
    }
}

#[derive(Deserialize)]
struct LabeledSummaryRecord {
    text: String,
    polarity: Polarity,
    provenance: Provenance,
    #[serde(default)]
    paraphraser: Option<String>,
    #[serde(default)]
    introduced_term: Option<String>,
}

impl TryFrom<LabeledSummaryRecord> for LabeledSummary {
    type Error = String;

    fn try_from(r: LabeledSummaryRecord) -> Result<Self, String> {
        if r.provenance.polarity() != r.polarity {
            return Err(format!(
                "provenance {} is not {:?}",
                r.provenance.as_str(),
                r.polarity
            ));
        }
        Ok(LabeledSummary {
            text: r.text,
            polarity: r.polarity,
            provenance: r.provenance,
            paraphraser: r.paraphraser,
            introduced_term: r.introduced_term,
        })
    }
}

/// Per-instance positive set P and negative set N.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveBundle {
    pub instance_id: String,
    pub positives: Vec<LabeledSummary>,
    pub negatives: Vec<LabeledSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleViolation {
    #[error("bundle {0}: fewer than {1} positives")]
    TooFewPositives(String, usize),
    #[error("bundle {0}: no negatives")]
    NoNegatives(String),
    #[error("bundle {0}: {1:?} appears in both sets")]
    SharedSummary(String, String),
    #[error("bundle {0}: {1:?} is in the wrong set for its provenance")]
    WrongSet(String, String),
}

impl ContrastiveBundle {
    pub fn check_invariants(&self, min_positives: usize) -> Result<(), BundleViolation> {
        let id = || self.instance_id.clone();
        if self.positives.len() < min_positives.max(2) {
            return Err(BundleViolation::TooFewPositives(id(), min_positives.max(2)));
        }
        if self.negatives.is_empty() {
            return Err(BundleViolation::NoNegatives(id()));
        }
        for (set, polarity) in [
            (&self.positives, Polarity::Positive),
            (&self.negatives, Polarity::Negative),
        ] {
            if let Some(s) = set
                .iter()
                .find(|s| s.polarity != polarity || s.provenance.polarity() != polarity)
            {
                return Err(BundleViolation::WrongSet(id(), s.text.clone()));
            }
        }
        let positives: BTreeSet<&str> = self.positives.iter().map(|s| s.text.as_str()).collect();
        if let Some(s) = self
            .negatives
            .iter()
            .find(|s| positives.contains(s.text.as_str()))
        {
            return Err(BundleViolation::SharedSummary(id(), s.text.clone()));
        }
        Ok(())
    }
}

/// Error categories of the faithfulness taxonomy, plus `None` for a
/// faithful summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    EntityRelationship,
    Entity,
    Negation,
    Question,
    Modifier,
    Template,
    ExtraneousFact,
    LowSpecificity,
    None,
}

impl ErrorCategory {
    /// Every error category, excluding `None`.
    pub const ERRORS: [ErrorCategory; 8] = [
        ErrorCategory::EntityRelationship,
        ErrorCategory::Entity,
        ErrorCategory::Negation,
        ErrorCategory::Question,
        ErrorCategory::Modifier,
        ErrorCategory::Template,
        ErrorCategory::ExtraneousFact,
        ErrorCategory::LowSpecificity,
    ];

    pub fn is_intrinsic(self) -> bool {
        use ErrorCategory::*;
        matches!(
            self,
            EntityRelationship | Entity | Negation | Question | Modifier
        )
    }

    pub fn is_extrinsic(self) -> bool {
        use ErrorCategory::*;
        matches!(self, Template | ExtraneousFact | LowSpecificity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub instance_id: String,
    pub category: ErrorCategory,
    pub annotator_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THREE: &str = r#"{"id":"a","source":"Take erythromycin.","reference":"take erythromycin","language":"english"}
{"id":"b","source":"Fever for 5 days.","reference":"fever","language":"english"}
{"id":"c","utterances":[{"role":"patient","text":"可以吗"},{"role":"doctor","text":"可以"}],"reference":"可以","language":"chinese"}
"#;

    #[test]
    fn loads_records_in_order() {
        let corpus = parse_corpus(THREE.as_bytes()).unwrap();
        let ids: Vec<_> = corpus.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(corpus[2].is_dialogue());
    }

    #[test]
    fn empty_reference_names_the_record() {
        let bad = r#"{"id":"ok","source":"x","reference":"y","language":"english"}
{"id":"empty-ref","source":"x","reference":"","language":"english"}"#;
        match parse_corpus(bad.as_bytes()) {
            Err(CorpusError::Records(errs)) => {
                assert_eq!(errs.len(), 1);
                assert_eq!(errs[0].line, 2);
                assert_eq!(errs[0].id.as_deref(), Some("empty-ref"));
                assert!(errs[0].message.contains("empty reference"));
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_malformed_lines_are_all_reported() {
        let bad = "{\"id\":\"a\",\"source\":\"x\",\"reference\":\"y\",\"language\":\"english\"}\nnot json\n{\"id\":\"a\",\"source\":\"x\",\"reference\":\"z\",\"language\":\"english\"}\n";
        let Err(CorpusError::Records(errs)) = parse_corpus(bad.as_bytes()) else {
            panic!("expected errors");
        };
        assert_eq!(errs.len(), 2);
        assert_eq!(errs[0].line, 2);
        assert!(errs[1].message.contains("duplicate id"));
    }

    #[test]
    fn dialogue_keeps_utterance_order() {
        let us: Vec<_> = (0..5)
            .map(|i| {
                format!(
                    r#"{{"role":"{}","text":"u{i}"}}"#,
                    if i % 2 == 0 { "patient" } else { "doctor" }
                )
            })
            .collect();
        let line = format!(
            r#"{{"id":"d","utterances":[{}],"reference":"r","language":"english"}}"#,
            us.join(",")
        );
        let corpus = parse_corpus(line.as_bytes()).unwrap();
        let Source::Dialogue(ref got) = corpus[0].source else {
            panic!("expected dialogue")
        };
        let texts: Vec<_> = got.iter().map(|u| u.text.as_str()).collect();
        assert_eq!(texts, ["u0", "u1", "u2", "u3", "u4"]);
    }

    #[test]
    fn source_and_utterances_are_exclusive() {
        let both = r#"{"id":"x","source":"s","utterances":[{"role":"other","text":"t"}],"reference":"r","language":"english"}"#;
        assert!(parse_corpus(both.as_bytes()).is_err());
        let none = r#"{"id":"x","utterances":[],"reference":"r","language":"english"}"#;
        assert!(parse_corpus(none.as_bytes()).is_err());
    }

    #[test]
    fn lexicon_case_folds_english() {
        let lex = MedicalLexicon::parse(Language::English, "Vitamin K\nvitamin k\n").unwrap();
        assert_eq!(lex.len(), 1);
        assert!(lex.contains("VITAMIN K"));
        assert_eq!(lex.get("vitamin k").unwrap().surface, "Vitamin K");
    }

    #[test]
    fn lexicon_chinese_is_exact() {
        let lex = MedicalLexicon::parse(Language::Chinese, "红霉素\n").unwrap();
        assert!(lex.contains("红霉素"));
        assert!(!lex.contains("红霉"));
    }

    #[test]
    fn empty_lexicon_is_rejected() {
        assert!(matches!(
            MedicalLexicon::parse(Language::English, ""),
            Err(CorpusError::EmptyLexicon)
        ));
        assert!(matches!(
            MedicalLexicon::parse(Language::English, "\n  \n"),
            Err(CorpusError::EmptyLexicon)
        ));
    }

    #[test]
    fn lexicon_concept_ids_parse() {
        let lex = MedicalLexicon::parse(Language::English, "erythromycin\tC0014806\n").unwrap();
        assert_eq!(
            lex.get("erythromycin").unwrap().concept_id.as_deref(),
            Some("C0014806")
        );
    }

    #[test]
    fn provenance_polarity_is_consistent_on_read() {
        let good = r#"{"text":"x","polarity":"negative","provenance":"entity_swapped"}"#;
        assert!(serde_json::from_str::<LabeledSummary>(good).is_ok());
        let bad = r#"{"text":"x","polarity":"positive","provenance":"entity_swapped"}"#;
        assert!(serde_json::from_str::<LabeledSummary>(bad).is_err());
        for p in Provenance::ALL {
            let s = LabeledSummary::new("t", p);
            let back: LabeledSummary =
                serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            assert_eq!(back, s);
            assert_eq!(serde_json::to_value(p).unwrap(), p.as_str());
        }
    }

    #[test]
    fn bundle_invariants() {
        let mut b = ContrastiveBundle {
            instance_id: "i".into(),
            positives: vec![
                LabeledSummary::new("a", Provenance::ReferenceValidated),
                LabeledSummary::new("b", Provenance::ExtractedSentence),
            ],
            negatives: vec![LabeledSummary::new("c", Provenance::ConceptAppended)],
        };
        assert!(b.check_invariants(2).is_ok());
        b.negatives
            .push(LabeledSummary::new("a", Provenance::ConceptReplaced));
        assert!(matches!(
            b.check_invariants(2),
            Err(BundleViolation::SharedSummary(..))
        ));
        b.negatives.clear();
        assert!(matches!(
            b.check_invariants(2),
            Err(BundleViolation::NoNegatives(_))
        ));
    }

    fn arb_instance() -> impl Strategy<Value = TrainingInstance> {
        let text = "[a-zA-Z0-9 .,可以不]{1,30}";
        let source = prop_oneof![
            text.prop_map(Source::Text),
            prop::collection::vec(
                (
                    prop_oneof![Just(Role::Patient), Just(Role::Doctor), Just(Role::Other)],
                    text
                )
                    .prop_map(|(role, text)| Utterance { role, text }),
                1..5
            )
            .prop_map(Source::Dialogue),
        ];
        (
            "[a-z0-9]{1,8}",
            source,
            "[a-zA-Z0-9可以][a-zA-Z0-9 可以]{0,20}",
            prop_oneof![Just(Language::English), Just(Language::Chinese)],
        )
            .prop_map(|(id, source, reference, language)| TrainingInstance {
                id,
                source,
                reference,
                language,
            })
    }

    proptest! {
        #[test]
        fn corpus_round_trip_is_byte_identical(insts in prop::collection::vec(arb_instance(), 1..6)) {
            let mut seen = BTreeSet::new();
            let insts: Vec<_> = insts.into_iter().filter(|i| seen.insert(i.id.clone())).collect();
            let text = to_jsonl(&insts);
            let loaded = parse_corpus(text.as_bytes()).unwrap();
            prop_assert_eq!(&loaded, &insts);
            prop_assert_eq!(to_jsonl(&loaded), text);
        }

        #[test]
        fn lexicon_canonical_text_round_trips(terms in prop::collection::btree_set("[a-z][a-z ]{0,10}[a-z]", 1..10)) {
            let text: String = terms.iter().map(|t| format!("{t}\n")).collect();
            let lex = MedicalLexicon::parse(Language::English, &text).unwrap();
            prop_assert_eq!(lex.to_text(), text);
        }
    }
}
