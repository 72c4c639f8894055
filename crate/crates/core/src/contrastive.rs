//! Construction of per-instance contrastive sets.
//!
//! Positives are the reference (when it passes faithfulness validation)
//! plus sentences extracted from the source and, optionally, paraphrases of
//! them. Negatives are the reference when it fails validation plus
//! rule-based corruptions of the reference. Which rules run is decided by a
//! [`RuleProfile`].

use std::collections::BTreeSet;
use std::io::Write;
use std::process::{Command, Stdio};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    ContrastiveBundle, LabeledSummary, Language, MedicalLexicon, Polarity, Provenance, Source,
    TrainingInstance,
};
use crate::tagger::{
    detect_numeric_attributes, is_word_char, occurs_in, on_word_boundaries, tag_medical_terms,
    term_set, TermSpan, UnigramConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveRule {
    /// (1) a source sentence containing a term shared by source and reference.
    ExtractSharedTermSentence,
    /// (2) the longest source sentence, or the last utterance of a dialogue.
    ExtractLongestOrLast,
    /// (3) the first utterance of a dialogue.
    ExtractFirstUtterance,
    /// (4) a paraphrase of the most recent extract.
    BackTranslate,
}

impl PositiveRule {
    fn priority(self) -> u8 {
        match self {
            PositiveRule::ExtractSharedTermSentence => 1,
            PositiveRule::ExtractLongestOrLast => 2,
            PositiveRule::ExtractFirstUtterance => 3,
            PositiveRule::BackTranslate => 4,
        }
    }

    fn is_extraction(self) -> bool {
        self != PositiveRule::BackTranslate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeRule {
    FailedReference,
    ReplaceConcept,
    AppendConcept,
    ChangeAttribute,
    EntitySwap,
    LogicInversion,
}

impl NegativeRule {
    pub const ALL: [NegativeRule; 6] = [
        NegativeRule::FailedReference,
        NegativeRule::ReplaceConcept,
        NegativeRule::AppendConcept,
        NegativeRule::ChangeAttribute,
        NegativeRule::EntitySwap,
        NegativeRule::LogicInversion,
    ];

    pub fn provenance(self) -> Provenance {
        match self {
            NegativeRule::FailedReference => Provenance::ReferenceFailedValidation,
            NegativeRule::ReplaceConcept => Provenance::ConceptReplaced,
            NegativeRule::AppendConcept => Provenance::ConceptAppended,
            NegativeRule::ChangeAttribute => Provenance::AttributeChanged,
            NegativeRule::EntitySwap => Provenance::EntitySwapped,
            NegativeRule::LogicInversion => Provenance::LogicInverted,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeRule::FailedReference => "failed_reference",
            NegativeRule::ReplaceConcept => "replace_concept",
            NegativeRule::AppendConcept => "append_concept",
            NegativeRule::ChangeAttribute => "change_attribute",
            NegativeRule::EntitySwap => "entity_swap",
            NegativeRule::LogicInversion => "logic_inversion",
        }
    }
}

/// How extraction rules (1)-(3) combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Extraction rules are fallbacks for one another: the first one that
    /// yields a sentence is used, and later rules only run if the positive
    /// set is still short after paraphrasing.
    FirstHit,
    /// Every extraction rule runs.
    All,
}

fn default_min_positives() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_multiplicity() -> usize {
    1
}

/// Which positive and negative rules run for a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleProfile {
    pub name: String,
    pub language: Language,
    /// In priority order.
    pub positive_rules: Vec<PositiveRule>,
    pub negative_rules: Vec<NegativeRule>,
    #[serde(default = "default_min_positives")]
    pub min_positives: usize,
    #[serde(default)]
    pub seed: u64,
    /// When false every reference goes to the positive set.
    #[serde(default = "default_true")]
    pub validate_references: bool,
    pub extraction: ExtractionMode,
    /// Maximum number of concept-replacement negatives per instance, each
    /// replacing a different shared term.
    #[serde(default = "default_multiplicity")]
    pub replace_multiplicity: usize,
    pub unigrams: UnigramConfig,
}

impl RuleProfile {
    pub const BUILTIN: [&'static str; 4] = ["hqs", "rrs", "mds", "all_ref_positive"];

    /// Health-question profile: extraction rules (1), (2) and paraphrase
    /// (4); every negative rule but logic inversion.
    pub fn hqs(seed: u64) -> Self {
        use NegativeRule::*;
        RuleProfile {
            name: "hqs".into(),
            language: Language::English,
            positive_rules: vec![
                PositiveRule::ExtractSharedTermSentence,
                PositiveRule::ExtractLongestOrLast,
                PositiveRule::BackTranslate,
            ],
            negative_rules: vec![
                FailedReference,
                ReplaceConcept,
                AppendConcept,
                ChangeAttribute,
                EntitySwap,
            ],
            min_positives: 2,
            seed,
            validate_references: true,
            extraction: ExtractionMode::FirstHit,
            replace_multiplicity: 1,
            unigrams: UnigramConfig::english_defaults(),
        }
    }

    /// Radiology-report profile: positives as `hqs`; no attribute change,
    /// entity swap or logic inversion.
    pub fn rrs(seed: u64) -> Self {
        use NegativeRule::*;
        RuleProfile {
            name: "rrs".into(),
            negative_rules: vec![FailedReference, ReplaceConcept, AppendConcept],
            ..Self::hqs(seed)
        }
    }

    /// Chinese medical-dialogue profile: all of (1), (2), (3) run, no
    /// paraphrase; every negative rule but entity swap.
    pub fn mds(seed: u64) -> Self {
        use NegativeRule::*;
        RuleProfile {
            name: "mds".into(),
            language: Language::Chinese,
            positive_rules: vec![
                PositiveRule::ExtractSharedTermSentence,
                PositiveRule::ExtractLongestOrLast,
                PositiveRule::ExtractFirstUtterance,
            ],
            negative_rules: vec![
                FailedReference,
                ReplaceConcept,
                AppendConcept,
                ChangeAttribute,
                LogicInversion,
            ],
            min_positives: 2,
            seed,
            validate_references: true,
            extraction: ExtractionMode::All,
            replace_multiplicity: 1,
            unigrams: UnigramConfig::chinese_defaults(),
        }
    }

    /// Ablation of `hqs` where every reference is positive: validation is
    /// skipped, the failed-reference rule is off, and the second positive
    /// is a paraphrase of the reference.
    pub fn all_ref_positive(seed: u64) -> Self {
        let hqs = Self::hqs(seed);
        RuleProfile {
            name: "all_ref_positive".into(),
            positive_rules: vec![PositiveRule::BackTranslate],
            negative_rules: hqs
                .negative_rules
                .iter()
                .copied()
                .filter(|r| *r != NegativeRule::FailedReference)
                .collect(),
            validate_references: false,
            ..hqs
        }
    }

    pub fn builtin(name: &str, seed: u64) -> Option<Self> {
        match name {
            "hqs" => Some(Self::hqs(seed)),
            "rrs" => Some(Self::rrs(seed)),
            "mds" => Some(Self::mds(seed)),
            "all_ref_positive" => Some(Self::all_ref_positive(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ContrastiveError> {
        let bad = |msg: String| Err(ContrastiveError::InvalidProfile(self.name.clone(), msg));
        if self.positive_rules.is_empty() {
            return bad("no positive rules".into());
        }
        if self
            .positive_rules
            .windows(2)
            .any(|w| w[0].priority() >= w[1].priority())
        {
            return bad("positive rules must be distinct and in priority order (1)-(4)".into());
        }
        if self.min_positives < 2 {
            return bad("min_positives must be at least 2".into());
        }
        if self.replace_multiplicity == 0 {
            return bad("replace_multiplicity must be at least 1".into());
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.negative_rules.iter().find(|r| !seen.insert(**r)) {
            return bad(format!("negative rule {} listed twice", dup.as_str()));
        }
        if !self.validate_references && self.negative_rules.contains(&NegativeRule::FailedReference)
        {
            return bad("failed_reference requires reference validation".into());
        }
        if let Err(e) = self.unigrams.validate() {
            return bad(format!("unigrams: {e}"));
        }
        if self.unigrams.language != self.language {
            return bad(format!(
                "unigram config is {} but profile is {}",
                self.unigrams.language, self.language
            ));
        }
        if self.negative_rules.contains(&NegativeRule::LogicInversion)
            && self.unigrams.inversion_pair.is_none()
        {
            return bad("logic_inversion enabled without an inversion pair".into());
        }
        Ok(())
    }

    /// Rejects running this profile over text of another language.
    pub fn check_language(&self, language: Language) -> Result<(), ContrastiveError> {
        if language != self.language {
            return Err(ContrastiveError::LanguageMismatch {
                profile: self.name.clone(),
                profile_language: self.language,
                language,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContrastiveError {
    #[error("profile {0}: {1}")]
    InvalidProfile(String, String),
    #[error("profile {profile} is for {profile_language} text, got {language}")]
    LanguageMismatch {
        profile: String,
        profile_language: Language,
        language: Language,
    },
    #[error("instance {0}: source has no extractable sentence")]
    NoExtractableSentence(String),
    #[error("instance {id}: only {got} positive(s), need {need}")]
    TooFewPositives { id: String, got: usize, need: usize },
    #[error("instance {0}: every negative rule was skipped")]
    NoNegatives(String),
    #[error("instance {id}: paraphrase failed: {message}")]
    Paraphrase { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ParaphraseError(pub String);

/// Text-to-paraphrase provider used for back-translation.
pub trait Paraphraser: Send + Sync {
    /// Recorded on every summary the provider produced.
    fn name(&self) -> &str;
    fn paraphrase(&self, text: &str) -> Result<String, ParaphraseError>;
}

/// Offline stand-in: returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityParaphraser;

impl Paraphraser for IdentityParaphraser {
    fn name(&self) -> &str {
        "identity-stub"
    }

    fn paraphrase(&self, text: &str) -> Result<String, ParaphraseError> {
        Ok(text.to_owned())
    }
}

/// Runs an external program per text: input on stdin, paraphrase on stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandParaphraser {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(skip)]
    label: String,
}

impl CommandParaphraser {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        let program = program.into();
        CommandParaphraser {
            label: format!("command:{program}"),
            program,
            args,
        }
    }
}

impl Paraphraser for CommandParaphraser {
    fn name(&self) -> &str {
        &self.label
    }

    fn paraphrase(&self, text: &str) -> Result<String, ParaphraseError> {
        let err = |e: std::io::Error| ParaphraseError(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(err)?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(text.as_bytes())
            .map_err(err)?;
        let out = child.wait_with_output().map_err(err)?;
        if !out.status.success() {
            return Err(ParaphraseError(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let para = String::from_utf8(out.stdout)
            .map_err(|e| ParaphraseError(format!("{}: non-UTF-8 output: {e}", self.program)))?;
        let para = para.trim_end_matches(['\n', '\r']).to_owned();
        if para.trim().is_empty() && !text.trim().is_empty() {
            return Err(ParaphraseError(format!(
                "{} returned empty output",
                self.program
            )));
        }
        Ok(para)
    }
}

/// Recognizes the entities permuted by entity swap.
pub trait EntityTagger {
    fn entities(&self, text: &str) -> Vec<TermSpan>;
}

impl EntityTagger for MedicalLexicon {
    fn entities(&self, text: &str) -> Vec<TermSpan> {
        tag_medical_terms(text, self)
    }
}

/// Why a negative rule produced nothing for an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    ReferencePassedValidation,
    NoSharedTerm,
    EmptyReplacementPool,
    NoNumericAttribute,
    TooFewEntities,
    NoDerangement,
    NoInversionUnigram,
    CollidesWithPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSkip {
    pub rule: NegativeRule,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOutcome {
    pub bundle: ContrastiveBundle,
    /// `None` when the profile bypasses validation.
    pub reference_validated: Option<bool>,
    pub skips: Vec<RuleSkip>,
}

/// Hashes the parts into a 64-bit seed. Stable across platforms.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seed of one instance, independent of corpus order and worker count.
pub fn instance_seed(profile_seed: u64, instance_id: &str) -> u64 {
    derive_seed(&[&profile_seed.to_le_bytes(), instance_id.as_bytes()])
}

fn rule_rng(instance_seed: u64, rule: NegativeRule) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[
        &instance_seed.to_le_bytes(),
        rule.as_str().as_bytes(),
    ]))
}

/// Splits text into sentences: English after `.`, `?` or `!` followed by
/// whitespace; Chinese after `。`, `？` or `！`.
pub fn split_sentences(text: &str, language: Language) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let cut = match language {
            Language::English => {
                matches!(chars[i], '.' | '?' | '!')
                    && chars.get(i + 1).is_some_and(|c| c.is_whitespace())
            }
            Language::Chinese => matches!(chars[i], '。' | '？' | '！'),
        };
        if cut {
            out.push(chars[start..=i].iter().collect::<String>());
            start = i + 1;
        }
    }
    out.push(chars[start..].iter().collect());
    out.into_iter()
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Sentences of a text source, or the utterances of a dialogue.
pub fn source_segments(instance: &TrainingInstance) -> Vec<String> {
    match &instance.source {
        Source::Text(t) => split_sentences(t, instance.language),
        Source::Dialogue(us) => us
            .iter()
            .map(|u| u.text.trim().to_owned())
            .filter(|t| !t.is_empty())
            .collect(),
    }
}

/// Positive iff every term tagged in the reference is also tagged in the
/// source. A reference without terms passes.
pub fn validate_reference(instance: &TrainingInstance, lexicon: &MedicalLexicon) -> Polarity {
    let reference = term_set(&instance.reference, lexicon);
    if reference.is_empty() {
        return Polarity::Positive;
    }
    let source = term_set(&instance.source_text(), lexicon);
    if reference.is_subset(&source) {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

fn push_unique(positives: &mut Vec<LabeledSummary>, summary: LabeledSummary) -> bool {
    if positives.iter().any(|p| p.text == summary.text) {
        return false;
    }
    positives.push(summary);
    true
}

fn extract(
    rule: PositiveRule,
    instance: &TrainingInstance,
    segments: &[String],
    shared: &BTreeSet<String>,
    lexicon: &MedicalLexicon,
) -> Option<LabeledSummary> {
    match rule {
        PositiveRule::ExtractSharedTermSentence => segments
            .iter()
            .find(|s| !term_set(s, lexicon).is_disjoint(shared))
            .map(|s| LabeledSummary::new(s.clone(), Provenance::ExtractedSentence)),
        PositiveRule::ExtractLongestOrLast => {
            let pick = if instance.is_dialogue() {
                segments.last()
            } else {
                // First of the longest on ties.
                segments.iter().rev().max_by_key(|s| s.chars().count())
            };
            pick.map(|s| LabeledSummary::new(s.clone(), Provenance::ExtractedSentence))
        }
        PositiveRule::ExtractFirstUtterance if instance.is_dialogue() => segments
            .first()
            .map(|s| LabeledSummary::new(s.clone(), Provenance::FirstUtterance)),
        PositiveRule::ExtractFirstUtterance | PositiveRule::BackTranslate => None,
    }
}

/// Builds the positive set: the reference if it is positive, then the
/// profile's positive rules in priority order until `min_positives` is met.
pub fn extract_positive_sentences(
    instance: &TrainingInstance,
    lexicon: &MedicalLexicon,
    profile: &RuleProfile,
    paraphraser: &dyn Paraphraser,
) -> Result<Vec<LabeledSummary>, ContrastiveError> {
    let reference_positive =
        !profile.validate_references || validate_reference(instance, lexicon) == Polarity::Positive;
    positives_for(instance, lexicon, profile, paraphraser, reference_positive)
}

fn positives_for(
    instance: &TrainingInstance,
    lexicon: &MedicalLexicon,
    profile: &RuleProfile,
    paraphraser: &dyn Paraphraser,
    reference_positive: bool,
) -> Result<Vec<LabeledSummary>, ContrastiveError> {
    let segments = source_segments(instance);
    if segments.is_empty() {
        return Err(ContrastiveError::NoExtractableSentence(instance.id.clone()));
    }
    let shared: BTreeSet<String> = term_set(&instance.reference, lexicon)
        .intersection(&term_set(&instance.source_text(), lexicon))
        .cloned()
        .collect();

    let mut positives = Vec::new();
    if reference_positive {
        positives.push(LabeledSummary::new(
            instance.reference.clone(),
            Provenance::ReferenceValidated,
        ));
    }
    let min = profile.min_positives;
    let mut last_extract: Option<String> = None;
    let mut used = BTreeSet::new();

    for &rule in &profile.positive_rules {
        let always = profile.extraction == ExtractionMode::All && rule.is_extraction();
        if !always && positives.len() >= min {
            continue;
        }
        if rule.is_extraction() {
            if profile.extraction == ExtractionMode::FirstHit && last_extract.is_some() {
                continue;
            }
            used.insert(rule);
            if let Some(s) = extract(rule, instance, &segments, &shared, lexicon) {
                let text = s.text.clone();
                if push_unique(&mut positives, s) {
                    last_extract = Some(text);
                }
            }
        } else {
            let target = match (&last_extract, reference_positive) {
                (Some(t), _) => t.clone(),
                (None, true) => instance.reference.clone(),
                (None, false) => continue,
            };
            let para =
                paraphraser
                    .paraphrase(&target)
                    .map_err(|e| ContrastiveError::Paraphrase {
                        id: instance.id.clone(),
                        message: e.0,
                    })?;
            let mut s = LabeledSummary::new(para, Provenance::BackTranslation);
            s.paraphraser = Some(paraphraser.name().to_owned());
            positives.push(s);
        }
    }

    // Fallback extractions still count towards the minimum.
    for &rule in profile.positive_rules.iter().filter(|r| r.is_extraction()) {
        if positives.len() >= min {
            break;
        }
        if used.contains(&rule) {
            continue;
        }
        if let Some(s) = extract(rule, instance, &segments, &shared, lexicon) {
            push_unique(&mut positives, s);
        }
    }

    if positives.len() < min {
        return Err(ContrastiveError::TooFewPositives {
            id: instance.id.clone(),
            got: positives.len(),
            need: min,
        });
    }
    Ok(positives)
}

fn replace_char_range(text: &str, start: usize, end: usize, with: &str) -> String {
    let mut out: String = text.chars().take(start).collect();
    out.push_str(with);
    out.extend(text.chars().skip(end));
    out
}

/// Lexicon terms occurring in neither text, in lexicon order.
pub fn replacement_pool<'a>(
    lexicon: &'a MedicalLexicon,
    source: &str,
    reference: &str,
) -> Vec<&'a str> {
    let lang = lexicon.language();
    lexicon
        .entries()
        .filter(|(key, _)| !occurs_in(key, source, lang) && !occurs_in(key, reference, lang))
        .map(|(_, e)| e.surface.as_str())
        .collect()
}

fn introduced(text: String, provenance: Provenance, term: &str) -> LabeledSummary {
    let mut s = LabeledSummary::new(text, provenance);
    s.introduced_term = Some(term.to_owned());
    s
}

/// Replaces up to `multiplicity` distinct shared terms of the reference,
/// one per output, with random lexicon terms absent from both texts.
pub fn perturb_replace_concepts<R: Rng + ?Sized>(
    reference: &str,
    source: &str,
    lexicon: &MedicalLexicon,
    multiplicity: usize,
    rng: &mut R,
) -> Result<Vec<LabeledSummary>, SkipReason> {
    let source_terms = term_set(source, lexicon);
    let shared: Vec<TermSpan> = tag_medical_terms(reference, lexicon)
        .into_iter()
        .filter(|s| source_terms.contains(&lexicon.canonical(&s.term)))
        .collect();
    if shared.is_empty() {
        return Err(SkipReason::NoSharedTerm);
    }
    let pool = replacement_pool(lexicon, source, reference);
    if pool.is_empty() {
        return Err(SkipReason::EmptyReplacementPool);
    }
    let chosen = shared.choose_multiple(rng, multiplicity.min(shared.len()));
    let mut spans: Vec<&TermSpan> = chosen.collect();
    spans.sort_by_key(|s| s.start);
    Ok(spans
        .into_iter()
        .map(|span| {
            let term = pool[rng.gen_range(0..pool.len())];
            introduced(
                replace_char_range(reference, span.start, span.end, term),
                Provenance::ConceptReplaced,
                term,
            )
        })
        .collect())
}

/// Replaces one shared term of the reference with a random lexicon term
/// that occurs in neither the source nor the reference.
pub fn perturb_replace_concept<R: Rng + ?Sized>(
    reference: &str,
    source: &str,
    lexicon: &MedicalLexicon,
    rng: &mut R,
) -> Result<LabeledSummary, SkipReason> {
    perturb_replace_concepts(reference, source, lexicon, 1, rng).map(|mut v| v.remove(0))
}

/// Adds a random new term at the start or the end of the reference.
pub fn perturb_append_concept<R: Rng + ?Sized>(
    reference: &str,
    source: &str,
    lexicon: &MedicalLexicon,
    rng: &mut R,
) -> Result<LabeledSummary, SkipReason> {
    let pool = replacement_pool(lexicon, source, reference);
    if pool.is_empty() {
        return Err(SkipReason::EmptyReplacementPool);
    }
    let at_start = rng.gen_bool(0.5);
    let term = pool[rng.gen_range(0..pool.len())];
    let sep = lexicon.language().joiner();
    let text = if at_start {
        format!("{term}{sep}{reference}")
    } else {
        format!("{reference}{sep}{term}")
    };
    Ok(introduced(text, Provenance::ConceptAppended, term))
}

/// New value for a numeric literal: uniform over `[max(0, v-9), v+9]`
/// minus `v`, in units of the literal's last decimal place, formatted with
/// the same number of fractional digits (and zero padding, if any).
pub fn replace_number<R: Rng + ?Sized>(literal: &str, rng: &mut R) -> Option<String> {
    let (int_part, frac_part) = match literal.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (literal, None),
    };
    let frac_digits = frac_part.map_or(0, str::len) as u32;
    let scale = 10u128.checked_pow(frac_digits)?;
    let digits: String = match frac_part {
        Some(f) => format!("{int_part}{f}"),
        None => int_part.to_owned(),
    };
    let units: u128 = digits.parse().ok()?;
    let reach = 9u128.checked_mul(scale)?;
    let lo = units.saturating_sub(reach);
    let hi = units.checked_add(reach)?;
    // hi - lo candidates once `units` is removed.
    let mut value = lo + rng.gen_range(0..hi - lo);
    if value >= units {
        value += 1;
    }
    let int_value = value / scale;
    let padded = int_part.len() > 1 && int_part.starts_with('0');
    let int_str = if padded {
        format!("{:0width$}", int_value, width = int_part.len())
    } else {
        int_value.to_string()
    };
    Some(match frac_part {
        Some(_) => format!(
            "{int_str}.{:0width$}",
            value % scale,
            width = frac_digits as usize
        ),
        None => int_str,
    })
}

/// Changes one numeric attribute of the reference to a different value.
pub fn perturb_attribute<R: Rng + ?Sized>(
    reference: &str,
    language: Language,
    rng: &mut R,
) -> Result<LabeledSummary, SkipReason> {
    let spans = detect_numeric_attributes(reference, language);
    if spans.is_empty() {
        return Err(SkipReason::NoNumericAttribute);
    }
    let span = &spans[rng.gen_range(0..spans.len())];
    let value = replace_number(&span.term, rng).ok_or(SkipReason::NoNumericAttribute)?;
    Ok(LabeledSummary::new(
        replace_char_range(reference, span.start, span.end, &value),
        Provenance::AttributeChanged,
    ))
}

/// A permutation `p` of `0..values.len()` with `values[p[i]] != values[i]`
/// for every `i`, or `None` if no such permutation exists.
pub fn value_derangement<R: Rng + ?Sized>(values: &[&str], rng: &mut R) -> Option<Vec<usize>> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g == v) {
            Some((_, members)) => members.push(i),
            None => groups.push((v, vec![i])),
        }
    }
    let largest = groups.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    if largest * 2 > n {
        return None;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..64 {
        perm.shuffle(rng);
        if (0..n).all(|i| values[perm[i]] != values[i]) {
            return Some(perm);
        }
    }
    // Deterministic construction: lay groups out contiguously and shift by
    // the largest group size, which moves every slot out of its own group.
    groups.shuffle(rng);
    let order: Vec<usize> = groups.into_iter().flat_map(|(_, m)| m).collect();
    let mut perm = vec![0; n];
    for (k, &slot) in order.iter().enumerate() {
        perm[slot] = order[(k + largest) % n];
    }
    Some(perm)
}

/// Permutes the recognized entities of the reference so that no entity
/// keeps its place.
pub fn perturb_entity_swap<R: Rng + ?Sized>(
    reference: &str,
    tagger: &dyn EntityTagger,
    rng: &mut R,
) -> Result<LabeledSummary, SkipReason> {
    let spans = tagger.entities(reference);
    if spans.len() < 2 {
        return Err(SkipReason::TooFewEntities);
    }
    let values: Vec<&str> = spans.iter().map(|s| s.term.as_str()).collect();
    let perm = value_derangement(&values, rng).ok_or(SkipReason::NoDerangement)?;
    let chars: Vec<char> = reference.chars().collect();
    let mut out = String::with_capacity(reference.len());
    let mut cursor = 0;
    for (i, span) in spans.iter().enumerate() {
        out.extend(&chars[cursor..span.start]);
        out.push_str(values[perm[i]]);
        cursor = span.end;
    }
    out.extend(&chars[cursor..]);
    Ok(LabeledSummary::new(out, Provenance::EntitySwapped))
}

/// Swaps the first occurrence of either side of the inversion pair with the
/// other side.
pub fn perturb_logic_inversion(
    reference: &str,
    unigrams: &UnigramConfig,
) -> Result<LabeledSummary, SkipReason> {
    let pair = unigrams
        .inversion_pair
        .as_ref()
        .ok_or(SkipReason::NoInversionUnigram)?;
    let lang = unigrams.language;
    let folded: Vec<char> = reference.chars().map(|c| lang.fold_char(c)).collect();
    let sides: [(Vec<char>, &str); 2] = [
        (
            pair.positive.chars().map(|c| lang.fold_char(c)).collect(),
            &pair.negative,
        ),
        (
            pair.negative.chars().map(|c| lang.fold_char(c)).collect(),
            &pair.positive,
        ),
    ];
    for start in 0..folded.len() {
        if lang.uses_word_boundaries() && start > 0 && is_word_char(folded[start - 1]) {
            continue;
        }
        let hit = sides
            .iter()
            .filter(|(key, _)| {
                let end = start + key.len();
                !key.is_empty()
                    && end <= folded.len()
                    && folded[start..end] == key[..]
                    && (!lang.uses_word_boundaries() || on_word_boundaries(&folded, start, end))
            })
            .max_by_key(|(key, _)| key.len());
        if let Some((key, counterpart)) = hit {
            return Ok(LabeledSummary::new(
                replace_char_range(reference, start, start + key.len(), counterpart),
                Provenance::LogicInverted,
            ));
        }
    }
    Err(SkipReason::NoInversionUnigram)
}

/// Builds the positive and negative sets of one instance, using the lexicon
/// as entity tagger.
pub fn build_contrastive_bundle(
    instance: &TrainingInstance,
    lexicon: &MedicalLexicon,
    profile: &RuleProfile,
    paraphraser: &dyn Paraphraser,
) -> Result<BuildOutcome, ContrastiveError> {
    build_contrastive_bundle_with(instance, lexicon, profile, paraphraser, lexicon)
}

pub fn build_contrastive_bundle_with(
    instance: &TrainingInstance,
    lexicon: &MedicalLexicon,
    profile: &RuleProfile,
    paraphraser: &dyn Paraphraser,
    entities: &dyn EntityTagger,
) -> Result<BuildOutcome, ContrastiveError> {
    profile.validate()?;
    profile.check_language(instance.language)?;

    let validated = profile
        .validate_references
        .then(|| validate_reference(instance, lexicon) == Polarity::Positive);
    let reference_positive = validated.unwrap_or(true);
    let positives = positives_for(instance, lexicon, profile, paraphraser, reference_positive)?;

    let source = instance.source_text();
    let reference = instance.reference.as_str();
    let seed = instance_seed(profile.seed, &instance.id);
    let mut negatives: Vec<LabeledSummary> = Vec::new();
    let mut skips = Vec::new();

    for &rule in &profile.negative_rules {
        let mut rng = rule_rng(seed, rule);
        let produced = match rule {
            NegativeRule::FailedReference => {
                if reference_positive {
                    Err(SkipReason::ReferencePassedValidation)
                } else {
                    Ok(vec![LabeledSummary::new(
                        reference,
                        Provenance::ReferenceFailedValidation,
                    )])
                }
            }
            NegativeRule::ReplaceConcept => perturb_replace_concepts(
                reference,
                &source,
                lexicon,
                profile.replace_multiplicity,
                &mut rng,
            ),
            NegativeRule::AppendConcept => {
                perturb_append_concept(reference, &source, lexicon, &mut rng).map(|s| vec![s])
            }
            NegativeRule::ChangeAttribute => {
                perturb_attribute(reference, instance.language, &mut rng).map(|s| vec![s])
            }
            NegativeRule::EntitySwap => {
                perturb_entity_swap(reference, entities, &mut rng).map(|s| vec![s])
            }
            NegativeRule::LogicInversion => {
                perturb_logic_inversion(reference, &profile.unigrams).map(|s| vec![s])
            }
        };
        match produced {
            Ok(summaries) => {
                for s in summaries {
                    if positives.iter().any(|p| p.text == s.text) {
                        skips.push(RuleSkip {
                            rule,
                            reason: SkipReason::CollidesWithPositive,
                        });
                    } else {
                        negatives.push(s);
                    }
                }
            }
            Err(reason) => skips.push(RuleSkip { rule, reason }),
        }
    }

    if negatives.is_empty() {
        return Err(ContrastiveError::NoNegatives(instance.id.clone()));
    }
    Ok(BuildOutcome {
        bundle: ContrastiveBundle {
            instance_id: instance.id.clone(),
            positives,
            negatives,
        },
        reference_validated: validated,
        skips,
    })
}
