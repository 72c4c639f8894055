//! Deterministic tagging of medical terms, negation words and numbers.
//!
//! All offsets are character offsets (not bytes). English matching is
//! case-insensitive and anchored on word boundaries, where a word character
//! is any alphanumeric character; Chinese matching is exact substring
//! matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Language, MedicalLexicon};
use crate::trie::CharTrie;

/// A tagged region of a text; `term` is the text between `start` and `end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermSpan {
    pub term: String,
    pub start: usize,
    pub end: usize,
}

impl TermSpan {
    fn from_chars(chars: &[char], start: usize, end: usize) -> Self {
        TermSpan {
            term: chars[start..end].iter().collect(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// True if `chars[start..end]` is delimited by non-word characters (or the
/// text edges) on both sides.
pub(crate) fn on_word_boundaries(chars: &[char], start: usize, end: usize) -> bool {
    (start == 0 || !is_word_char(chars[start - 1]))
        && (end == chars.len() || !is_word_char(chars[end]))
}

fn fold_chars(text: &str, language: Language) -> (Vec<char>, Vec<char>) {
    let original: Vec<char> = text.chars().collect();
    let folded = original.iter().map(|&c| language.fold_char(c)).collect();
    (original, folded)
}

/// Greedy, left-to-right, longest-match scan. At each position the longest
/// key that satisfies the boundary rule wins and the scan resumes after it.
fn greedy_longest<V>(
    trie: &CharTrie<V>,
    original: &[char],
    folded: &[char],
    language: Language,
) -> Vec<TermSpan> {
    let boundaries = language.uses_word_boundaries();
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < folded.len() {
        if boundaries && pos > 0 && is_word_char(folded[pos - 1]) && is_word_char(folded[pos]) {
            pos += 1;
            continue;
        }
        let hit = trie
            .prefixes_at(folded, pos)
            .into_iter()
            .rev()
            .map(|(end, _)| end)
            .find(|&end| !boundaries || on_word_boundaries(folded, pos, end));
        match hit {
            Some(end) => {
                spans.push(TermSpan::from_chars(original, pos, end));
                pos = end;
            }
            None => pos += 1,
        }
    }
    spans
}

/// Tags lexicon terms in `text`.
pub fn tag_medical_terms(text: &str, lexicon: &MedicalLexicon) -> Vec<TermSpan> {
    let (original, folded) = fold_chars(text, lexicon.language());
    greedy_longest(&lexicon.trie, &original, &folded, lexicon.language())
}

/// Canonical keys of the terms tagged in `text`, sorted and deduplicated.
pub fn term_set(text: &str, lexicon: &MedicalLexicon) -> std::collections::BTreeSet<String> {
    tag_medical_terms(text, lexicon)
        .into_iter()
        .map(|s| lexicon.canonical(&s.term))
        .collect()
}

/// Whether `term` occurs anywhere in `text` under the matching rules of
/// `language`, independent of longest-match resolution against other
/// terms.
pub fn occurs_in(term: &str, text: &str, language: Language) -> bool {
    let key: Vec<char> = term.chars().map(|c| language.fold_char(c)).collect();
    if key.is_empty() {
        return false;
    }
    let (_, folded) = fold_chars(text, language);
    if key.len() > folded.len() {
        return false;
    }
    (0..=folded.len() - key.len()).any(|start| {
        folded[start..start + key.len()] == key[..]
            && (!language.uses_word_boundaries()
                || on_word_boundaries(&folded, start, start + key.len()))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InversionPair {
    pub positive: String,
    pub negative: String,
}

/// Negation words and the polarity pair used for logic inversion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnigramConfig {
    pub language: Language,
    pub negative_unigrams: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion_pair: Option<InversionPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnigramConfigError {
    #[error("no negative unigrams configured")]
    Empty,
    #[error("negative unigram list contains an empty string")]
    EmptyUnigram,
    #[error("inversion pair has identical sides {0:?}")]
    DegeneratePair(String),
    #[error("inversion pair has an empty side")]
    EmptyPairSide,
}

impl UnigramConfig {
    pub fn english_defaults() -> Self {
        UnigramConfig {
            language: Language::English,
            negative_unigrams: ["no", "nope", "doesn't", "don't", "not"]
                .map(String::from)
                .to_vec(),
            inversion_pair: None,
        }
    }

    pub fn chinese_defaults() -> Self {
        UnigramConfig {
            language: Language::Chinese,
            negative_unigrams: ["不", "没有", "无", "没", "非"].map(String::from).to_vec(),
            inversion_pair: Some(InversionPair {
                positive: "可以".into(),
                negative: "不可以".into(),
            }),
        }
    }

    pub fn defaults_for(language: Language) -> Self {
        match language {
            Language::English => Self::english_defaults(),
            Language::Chinese => Self::chinese_defaults(),
        }
    }

    pub fn validate(&self) -> Result<(), UnigramConfigError> {
        if self.negative_unigrams.is_empty() {
            return Err(UnigramConfigError::Empty);
        }
        if self.negative_unigrams.iter().any(|u| u.trim().is_empty()) {
            return Err(UnigramConfigError::EmptyUnigram);
        }
        if let Some(pair) = &self.inversion_pair {
            if pair.positive.is_empty() || pair.negative.is_empty() {
                return Err(UnigramConfigError::EmptyPairSide);
            }
            if self.language.fold(&pair.positive) == self.language.fold(&pair.negative) {
                return Err(UnigramConfigError::DegeneratePair(pair.positive.clone()));
            }
        }
        Ok(())
    }
}

/// All occurrences of the configured negative unigrams. Overlapping
/// candidates (e.g. "没" inside "没有") resolve to the longest match.
pub fn find_negative_unigrams(text: &str, config: &UnigramConfig) -> Vec<TermSpan> {
    let mut trie = CharTrie::default();
    for u in &config.negative_unigrams {
        if !u.is_empty() {
            trie.insert(u.chars().map(|c| config.language.fold_char(c)), ());
        }
    }
    let (original, folded) = fold_chars(text, config.language);
    greedy_longest(&trie, &original, &folded, config.language)
}

/// Maximal ASCII digit runs, with a `.`-joined fractional part kept in the
/// same span. In English, numbers glued to letters (`B12`, `5mg`) belong to
/// an alphanumeric token and are not reported.
pub fn detect_numeric_attributes(text: &str, language: Language) -> Vec<TermSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
        }
        let end = i;
        let glued = language == Language::English
            && ((start > 0 && chars[start - 1].is_alphabetic())
                || (end < chars.len() && chars[end].is_alphabetic()));
        if !glued {
            spans.push(TermSpan::from_chars(&chars, start, end));
        }
    }
    spans
}

/// Characters of `text` in `[start, end)` by character offset.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}
