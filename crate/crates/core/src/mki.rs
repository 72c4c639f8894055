//! Vocabulary-indexed frequency vectors of medical terms and their context.
//!
//! For a reference summary the tokens of interest are every token of a
//! tagged medical term, the two tokens preceding each term, and every token
//! of a negative unigram. The vector counts how often each vocabulary entry
//! occurs in that role.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MedicalLexicon;
use crate::tagger::{find_negative_unigrams, tag_medical_terms, UnigramConfig};
use crate::trie::CharTrie;

/// Index emitted for characters no vocabulary entry covers.
pub const UNKNOWN_INDEX: usize = 0;

/// Number of tokens before a term that count as its context.
pub const CONTEXT_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read vocabulary {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("vocabulary is empty")]
    Empty,
    #[error("vocabulary line {0} is empty")]
    EmptyToken(usize),
    #[error("vocabulary token {token:?} repeated on lines {first} and {second}")]
    Duplicate {
        token: String,
        first: usize,
        second: usize,
    },
}

/// Ordered token list; a token's index is its line number (0-based).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    trie: CharTrie<usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut trie = CharTrie::default();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(VocabError::EmptyToken(i + 1));
            }
            if let Some(first) = index.insert(t.clone(), i) {
                return Err(VocabError::Duplicate {
                    token: t.clone(),
                    first: first + 1,
                    second: i + 1,
                });
            }
            trie.insert(t.chars(), i);
        }
        Ok(Vocabulary {
            tokens,
            index,
            trie,
        })
    }

    /// One token per line. Whitespace inside a line is part of the token;
    /// only the line terminator is stripped.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let tokens = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
            .collect::<Vec<_>>();
        let mut tokens = tokens;
        if tokens.last().is_some_and(String::is_empty) {
            tokens.pop();
        }
        Self::new(tokens)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text =
            fs::read_to_string(path).map_err(|e| VocabError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A token with its character range in the tokenized text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

/// Greedy longest-match segmentation; uncovered characters become
/// [`UNKNOWN_INDEX`] one character at a time.
pub fn tokenize_with_offsets(text: &str, vocab: &Vocabulary) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        match vocab.trie.longest_prefix_at(&chars, pos) {
            Some((end, &index)) => {
                out.push(Token {
                    index,
                    start: pos,
                    end,
                });
                pos = end;
            }
            None => {
                out.push(Token {
                    index: UNKNOWN_INDEX,
                    start: pos,
                    end: pos + 1,
                });
                pos += 1;
            }
        }
    }
    out
}

pub fn tokenize_with_vocab(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    tokenize_with_offsets(text, vocab)
        .into_iter()
        .map(|t| t.index)
        .collect()
}

/// Positions (into the token sequence) of every token of interest, once
/// per role occurrence.
pub fn interest_positions(
    tokens: &[Token],
    reference: &str,
    lexicon: &MedicalLexicon,
    unigrams: &UnigramConfig,
) -> Vec<usize> {
    let covering = |start: usize, end: usize| {
        tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.start < end && start < t.end)
            .map(|(p, _)| p)
    };
    let mut positions = Vec::new();
    for span in tag_medical_terms(reference, lexicon) {
        let covered: Vec<usize> = covering(span.start, span.end).collect();
        let Some(&first) = covered.first() else {
            continue;
        };
        positions.extend(first.saturating_sub(CONTEXT_WINDOW)..first);
        positions.extend(covered);
    }
    for span in find_negative_unigrams(reference, unigrams) {
        positions.extend(covering(span.start, span.end));
    }
    positions
}

/// Interest-token frequencies of one reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SparseMkiRecord", into = "SparseMkiRecord")]
pub struct MkiVector {
    pub instance_id: String,
    pub counts: Vec<u32>,
}

impl MkiVector {
    pub fn zeros(instance_id: impl Into<String>, vocab_size: usize) -> Self {
        MkiVector {
            instance_id: instance_id.into(),
            counts: vec![0; vocab_size],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Nonzero `(index, count)` pairs in index order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

/// On-disk sparse form.
#[derive(Serialize, Deserialize)]
struct SparseMkiRecord {
    instance_id: String,
    entries: Vec<(usize, u32)>,
    vocab_size: usize,
}

impl From<MkiVector> for SparseMkiRecord {
    fn from(v: MkiVector) -> Self {
        SparseMkiRecord {
            entries: v.nonzero().collect(),
            vocab_size: v.vocab_size(),
            instance_id: v.instance_id,
        }
    }
}

impl TryFrom<SparseMkiRecord> for MkiVector {
    type Error = String;

    fn try_from(r: SparseMkiRecord) -> Result<Self, String> {
        let mut counts = vec![0u32; r.vocab_size];
        for (index, count) in r.entries {
            let slot = counts.get_mut(index).ok_or_else(|| {
                format!("index {index} out of range for vocab_size {}", r.vocab_size)
            })?;
            if *slot != 0 {
                return Err(format!("index {index} listed twice"));
            }
            *slot = count;
        }
        Ok(MkiVector {
            instance_id: r.instance_id,
            counts,
        })
    }
}

/// Builds the interest-token frequency vector of `reference`. Depends on the
/// reference only, never on the source.
pub fn build_bm_vector(
    instance_id: &str,
    reference: &str,
    lexicon: &MedicalLexicon,
    unigrams: &UnigramConfig,
    vocab: &Vocabulary,
) -> MkiVector {
    let tokens = tokenize_with_offsets(reference, vocab);
    let mut v = MkiVector::zeros(instance_id, vocab.len());
    for p in interest_positions(&tokens, reference, lexicon, unigrams) {
        v.counts[tokens[p].index] += 1;
    }
    v
}
