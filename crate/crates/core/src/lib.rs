//! Faithfulness tooling for medical abstractive summarization.
//!
//! The crate covers the data side and the numeric side of training a
//! summarizer to stay faithful to its source:
//!
//! * [`corpus`] holds the interchange types (instances, lexicons, bundles,
//!   error annotations) and their JSONL / text file formats.
//! * [`tagger`] finds medical terms, negation words and numeric attributes.
//! * [`contrastive`] builds per-instance positive and negative summary sets
//!   under a dataset-specific rule profile.
//! * [`mki`] turns a reference summary into a vocabulary-length frequency
//!   vector over medical-term tokens and their context.
//! * [`loss`] implements the contrastive loss, the knowledge-incorporation
//!   loss and their weighted combination, with analytic gradients.
//! * [`metrics`] computes Concept F1 and aggregates error-taxonomy
//!   annotations.

pub mod contrastive;
pub mod corpus;
pub mod loss;
pub mod metrics;
pub mod mki;
pub mod synthetic;
pub mod tagger;
mod trie;

pub use contrastive::{
    build_contrastive_bundle, BuildOutcome, CommandParaphraser, ContrastiveError,
    IdentityParaphraser, NegativeRule, Paraphraser, PositiveRule, RuleProfile, RuleSkip,
};
pub use corpus::{
    ContrastiveBundle, CorpusError, ErrorAnnotation, ErrorCategory, LabeledSummary, Language,
    MedicalLexicon, Polarity, Provenance, Role, Source, TrainingInstance, Utterance,
};
pub use loss::{LossConfig, LossError};
pub use metrics::{ConceptF1Result, TaxonomyReport};
pub use mki::{MkiVector, Vocabulary};
pub use tagger::{TermSpan, UnigramConfig};
