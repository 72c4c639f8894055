//! Concept F1 and error-taxonomy aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ErrorAnnotation, ErrorCategory, MedicalLexicon};
use crate::tagger::term_set;

/// Overlap between the medical concepts of a prediction and its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptF1Result {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pred_concepts: BTreeSet<String>,
    pub ref_concepts: BTreeSet<String>,
}

/// Concept F1 over precomputed concept sets.
///
/// Two empty sets score 1 on every field. If exactly one side is empty,
/// both precision and recall are 0.
pub fn concept_f1_sets(pred: BTreeSet<String>, reference: BTreeSet<String>) -> ConceptF1Result {
    let (precision, recall, f1) = if pred.is_empty() && reference.is_empty() {
        (1.0, 1.0, 1.0)
    } else if pred.is_empty() || reference.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let hit = pred.intersection(&reference).count() as f64;
        let p = hit / pred.len() as f64;
        let r = hit / reference.len() as f64;
        let f1 = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        (p, r, f1)
    };
    ConceptF1Result {
        precision,
        recall,
        f1,
        pred_concepts: pred,
        ref_concepts: reference,
    }
}

pub fn concept_f1(prediction: &str, reference: &str, lexicon: &MedicalLexicon) -> ConceptF1Result {
    concept_f1_sets(term_set(prediction, lexicon), term_set(reference, lexicon))
}

/// Macro average of precision, recall and F1. Empty input averages to 0.
pub fn mean_concept_f1(results: &[ConceptF1Result]) -> (f64, f64, f64) {
    if results.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = results.len() as f64;
    let sum = |f: fn(&ConceptF1Result) -> f64| results.iter().map(f).sum::<f64>() / n;
    (sum(|r| r.precision), sum(|r| r.recall), sum(|r| r.f1))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregationError {
    #[error("annotation references unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("total {total} is smaller than the {distinct} distinct annotated instances")]
    TotalTooSmall { total: usize, distinct: usize },
}

/// How per-instance labels are resolved from annotator votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// One category per instance: the unique plurality vote. A tie at the
    /// top leaves the instance unlabeled and flagged.
    #[default]
    Single,
    /// Every category chosen by more than half of the instance's annotators.
    /// A category chosen by exactly half flags the instance.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: ErrorCategory,
    pub count: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub total: usize,
    pub mode: LabelMode,
    /// One entry per error category, `None` excluded.
    pub categories: Vec<CategoryShare>,
    pub overall_error_count: usize,
    pub overall_error_percentage: f64,
    /// Instances whose votes did not resolve; they count toward `total`
    /// but toward no category.
    pub needs_adjudication: Vec<String>,
}

impl TaxonomyReport {
    pub fn share(&self, category: ErrorCategory) -> Option<&CategoryShare> {
        self.categories.iter().find(|c| c.category == category)
    }

    pub fn percentage(&self, category: ErrorCategory) -> f64 {
        self.share(category).map_or(0.0, |c| c.percentage)
    }
}

type Votes<'a> = (
    BTreeSet<&'a str>,
    BTreeMap<ErrorCategory, BTreeSet<&'a str>>,
);

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 * 100.0 / total as f64
    }
}

/// Resolve annotator votes per instance and report category shares over
/// `total` instances. When `known_ids` is given, every annotation must
/// refer to one of them.
pub fn aggregate_error_annotations(
    annotations: &[ErrorAnnotation],
    total: usize,
    known_ids: Option<&BTreeSet<String>>,
    mode: LabelMode,
) -> Result<TaxonomyReport, AggregationError> {
    // instance -> (annotators, category -> annotators voting for it)
    let mut votes: BTreeMap<&str, Votes> = BTreeMap::new();
    for a in annotations {
        if let Some(known) = known_ids {
            if !known.contains(&a.instance_id) {
                return Err(AggregationError::UnknownInstance(a.instance_id.clone()));
            }
        }
        let entry = votes.entry(a.instance_id.as_str()).or_default();
        entry.0.insert(a.annotator_id.as_str());
        entry
            .1
            .entry(a.category)
            .or_default()
            .insert(a.annotator_id.as_str());
    }
    if total < votes.len() {
        return Err(AggregationError::TotalTooSmall {
            total,
            distinct: votes.len(),
        });
    }

    let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
    let mut overall = 0;
    let mut flagged = Vec::new();
    for (id, (annotators, by_category)) in &votes {
        let labels: Vec<ErrorCategory> = match mode {
            LabelMode::Single => {
                let top = by_category.values().map(BTreeSet::len).max().unwrap_or(0);
                let winners: Vec<ErrorCategory> = by_category
                    .iter()
                    .filter(|(_, v)| v.len() == top)
                    .map(|(c, _)| *c)
                    .collect();
                if winners.len() != 1 {
                    flagged.push(id.to_string());
                    continue;
                }
                winners
            }
            LabelMode::Multi => {
                let n = annotators.len();
                if by_category.values().any(|v| 2 * v.len() == n) {
                    flagged.push(id.to_string());
                    continue;
                }
                by_category
                    .iter()
                    .filter(|(_, v)| 2 * v.len() > n)
                    .map(|(c, _)| *c)
                    .collect()
            }
        };
        let mut any_error = false;
        for c in labels.into_iter().filter(|c| *c != ErrorCategory::None) {
            *counts.entry(c).or_default() += 1;
            any_error = true;
        }
        if any_error {
            overall += 1;
        }
    }

    let categories = ErrorCategory::ERRORS
        .iter()
        .map(|&category| {
            let count = counts.get(&category).copied().unwrap_or(0);
            CategoryShare {
                category,
                count,
                percentage: percent(count, total),
            }
        })
        .collect();
    Ok(TaxonomyReport {
        total,
        mode,
        categories,
        overall_error_count: overall,
        overall_error_percentage: percent(overall, total),
        needs_adjudication: flagged,
    })
}
