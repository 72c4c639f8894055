//! Subcommand implementations. Each returns the files it wrote plus any
//! per-record diagnostics; hard failures come back as `Err`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medfaith_core::contrastive::SkipReason;
use medfaith_core::corpus::{load_corpus, load_lexicon, read_jsonl, to_jsonl};
use medfaith_core::loss::{
    combined_loss, contrastive_gradient_error, contrastive_loss, mki_gradient_error, mki_loss,
};
use medfaith_core::metrics::{
    aggregate_error_annotations, concept_f1, mean_concept_f1, TaxonomyReport,
};
use medfaith_core::mki::build_bm_vector;
use medfaith_core::synthetic;
use medfaith_core::{
    build_contrastive_bundle, ErrorAnnotation, Language, MkiVector, RuleProfile, TrainingInstance,
    Vocabulary,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{required, ProfileSpec, RunConfig};

/// Environment variable holding the worker count; unset or 0 means one
/// worker per core.
pub const WORKERS_ENV: &str = "MEDFAITH_WORKERS";

/// Largest finite-difference error accepted in audit mode.
pub const FD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub record_errors: Vec<String>,
}

impl Outcome {
    fn merge(&mut self, other: Outcome) {
        self.written.extend(other.written);
        self.record_errors.extend(other.record_errors);
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{WORKERS_ENV} must be a non-negative integer, got {v:?}"))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?)
}

fn write(out: &mut Outcome, path: PathBuf, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    out.written.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Corpus sorted by id, checked against the profile language.
fn load_sorted_corpus(cfg: &RunConfig, profile: &RuleProfile) -> Result<Vec<TrainingInstance>> {
    let mut instances = load_corpus(required(&cfg.corpus, "corpus")?)?;
    for inst in &instances {
        profile
            .check_language(inst.language)
            .with_context(|| format!("instance {}", inst.id))?;
    }
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(instances)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BuildStats {
    pub profile: String,
    pub seed: u64,
    pub instances: usize,
    pub bundles: usize,
    pub failures: Vec<Failure>,
    /// Absent when the profile does not validate references.
    pub validation: Option<ValidationStats>,
    pub positives_by_provenance: BTreeMap<String, usize>,
    pub negatives_by_provenance: BTreeMap<String, usize>,
    pub skips: BTreeMap<String, BTreeMap<SkipReason, usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidationStats {
    pub checked: usize,
    pub passed: usize,
    pub pass_rate: f64,
}

pub fn build_sets(cfg: &RunConfig) -> Result<Outcome> {
    let profile = cfg.resolve_profile()?;
    let instances = load_sorted_corpus(cfg, &profile)?;
    let lexicon = load_lexicon(required(&cfg.lexicon, "lexicon")?, profile.language)?;
    let paraphraser = cfg.paraphraser();

    let results: Vec<_> = pool()?.install(|| {
        instances
            .par_iter()
            .map(|i| build_contrastive_bundle(i, &lexicon, &profile, paraphraser.as_ref()))
            .collect()
    });

    let mut out = Outcome::default();
    let mut stats = BuildStats {
        profile: profile.name.clone(),
        seed: profile.seed,
        instances: instances.len(),
        bundles: 0,
        failures: Vec::new(),
        validation: profile.validate_references.then_some(ValidationStats {
            checked: 0,
            passed: 0,
            pass_rate: 0.0,
        }),
        positives_by_provenance: BTreeMap::new(),
        negatives_by_provenance: BTreeMap::new(),
        skips: BTreeMap::new(),
    };
    let mut bundles = Vec::new();
    for (inst, result) in instances.iter().zip(results) {
        match result {
            Ok(outcome) => {
                if let (Some(v), Some(passed)) =
                    (&mut stats.validation, outcome.reference_validated)
                {
                    v.checked += 1;
                    v.passed += usize::from(passed);
                }
                for s in &outcome.bundle.positives {
                    *stats
                        .positives_by_provenance
                        .entry(s.provenance.as_str().to_owned())
                        .or_default() += 1;
                }
                for s in &outcome.bundle.negatives {
                    *stats
                        .negatives_by_provenance
                        .entry(s.provenance.as_str().to_owned())
                        .or_default() += 1;
                }
                for skip in &outcome.skips {
                    *stats
                        .skips
                        .entry(skip.rule.as_str().to_owned())
                        .or_default()
                        .entry(skip.reason)
                        .or_default() += 1;
                }
                bundles.push(outcome.bundle);
            }
            Err(e) => {
                out.record_errors.push(e.to_string());
                stats.failures.push(Failure {
                    id: inst.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    stats.bundles = bundles.len();
    if let Some(v) = &mut stats.validation {
        v.pass_rate = if v.checked == 0 {
            0.0
        } else {
            v.passed as f64 / v.checked as f64
        };
    }
    write(&mut out, cfg.out.join("bundles.jsonl"), &to_jsonl(&bundles))?;
    write(&mut out, cfg.out.join("build_stats.json"), &to_json(&stats))?;
    Ok(out)
}

pub fn build_mki(cfg: &RunConfig) -> Result<Outcome> {
    let profile = cfg.resolve_profile()?;
    let instances = load_sorted_corpus(cfg, &profile)?;
    let lexicon = load_lexicon(required(&cfg.lexicon, "lexicon")?, profile.language)?;
    let vocab = Vocabulary::load(required(&cfg.vocab, "vocab")?)?;
    let vectors: Vec<MkiVector> = pool()?.install(|| {
        instances
            .par_iter()
            .map(|i| build_bm_vector(&i.id, &i.reference, &lexicon, &profile.unigrams, &vocab))
            .collect()
    });
    let mut out = Outcome::default();
    write(&mut out, cfg.out.join("mki.jsonl"), &to_jsonl(&vectors))?;
    Ok(out)
}

/// Encoder outputs of one bundle, in bundle order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationRecord {
    pub instance_id: String,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Decoder logits averaged over reference positions, one per vocabulary
/// entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitsRecord {
    pub instance_id: String,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeRecord {
    pub instance_id: String,
    pub ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradients {
    pub cl_positives: Vec<Vec<f64>>,
    pub cl_negatives: Vec<Vec<f64>>,
    pub mki_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdAudit {
    pub cl: f64,
    pub mki: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub instance_id: String,
    pub l_cl: f64,
    pub l_mki: f64,
    pub l_ce: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<LossGradients>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_error: Option<FdAudit>,
}

fn by_id<T>(path: &Path, records: Vec<T>, id: impl Fn(&T) -> &str) -> Result<BTreeMap<String, T>> {
    let mut map = BTreeMap::new();
    for r in records {
        let key = id(&r).to_owned();
        if map.contains_key(&key) {
            bail!("{}: duplicate instance_id {key:?}", path.display());
        }
        map.insert(key, r);
    }
    Ok(map)
}

fn orphans<'a>(name: &str, ids: &BTreeSet<&'a str>, all: &BTreeSet<&'a str>) -> Option<String> {
    let missing: Vec<&str> = all.difference(ids).copied().collect();
    (!missing.is_empty()).then(|| format!("missing from {name}: {}", missing.join(", ")))
}

pub fn eval_loss(cfg: &RunConfig, grad: bool, check_fd: bool) -> Result<Outcome> {
    cfg.loss.validate()?;
    let reps_path = required(&cfg.representations, "representations")?;
    let logits_path = required(&cfg.logits, "logits")?;
    let mki_path = cfg.mki_path();
    let reps = by_id(
        reps_path,
        read_jsonl::<RepresentationRecord>(reps_path)?,
        |r| &r.instance_id,
    )?;
    let logits = by_id(logits_path, read_jsonl::<LogitsRecord>(logits_path)?, |r| {
        &r.instance_id
    })?;
    let mki = by_id(&mki_path, read_jsonl::<MkiVector>(&mki_path)?, |r| {
        &r.instance_id
    })?;
    let ce = match &cfg.ce {
        Some(_) => {
            let p = required(&cfg.ce, "ce")?;
            Some(by_id(p, read_jsonl::<CeRecord>(p)?, |r| &r.instance_id)?)
        }
        None => None,
    };

    let mut sources: Vec<(&str, BTreeSet<&str>)> = vec![
        ("representations", reps.keys().map(String::as_str).collect()),
        ("logits", logits.keys().map(String::as_str).collect()),
        ("mki", mki.keys().map(String::as_str).collect()),
    ];
    if let Some(ce) = &ce {
        sources.push(("ce", ce.keys().map(String::as_str).collect()));
    }
    let all: BTreeSet<&str> = sources
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .collect();
    let problems: Vec<String> = sources
        .iter()
        .filter_map(|(name, ids)| orphans(name, ids, &all))
        .collect();
    if !problems.is_empty() {
        bail!("inputs are not id-aligned; {}", problems.join("; "));
    }

    let config = cfg.loss;
    let step = cfg.fd_step;
    let ids: Vec<&str> = all.into_iter().collect();
    let results: Vec<Result<LossRecord, String>> = pool()?.install(|| {
        ids.par_iter()
            .map(|&id| {
                let r = &reps[id];
                let p = &logits[id].logits;
                let bm = &mki[id];
                let l_ce = ce.as_ref().map_or(0.0, |c| c[id].ce);
                let fail = |e: &dyn Display| format!("instance {id}: {e}");
                let cl =
                    contrastive_loss(&r.positives, &r.negatives, &config).map_err(|e| fail(&e))?;
                let mk = mki_loss(bm, p).map_err(|e| fail(&e))?;
                let loss = combined_loss(cl.loss, mk.loss, l_ce, &config).map_err(|e| fail(&e))?;
                let fd_error = if check_fd {
                    let audit = FdAudit {
                        cl: contrastive_gradient_error(&r.positives, &r.negatives, &config, step)
                            .map_err(|e| fail(&e))?,
                        mki: mki_gradient_error(bm, p, step).map_err(|e| fail(&e))?,
                    };
                    Some(audit)
                } else {
                    None
                };
                Ok(LossRecord {
                    instance_id: id.to_owned(),
                    l_cl: cl.loss,
                    l_mki: mk.loss,
                    l_ce,
                    loss,
                    grad: grad.then_some(LossGradients {
                        cl_positives: cl.positive_grads,
                        cl_negatives: cl.negative_grads,
                        mki_logits: mk.grad,
                    }),
                    fd_error,
                })
            })
            .collect()
    });

    let mut out = Outcome::default();
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(rec) => {
                if let Some(fd) = &rec.fd_error {
                    if fd.cl > FD_TOLERANCE || fd.mki > FD_TOLERANCE {
                        out.record_errors.push(format!(
                            "instance {}: finite-difference error cl={:e} mki={:e} exceeds {FD_TOLERANCE:e}",
                            rec.instance_id, fd.cl, fd.mki
                        ));
                    }
                }
                records.push(rec);
            }
            Err(e) => out.record_errors.push(e),
        }
    }
    write(&mut out, cfg.out.join("losses.jsonl"), &to_jsonl(&records))?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: String,
    pub reference: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceF1 {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConceptF1Summary {
    pub instances: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_instance: Vec<InstanceF1>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_f1: Option<ConceptF1Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<TaxonomyReport>,
}

pub fn metrics(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.predictions.is_none() && cfg.annotations.is_none() {
        bail!("metrics needs \"predictions\", \"annotations\" or both");
    }
    let profile = cfg.resolve_profile()?;
    let mut report = MetricsReport {
        concept_f1: None,
        taxonomy: None,
    };
    let mut known: Option<BTreeSet<String>> = None;

    if cfg.predictions.is_some() {
        let path = required(&cfg.predictions, "predictions")?;
        let lexicon = load_lexicon(required(&cfg.lexicon, "lexicon")?, profile.language)?;
        let preds = by_id(path, read_jsonl::<PredictionRecord>(path)?, |r| &r.id)?;
        let results: Vec<_> = pool()?.install(|| {
            preds
                .values()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|r| concept_f1(&r.prediction, &r.reference, &lexicon))
                .collect()
        });
        let (precision, recall, f1) = mean_concept_f1(&results);
        report.concept_f1 = Some(ConceptF1Summary {
            instances: results.len(),
            precision,
            recall,
            f1,
            per_instance: preds
                .keys()
                .zip(&results)
                .map(|(id, r)| InstanceF1 {
                    id: id.clone(),
                    precision: r.precision,
                    recall: r.recall,
                    f1: r.f1,
                })
                .collect(),
        });
        known = Some(preds.into_keys().collect());
    } else if cfg.corpus.is_some() {
        let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
        known = Some(corpus.into_iter().map(|i| i.id).collect());
    }

    if cfg.annotations.is_some() {
        let path = required(&cfg.annotations, "annotations")?;
        let annotations: Vec<ErrorAnnotation> = read_jsonl(path)?;
        let total = match (cfg.annotation_total, &known) {
            (Some(t), _) => t,
            (None, Some(k)) => k.len(),
            (None, None) => bail!("annotations need \"annotation_total\", predictions or a corpus"),
        };
        report.taxonomy = Some(aggregate_error_annotations(
            &annotations,
            total,
            known.as_ref(),
            cfg.label_mode,
        )?);
    }

    let mut out = Outcome::default();
    write(&mut out, cfg.out.join("metrics.json"), &to_json(&report))?;
    Ok(out)
}

/// Writes a seeded toy corpus, its lexicon and vocabulary, and a config
/// that runs the matching built-in profile over them.
pub fn synth(language: Language, n: usize, seed: u64, dir: &Path) -> Result<Outcome> {
    let corpus = synthetic::generate(language, n, seed);
    let mut out = Outcome::default();
    write(
        &mut out,
        dir.join("corpus.jsonl"),
        &to_jsonl(&corpus.instances),
    )?;
    write(&mut out, dir.join("lexicon.txt"), &corpus.lexicon.to_text())?;
    let mut vocab = corpus.vocabulary.tokens().join("\n");
    vocab.push('\n');
    write(&mut out, dir.join("vocab.txt"), &vocab)?;
    let profile = match language {
        Language::English => "hqs",
        Language::Chinese => "mds",
    };
    let cfg = RunConfig {
        corpus: Some("corpus.jsonl".into()),
        lexicon: Some("lexicon.txt".into()),
        vocab: Some("vocab.txt".into()),
        profile: ProfileSpec::Named(profile.into()),
        seed: Some(seed),
        ..RunConfig::default()
    };
    write(&mut out, dir.join("config.json"), &to_json(&cfg))?;
    Ok(out)
}

/// Bundles and MKI vectors, then loss evaluation and metrics when their
/// inputs are configured.
pub fn pipeline(cfg: &RunConfig, grad: bool, check_fd: bool) -> Result<Outcome> {
    let mut out = build_sets(cfg)?;
    out.merge(build_mki(cfg)?);
    if cfg.representations.is_some() || cfg.logits.is_some() {
        out.merge(eval_loss(cfg, grad, check_fd)?);
    }
    if cfg.predictions.is_some() || cfg.annotations.is_some() {
        out.merge(metrics(cfg)?);
    }
    Ok(out)
}
