use std::fs;

use medfaith_core::contrastive::{build_contrastive_bundle, IdentityParaphraser, RuleProfile};
use medfaith_core::corpus::{load_corpus, load_lexicon, read_jsonl, to_jsonl};
use medfaith_core::mki::build_bm_vector;
use medfaith_core::synthetic::generate;
use medfaith_core::{ContrastiveBundle, Language, MkiVector, Polarity, Provenance, Vocabulary};

fn bundles(language: Language, profile: &str, n: usize) -> Vec<ContrastiveBundle> {
    let corpus = generate(language, n, 11);
    let profile = RuleProfile::builtin(profile, 3).unwrap();
    corpus
        .instances
        .iter()
        .map(|i| {
            build_contrastive_bundle(i, &corpus.lexicon, &profile, &IdentityParaphraser)
                .unwrap()
                .bundle
        })
        .collect()
}

#[test]
fn synthetic_files_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    for language in [Language::English, Language::Chinese] {
        let corpus = generate(language, 25, 4);
        let cpath = dir.path().join("corpus.jsonl");
        let lpath = dir.path().join("lexicon.txt");
        let vpath = dir.path().join("vocab.txt");
        fs::write(&cpath, to_jsonl(&corpus.instances)).unwrap();
        fs::write(&lpath, corpus.lexicon.to_text()).unwrap();
        fs::write(&vpath, corpus.vocabulary.tokens().join("\n") + "\n").unwrap();

        let instances = load_corpus(&cpath).unwrap();
        assert_eq!(instances, corpus.instances);
        let lexicon = load_lexicon(&lpath, language).unwrap();
        assert_eq!(lexicon.to_text(), corpus.lexicon.to_text());
        let vocab = Vocabulary::load(&vpath).unwrap();
        assert_eq!(vocab.tokens(), corpus.vocabulary.tokens());
    }
}

#[test]
fn every_profile_yields_valid_bundles() {
    for (language, profile) in [
        (Language::English, "hqs"),
        (Language::English, "rrs"),
        (Language::English, "all_ref_positive"),
        (Language::Chinese, "mds"),
    ] {
        for b in bundles(language, profile, 40) {
            b.check_invariants(2)
                .unwrap_or_else(|e| panic!("{profile}: {e}"));
        }
    }
}

#[test]
fn ablation_profile_keeps_every_reference_positive() {
    for b in bundles(Language::English, "all_ref_positive", 30) {
        assert_eq!(b.positives[0].provenance, Provenance::ReferenceValidated);
        assert!(b
            .negatives
            .iter()
            .all(|n| n.provenance != Provenance::ReferenceFailedValidation));
    }
}

#[test]
fn bundle_and_mki_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let built = bundles(Language::Chinese, "mds", 20);
    let path = dir.path().join("bundles.jsonl");
    fs::write(&path, to_jsonl(&built)).unwrap();
    let back: Vec<ContrastiveBundle> = read_jsonl(&path).unwrap();
    assert_eq!(back, built);
    assert!(back
        .iter()
        .flat_map(|b| &b.positives)
        .all(|s| s.polarity == Polarity::Positive));

    let corpus = generate(Language::English, 20, 2);
    let unigrams = RuleProfile::hqs(0).unigrams;
    let vectors: Vec<MkiVector> = corpus
        .instances
        .iter()
        .map(|i| {
            build_bm_vector(
                &i.id,
                &i.reference,
                &corpus.lexicon,
                &unigrams,
                &corpus.vocabulary,
            )
        })
        .collect();
    let path = dir.path().join("mki.jsonl");
    fs::write(&path, to_jsonl(&vectors)).unwrap();
    let back: Vec<MkiVector> = read_jsonl(&path).unwrap();
    assert_eq!(back, vectors);
    assert!(vectors.iter().all(|v| v.total() > 0));
}

#[test]
fn tampered_bundle_is_rejected() {
    let built = bundles(Language::English, "hqs", 1);
    let line =
        to_jsonl(&built).replacen("\"polarity\":\"positive\"", "\"polarity\":\"negative\"", 1);
    let parsed: Result<Vec<ContrastiveBundle>, _> =
        medfaith_core::corpus::parse_jsonl(line.as_bytes());
    assert!(parsed.is_err());
}
