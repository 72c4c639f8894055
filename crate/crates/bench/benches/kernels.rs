use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use medfaith_bench::{corpus, logits, representations};
use medfaith_core::loss::{contrastive_loss, mki_loss};
use medfaith_core::mki::build_bm_vector;
use medfaith_core::tagger::tag_medical_terms;
use medfaith_core::{
    build_contrastive_bundle, IdentityParaphraser, Language, LossConfig, RuleProfile, UnigramConfig,
};

fn tagging(c: &mut Criterion) {
    let en = corpus(Language::English, 200);
    let text: String = en
        .instances
        .iter()
        .map(|i| i.source_text())
        .collect::<Vec<_>>()
        .join(" ");
    c.bench_function("tag_medical_terms/english_200", |b| {
        b.iter(|| tag_medical_terms(black_box(&text), &en.lexicon))
    });
}

fn bundles(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_contrastive_bundle");
    for (name, language) in [("hqs", Language::English), ("mds", Language::Chinese)] {
        let corpus = corpus(language, 100);
        let profile = RuleProfile::builtin(name, 1).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| {
                for inst in &corpus.instances {
                    let _ = black_box(build_contrastive_bundle(
                        inst,
                        &corpus.lexicon,
                        &profile,
                        &IdentityParaphraser,
                    ));
                }
            })
        });
    }
    group.finish();
}

fn losses(c: &mut Criterion) {
    let mut group = c.benchmark_group("contrastive_loss");
    let cfg = LossConfig::default();
    for dim in [32, 256, 1024] {
        let (pos, neg) = representations(dim, 4, 6, 3);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| contrastive_loss(black_box(&pos), black_box(&neg), &cfg).unwrap())
        });
    }
    group.finish();

    let en = corpus(Language::English, 50);
    let unigrams = UnigramConfig::defaults_for(Language::English);
    let bm = build_bm_vector(
        "x",
        &en.instances[0].reference,
        &en.lexicon,
        &unigrams,
        &en.vocabulary,
    );
    let p = logits(bm.vocab_size(), 4);
    c.bench_function("mki_loss", |b| {
        b.iter(|| mki_loss(black_box(&bm), black_box(&p)).unwrap())
    });
}

criterion_group!(benches, tagging, bundles, losses);
criterion_main!(benches);
