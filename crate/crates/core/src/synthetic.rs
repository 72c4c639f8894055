//! Seeded toy corpora for tests, benchmarks and smoke runs.
//!
//! Every instance carries at least two distinct lexicon entities and one
//! number in its reference, and every fifth reference mentions a term the
//! source never does, so each contrastive rule has something to act on.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Language, MedicalLexicon, Role, Source, TrainingInstance, Utterance};
use crate::mki::Vocabulary;

pub const ENGLISH_TERMS: [&str; 20] = [
    "asthma",
    "pneumonia",
    "tuberculosis",
    "pleural effusion",
    "vitamin k",
    "warfarin",
    "aspirin",
    "insulin",
    "diabetes",
    "hypertension",
    "migraine",
    "ibuprofen",
    "anemia",
    "bronchitis",
    "amoxicillin",
    "heart disease",
    "infiltrate",
    "eczema",
    "metformin",
    "influenza",
];

pub const CHINESE_TERMS: [&str; 15] = [
    "哮喘",
    "肺炎",
    "红霉素",
    "头孢",
    "糖尿病",
    "胰岛素",
    "高血压",
    "感冒",
    "发烧",
    "咳嗽",
    "布洛芬",
    "阿莫西林",
    "湿疹",
    "贫血",
    "胃炎",
];

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub language: Language,
    pub instances: Vec<TrainingInstance>,
    pub lexicon: MedicalLexicon,
    pub vocabulary: Vocabulary,
}

/// Whether the `index`-th generated reference names a term absent from its
/// source.
pub fn has_unsupported_reference(index: usize) -> bool {
    index % 5 == 4
}

pub fn generate(language: Language, n: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: &[&str] = match language {
        Language::English => &ENGLISH_TERMS,
        Language::Chinese => &CHINESE_TERMS,
    };
    let instances: Vec<TrainingInstance> = (0..n)
        .map(|i| {
            let picked: Vec<&str> = terms.choose_multiple(&mut rng, 4).copied().collect();
            let (a, b, c, d) = (picked[0], picked[1], picked[2], picked[3]);
            let days = rng.gen_range(2..30);
            let doses = rng.gen_range(1..5);
            let form = rng.gen_range(0..3);
            let extra = has_unsupported_reference(i).then_some(d);
            let id = format!("{}-{i:04}", language_tag(language));
            match language {
                Language::English => english_instance(id, [a, b, c], extra, days, doses, form),
                Language::Chinese => chinese_instance(id, [a, b, c], extra, days, doses, form),
            }
        })
        .collect();
    let lexicon = MedicalLexicon::new(language, terms.iter().map(|t| (*t, None)))
        .expect("term list is non-empty");
    let vocabulary = build_vocabulary(
        instances
            .iter()
            .flat_map(|i| [i.source_text(), i.reference.clone()]),
        language,
    );
    SyntheticCorpus {
        language,
        instances,
        lexicon,
        vocabulary,
    }
}

fn language_tag(language: Language) -> &'static str {
    match language {
        Language::English => "en",
        Language::Chinese => "zh",
    }
}

fn english_instance(
    id: String,
    [a, b, c]: [&str; 3],
    extra: Option<&str>,
    days: u32,
    doses: u32,
    form: u32,
) -> TrainingInstance {
    let source = match form {
        0 => format!(
            "I was diagnosed with {a} {days} days ago. The clinic prescribed {b} {doses} times a day. My sister has {c}. Should I worry?"
        ),
        1 => format!(
            "My son has had {a} for {days} days. We give him {b} twice daily. Is this normal?"
        ),
        _ => format!(
            "Hello. I take {b} every morning. I have had {a} for about {days} days and also {c}. What should I do?"
        ),
    };
    let also = extra.map(|d| format!(" and {d}")).unwrap_or_default();
    let reference = match form {
        0 => format!("Can {b} treat {a}{also} after {days} days?"),
        1 => format!("Is {b} safe for a child with {a}{also} for {days} days?"),
        _ => format!("What are the treatments for {a}{also} besides {b} after {days} days?"),
    };
    TrainingInstance {
        id,
        source: Source::Text(source),
        reference,
        language: Language::English,
    }
}

fn chinese_instance(
    id: String,
    [a, b, c]: [&str; 3],
    extra: Option<&str>,
    days: u32,
    doses: u32,
    form: u32,
) -> TrainingInstance {
    let u = |role, text: String| Utterance { role, text };
    let mut turns = Vec::new();
    if form == 2 {
        turns.push(u(Role::Patient, "医生你好，想咨询一个问题。".to_owned()));
    }
    turns.extend([
        u(
            Role::Patient,
            format!("我得了{a}已经{days}天了，可以吃{b}吗？"),
        ),
        u(
            Role::Doctor,
            format!("{a}一般可以用{b}治疗，每天{doses}次。"),
        ),
    ]);
    if form != 1 {
        turns.push(u(Role::Patient, format!("我家人有{c}，会有影响吗？")));
        turns.push(u(Role::Doctor, "没有直接关系，注意休息。".to_owned()));
    }
    let also = extra.map(|d| format!("和{d}")).unwrap_or_default();
    let reference = match form {
        0 => format!("得了{a}{also}{days}天，可以吃{b}吗？"),
        1 => format!("{a}{also}患者可以用{b}治疗吗？已经{days}天了。"),
        _ => format!("{a}{also}可以吃{b}吗？每天{doses}次。"),
    };
    TrainingInstance {
        id,
        source: Source::Dialogue(turns),
        reference,
        language: Language::Chinese,
    }
}

/// A vocabulary covering `texts`: `<unk>` first, then every character and,
/// for English, every word with and without a leading space.
pub fn build_vocabulary(texts: impl IntoIterator<Item = String>, language: Language) -> Vocabulary {
    let mut tokens = BTreeSet::new();
    for text in texts {
        for ch in text.chars().filter(|c| *c != '\n' && *c != '\r') {
            tokens.insert(ch.to_string());
        }
        if language == Language::English {
            for word in text
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
            {
                tokens.insert(word.to_owned());
                tokens.insert(format!(" {word}"));
            }
        }
    }
    tokens.remove("<unk>");
    let mut all = vec!["<unk>".to_owned()];
    all.extend(tokens);
    Vocabulary::new(all).expect("tokens are unique and non-empty")
}
