use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn medfaith(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medfaith"))
        .args(args)
        .env("MEDFAITH_WORKERS", "2")
        .output()
        .unwrap()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy(dir: &Path) {
    let corpus = [
        json!({"id": "t1", "source": "I have asthma. My doctor gave me aspirin for 3 days.", "reference": "Is aspirin safe with asthma for 3 days?", "language": "english"}),
        json!({"id": "t2", "source": "Chest film shows pleural effusion. No infiltrate.", "reference": "Small pleural effusion. No infiltrate.", "language": "english"}),
        json!({"id": "t3", "source": "My father has diabetes. He takes insulin 2 times a day.", "reference": "Can insulin treat diabetes and tuberculosis?", "language": "english"}),
    ];
    let lines: Vec<String> = corpus.iter().map(Value::to_string).collect();
    fs::write(dir.join("corpus.jsonl"), lines.join("\n") + "\n").unwrap();
    fs::write(
        dir.join("lexicon.txt"),
        "asthma\naspirin\npleural effusion\ninfiltrate\ndiabetes\ninsulin\ntuberculosis\nwarfarin\n",
    )
    .unwrap();
    fs::write(
        dir.join("vocab.txt"),
        "<unk>\n not\n aspirin\n asthma\n insulin\n",
    )
    .unwrap();
    fs::write(
        dir.join("run.json"),
        json!({"corpus": "corpus.jsonl", "lexicon": "lexicon.txt", "vocab": "vocab.txt", "seed": 1}).to_string(),
    )
    .unwrap();
}

#[test]
fn toy_corpus_builds_three_bundles() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let out = dir.path().join("out");
    let o = medfaith(&[
        "build-sets",
        "--config",
        &p(&dir.path().join("run.json")),
        "--out",
        &p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = fs::read_to_string(out.join("bundles.jsonl")).unwrap();
    let bundles: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(bundles.len(), 3);
    for b in &bundles {
        assert!(b["positives"].as_array().unwrap().len() >= 2);
        assert!(!b["negatives"].as_array().unwrap().is_empty());
    }
    let stats: Value =
        serde_json::from_str(&fs::read_to_string(out.join("build_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["validation"]["passed"], 2);
    assert_eq!(stats["validation"]["checked"], 3);
}

#[test]
fn rerun_is_byte_identical_and_seed_matters() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let cfg = p(&dir.path().join("run.json"));
    let read = |name: &str| fs::read(dir.path().join(name).join("bundles.jsonl")).unwrap();
    for (out, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let o = medfaith(&[
            "pipeline",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            &p(&dir.path().join(out)),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn chinese_profile_on_english_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let o = medfaith(&[
        "build-sets",
        "--config",
        &p(&dir.path().join("run.json")),
        "--profile",
        "mds",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("chinese"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = medfaith(&["build-sets", "--out", &p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("corpus"));

    fs::write(dir.path().join("run.json"), r#"{"corpus": "nope.jsonl"}"#).unwrap();
    let o = medfaith(&["build-sets", "--config", &p(&dir.path().join("run.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn instances_without_negatives_fail_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    // A one-term lexicon leaves nothing to replace, append or swap.
    fs::write(dir.path().join("lexicon.txt"), "asthma\n").unwrap();
    let corpus = json!({"id": "z", "source": "I have asthma.", "reference": "Asthma help", "language": "english"});
    fs::write(dir.path().join("corpus.jsonl"), format!("{corpus}\n")).unwrap();
    let out = dir.path().join("out");
    let o = medfaith(&[
        "build-sets",
        "--config",
        &p(&dir.path().join("run.json")),
        "--out",
        &p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("instance z"));
    let stats: Value =
        serde_json::from_str(&fs::read_to_string(out.join("build_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["failures"][0]["id"], "z");
}

fn loss_inputs(dir: &Path, ids: &[&str]) {
    let mut reps = String::new();
    let mut logits = String::new();
    let mut mki = String::new();
    for id in ids {
        reps += &format!(
            "{}\n",
            json!({"instance_id": id, "positives": [[1.0, 0.0], [1.0, 0.0]], "negatives": [[0.0, 1.0]]})
        );
        logits += &format!(
            "{}\n",
            json!({"instance_id": id, "logits": [0.5, 9.0, -1.0]})
        );
    }
    for id in ["x", "y"] {
        mki += &format!(
            "{}\n",
            json!({"instance_id": id, "entries": [[0, 2], [2, 1]], "vocab_size": 3})
        );
    }
    fs::write(dir.join("reps.jsonl"), reps).unwrap();
    fs::write(dir.join("logits.jsonl"), logits).unwrap();
    fs::write(dir.join("mki.jsonl"), mki).unwrap();
    fs::write(
        dir.join("ce.jsonl"),
        "{\"instance_id\":\"x\",\"ce\":1.0}\n{\"instance_id\":\"y\",\"ce\":0.5}\n",
    )
    .unwrap();
    fs::write(
        dir.join("run.json"),
        json!({
            "representations": "reps.jsonl", "logits": "logits.jsonl", "ce": "ce.jsonl", "mki": "mki.jsonl",
            "loss": {"lambda_cl": 2.0, "lambda_mki": 0.0014}, "out": "out"
        })
        .to_string(),
    )
    .unwrap();
}

#[test]
fn eval_loss_hand_values_gradients_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    loss_inputs(dir.path(), &["x", "y"]);
    let o = medfaith(&[
        "eval-loss",
        "--config",
        &p(&dir.path().join("run.json")),
        "--grad",
        "--check-fd",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/losses.jsonl")).unwrap();
    let rows: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    let cl = 2.0 * (1.0 + (-1.0f64).exp()).ln();
    let x = &rows[0];
    assert_eq!(x["instance_id"], "x");
    assert!((x["l_cl"].as_f64().unwrap() - cl).abs() < 1e-12);
    assert_eq!(x["l_mki"].as_f64().unwrap(), 0.0);
    assert!((x["loss"].as_f64().unwrap() - (2.0 * cl + 1.0)).abs() < 1e-12);
    assert_eq!(x["grad"]["mki_logits"], json!([-2.0, -0.0, -1.0]));
    assert!(x["fd_error"]["cl"].as_f64().unwrap() < 1e-5);
}

#[test]
fn eval_loss_lists_orphan_ids() {
    let dir = tempfile::tempdir().unwrap();
    loss_inputs(dir.path(), &["x", "q"]);
    let o = medfaith(&["eval-loss", "--config", &p(&dir.path().join("run.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing from mki: q"), "{err}");
    assert!(err.contains("missing from representations: y"), "{err}");
}

#[test]
fn zero_norm_representation_is_a_record_error() {
    let dir = tempfile::tempdir().unwrap();
    loss_inputs(dir.path(), &["x", "y"]);
    let reps = "{\"instance_id\":\"x\",\"positives\":[[0.0,0.0],[1.0,0.0]],\"negatives\":[[0.0,1.0]]}\n\
                {\"instance_id\":\"y\",\"positives\":[[1.0,0.0],[1.0,0.0]],\"negatives\":[[0.0,1.0]]}\n";
    fs::write(dir.path().join("reps.jsonl"), reps).unwrap();
    let o = medfaith(&["eval-loss", "--config", &p(&dir.path().join("run.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("instance x"));
    let text = fs::read_to_string(dir.path().join("out/losses.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn metrics_report() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let preds = [
        json!({"id": "p1", "prediction": "aspirin for asthma", "reference": "asthma and aspirin"}),
        json!({"id": "p2", "prediction": "insulin", "reference": "insulin and diabetes"}),
    ];
    let anns = [
        json!({"instance_id": "p1", "category": "entity", "annotator_id": "a"}),
        json!({"instance_id": "p1", "category": "entity", "annotator_id": "b"}),
        json!({"instance_id": "p1", "category": "none", "annotator_id": "c"}),
        json!({"instance_id": "p2", "category": "none", "annotator_id": "a"}),
    ];
    let join = |rows: &[Value]| {
        rows.iter()
            .map(|r| r.to_string() + "\n")
            .collect::<String>()
    };
    fs::write(dir.path().join("preds.jsonl"), join(&preds)).unwrap();
    fs::write(dir.path().join("anns.jsonl"), join(&anns)).unwrap();
    fs::write(
        dir.path().join("m.json"),
        json!({"lexicon": "lexicon.txt", "predictions": "preds.jsonl", "annotations": "anns.jsonl", "out": "m"}).to_string(),
    )
    .unwrap();
    let o = medfaith(&["metrics", "--config", &p(&dir.path().join("m.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m/metrics.json")).unwrap())
            .unwrap();
    let f1 = &report["concept_f1"];
    assert_eq!(f1["per_instance"][0]["f1"], 1.0);
    assert!((f1["per_instance"][1]["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let tax = &report["taxonomy"];
    assert_eq!(tax["total"], 2);
    assert_eq!(tax["overall_error_percentage"], 50.0);
    assert_eq!(tax["categories"][1]["category"], "entity");
    assert_eq!(tax["categories"][1]["percentage"], 50.0);

    let bad = json!({"instance_id": "ghost", "category": "entity", "annotator_id": "a"});
    fs::write(dir.path().join("anns.jsonl"), format!("{bad}\n")).unwrap();
    let o = medfaith(&["metrics", "--config", &p(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ghost"));
}

#[test]
fn bad_worker_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_medfaith"))
        .args(["build-mki", "--config", &p(&dir.path().join("run.json"))])
        .env("MEDFAITH_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MEDFAITH_WORKERS"));
}
