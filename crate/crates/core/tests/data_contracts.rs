use std::fs;

use qrewrite::data::{
    gen_synthetic, load_checkpoint, load_squad_json, merge_for_training, merge_records, read_augmented, save_checkpoint, write_augmented,
    write_squad_json, Checkpoint, SyntheticConfig,
};
use qrewrite::text::Vocab;
use qrewrite::{AugmentedRecord, Error, Label, MergeMode, ParamSet, Tensor};
use serde_json::json;

const TEN_TOKENS: &str = "alpha beta gamma delta epsilon zeta eta theta iota kappa";

fn squad_fixture() -> serde_json::Value {
    json!({
        "version": "v2.0",
        "data": [{
            "title": "fixture",
            "paragraphs": [{
                "context": TEN_TOKENS,
                "qas": [
                    {
                        "id": "q-ans",
                        "question": "which word is fourth ?",
                        "is_impossible": false,
                        "answers": [{"text": "delta", "answer_start": TEN_TOKENS.find("delta").unwrap()}]
                    },
                    {
                        "id": "q-unans",
                        "question": "which word is eleventh ?",
                        "is_impossible": true,
                        "answers": []
                    },
                    {
                        "id": "q-misaligned",
                        "question": "which half word ?",
                        "is_impossible": false,
                        "answers": [{"text": "elt", "answer_start": TEN_TOKENS.find("delta").unwrap() + 1}]
                    }
                ]
            }]
        }]
    })
}

#[test]
fn squad_fixture_maps_offsets_to_token_spans() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.json");
    fs::write(&path, squad_fixture().to_string()).unwrap();
    let load = load_squad_json(&path, None).unwrap();
    assert_eq!(load.dropped, 1);
    let d = &load.dataset;
    assert_eq!(d.len(), 2);
    let ans = d.tuples.iter().find(|t| t.id == "q-ans").unwrap();
    assert_eq!(ans.span, Some((3, 3)));
    assert_eq!(ans.label, Label::Answerable);
    let unans = d.tuples.iter().find(|t| t.id == "q-unans").unwrap();
    assert_eq!(unans.span, None);
    assert_eq!(unans.label, Label::Unanswerable);
}

#[test]
fn squad_empty_data_and_bad_json_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, r#"{"data": []}"#).unwrap();
    assert!(matches!(load_squad_json(&empty, None), Err(Error::Contract(_))));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\n  \"data\": [\n    {\"paragraphs\": [}\n").unwrap();
    match load_squad_json(&broken, None) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn synthetic_label_ratio_is_two_to_one() {
    let d = gen_synthetic(&SyntheticConfig {
        seed: 7,
        n_paragraphs: 500,
        facts_min: 3,
        facts_max: 6,
    })
    .unwrap();
    let ratio = d.count(Label::Answerable) as f64 / d.count(Label::Unanswerable) as f64;
    assert!((ratio - 2.0).abs() <= 0.1, "answerable:unanswerable = {ratio:.3}");
}

#[test]
fn synthetic_generation_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig::default();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    write_squad_json(&gen_synthetic(&cfg).unwrap(), &a).unwrap();
    write_squad_json(&gen_synthetic(&cfg).unwrap(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn synthetic_round_trips_through_squad_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen_synthetic(&SyntheticConfig {
        n_paragraphs: 20,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let path = dir.path().join("syn.json");
    write_squad_json(&d, &path).unwrap();
    let back = load_squad_json(&path, Some(&d.vocab)).unwrap();
    assert_eq!(back.dropped, 0);
    assert_eq!(back.dataset.len(), d.len());
    for t in &d.tuples {
        let u = back.dataset.tuples.iter().find(|u| u.id == t.id).unwrap();
        assert_eq!((&u.question.ids, u.span, u.label), (&t.question.ids, t.span, t.label));
        assert_eq!(u.paragraph_id, t.paragraph_id);
    }
}

fn record(id: &str, label: Label, paragraph: &str) -> AugmentedRecord {
    let span = (label == Label::Answerable).then_some(5);
    AugmentedRecord {
        id: id.into(),
        source_id: "src".into(),
        question: "what is the color of ada ?".into(),
        paragraph_id: paragraph.into(),
        target_label: label,
        span_start: span,
        span_end: span,
        jaccard: 0.75,
        p_target: 0.8125,
        eta_init: 2.0,
        eta_index: 1,
        step_index: 3,
        plausible_span: (label == Label::Unanswerable).then_some((5, 5)),
    }
}

#[test]
fn augmented_files_round_trip_line_by_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aug.jsonl");
    write_augmented(&[], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "");

    let records = vec![
        record("r1", Label::Unanswerable, "p"),
        record("r2", Label::Answerable, "p"),
        record("r3", Label::Unanswerable, "p"),
    ];
    write_augmented(&records, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for (line, r) in lines.iter().zip(&records) {
        let parsed: AugmentedRecord = serde_json::from_str(line).unwrap();
        assert_eq!(&parsed, r);
    }
    assert_eq!(read_augmented(&path).unwrap(), records);
}

#[test]
fn merging_counts_and_filters() {
    let d = gen_synthetic(&SyntheticConfig {
        n_paragraphs: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let pid = d.tuples[0].paragraph_id.clone();
    assert_eq!(merge_records(&d, &[], MergeMode::Both).unwrap().tuples, d.tuples);

    let records = vec![
        record("u1", Label::Unanswerable, &pid),
        record("a1", Label::Answerable, &pid),
        record("u2", Label::Unanswerable, &pid),
    ];
    let both = merge_records(&d, &records, MergeMode::Both).unwrap();
    assert_eq!(both.len(), d.len() + 3);
    let unans = merge_records(&d, &records, MergeMode::Unans).unwrap();
    assert_eq!(unans.len(), d.len() + 2);
    assert!(unans.tuples[d.len()..].iter().all(|t| t.label == Label::Unanswerable));
    let ans = merge_records(&d, &records, MergeMode::Ans).unwrap();
    assert_eq!(ans.len(), d.len() + 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aug.jsonl");
    write_augmented(&records, &path).unwrap();
    assert_eq!(merge_for_training(&d, &path, MergeMode::Both).unwrap().len(), d.len() + 3);
}

#[test]
fn merging_dangling_paragraphs_names_them() {
    let d = gen_synthetic(&SyntheticConfig {
        n_paragraphs: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let err = merge_records(&d, &[record("x", Label::Unanswerable, "nowhere")], MergeMode::Both).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(err.to_string().contains("nowhere"), "{err}");
}

#[test]
fn checkpoints_round_trip_and_reject_damage() {
    let vocab = Vocab::from_words(["one", "two"]);
    let other = Vocab::from_words(["three"]);
    let mut tensors = ParamSet::new();
    tensors.insert("w", Tensor::<f32>::matrix(2, 3, vec![0.1, -2.5, 3.0e-8, f32::MIN_POSITIVE, 7.0, -0.0]).unwrap());
    tensors.insert("b", Tensor::<f32>::row_vector(vec![1.0, 2.0]));
    let ckpt = Checkpoint {
        metadata: json!({"kind": "test", "vocab_hash": vocab.content_hash()}),
        tensors,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    for ((n1, t1), (n2, t2)) in ckpt.tensors.iter().zip(back.tensors.iter()) {
        assert_eq!(n1, n2);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1), bits(t2));
    }
    assert!(back.check_vocab(&vocab).is_ok());
    assert!(matches!(back.check_vocab(&other), Err(Error::VocabMismatch { .. })));

    let bytes = fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&cut), Err(Error::Format(_))));
}
