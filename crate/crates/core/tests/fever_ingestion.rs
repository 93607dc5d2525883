use std::io::Write;

use factcheck_core::eval::{load_fever, stratified_sample};
use factcheck_core::Label;

/// Same shape and size as the FEVER development split.
fn write_dev_shaped(path: &std::path::Path) {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    for i in 0..19_998u64 {
        let (label, verifiable, evidence) = match i % 3 {
            0 => ("SUPPORTS", "VERIFIABLE", r#"[[[269158, 265470, "Some_Page", 0]]]"#),
            1 => ("REFUTES", "VERIFIABLE", r#"[[[1, 2, "Other_Page", 3], [1, 4, "Page", 1]]]"#),
            _ => ("NOT ENOUGH INFO", "NOT VERIFIABLE", r#"[[[222, null, null, null]]]"#),
        };
        writeln!(
            f,
            r#"{{"id": {}, "verifiable": "{verifiable}", "label": "{label}", "claim": "Claim number {i} \"quoted\" é.", "evidence": {evidence}}}"#,
            100_000 + i
        )
        .unwrap();
    }
}

#[test]
fn dev_shaped_file_counts_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dev.jsonl");
    write_dev_shaped(&path);
    let records = load_fever(&path).unwrap();
    assert_eq!(records.len(), 19_998);
    for label in Label::ALL {
        assert_eq!(records.iter().filter(|r| r.gold == label).count(), 6_666);
    }
    assert_eq!(records[0].claim, "Claim number 0 \"quoted\" é.");

    let sample = stratified_sample(&records, 300, 7);
    for label in Label::ALL {
        assert_eq!(sample.iter().filter(|r| r.gold == label).count(), 100);
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_fever(std::path::Path::new("/nonexistent/dev.jsonl")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dev.jsonl"), "{err}");
}
