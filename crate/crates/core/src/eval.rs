//! FEVER-style evaluation: dataset ingestion, label metrics, batch runs,
//! reports, and the one/two/three-module ablation.
//!
//! Scoring looks at predicted labels only; evidence annotations in the
//! dataset are ignored.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::PipelineConfig;
use crate::error::EvalError;
use crate::types::{Claim, Label, Mode};
use crate::verdict::{check_claim, Backends, BundleRecord, ParseStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeverRecord {
    pub id: u64,
    pub claim: String,
    pub gold: Label,
}

/// Maps FEVER surface labels onto the canonical vocabulary.
pub fn parse_fever_label(s: &str) -> Option<Label> {
    match s {
        "SUPPORTS" | "SUPPORTED" => Some(Label::Supported),
        "REFUTES" | "REFUTED" => Some(Label::Refuted),
        "NOT ENOUGH INFO" | "NEI" => Some(Label::NotEnoughInfo),
        _ => None,
    }
}

fn parse_fever_line(line: &str, line_no: usize) -> Result<FeverRecord, EvalError> {
    let parse_err = |detail: String| EvalError::Parse {
        line: line_no,
        detail,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;
    let id = obj
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err("missing or non-integer \"id\" field".into()))?;
    let claim = obj
        .get("claim")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err("missing \"claim\" field".into()))?;
    if claim.trim().is_empty() {
        return Err(parse_err("empty \"claim\" field".into()));
    }
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err("missing \"label\" field".into()))?;
    let gold = parse_fever_label(label).ok_or_else(|| EvalError::UnknownLabel {
        line: line_no,
        label: label.to_string(),
    })?;
    Ok(FeverRecord {
        id,
        claim: claim.to_string(),
        gold,
    })
}

/// Reads line-delimited FEVER records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_fever(reader: impl BufRead) -> Result<Vec<FeverRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_fever_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn load_fever(path: &Path) -> Result<Vec<FeverRecord>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_fever(BufReader::new(file))
}

/// Keeps `limit` records, allocated to gold labels in proportion to their
/// counts (largest remainder), chosen by a seeded shuffle, and returned in
/// dataset order.
pub fn stratified_sample(records: &[FeverRecord], limit: usize, seed: u64) -> Vec<FeverRecord> {
    if limit >= records.len() {
        return records.to_vec();
    }
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.gold).or_default().push(i);
    }
    let total = records.len();
    let mut quotas: Vec<(Label, usize, usize)> = groups
        .iter()
        .map(|(label, idx)| {
            let exact = limit * idx.len();
            (*label, exact / total, exact % total)
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(a.cmp(&b)));
    for &g in by_remainder.iter().take(limit - assigned) {
        quotas[g].1 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(limit);
    for (label, quota, _) in quotas {
        let mut idx = groups[&label].clone();
        idx.shuffle(&mut rng);
        chosen.extend(idx.into_iter().take(quota));
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| records[i].clone()).collect()
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    /// Rows are gold labels, columns predicted labels, both in
    /// SUPPORTED, REFUTED, NEI order.
    pub confusion: [[usize; 3]; 3],
    pub per_label: BTreeMap<Label, LabelMetrics>,
    /// Predicted-label counts.
    pub distribution: BTreeMap<Label, usize>,
    pub failed_parses: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and F1 per label, plus accuracy.
pub fn compute_metrics(pairs: &[(Label, Label, ParseStatus)]) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut confusion = [[0usize; 3]; 3];
    let mut failed_parses = 0;
    for &(gold, predicted, status) in pairs {
        confusion[gold.index()][predicted.index()] += 1;
        if status == ParseStatus::Failed {
            failed_parses += 1;
        }
    }
    let n = pairs.len();
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    let mut per_label = BTreeMap::new();
    let mut distribution = BTreeMap::new();
    for label in Label::ALL {
        let c = label.index();
        let tp = confusion[c][c];
        let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
        let gold: usize = confusion[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_label.insert(
            label,
            LabelMetrics {
                precision,
                recall,
                f1,
                support: gold,
            },
        );
        distribution.insert(label, predicted);
    }
    Ok(MetricsReport {
        n,
        accuracy: ratio(correct, n),
        confusion,
        per_label,
        distribution,
        failed_parses,
    })
}

// ---------------------------------------------------------------------------
// Batch runs

/// One line of the run log: the bundle plus its sequence number and gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogLine {
    pub seq: usize,
    pub gold: Label,
    #[serde(flatten)]
    pub bundle: BundleRecord,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: MetricsReport,
    pub lines: Vec<RunLogLine>,
}

fn failure_record(claim: Claim, mode: Mode, error: String) -> BundleRecord {
    BundleRecord {
        claim,
        mode,
        label: Label::NotEnoughInfo,
        explanation: String::new(),
        parse_status: ParseStatus::Failed,
        raw_output: String::new(),
        evidence: Vec::new(),
        warnings: vec![format!("claim check failed: {error}")],
        timings_ms: BTreeMap::new(),
    }
}

/// Checks every record in `config.pipeline.mode` with bounded parallelism,
/// streaming log lines to `log` in record order.
///
/// A claim whose check fails is scored as a failed parse (NEI). The run is
/// aborted when the current streak of consecutive failures exceeds 20% of
/// the records.
pub fn run_eval(
    records: &[FeverRecord],
    config: &PipelineConfig,
    backends: Backends<'_>,
    log: &mut dyn Write,
) -> Result<EvalRun, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mode = config.pipeline.mode;
    let workers = config.pipeline.workers.clamp(1, records.len());
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let streak: Mutex<(usize, Option<String>)> = Mutex::new((0, None));
    let (tx, rx) = mpsc::channel::<(usize, RunLogLine)>();

    let lines = std::thread::scope(|s| -> Result<Vec<RunLogLine>, EvalError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, streak) = (&next, &abort, &streak);
            s.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let seq = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = records.get(seq) else { break };
                let bundle = match Claim::with_id(Some(record.id), record.claim.clone()) {
                    Ok(claim) => match check_claim(&claim, config, backends) {
                        Ok(b) => Ok(b.to_record()),
                        Err(e) => Err((claim, e.to_string())),
                    },
                    Err(e) => Err((
                        Claim {
                            id: Some(record.id),
                            text: record.claim.clone(),
                        },
                        e.to_string(),
                    )),
                };
                let bundle = {
                    let mut st = streak.lock().expect("streak lock");
                    match bundle {
                        Ok(b) => {
                            st.0 = 0;
                            b
                        }
                        Err((claim, err)) => {
                            st.0 += 1;
                            st.1 = Some(err.clone());
                            if st.0 * 5 > records.len() {
                                abort.store(true, Ordering::SeqCst);
                            }
                            failure_record(claim, mode, err)
                        }
                    }
                };
                let line = RunLogLine {
                    seq,
                    gold: record.gold,
                    bundle,
                };
                if tx.send((seq, line)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder by sequence number before writing.
        let mut pending: HashMap<usize, RunLogLine> = HashMap::new();
        let mut written = Vec::with_capacity(records.len());
        for (seq, line) in rx {
            pending.insert(seq, line);
            while let Some(line) = pending.remove(&written.len()) {
                let text = serde_json::to_string(&line)?;
                writeln!(log, "{text}").map_err(|source| EvalError::Io {
                    path: "<run log>".into(),
                    source,
                })?;
                written.push(line);
            }
        }
        Ok(written)
    })?;

    if abort.load(Ordering::SeqCst) {
        let st = streak.lock().expect("streak lock");
        return Err(EvalError::SystemicFailure {
            streak: st.0,
            total: records.len(),
            last: st.1.clone().unwrap_or_default(),
        });
    }
    log.flush().map_err(|source| EvalError::Io {
        path: "<run log>".into(),
        source,
    })?;
    let pairs: Vec<_> = lines
        .iter()
        .map(|l| (l.gold, l.bundle.label, l.bundle.parse_status))
        .collect();
    Ok(EvalRun {
        report: compute_metrics(&pairs)?,
        lines,
    })
}

/// Runs the same records through the three-, two- and one-module pipelines.
pub fn run_ablation(
    records: &[FeverRecord],
    config: &PipelineConfig,
    backends: Backends<'_>,
    log_for: &mut dyn FnMut(Mode) -> std::io::Result<Box<dyn Write>>,
) -> Result<Vec<(Mode, MetricsReport)>, EvalError> {
    let mut rows = Vec::new();
    for mode in Mode::ALL {
        let mut cfg = config.clone();
        cfg.pipeline.mode = mode;
        let mut log = log_for(mode).map_err(|source| EvalError::Io {
            path: format!("<{mode} run log>").into(),
            source,
        })?;
        let run = run_eval(records, &cfg, backends, &mut *log)?;
        rows.push((mode, run.report));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("reports serialize"),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    let mut header = String::from("| N | Accuracy (A) |");
    let mut rule = String::from("|---:|---:|");
    for label in Label::ALL {
        for m in ["P", "R", "F1"] {
            header.push_str(&format!(" {label} {m} |"));
            rule.push_str("---:|");
        }
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    out.push_str(&format!("| {} | {:.2} |", report.n, report.accuracy * 100.0));
    for label in Label::ALL {
        let m = report.per_label[&label];
        out.push_str(&format!(" {} | {} | {} |", pct(m.precision), pct(m.recall), pct(m.f1)));
    }
    out.push_str("\n\n");

    out.push_str("Label distribution\n\n| Label | Gold | Predicted |\n|---|---:|---:|\n");
    for label in Label::ALL {
        out.push_str(&format!(
            "| {label} | {} | {} |\n",
            report.per_label[&label].support, report.distribution[&label]
        ));
    }
    out.push('\n');

    out.push_str("Confusion matrix (rows gold, columns predicted)\n\n| gold \\ predicted |");
    for label in Label::ALL {
        out.push_str(&format!(" {label} |"));
    }
    out.push_str("\n|---|---:|---:|---:|\n");
    for gold in Label::ALL {
        out.push_str(&format!("| {gold} |"));
        for count in report.confusion[gold.index()] {
            out.push_str(&format!(" {count} |"));
        }
        out.push('\n');
    }
    if report.failed_parses > 0 {
        out.push_str(&format!(
            "\nfailed parses: {} of {} verdicts defaulted to NEI\n",
            report.failed_parses, report.n
        ));
    }
    out
}

/// Ablation comparison: accuracy and per-label F1, one row per mode.
pub fn render_ablation_table(rows: &[(Mode, MetricsReport)]) -> String {
    let mut out = String::from("| Model | Accuracy (A) |");
    for label in Label::ALL {
        out.push_str(&format!(" {label} |"));
    }
    out.push_str("\n|---|---:|---:|---:|---:|\n");
    for (mode, report) in rows {
        out.push_str(&format!("| LLM-{mode} | {:.2} |", report.accuracy * 100.0));
        for label in Label::ALL {
            out.push_str(&format!(" {} |", pct(report.per_label[&label].f1)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: Label = Label::Supported;
    const R: Label = Label::Refuted;
    const N: Label = Label::NotEnoughInfo;

    fn ok(gold: Label, pred: Label) -> (Label, Label, ParseStatus) {
        (gold, pred, ParseStatus::Ok)
    }

    #[test]
    fn fever_label_mapping() {
        assert_eq!(parse_fever_label("SUPPORTS"), Some(S));
        assert_eq!(parse_fever_label("REFUTES"), Some(R));
        assert_eq!(parse_fever_label("NOT ENOUGH INFO"), Some(N));
        assert_eq!(parse_fever_label("MAYBE"), None);
    }

    #[test]
    fn reads_fever_lines_and_ignores_evidence() {
        let data = r#"{"id": 1, "verifiable": "VERIFIABLE", "label": "SUPPORTS", "claim": "A is B.", "evidence": [[[1, 2, "A", 0]]]}

{"id": 2, "label": "NOT ENOUGH INFO", "claim": "C is D.", "evidence": [[[3, null, null, null]]]}
"#;
        let recs = read_fever(data.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0], FeverRecord { id: 1, claim: "A is B.".into(), gold: S });
        assert_eq!(recs[1].gold, N);
    }

    #[test]
    fn missing_claim_names_the_line() {
        let data = "{\"id\": 1, \"label\": \"SUPPORTS\", \"claim\": \"x\"}\n{\"id\": 2, \"label\": \"REFUTES\"}\n";
        match read_fever(data.as_bytes()) {
            Err(EvalError::Parse { line, detail }) => {
                assert_eq!(line, 2);
                assert!(detail.contains("claim"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match read_fever("{\"id\": 3, \"label\": \"MAYBE\", \"claim\": \"x\"}".as_bytes()) {
            Err(EvalError::UnknownLabel { line: 1, label }) => assert_eq!(label, "MAYBE"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perfect_predictions() {
        let pairs: Vec<_> = [S, S, S, R, R, R, R, S, R, S].iter().map(|&l| ok(l, l)).collect();
        let m = compute_metrics(&pairs).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.per_label[&S].f1, 1.0);
        assert_eq!(m.per_label[&R].f1, 1.0);
        assert_eq!(m.per_label[&N].f1, 0.0);
        assert_eq!(m.per_label[&N].support, 0);
    }

    #[test]
    fn never_predicted_class_has_zero_precision() {
        let m = compute_metrics(&[ok(S, S), ok(R, S), ok(N, R)]).unwrap();
        assert_eq!(m.per_label[&N].precision, 0.0);
        assert_eq!(m.per_label[&N].recall, 0.0);
        assert_eq!(m.per_label[&N].f1, 0.0);
        assert_eq!(m.distribution[&N], 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyInput)));
    }

    fn sample_report() -> MetricsReport {
        compute_metrics(&[
            ok(S, S),
            ok(R, N),
            (N, N, ParseStatus::Failed),
            ok(S, R),
        ])
        .unwrap()
    }

    #[test]
    fn markdown_has_three_label_groups() {
        let md = render_report(&sample_report(), ReportFormat::Markdown);
        let header = md.lines().next().unwrap();
        for label in Label::ALL {
            assert_eq!(header.matches(&format!("{label} ")).count(), 3, "{header}");
        }
        assert_eq!(header.matches(" P |").count(), 3);
        assert!(md.contains("failed parses: 1 of 4"));
        let clean = compute_metrics(&[ok(S, S)]).unwrap();
        assert!(!render_report(&clean, ReportFormat::Markdown).contains("failed parses"));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let report = sample_report();
        let json = render_report(&report, ReportFormat::Json);
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(render_report(&back, ReportFormat::Json), json);
        assert_eq!(
            render_report(&back, ReportFormat::Markdown),
            render_report(&report, ReportFormat::Markdown)
        );
    }

    #[test]
    fn ablation_table_has_one_row_per_mode() {
        let r = sample_report();
        let rows: Vec<_> = Mode::ALL.iter().map(|m| (*m, r.clone())).collect();
        let table = render_ablation_table(&rows);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("| LLM-3-module |"));
        assert!(table.contains("| LLM-1-module |"));
    }

    fn records(counts: [usize; 3]) -> Vec<FeverRecord> {
        let mut out = Vec::new();
        for (label, n) in Label::ALL.into_iter().zip(counts) {
            for _ in 0..n {
                out.push(FeverRecord {
                    id: out.len() as u64,
                    claim: format!("claim {}", out.len()),
                    gold: label,
                });
            }
        }
        out
    }

    #[test]
    fn stratified_sample_preserves_balance() {
        let recs = records([30, 30, 30]);
        let s = stratified_sample(&recs, 12, 7);
        assert_eq!(s.len(), 12);
        for label in Label::ALL {
            assert_eq!(s.iter().filter(|r| r.gold == label).count(), 4);
        }
        assert!(s.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(s, stratified_sample(&recs, 12, 7));
        assert_ne!(s, stratified_sample(&recs, 12, 8));
        assert_eq!(stratified_sample(&recs, 500, 1).len(), 90);
    }

    #[test]
    fn stratified_sample_uses_largest_remainder() {
        let s = stratified_sample(&records([5, 3, 2]), 5, 0);
        let counts: Vec<usize> = Label::ALL
            .iter()
            .map(|l| s.iter().filter(|r| r.gold == *l).count())
            .collect();
        assert_eq!(counts, vec![3, 1, 1]);
    }

    fn label_strategy() -> impl Strategy<Value = Label> {
        prop_oneof![Just(S), Just(R), Just(N)]
    }

    proptest! {
        #[test]
        fn metrics_invariants(pairs in proptest::collection::vec((label_strategy(), label_strategy()), 1..200)) {
            let pairs: Vec<_> = pairs.into_iter().map(|(g, p)| ok(g, p)).collect();
            let m = compute_metrics(&pairs).unwrap();
            let total: usize = m.confusion.iter().flatten().sum();
            prop_assert_eq!(total, m.n);
            let trace: usize = (0..3).map(|i| m.confusion[i][i]).sum();
            prop_assert_eq!(m.accuracy, trace as f64 / m.n as f64);
            prop_assert_eq!(m.distribution.values().sum::<usize>(), m.n);
            for label in Label::ALL {
                let col: usize = (0..3).map(|g| m.confusion[g][label.index()]).sum();
                prop_assert_eq!(m.distribution[&label], col);
                let lm = m.per_label[&label];
                for x in [lm.precision, lm.recall, lm.f1] {
                    prop_assert!((0.0..=1.0).contains(&x));
                }
            }
            // Accuracy equals support-weighted recall.
            let weighted: f64 = Label::ALL
                .iter()
                .map(|l| m.per_label[l].recall * m.per_label[l].support as f64)
                .sum::<f64>() / m.n as f64;
            prop_assert!((weighted - m.accuracy).abs() < 1e-12);
        }
    }
}
