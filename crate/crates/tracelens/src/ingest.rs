//! File ingestion: trace logs (JSONL or CSV), the app-category catalog,
//! stem lists, spell-correction lexicons, ground-truth labels, and the
//! label sidecar format produced by classification.
//!
//! Ingestion is line-oriented and lenient: a malformed line is rejected
//! with a reason and counted in the [`IngestReport`], never fatal. File
//! level problems (unreadable file, bad CSV header, duplicate catalog
//! keys) are errors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    validate_record, AppCatalog, CatalogError, LabeledRecord, RawRecord, RawTimestamp,
    ScreenshotRecord,
};
use crate::textfeat::{Lexicon, LexiconError, StemList, StemParseError};

/// Input encodings for trace files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(TraceFormat::Jsonl),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(format!("unknown trace format {other:?} (expected jsonl or csv)")),
        }
    }
}

/// All accepted records for one participant, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantTrace {
    pub participant_id: String,
    pub records: Vec<ScreenshotRecord>,
}

impl ParticipantTrace {
    /// Builds a trace, enforcing shared participant id and strictly
    /// ascending timestamps.
    pub fn new(
        participant_id: String,
        mut records: Vec<ScreenshotRecord>,
    ) -> Result<Self, IngestError> {
        records.sort_by_key(|r| r.ts_ms);
        for r in &records {
            if r.participant_id != participant_id {
                return Err(IngestError::MixedParticipants {
                    expected: participant_id,
                    found: r.participant_id.clone(),
                });
            }
        }
        for pair in records.windows(2) {
            if pair[0].ts_ms == pair[1].ts_ms {
                return Err(IngestError::DuplicateTimestamp {
                    participant_id,
                    ts_ms: pair[0].ts_ms,
                });
            }
        }
        Ok(ParticipantTrace { participant_id, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One rejected input line and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: u64,
    pub reason: String,
}

/// Outcome summary of an ingestion pass: accepted + rejected = lines read.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines_read: u64,
    pub accepted: u64,
    pub rejected: Vec<RejectedLine>,
    pub participants: usize,
}

impl IngestReport {
    pub fn rejected_count(&self) -> u64 {
        self.rejected.len() as u64
    }

    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }
}

/// Ingest report plus the positive-label count for ground-truth files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthReport {
    pub ingest: IngestReport,
    pub positives: u64,
}

impl GroundTruthReport {
    /// Fraction of accepted records labeled positive.
    pub fn base_rate(&self) -> f64 {
        if self.ingest.accepted == 0 {
            0.0
        } else {
            self.positives as f64 / self.ingest.accepted as f64
        }
    }
}

/// Per-record label sidecar: the interchange format between classification,
/// segmentation, and the synthetic generator's ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLabel {
    pub participant_id: String,
    pub ts_ms: i64,
    pub political: bool,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    BadHeader { path: PathBuf, detail: String },
    #[error("catalog error: {0}")]
    Catalog(#[from] CatalogError),
    #[error("stem list error: {0}")]
    Stems(#[from] StemParseError),
    #[error("lexicon error: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("trace for {expected:?} contains record for {found:?}")]
    MixedParticipants { expected: String, found: String },
    #[error("duplicate timestamp {ts_ms} for participant {participant_id:?}")]
    DuplicateTimestamp { participant_id: String, ts_ms: i64 },
    #[error("no label for record ({participant_id:?}, {ts_ms})")]
    MissingLabel { participant_id: String, ts_ms: i64 },
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Parses a trace file, validating and grouping records per participant.
/// Traces come back sorted by participant id, each sorted by timestamp.
pub fn parse_trace_file(
    path: &Path,
    format: TraceFormat,
) -> Result<(Vec<ParticipantTrace>, IngestReport), IngestError> {
    match format {
        TraceFormat::Jsonl => parse_trace_jsonl(open(path)?),
        TraceFormat::Csv => parse_trace_csv(open(path)?),
    }
}

/// JSONL ingestion from any reader. Blank lines are skipped and not counted.
pub fn parse_trace_jsonl(
    reader: impl BufRead,
) -> Result<(Vec<ParticipantTrace>, IngestReport), IngestError> {
    let mut groups = Grouper::new();
    let mut report = IngestReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|source| IngestError::Io { path: "<stream>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines_read += 1;
        match jsonl_raw_record(&line) {
            Ok((raw, _extra)) => groups.offer(raw, line_no, &mut report),
            Err(reason) => report.rejected.push(RejectedLine { line: line_no, reason }),
        }
    }
    let traces = groups.finish(&mut report);
    Ok((traces, report))
}

/// CSV ingestion (header `participant_id,ts_ms,app_id,text`, RFC-4180 quoting).
pub fn parse_trace_csv(
    reader: impl Read,
) -> Result<(Vec<ParticipantTrace>, IngestReport), IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| IngestError::BadHeader { path: "<stream>".into(), detail: e.to_string() })?
        .clone();
    let field = |name: &str| headers.iter().position(|h| h == name);
    let (pi, ti) = match (field("participant_id"), field("ts_ms")) {
        (Some(p), Some(t)) => (p, t),
        _ => {
            return Err(IngestError::BadHeader {
                path: "<stream>".into(),
                detail: format!(
                    "expected header with participant_id and ts_ms, got {:?}",
                    headers.iter().collect::<Vec<_>>()
                ),
            })
        }
    };
    let ai = field("app_id");
    let xi = field("text");

    let mut groups = Grouper::new();
    let mut report = IngestReport::default();
    for result in csv_reader.into_records() {
        match result {
            Ok(row) => {
                let line_no = row.position().map(|p| p.line()).unwrap_or(0);
                report.lines_read += 1;
                let raw = RawRecord {
                    participant_id: row.get(pi).map(String::from),
                    ts_ms: match row.get(ti) {
                        None => RawTimestamp::Missing,
                        Some(s) => match s.trim().parse::<i64>() {
                            Ok(v) => RawTimestamp::Value(v),
                            Err(_) => RawTimestamp::NotAnInteger(s.to_string()),
                        },
                    },
                    app_id: ai
                        .and_then(|i| row.get(i))
                        .filter(|s| !s.is_empty())
                        .map(String::from),
                    text: xi.and_then(|i| row.get(i)).map(String::from),
                };
                groups.offer(raw, line_no, &mut report);
            }
            Err(e) => {
                report.lines_read += 1;
                let line_no = e.position().map(|p| p.line()).unwrap_or(0);
                report
                    .rejected
                    .push(RejectedLine { line: line_no, reason: format!("csv: {e}") });
            }
        }
    }
    let traces = groups.finish(&mut report);
    Ok((traces, report))
}

/// Extracts a raw record from one JSONL line. The second element is the
/// remaining JSON object, so label formats can layer extra fields on top.
fn jsonl_raw_record(line: &str) -> Result<(RawRecord, serde_json::Map<String, Value>), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(map) = value else {
        return Err("line is not a JSON object".to_string());
    };
    let participant_id = match map.get("participant_id") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(format!("participant_id is not a string: {other}")),
        None => None,
    };
    let ts_ms = match map.get("ts_ms") {
        None => RawTimestamp::Missing,
        Some(Value::Number(n)) => match n.as_i64() {
            Some(v) => RawTimestamp::Value(v),
            None => RawTimestamp::NotAnInteger(n.to_string()),
        },
        Some(other) => RawTimestamp::NotAnInteger(other.to_string()),
    };
    let app_id = match map.get("app_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(format!("app_id is not a string or null: {other}")),
    };
    let text = match map.get("text") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(format!("text is not a string: {other}")),
    };
    Ok((RawRecord { participant_id, ts_ms, app_id, text }, map))
}

/// Accumulates validated records per participant with duplicate-timestamp
/// rejection; grouping is deterministic (participants sorted by id).
struct Grouper {
    by_participant: BTreeMap<String, Vec<ScreenshotRecord>>,
    seen: HashMap<String, HashSet<i64>>,
}

impl Grouper {
    fn new() -> Self {
        Grouper { by_participant: BTreeMap::new(), seen: HashMap::new() }
    }

    fn offer(&mut self, raw: RawRecord, line_no: u64, report: &mut IngestReport) {
        match validate_record(raw) {
            Ok(rec) => {
                let fresh = self
                    .seen
                    .entry(rec.participant_id.clone())
                    .or_default()
                    .insert(rec.ts_ms);
                if fresh {
                    report.accepted += 1;
                    self.by_participant
                        .entry(rec.participant_id.clone())
                        .or_default()
                        .push(rec);
                } else {
                    report.rejected.push(RejectedLine {
                        line: line_no,
                        reason: format!(
                            "duplicate (participant_id, ts_ms) = ({:?}, {})",
                            rec.participant_id, rec.ts_ms
                        ),
                    });
                }
            }
            Err(errors) => {
                let reason = errors
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; ");
                report.rejected.push(RejectedLine { line: line_no, reason });
            }
        }
    }

    fn finish(self, report: &mut IngestReport) -> Vec<ParticipantTrace> {
        report.participants = self.by_participant.len();
        self.by_participant
            .into_iter()
            .map(|(participant_id, mut records)| {
                records.sort_by_key(|r| r.ts_ms);
                ParticipantTrace { participant_id, records }
            })
            .collect()
    }
}

/// Loads the app catalog CSV (header `app_id,category`); duplicate app ids
/// and empty categories are errors. The distinguished news category is
/// `"news"`.
pub fn load_app_catalog(path: &Path) -> Result<AppCatalog, IngestError> {
    parse_app_catalog(open(path)?)
}

pub fn parse_app_catalog(reader: impl Read) -> Result<AppCatalog, IngestError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| IngestError::BadHeader { path: "<stream>".into(), detail: e.to_string() })?;
    if headers.len() < 2 || &headers[0] != "app_id" || &headers[1] != "category" {
        return Err(IngestError::BadHeader {
            path: "<stream>".into(),
            detail: format!("expected header app_id,category, got {headers:?}"),
        });
    }
    let mut entries = Vec::new();
    for row in csv_reader.into_records() {
        let row = row.map_err(|e| IngestError::BadHeader {
            path: "<stream>".into(),
            detail: format!("malformed catalog row: {e}"),
        })?;
        let app_id = row.get(0).unwrap_or("").to_string();
        let category = row.get(1).unwrap_or("").to_string();
        if app_id.is_empty() {
            return Err(IngestError::BadHeader {
                path: "<stream>".into(),
                detail: "catalog row with empty app_id".into(),
            });
        }
        entries.push((app_id, category));
    }
    Ok(AppCatalog::new(entries, "news")?)
}

/// Loads the stem list (one dot-encoded stem per line, order preserved).
pub fn load_stems(path: &Path) -> Result<StemList, IngestError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(StemList::parse_lines(text.lines())?)
}

/// Loads a spell-correction lexicon (one word per line; blank lines skipped).
pub fn load_lexicon(path: &Path) -> Result<Lexicon, IngestError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(Lexicon::new(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from),
    )?)
}

/// Loads ground-truth labeled records (trace JSONL plus a boolean
/// `political` field per line). Records keep file order.
pub fn load_ground_truth(
    path: &Path,
) -> Result<(Vec<LabeledRecord>, GroundTruthReport), IngestError> {
    parse_ground_truth(open(path)?)
}

pub fn parse_ground_truth(
    reader: impl BufRead,
) -> Result<(Vec<LabeledRecord>, GroundTruthReport), IngestError> {
    let mut report = GroundTruthReport::default();
    let mut out = Vec::new();
    let mut seen: HashMap<String, HashSet<i64>> = HashMap::new();
    let mut participants: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|source| IngestError::Io { path: "<stream>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        report.ingest.lines_read += 1;
        let reject = |report: &mut GroundTruthReport, reason: String| {
            report.ingest.rejected.push(RejectedLine { line: line_no, reason });
        };
        match jsonl_raw_record(&line) {
            Ok((raw, map)) => {
                let political = match map.get("political") {
                    Some(Value::Bool(b)) => *b,
                    Some(other) => {
                        reject(&mut report, format!("non-boolean political label: {other}"));
                        continue;
                    }
                    None => {
                        reject(&mut report, "missing political label".to_string());
                        continue;
                    }
                };
                match validate_record(raw) {
                    Ok(record) => {
                        let fresh = seen
                            .entry(record.participant_id.clone())
                            .or_default()
                            .insert(record.ts_ms);
                        if !fresh {
                            reject(
                                &mut report,
                                format!(
                                    "duplicate (participant_id, ts_ms) = ({:?}, {})",
                                    record.participant_id, record.ts_ms
                                ),
                            );
                            continue;
                        }
                        report.ingest.accepted += 1;
                        if political {
                            report.positives += 1;
                        }
                        participants.insert(record.participant_id.clone());
                        out.push(LabeledRecord { record, political });
                    }
                    Err(errors) => {
                        let reason = errors
                            .iter()
                            .map(ToString::to_string)
                            .collect::<Vec<_>>()
                            .join("; ");
                        reject(&mut report, reason);
                    }
                }
            }
            Err(reason) => reject(&mut report, reason),
        }
    }
    report.ingest.participants = participants.len();
    Ok((out, report))
}

/// Loads a label sidecar (JSONL of `{participant_id, ts_ms, political}`).
pub fn load_labels(path: &Path) -> Result<(Vec<RecordLabel>, IngestReport), IngestError> {
    parse_labels(open(path)?)
}

pub fn parse_labels(
    reader: impl BufRead,
) -> Result<(Vec<RecordLabel>, IngestReport), IngestError> {
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut seen: HashMap<String, HashSet<i64>> = HashMap::new();
    let mut participants: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|source| IngestError::Io { path: "<stream>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines_read += 1;
        match serde_json::from_str::<RecordLabel>(&line) {
            Ok(label) if label.participant_id.is_empty() => {
                report
                    .rejected
                    .push(RejectedLine { line: line_no, reason: "empty participant_id".into() });
            }
            Ok(label) if label.ts_ms < 0 => {
                report.rejected.push(RejectedLine {
                    line: line_no,
                    reason: format!("negative timestamp: {}", label.ts_ms),
                });
            }
            Ok(label) => {
                let fresh = seen
                    .entry(label.participant_id.clone())
                    .or_default()
                    .insert(label.ts_ms);
                if fresh {
                    report.accepted += 1;
                    participants.insert(label.participant_id.clone());
                    out.push(label);
                } else {
                    report.rejected.push(RejectedLine {
                        line: line_no,
                        reason: format!(
                            "duplicate (participant_id, ts_ms) = ({:?}, {})",
                            label.participant_id, label.ts_ms
                        ),
                    });
                }
            }
            Err(e) => {
                report
                    .rejected
                    .push(RejectedLine { line: line_no, reason: format!("invalid label line: {e}") });
            }
        }
    }
    report.participants = participants.len();
    Ok((out, report))
}

/// Writes traces as canonical JSONL, one record per line, trace order.
pub fn write_trace_jsonl<'a>(
    writer: &mut impl Write,
    traces: impl IntoIterator<Item = &'a ParticipantTrace>,
) -> std::io::Result<()> {
    for trace in traces {
        for record in &trace.records {
            serde_json::to_writer(&mut *writer, record)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Writes a label sidecar as JSONL.
pub fn write_labels_jsonl<'a>(
    writer: &mut impl Write,
    labels: impl IntoIterator<Item = &'a RecordLabel>,
) -> std::io::Result<()> {
    for label in labels {
        serde_json::to_writer(&mut *writer, label)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes labeled records (trace line + `political`) as JSONL.
pub fn write_ground_truth_jsonl<'a>(
    writer: &mut impl Write,
    records: impl IntoIterator<Item = &'a LabeledRecord>,
) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *writer, rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Joins label sidecar entries onto trace records, producing labeled
/// records in trace order. Every record must have a label.
pub fn join_labels(
    traces: &[ParticipantTrace],
    labels: &[RecordLabel],
) -> Result<Vec<LabeledRecord>, IngestError> {
    let mut map: HashMap<(&str, i64), bool> = HashMap::with_capacity(labels.len());
    for l in labels {
        map.insert((l.participant_id.as_str(), l.ts_ms), l.political);
    }
    let mut out = Vec::new();
    for trace in traces {
        for record in &trace.records {
            match map.get(&(record.participant_id.as_str(), record.ts_ms)) {
                Some(&political) => out.push(LabeledRecord { record: record.clone(), political }),
                None => {
                    return Err(IngestError::MissingLabel {
                        participant_id: record.participant_id.clone(),
                        ts_ms: record.ts_ms,
                    })
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn jsonl(lines: &[&str]) -> (Vec<ParticipantTrace>, IngestReport) {
        parse_trace_jsonl(Cursor::new(lines.join("\n"))).unwrap()
    }

    #[test]
    fn empty_file_yields_empty_report() {
        let (traces, report) = jsonl(&[]);
        assert!(traces.is_empty());
        assert_eq!(report.lines_read, 0);
        assert_eq!(report.accepted, 0);
        assert!(report.is_clean());
    }

    #[test]
    fn out_of_order_lines_are_sorted() {
        let (traces, report) = jsonl(&[
            r#"{"participant_id":"p1","ts_ms":10000,"app_id":null,"text":"c"}"#,
            r#"{"participant_id":"p1","ts_ms":0,"app_id":null,"text":"a"}"#,
            r#"{"participant_id":"p1","ts_ms":5000,"app_id":null,"text":"b"}"#,
        ]);
        assert_eq!(report.accepted, 3);
        assert_eq!(traces.len(), 1);
        let ts: Vec<i64> = traces[0].records.iter().map(|r| r.ts_ms).collect();
        assert_eq!(ts, vec![0, 5000, 10000]);
    }

    #[test]
    fn malformed_line_rejected_not_fatal() {
        let (traces, report) = jsonl(&[
            r#"{"participant_id":"p1","ts_ms":0,"text":"a"}"#,
            r#"not json at all"#,
            r#"{"participant_id":"p1","ts_ms":5000,"text":"b"}"#,
        ]);
        assert_eq!(report.lines_read, 3);
        assert_eq!(report.accepted, 2);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].line, 2);
        assert!(report.rejected[0].reason.contains("invalid JSON"));
        assert_eq!(traces[0].records.len(), 2);
    }

    #[test]
    fn duplicate_timestamp_rejected_with_reason() {
        let (_, report) = jsonl(&[
            r#"{"participant_id":"p1","ts_ms":0,"text":"a"}"#,
            r#"{"participant_id":"p1","ts_ms":0,"text":"b"}"#,
            r#"{"participant_id":"p2","ts_ms":0,"text":"c"}"#,
        ]);
        assert_eq!(report.accepted, 2);
        assert_eq!(report.rejected.len(), 1);
        assert!(report.rejected[0].reason.contains("duplicate"));
        assert_eq!(report.participants, 2);
    }

    #[test]
    fn invariant_violations_reported_per_line() {
        let (_, report) = jsonl(&[
            r#"{"participant_id":"","ts_ms":1000}"#,
            r#"{"participant_id":"p1","ts_ms":-5}"#,
            r#"{"participant_id":"p1","ts_ms":1.5}"#,
        ]);
        assert_eq!(report.accepted, 0);
        assert_eq!(report.rejected.len(), 3);
        assert!(report.rejected[0].reason.contains("empty participant_id"));
        assert!(report.rejected[1].reason.contains("negative timestamp"));
        assert!(report.rejected[2].reason.contains("non-integer"));
    }

    #[test]
    fn csv_roundtrips_quoting() {
        let csv_data = "participant_id,ts_ms,app_id,text\n\
             p1,0,com.app,\"hello, \"\"world\"\"\"\n\
             p1,5000,,\"line\nbreak\"\n";
        let (traces, report) = parse_trace_csv(Cursor::new(csv_data)).unwrap();
        assert_eq!(report.accepted, 2);
        assert_eq!(traces[0].records[0].text, "hello, \"world\"");
        assert_eq!(traces[0].records[0].app_id.as_deref(), Some("com.app"));
        assert_eq!(traces[0].records[1].text, "line\nbreak");
        assert_eq!(traces[0].records[1].app_id, None);
    }

    #[test]
    fn csv_rejects_bad_rows_and_bad_header() {
        let csv_data = "participant_id,ts_ms,app_id,text\np1,notanumber,,x\np1,5000,,ok\n";
        let (traces, report) = parse_trace_csv(Cursor::new(csv_data)).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected.len(), 1);
        assert!(report.rejected[0].reason.contains("non-integer"));
        assert_eq!(traces[0].records[0].ts_ms, 5000);

        let err = parse_trace_csv(Cursor::new("who,what\n1,2\n")).unwrap_err();
        assert!(matches!(err, IngestError::BadHeader { .. }));
    }

    #[test]
    fn catalog_load_and_errors() {
        let cat = parse_app_catalog(Cursor::new(
            "app_id,category\ncom.cnn,news\ncom.game,games\n",
        ))
        .unwrap();
        assert!(cat.is_news(Some("com.cnn")));
        assert_eq!(cat.category(Some("com.game")), "games");

        let err = parse_app_catalog(Cursor::new("app_id,category\ncom.cnn,news\ncom.cnn,games\n"))
            .unwrap_err();
        assert!(matches!(
            err,
            IngestError::Catalog(CatalogError::DuplicateAppId { .. })
        ));

        let err =
            parse_app_catalog(Cursor::new("app_id,category\ncom.x,\n")).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Catalog(CatalogError::EmptyCategory { .. })
        ));
    }

    #[test]
    fn loads_shipped_stem_list() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/stems.txt");
        let stems = load_stems(&path).unwrap();
        assert_eq!(stems.len(), 154);
        let rendered: Vec<&str> = stems.iter().map(|s| s.rendered()).collect();
        assert!(rendered.contains(&"black lives matter"));
        assert!(rendered.contains(&" cia "));
        assert!(rendered.contains(&"maga "));
        assert!(rendered.contains(&"bet0"));
    }

    #[test]
    fn ground_truth_labels_and_base_rate() {
        let mut lines = Vec::new();
        for i in 0..10_000u32 {
            let political = i < 199;
            lines.push(format!(
                r#"{{"participant_id":"p1","ts_ms":{},"text":"t","political":{}}}"#,
                i * 5000,
                political
            ));
        }
        let (records, report) = parse_ground_truth(Cursor::new(lines.join("\n"))).unwrap();
        assert_eq!(records.len(), 10_000);
        assert!(records[0].political);
        assert_eq!(report.positives, 199);
        assert!((report.base_rate() - 0.0199).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_rejects_non_boolean_label() {
        let (records, report) = parse_ground_truth(Cursor::new(
            r#"{"participant_id":"p1","ts_ms":0,"text":"t","political":"yes"}"#,
        ))
        .unwrap();
        assert!(records.is_empty());
        assert_eq!(report.ingest.rejected.len(), 1);
        assert!(report.ingest.rejected[0].reason.contains("non-boolean"));

        let (_, report) = parse_ground_truth(Cursor::new(
            r#"{"participant_id":"p1","ts_ms":0,"text":"t"}"#,
        ))
        .unwrap();
        assert!(report.ingest.rejected[0].reason.contains("missing political"));
    }

    #[test]
    fn labels_roundtrip_and_join() {
        let labels = vec![
            RecordLabel { participant_id: "p1".into(), ts_ms: 0, political: true },
            RecordLabel { participant_id: "p1".into(), ts_ms: 5000, political: false },
        ];
        let mut buf = Vec::new();
        write_labels_jsonl(&mut buf, &labels).unwrap();
        let (parsed, report) = parse_labels(Cursor::new(buf)).unwrap();
        assert_eq!(parsed, labels);
        assert!(report.is_clean());

        let trace = ParticipantTrace::new(
            "p1".into(),
            vec![
                ScreenshotRecord {
                    participant_id: "p1".into(),
                    ts_ms: 0,
                    app_id: None,
                    text: "a".into(),
                },
                ScreenshotRecord {
                    participant_id: "p1".into(),
                    ts_ms: 5000,
                    app_id: None,
                    text: "b".into(),
                },
            ],
        )
        .unwrap();
        let joined = join_labels(std::slice::from_ref(&trace), &labels).unwrap();
        assert_eq!(joined.len(), 2);
        assert!(joined[0].political);
        assert!(!joined[1].political);

        let missing = join_labels(std::slice::from_ref(&trace), &labels[..1]).unwrap_err();
        assert!(matches!(missing, IngestError::MissingLabel { ts_ms: 5000, .. }));
    }

    #[test]
    fn participant_trace_constructor_rejects_duplicates_and_mixes() {
        let rec = |pid: &str, ts: i64| ScreenshotRecord {
            participant_id: pid.into(),
            ts_ms: ts,
            app_id: None,
            text: String::new(),
        };
        assert!(matches!(
            ParticipantTrace::new("p1".into(), vec![rec("p1", 0), rec("p1", 0)]),
            Err(IngestError::DuplicateTimestamp { .. })
        ));
        assert!(matches!(
            ParticipantTrace::new("p1".into(), vec![rec("p2", 0)]),
            Err(IngestError::MixedParticipants { .. })
        ));
    }

    fn arb_record() -> impl Strategy<Value = ScreenshotRecord> {
        (
            "[a-z]{1,4}",
            0i64..10_000_000,
            proptest::option::of("[a-z.]{1,8}"),
            ".{0,30}",
        )
            .prop_map(|(pid, ts, app, text)| ScreenshotRecord {
                participant_id: pid,
                ts_ms: ts,
                app_id: app,
                text,
            })
    }

    proptest! {
        // Round-trip: write → ingest reproduces records exactly (after the
        // ingester's own dedup), and grouping partitions acceptance.
        #[test]
        fn jsonl_roundtrip_identity(records in proptest::collection::vec(arb_record(), 0..40)) {
            // dedup (participant, ts) to satisfy the trace invariant
            let mut seen = std::collections::HashSet::new();
            let mut by_pid: BTreeMap<String, Vec<ScreenshotRecord>> = BTreeMap::new();
            for r in records {
                if seen.insert((r.participant_id.clone(), r.ts_ms)) {
                    by_pid.entry(r.participant_id.clone()).or_default().push(r);
                }
            }
            let traces: Vec<ParticipantTrace> = by_pid
                .into_iter()
                .map(|(pid, recs)| ParticipantTrace::new(pid, recs).unwrap())
                .collect();

            let mut buf = Vec::new();
            write_trace_jsonl(&mut buf, &traces).unwrap();
            let (parsed, report) = parse_trace_jsonl(Cursor::new(buf)).unwrap();
            prop_assert!(report.is_clean());
            prop_assert_eq!(parsed, traces);
        }

        // accepted + rejected = lines read, on arbitrary (mostly garbage) input.
        #[test]
        fn accounting_balances_on_fuzzed_lines(
            lines in proptest::collection::vec("[ -~]{0,60}", 0..60)
        ) {
            let input = lines.join("\n");
            let (traces, report) = parse_trace_jsonl(Cursor::new(input)).unwrap();
            prop_assert_eq!(report.accepted + report.rejected_count(), report.lines_read);
            // partition: every accepted record appears in exactly one trace
            let total: usize = traces.iter().map(|t| t.records.len()).sum();
            prop_assert_eq!(total as u64, report.accepted);
        }
    }
}
