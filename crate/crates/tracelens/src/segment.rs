//! Sessionization and segment extraction.
//!
//! A session is a maximal run of captures with no timestamp gap strictly
//! greater than the configured session gap (a gap of exactly the threshold
//! stays within the session). A segment is a maximal run of consecutive
//! same-labeled records within a session; its duration is
//! `frame_count * frame_period_s`, counting the final frame as a full
//! period.

use std::fmt::Display;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ParticipantTrace;
use crate::model::{PipelineConfig, ScreenshotRecord};

/// A contiguous screen-on run of one participant's records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session<'a> {
    pub participant_id: &'a str,
    /// Ordinal of this session within the participant's trace.
    pub index: usize,
    pub records: &'a [ScreenshotRecord],
}

/// A maximal run of contiguous same-labeled frames within a session.
///
/// The label is opaque so the same machinery serves political/non-political,
/// per-app, and per-category segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment<L> {
    pub participant_id: String,
    pub session_index: usize,
    pub label: L,
    pub start_ts_ms: i64,
    pub frame_count: u64,
    pub duration_s: f64,
}

impl<L> Segment<L> {
    /// Re-labels a segment without touching the timing fields.
    pub fn map_label<M>(self, f: impl FnOnce(L) -> M) -> Segment<M> {
        Segment {
            participant_id: self.participant_id,
            session_index: self.session_index,
            label: f(self.label),
            start_ts_ms: self.start_ts_ms,
            frame_count: self.frame_count,
            duration_s: self.duration_s,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("records for {participant_id:?} are not strictly ascending at ts {ts_ms}")]
    NotAscending { participant_id: String, ts_ms: i64 },
    #[error("segments csv: {0}")]
    BadCsv(String),
}

/// Splits a trace into sessions at timestamp gaps strictly greater than
/// `session_gap_s`.
pub fn sessionize<'a>(
    trace: &'a ParticipantTrace,
    config: &PipelineConfig,
) -> Result<Vec<Session<'a>>, SegmentError> {
    let gap_ms = config.session_gap_ms();
    let records = &trace.records;
    for pair in records.windows(2) {
        if pair[1].ts_ms <= pair[0].ts_ms {
            return Err(SegmentError::NotAscending {
                participant_id: trace.participant_id.clone(),
                ts_ms: pair[1].ts_ms,
            });
        }
    }
    let mut sessions = Vec::new();
    let mut start = 0;
    for i in 1..records.len() {
        if records[i].ts_ms - records[i - 1].ts_ms > gap_ms {
            sessions.push(Session {
                participant_id: &trace.participant_id,
                index: sessions.len(),
                records: &records[start..i],
            });
            start = i;
        }
    }
    if start < records.len() {
        sessions.push(Session {
            participant_id: &trace.participant_id,
            index: sessions.len(),
            records: &records[start..],
        });
    }
    Ok(sessions)
}

/// Emits maximal runs of consecutive equal-label records as segments.
/// Concatenating the segments reproduces the session's record sequence.
pub fn segmentize<L, F>(
    session: &Session<'_>,
    config: &PipelineConfig,
    labeler: F,
) -> Vec<Segment<L>>
where
    L: PartialEq,
    F: Fn(&ScreenshotRecord) -> L,
{
    let mut segments: Vec<Segment<L>> = Vec::new();
    for record in session.records {
        let label = labeler(record);
        match segments.last_mut() {
            Some(last) if last.label == label => {
                last.frame_count += 1;
                last.duration_s = last.frame_count as f64 * config.frame_period_s;
            }
            _ => segments.push(Segment {
                participant_id: session.participant_id.to_string(),
                session_index: session.index,
                label,
                start_ts_ms: record.ts_ms,
                frame_count: 1,
                duration_s: config.frame_period_s,
            }),
        }
    }
    segments
}

/// Sessionizes and segmentizes a whole corpus; output is ordered by
/// participant id, then session, then segment position.
pub fn extract_segments<L, F>(
    traces: &[ParticipantTrace],
    config: &PipelineConfig,
    labeler: F,
) -> Result<Vec<Segment<L>>, SegmentError>
where
    L: PartialEq,
    F: Fn(&ScreenshotRecord) -> L,
{
    let mut order: Vec<&ParticipantTrace> = traces.iter().collect();
    order.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    let mut out = Vec::new();
    for trace in order {
        for session in sessionize(trace, config)? {
            out.extend(segmentize(&session, config, &labeler));
        }
    }
    Ok(out)
}

/// Writes segments as CSV with header
/// `participant_id,session_index,label,start_ts_ms,frame_count,duration_s`.
pub fn write_segments_csv<L: Display>(
    writer: &mut impl Write,
    segments: &[Segment<L>],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "participant_id",
        "session_index",
        "label",
        "start_ts_ms",
        "frame_count",
        "duration_s",
    ])?;
    for s in segments {
        w.write_record([
            s.participant_id.as_str(),
            &s.session_index.to_string(),
            &s.label.to_string(),
            &s.start_ts_ms.to_string(),
            &s.frame_count.to_string(),
            &s.duration_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a segments CSV back; labels come back as strings.
pub fn read_segments_csv(reader: impl Read) -> Result<Vec<Segment<String>>, SegmentError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| SegmentError::BadCsv(e.to_string()))?
        .clone();
    let expected = [
        "participant_id",
        "session_index",
        "label",
        "start_ts_ms",
        "frame_count",
        "duration_s",
    ];
    if headers.iter().ne(expected) {
        return Err(SegmentError::BadCsv(format!(
            "expected header {expected:?}, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in csv_reader.into_records().enumerate() {
        let row = row.map_err(|e| SegmentError::BadCsv(e.to_string()))?;
        let get = |j: usize| row.get(j).unwrap_or("");
        let parse_err = |field: &str| {
            SegmentError::BadCsv(format!("row {}: bad {field}: {:?}", i + 1, row))
        };
        out.push(Segment {
            participant_id: get(0).to_string(),
            session_index: get(1).parse().map_err(|_| parse_err("session_index"))?,
            label: get(2).to_string(),
            start_ts_ms: get(3).parse().map_err(|_| parse_err("start_ts_ms"))?,
            frame_count: get(4).parse().map_err(|_| parse_err("frame_count"))?,
            duration_s: get(5).parse().map_err(|_| parse_err("duration_s"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(pid: &str, ts: i64, text: &str) -> ScreenshotRecord {
        ScreenshotRecord {
            participant_id: pid.into(),
            ts_ms: ts,
            app_id: None,
            text: text.into(),
        }
    }

    fn trace(pid: &str, ts: &[i64]) -> ParticipantTrace {
        ParticipantTrace::new(pid.into(), ts.iter().map(|&t| rec(pid, t, "")).collect()).unwrap()
    }

    fn config() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn gap_equal_to_threshold_stays_in_session() {
        let t = trace("p1", &[0, 5000, 10000]);
        let sessions = sessionize(&t, &config()).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].records.len(), 3);
    }

    #[test]
    fn gap_over_threshold_splits() {
        let t = trace("p1", &[0, 5001]);
        let sessions = sessionize(&t, &config()).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].index, 0);
        assert_eq!(sessions[1].index, 1);
    }

    #[test]
    fn single_record_is_one_session() {
        let t = trace("p1", &[42]);
        let sessions = sessionize(&t, &config()).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].records.len(), 1);
    }

    #[test]
    fn empty_trace_yields_no_sessions() {
        let t = ParticipantTrace::new("p1".into(), vec![]).unwrap();
        assert!(sessionize(&t, &config()).unwrap().is_empty());
    }

    #[test]
    fn unsorted_records_rejected() {
        let t = ParticipantTrace {
            participant_id: "p1".into(),
            records: vec![rec("p1", 100, ""), rec("p1", 0, "")],
        };
        assert!(matches!(
            sessionize(&t, &config()),
            Err(SegmentError::NotAscending { .. })
        ));
    }

    #[test]
    fn run_length_contract() {
        let records: Vec<ScreenshotRecord> = ["P", "P", "N", "P"]
            .iter()
            .enumerate()
            .map(|(i, l)| rec("p1", i as i64 * 5000, l))
            .collect();
        let t = ParticipantTrace::new("p1".into(), records).unwrap();
        let sessions = sessionize(&t, &config()).unwrap();
        let segs = segmentize(&sessions[0], &config(), |r| r.text.clone());
        let shape: Vec<(&str, u64)> =
            segs.iter().map(|s| (s.label.as_str(), s.frame_count)).collect();
        assert_eq!(shape, vec![("P", 2), ("N", 1), ("P", 1)]);
        assert_eq!(segs[0].start_ts_ms, 0);
        assert_eq!(segs[1].start_ts_ms, 10000);
        assert_eq!(segs[2].start_ts_ms, 15000);
    }

    #[test]
    fn duration_is_frame_count_times_period() {
        let t = trace("p1", &[0, 5000, 10000, 15000, 20000, 25000]);
        let sessions = sessionize(&t, &config()).unwrap();
        let segs = segmentize(&sessions[0], &config(), |_| true);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].frame_count, 6);
        assert_eq!(segs[0].duration_s, 30.0);
    }

    #[test]
    fn extract_segments_orders_and_conserves() {
        let t1 = trace("pb", &[0, 5000, 20000]);
        let t2 = trace("pa", &[0, 5000]);
        let segs = extract_segments(&[t1, t2], &config(), |r| r.participant_id.clone()).unwrap();
        assert_eq!(segs[0].participant_id, "pa");
        let total: u64 = segs.iter().map(|s| s.frame_count).sum();
        assert_eq!(total, 5);
        assert!(extract_segments(&[], &config(), |_| true).unwrap().is_empty());
    }

    #[test]
    fn segments_csv_roundtrip() {
        let segs = vec![
            Segment {
                participant_id: "p1".into(),
                session_index: 0,
                label: "true".to_string(),
                start_ts_ms: 0,
                frame_count: 2,
                duration_s: 10.0,
            },
            Segment {
                participant_id: "p1".into(),
                session_index: 1,
                label: "false".to_string(),
                start_ts_ms: 99000,
                frame_count: 1,
                duration_s: 5.0,
            },
        ];
        let mut buf = Vec::new();
        write_segments_csv(&mut buf, &segs).unwrap();
        let parsed = read_segments_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(parsed, segs);

        let err = read_segments_csv(std::io::Cursor::new("a,b\n1,2\n")).unwrap_err();
        assert!(matches!(err, SegmentError::BadCsv(_)));
    }

    /// Naive quadratic run-length scanner used as the segmenter oracle.
    fn naive_segments(labels: &[u8]) -> Vec<(u8, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            let mut j = i;
            while j < labels.len() && labels[j] == labels[i] {
                j += 1;
            }
            out.push((labels[i], j - i));
            i = j;
        }
        out
    }

    proptest! {
        #[test]
        fn segmentize_matches_naive_oracle(labels in proptest::collection::vec(0u8..3, 1..60)) {
            let records: Vec<ScreenshotRecord> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| rec("p1", i as i64 * 5000, &l.to_string()))
                .collect();
            let t = ParticipantTrace::new("p1".into(), records).unwrap();
            let sessions = sessionize(&t, &config()).unwrap();
            prop_assert_eq!(sessions.len(), 1);
            let segs = segmentize(&sessions[0], &config(), |r| r.text.as_bytes()[0] - b'0');
            let got: Vec<(u8, usize)> =
                segs.iter().map(|s| (s.label, s.frame_count as usize)).collect();
            prop_assert_eq!(got, naive_segments(&labels));
        }

        // Conservation and maximality over random gaps and labels.
        #[test]
        fn conservation_and_maximality(
            deltas in proptest::collection::vec(1i64..12000, 1..80),
            labels in proptest::collection::vec(0u8..2, 80),
        ) {
            let mut ts = 0;
            let mut records = Vec::new();
            for (i, d) in deltas.iter().enumerate() {
                ts += d;
                records.push(rec("p1", ts, &labels[i].to_string()));
            }
            let n = records.len();
            let t = ParticipantTrace::new("p1".into(), records).unwrap();
            let cfg = config();
            let sessions = sessionize(&t, &cfg).unwrap();
            let session_total: usize = sessions.iter().map(|s| s.records.len()).sum();
            prop_assert_eq!(session_total, n);

            for session in &sessions {
                let segs = segmentize(session, &cfg, |r| r.text.clone());
                let frames: u64 = segs.iter().map(|s| s.frame_count).sum();
                prop_assert_eq!(frames as usize, session.records.len());
                let dur: f64 = segs.iter().map(|s| s.duration_s).sum();
                prop_assert_eq!(dur, cfg.frame_period_s * session.records.len() as f64);
                for pair in segs.windows(2) {
                    prop_assert!(pair[0].label != pair[1].label, "adjacent segments share label");
                }
            }
        }

        // Segments labeled by a finer key refine segments labeled by a coarser key.
        #[test]
        fn finer_labels_refine_coarser(
            fine in proptest::collection::vec((0u8..2, 0u8..2), 1..50),
        ) {
            let records: Vec<ScreenshotRecord> = fine
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| ScreenshotRecord {
                    participant_id: "p1".into(),
                    ts_ms: i as i64 * 5000,
                    app_id: Some(a.to_string()),
                    text: b.to_string(),
                })
                .collect();
            let t = ParticipantTrace::new("p1".into(), records).unwrap();
            let cfg = config();
            let coarse_segs = extract_segments(
                std::slice::from_ref(&t), &cfg, |r| r.text.clone()).unwrap();
            let fine_segs = extract_segments(
                std::slice::from_ref(&t), &cfg, |r| (r.text.clone(), r.app_id.clone())).unwrap();
            // every coarse boundary appears among the fine boundaries
            let fine_starts: std::collections::HashSet<i64> =
                fine_segs.iter().map(|s| s.start_ts_ms).collect();
            for seg in &coarse_segs {
                prop_assert!(fine_starts.contains(&seg.start_ts_ms));
            }
            // and fine frame counts sum to coarse frame counts
            let coarse_total: u64 = coarse_segs.iter().map(|s| s.frame_count).sum();
            let fine_total: u64 = fine_segs.iter().map(|s| s.frame_count).sum();
            prop_assert_eq!(coarse_total, fine_total);
        }
    }
}
