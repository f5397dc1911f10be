//! Shared data types, configuration, and validation rules.
//!
//! Everything downstream (ingestion, featurization, segmentation, metrics)
//! operates on [`ScreenshotRecord`]s under a single [`PipelineConfig`]. All
//! types here are immutable after construction and safe to share across
//! worker threads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on OCR text size per record; larger inputs are treated as corrupt.
pub const MAX_TEXT_BYTES: usize = 1_000_000;

/// One captured frame: who, when, which foreground app, and the OCR-extracted text.
///
/// Timestamps are integer milliseconds since epoch. Gap detection compares
/// integer deltas, so a capture stream at any rate is handled exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenshotRecord {
    pub participant_id: String,
    pub ts_ms: i64,
    pub app_id: Option<String>,
    pub text: String,
}

/// A record paired with its ground-truth content label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub record: ScreenshotRecord,
    pub political: bool,
}

/// Timing and binning parameters shared by the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seconds of screentime represented by one captured frame.
    pub frame_period_s: f64,
    /// A gap strictly greater than this many seconds starts a new session.
    pub session_gap_s: f64,
    /// Bin width for duration histograms.
    pub histogram_bin_s: f64,
    /// Ascending stratum boundaries for aggregate-duration decomposition.
    pub strata_bounds_s: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            frame_period_s: 5.0,
            session_gap_s: 5.0,
            histogram_bin_s: 5.0,
            strata_bounds_s: vec![10.0],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("frame_period_s", self.frame_period_s),
            ("session_gap_s", self.session_gap_s),
            ("histogram_bin_s", self.histogram_bin_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::NonPositive { field: name });
            }
        }
        let mut prev = 0.0f64;
        for &b in &self.strata_bounds_s {
            if !(b > prev) || !b.is_finite() {
                return Err(ConfigError::StrataNotAscending);
            }
            prev = b;
        }
        Ok(())
    }

    /// Session gap in integer milliseconds, as used by gap detection.
    pub fn session_gap_ms(&self) -> i64 {
        (self.session_gap_s * 1000.0).round() as i64
    }

    /// Frame period in integer milliseconds.
    pub fn frame_period_ms(&self) -> i64 {
        (self.frame_period_s * 1000.0).round() as i64
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be positive and finite")]
    NonPositive { field: &'static str },
    #[error("strata_bounds_s must be strictly ascending positive reals")]
    StrataNotAscending,
}

/// Map from foreground app id to its store category, with one category name
/// singled out as "news" for the content/format cross-tabulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppCatalog {
    categories: BTreeMap<String, String>,
    news_category: String,
}

pub const UNKNOWN_CATEGORY: &str = "unknown";

impl AppCatalog {
    pub fn new(
        entries: impl IntoIterator<Item = (String, String)>,
        news_category: impl Into<String>,
    ) -> Result<Self, CatalogError> {
        let mut categories = BTreeMap::new();
        for (app_id, category) in entries {
            if category.is_empty() {
                return Err(CatalogError::EmptyCategory { app_id });
            }
            if categories.insert(app_id.clone(), category).is_some() {
                return Err(CatalogError::DuplicateAppId { app_id });
            }
        }
        Ok(AppCatalog { categories, news_category: news_category.into() })
    }

    /// Category for an app; `None` app ids and unlisted apps map to "unknown".
    pub fn category(&self, app_id: Option<&str>) -> &str {
        app_id
            .and_then(|id| self.categories.get(id))
            .map(String::as_str)
            .unwrap_or(UNKNOWN_CATEGORY)
    }

    pub fn is_news(&self, app_id: Option<&str>) -> bool {
        self.category(app_id) == self.news_category
    }

    pub fn news_category(&self) -> &str {
        &self.news_category
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("duplicate app_id {app_id:?} in catalog")]
    DuplicateAppId { app_id: String },
    #[error("empty category for app_id {app_id:?}")]
    EmptyCategory { app_id: String },
}

/// A record as it looks straight off an input line, before validation.
///
/// Field parsers fill in what they could extract; [`validate_record`] turns
/// this into a [`ScreenshotRecord`] or the complete list of violations.
#[derive(Debug, Clone, Default)]
pub struct RawRecord {
    pub participant_id: Option<String>,
    pub ts_ms: RawTimestamp,
    pub app_id: Option<String>,
    pub text: Option<String>,
}

/// Timestamp field as parsed: present-and-integer, present-but-not-integer,
/// or absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum RawTimestamp {
    #[default]
    Missing,
    NotAnInteger(String),
    Value(i64),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("missing participant_id")]
    MissingParticipantId,
    #[error("empty participant_id")]
    EmptyParticipantId,
    #[error("missing ts_ms")]
    MissingTimestamp,
    #[error("non-integer ts_ms: {0:?}")]
    NonIntegerTimestamp(String),
    #[error("negative timestamp: {0}")]
    NegativeTimestamp(i64),
    #[error("text exceeds {MAX_TEXT_BYTES} bytes ({0} bytes)")]
    OversizedText(usize),
}

/// Validates a raw field map into a well-formed record, or reports every
/// violated invariant. Missing text is treated as empty; missing app_id is
/// allowed and later categorized as "unknown".
pub fn validate_record(raw: RawRecord) -> Result<ScreenshotRecord, Vec<RecordError>> {
    let mut errors = Vec::new();

    let participant_id = match raw.participant_id {
        None => {
            errors.push(RecordError::MissingParticipantId);
            String::new()
        }
        Some(p) if p.is_empty() => {
            errors.push(RecordError::EmptyParticipantId);
            p
        }
        Some(p) => p,
    };

    let ts_ms = match raw.ts_ms {
        RawTimestamp::Missing => {
            errors.push(RecordError::MissingTimestamp);
            0
        }
        RawTimestamp::NotAnInteger(repr) => {
            errors.push(RecordError::NonIntegerTimestamp(repr));
            0
        }
        RawTimestamp::Value(v) if v < 0 => {
            errors.push(RecordError::NegativeTimestamp(v));
            v
        }
        RawTimestamp::Value(v) => v,
    };

    let text = raw.text.unwrap_or_default();
    if text.len() > MAX_TEXT_BYTES {
        errors.push(RecordError::OversizedText(text.len()));
    }

    if errors.is_empty() {
        Ok(ScreenshotRecord { participant_id, ts_ms, app_id: raw.app_id, text })
    } else {
        Err(errors)
    }
}
