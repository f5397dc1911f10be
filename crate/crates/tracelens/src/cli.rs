//! Batch workflows behind the command-line interface.
//!
//! Each command reads a single JSON [`RunConfig`] (unknown keys rejected),
//! writes outputs atomically (temp file + rename), and drops a run
//! manifest recording the tool version, effective seed, and SHA-256 hashes
//! of the config, inputs, and outputs. Reports contain no timestamps, so
//! identical configs produce byte-identical outputs regardless of worker
//! count.
//!
//! Exit-code contract: 1 usage error, 2 input validation failure,
//! 3 runtime failure.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::forest::{self, derive_stream_seed, CvReport, ForestConfig, OobReport};
use crate::ingest::{
    self, IngestReport, ParticipantTrace, RecordLabel, TraceFormat,
};
use crate::metrics::{
    self, CorrelationResult, CrossTab, DurationHistogram, FrameObs, Grouping, LogNormalFit,
    RankingReport, StrataReport,
};
use crate::model::{AppCatalog, LabeledRecord, PipelineConfig};
use crate::segment::{self, Segment};
use crate::synth::{self, SynthConfig};
use crate::textfeat::{featurize, political_stems, Featurizer, Lexicon, StemList};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Error carrying the CLI exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable/invalid config: exit 1.
    Usage(String),
    /// Inputs that exist but fail validation: exit 2.
    Input(String),
    /// Failures while computing or writing: exit 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl std::error::Error for CliError {}

/// File locations used by the pipeline commands. All optional here; each
/// command validates the subset it needs at startup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPaths {
    pub trace: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub stems: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// One JSON document configuring the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub forest: ForestConfig,
    /// Stratified cross-validation folds during training; 0 skips CV.
    pub cv_folds: usize,
    /// Tune the decision threshold on a stratified holdout before the
    /// final fit.
    pub tune_threshold: bool,
    /// Holdout fraction used when tuning the threshold.
    pub holdout_fraction: f64,
    pub format: TraceFormat,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            forest: ForestConfig::default(),
            cv_folds: 5,
            tune_threshold: false,
            holdout_fraction: 0.2,
            format: TraceFormat::Jsonl,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        config
            .pipeline
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        if !(0.0..1.0).contains(&config.holdout_fraction) || config.holdout_fraction == 0.0 {
            if config.tune_threshold {
                return Err(CliError::Usage(
                    "holdout_fraction must lie in (0,1) when tune_threshold is set".into(),
                ));
            }
        }
        Ok((config, bytes))
    }

    fn require(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::Usage(format!("config is missing paths.{field}")))
    }

    fn input_path(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let path = self.require(field, value)?;
        if !path.is_file() {
            return Err(CliError::Input(format!(
                "paths.{field} = {} does not exist or is not a file",
                path.display()
            )));
        }
        Ok(path)
    }
}

/// Run manifest accompanying every command's outputs. Deliberately free of
/// timestamps so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub input_sha256: BTreeMap<String, String>,
    pub output_sha256: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seed: None,
            config_sha256: None,
            input_sha256: BTreeMap::new(),
            output_sha256: BTreeMap::new(),
        }
    }

    fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        self.input_sha256
            .insert(path.display().to_string(), hex_sha256(&bytes));
        Ok(())
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Runtime(format!("write failed: {e}")))?;
    tmp.persist(path)
        .map_err(|e| CliError::Runtime(format!("cannot persist {}: {e}", path.display())))?;
    Ok(())
}

struct OutputSet<'a> {
    dir: PathBuf,
    manifest: &'a mut RunManifest,
}

impl OutputSet<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.manifest.output_sha256.insert(name.to_string(), hex_sha256(bytes));
        Ok(path)
    }

    fn finish(self, command: &str) -> Result<(), CliError> {
        let bytes = to_json_pretty(&*self.manifest)?;
        write_atomic(&self.dir.join(format!("{command}-manifest.json")), &bytes)
    }
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn load_stems_or_default(path: &Option<PathBuf>) -> Result<StemList, CliError> {
    match path {
        Some(p) => ingest::load_stems(p)
            .map_err(|e| CliError::Input(format!("stem list {}: {e}", p.display()))),
        None => Ok(political_stems()),
    }
}

fn load_lexicon_opt(path: &Option<PathBuf>) -> Result<Option<Lexicon>, CliError> {
    match path {
        Some(p) => Ok(Some(ingest::load_lexicon(p).map_err(|e| {
            CliError::Input(format!("lexicon {}: {e}", p.display()))
        })?)),
        None => Ok(None),
    }
}

/// `validate`: ingest a trace file and report acceptance accounting.
/// The report goes to stdout; a dirty report is an input-validation failure.
pub fn cmd_validate(trace: &Path, format: TraceFormat) -> Result<IngestReport, CliError> {
    if !trace.is_file() {
        return Err(CliError::Input(format!(
            "{} does not exist or is not a file",
            trace.display()
        )));
    }
    let (_, report) = ingest::parse_trace_file(trace, format)
        .map_err(|e| CliError::Input(format!("{}: {e}", trace.display())))?;
    Ok(report)
}

/// What `train` writes alongside the model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub examples: usize,
    pub positive_base_rate: f64,
    pub feature_count: usize,
    pub cross_validation: Option<CvReport>,
    pub out_of_bag: OobReport,
    pub threshold: f64,
    pub tuned_threshold: Option<f64>,
}

const TUNE_SPLIT_STREAM: u64 = 0x717E_5EED_0000_0001;

/// `train`: featurize labeled records, cross-validate, optionally tune the
/// threshold on a stratified holdout, fit the final model on everything,
/// and write the model plus a training report.
pub fn cmd_train(
    config: &RunConfig,
    config_bytes: &[u8],
    seed_override: Option<u64>,
    output_override: Option<&Path>,
) -> Result<TrainReport, CliError> {
    let mut forest_config = config.forest.clone();
    if let Some(seed) = seed_override {
        forest_config.seed = seed;
    }
    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(forest_config.seed);
    manifest.config_sha256 = Some(hex_sha256(config_bytes));

    let stems = load_stems_or_default(&config.paths.stems)?;
    if let Some(p) = &config.paths.stems {
        manifest.record_input(p)?;
    }
    let lexicon = load_lexicon_opt(&config.paths.lexicon)?;

    // labeled records: full ground-truth JSONL, or trace + label sidecar
    let labeled: Vec<LabeledRecord> = if config.paths.ground_truth.is_some() {
        let path = config.input_path("ground_truth", &config.paths.ground_truth)?;
        manifest.record_input(&path)?;
        let (records, report) = ingest::load_ground_truth(&path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if !report.ingest.is_clean() {
            return Err(CliError::Input(format!(
                "{}: {} of {} lines rejected (first: line {}: {})",
                path.display(),
                report.ingest.rejected_count(),
                report.ingest.lines_read,
                report.ingest.rejected[0].line,
                report.ingest.rejected[0].reason,
            )));
        }
        records
    } else if config.paths.trace.is_some() && config.paths.labels.is_some() {
        let trace_path = config.input_path("trace", &config.paths.trace)?;
        let labels_path = config.input_path("labels", &config.paths.labels)?;
        manifest.record_input(&trace_path)?;
        manifest.record_input(&labels_path)?;
        let (traces, _) = ingest::parse_trace_file(&trace_path, config.format)
            .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;
        let (labels, _) = ingest::load_labels(&labels_path)
            .map_err(|e| CliError::Input(format!("{}: {e}", labels_path.display())))?;
        ingest::join_labels(&traces, &labels).map_err(|e| CliError::Input(e.to_string()))?
    } else {
        return Err(CliError::Usage(
            "train needs paths.ground_truth, or paths.trace plus paths.labels".into(),
        ));
    };

    let records: Vec<_> = labeled.iter().map(|l| l.record.clone()).collect();
    let vectors = featurize(&records, &stems, lexicon.as_ref());
    let examples: Vec<(crate::textfeat::FeatureVector, bool)> = vectors
        .into_iter()
        .zip(labeled.iter().map(|l| l.political))
        .collect();
    let positives = examples.iter().filter(|(_, y)| *y).count();

    let cross_validation = if config.cv_folds >= 2 {
        Some(
            forest::cross_validate(&examples, &forest_config, config.cv_folds)
                .map_err(|e| CliError::Input(format!("cross-validation: {e}")))?,
        )
    } else {
        None
    };

    let mut tuned_threshold = None;
    if config.tune_threshold {
        let (fit_set, holdout) = stratified_split(
            &examples,
            config.holdout_fraction,
            derive_stream_seed(forest_config.seed, TUNE_SPLIT_STREAM),
        );
        let tuning_model = forest::train(&fit_set, &forest_config)
            .map_err(|e| CliError::Input(format!("threshold tuning fit: {e}")))?;
        let threshold = forest::tune_threshold(&tuning_model, &holdout)
            .map_err(|e| CliError::Input(format!("threshold tuning: {e}")))?;
        forest_config.threshold = threshold;
        tuned_threshold = Some(threshold);
    }

    let (model, oob) = forest::train_with_oob(&examples, &forest_config)
        .map_err(|e| CliError::Input(format!("training: {e}")))?;

    let model_path = config.require("model", &config.paths.model)?;
    write_atomic(&model_path, &model.to_bytes())?;
    manifest
        .output_sha256
        .insert(model_path.display().to_string(), hex_sha256(&model.to_bytes()));

    let report = TrainReport {
        examples: examples.len(),
        positive_base_rate: positives as f64 / examples.len() as f64,
        feature_count: model.feature_count,
        cross_validation,
        out_of_bag: oob,
        threshold: forest_config.threshold,
        tuned_threshold,
    };

    let out_dir = output_dir(config, output_override)?;
    let mut out = OutputSet { dir: out_dir, manifest: &mut manifest };
    out.write("train_report.json", &to_json_pretty(&report)?)?;
    out.finish("train")?;
    Ok(report)
}

/// Deterministic stratified split; the fraction goes to the holdout.
fn stratified_split(
    examples: &[(crate::textfeat::FeatureVector, bool)],
    holdout_fraction: f64,
    seed: u64,
) -> (
    Vec<(crate::textfeat::FeatureVector, bool)>,
    Vec<(crate::textfeat::FeatureVector, bool)>,
) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, (_, y)) in examples.iter().enumerate() {
        by_class[usize::from(*y)].push(i);
    }
    let mut holdout_flags = vec![false; examples.len()];
    for class in &mut by_class {
        for i in (1..class.len()).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            class.swap(i, j);
        }
        // at least one example of each class stays on each side
        let take = ((class.len() as f64 * holdout_fraction).round() as usize)
            .clamp(1, class.len().saturating_sub(1).max(1));
        for &idx in class.iter().take(take) {
            holdout_flags[idx] = true;
        }
    }
    let mut fit = Vec::new();
    let mut holdout = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if holdout_flags[i] {
            holdout.push(ex.clone());
        } else {
            fit.push(ex.clone());
        }
    }
    (fit, holdout)
}

fn output_dir(config: &RunConfig, output_override: Option<&Path>) -> Result<PathBuf, CliError> {
    match output_override {
        Some(p) => Ok(p.to_path_buf()),
        None => config.require("output_dir", &config.paths.output_dir),
    }
}

/// `classify`: per-record political labels from a trained model, written
/// as a labels.jsonl sidecar.
pub fn cmd_classify(
    config: &RunConfig,
    config_bytes: &[u8],
    model_override: Option<&Path>,
    output_override: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let mut manifest = RunManifest::new("classify");
    manifest.config_sha256 = Some(hex_sha256(config_bytes));

    let model_path = match model_override {
        Some(p) => p.to_path_buf(),
        None => config.input_path("model", &config.paths.model)?,
    };
    manifest.record_input(&model_path)?;
    let model = forest::load_model(&model_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", model_path.display())))?;

    let stems = load_stems_or_default(&config.paths.stems)?;
    if stems.len() != model.feature_count {
        return Err(CliError::Input(format!(
            "stem list has {} stems but the model expects {} features",
            stems.len(),
            model.feature_count
        )));
    }
    let lexicon = load_lexicon_opt(&config.paths.lexicon)?;

    let trace_path = config.input_path("trace", &config.paths.trace)?;
    manifest.record_input(&trace_path)?;
    let (traces, _) = ingest::parse_trace_file(&trace_path, config.format)
        .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;

    let featurizer = Featurizer::new(&stems, lexicon);
    let mut labels: Vec<RecordLabel> = Vec::new();
    for trace in &traces {
        use rayon::prelude::*;
        let trace_labels: Vec<RecordLabel> = trace
            .records
            .par_iter()
            .map(|rec| {
                let v = featurizer.vector_for_text(&rec.text);
                let (political, _) = forest::predict(&model, &v)
                    .expect("featurizer length matches model");
                RecordLabel {
                    participant_id: rec.participant_id.clone(),
                    ts_ms: rec.ts_ms,
                    political,
                }
            })
            .collect();
        labels.extend(trace_labels);
    }

    let mut buf = Vec::new();
    ingest::write_labels_jsonl(&mut buf, &labels)
        .map_err(|e| CliError::Runtime(format!("serializing labels: {e}")))?;
    let out_dir = output_dir(config, output_override)?;
    let mut out = OutputSet { dir: out_dir.clone(), manifest: &mut manifest };
    let path = out.write("labels.jsonl", &buf)?;
    out.finish("classify")?;
    Ok(path)
}

/// `segment`: join labels onto the trace and export maximal political /
/// non-political segments as CSV.
pub fn cmd_segment(
    config: &RunConfig,
    config_bytes: &[u8],
    labels_override: Option<&Path>,
    output_override: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let mut manifest = RunManifest::new("segment");
    manifest.config_sha256 = Some(hex_sha256(config_bytes));

    let trace_path = config.input_path("trace", &config.paths.trace)?;
    manifest.record_input(&trace_path)?;
    let (traces, _) = ingest::parse_trace_file(&trace_path, config.format)
        .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;

    let labels_path = resolve_aux_path(
        config,
        output_override,
        labels_override,
        &config.paths.labels,
        "labels.jsonl",
    )?;
    manifest.record_input(&labels_path)?;
    let (labels, _) = ingest::load_labels(&labels_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", labels_path.display())))?;

    let label_map = build_label_map(&labels);
    ensure_full_coverage(&traces, &label_map)?;

    let segments = segment::extract_segments(&traces, &config.pipeline, |rec| {
        *label_map
            .get(&(rec.participant_id.clone(), rec.ts_ms))
            .expect("coverage checked")
    })
    .map_err(|e| CliError::Input(e.to_string()))?;

    let mut buf = Vec::new();
    segment::write_segments_csv(&mut buf, &segments)
        .map_err(|e| CliError::Runtime(format!("serializing segments: {e}")))?;
    let out_dir = output_dir(config, output_override)?;
    let mut out = OutputSet { dir: out_dir, manifest: &mut manifest };
    let path = out.write("segments.csv", &buf)?;
    out.finish("segment")?;
    Ok(path)
}

fn build_label_map(labels: &[RecordLabel]) -> HashMap<(String, i64), bool> {
    labels
        .iter()
        .map(|l| ((l.participant_id.clone(), l.ts_ms), l.political))
        .collect()
}

fn ensure_full_coverage(
    traces: &[ParticipantTrace],
    label_map: &HashMap<(String, i64), bool>,
) -> Result<(), CliError> {
    for trace in traces {
        for rec in &trace.records {
            if !label_map.contains_key(&(rec.participant_id.clone(), rec.ts_ms)) {
                return Err(CliError::Input(format!(
                    "no label for record ({:?}, {})",
                    rec.participant_id, rec.ts_ms
                )));
            }
        }
    }
    Ok(())
}

/// Flag value for `analyze --which`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeWhich {
    Entangle,
    Flatten,
    Bundle,
    All,
}

impl std::str::FromStr for AnalyzeWhich {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entangle" => Ok(AnalyzeWhich::Entangle),
            "flatten" => Ok(AnalyzeWhich::Flatten),
            "bundle" => Ok(AnalyzeWhich::Bundle),
            "all" => Ok(AnalyzeWhich::All),
            other => Err(format!(
                "unknown analysis {other:?} (expected entangle, flatten, bundle, or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntangleSection {
    pub pooled: CrossTab,
    pub participants: Vec<CrossTab>,
    /// Between-person correlation of p_news and p_political; absent (with
    /// a note) when fewer than 3 participants or a variance is zero.
    pub correlation: Option<CorrelationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenSection {
    pub political_segment_count: u64,
    pub pooled_histogram: DurationHistogram,
    pub participant_histograms: Vec<DurationHistogram>,
    pub lognormal: Option<LogNormalFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lognormal_note: Option<String>,
    pub rankings: Option<RankingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rankings_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSection {
    pub total_duration_s: f64,
    pub strata: StrataReport,
}

/// The `analyze` report; sections are present per `--which`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entangle: Option<EntangleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flatten: Option<FlattenSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleSection>,
}

/// `analyze`: compute the requested diagnostic sections from the trace,
/// labels, catalog, and segments, writing report.json plus flat CSV tables.
pub fn cmd_analyze(
    config: &RunConfig,
    config_bytes: &[u8],
    segments_override: Option<&Path>,
    labels_override: Option<&Path>,
    which: AnalyzeWhich,
    output_override: Option<&Path>,
) -> Result<AnalyzeReport, CliError> {
    let mut manifest = RunManifest::new("analyze");
    manifest.config_sha256 = Some(hex_sha256(config_bytes));

    let want_entangle = matches!(which, AnalyzeWhich::Entangle | AnalyzeWhich::All);
    let want_flatten = matches!(which, AnalyzeWhich::Flatten | AnalyzeWhich::All);
    let want_bundle = matches!(which, AnalyzeWhich::Bundle | AnalyzeWhich::All);

    let entangle = if want_entangle {
        let trace_path = config.input_path("trace", &config.paths.trace)?;
        let catalog_path = config.input_path("catalog", &config.paths.catalog)?;
        let labels_path = resolve_aux_path(
            config,
            output_override,
            labels_override,
            &config.paths.labels,
            "labels.jsonl",
        )?;
        manifest.record_input(&trace_path)?;
        manifest.record_input(&catalog_path)?;
        manifest.record_input(&labels_path)?;
        let (traces, _) = ingest::parse_trace_file(&trace_path, config.format)
            .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;
        let catalog = ingest::load_app_catalog(&catalog_path)
            .map_err(|e| CliError::Input(format!("{}: {e}", catalog_path.display())))?;
        let (labels, _) = ingest::load_labels(&labels_path)
            .map_err(|e| CliError::Input(format!("{}: {e}", labels_path.display())))?;
        Some(entangle_section(&traces, &labels, &catalog)?)
    } else {
        None
    };

    let (flatten, bundle) = if want_flatten || want_bundle {
        let segments_path = resolve_aux_path(
            config,
            output_override,
            segments_override,
            &None,
            "segments.csv",
        )?;
        manifest.record_input(&segments_path)?;
        let file = fs::File::open(&segments_path)
            .map_err(|e| CliError::Input(format!("{}: {e}", segments_path.display())))?;
        let segments = segment::read_segments_csv(std::io::BufReader::new(file))
            .map_err(|e| CliError::Input(format!("{}: {e}", segments_path.display())))?;
        let political: Vec<Segment<String>> = segments
            .into_iter()
            .filter(|s| s.label == "true")
            .collect();
        if political.is_empty() {
            return Err(CliError::Input(
                "no political segments (label \"true\") in the segments file".into(),
            ));
        }
        let flatten = if want_flatten {
            Some(flatten_section(&political, &config.pipeline)?)
        } else {
            None
        };
        let bundle = if want_bundle {
            Some(BundleSection {
                total_duration_s: metrics::bundle_total(&political),
                strata: metrics::unbundle_strata(&political, &config.pipeline.strata_bounds_s)
                    .map_err(|e| CliError::Input(format!("strata: {e}")))?,
            })
        } else {
            None
        };
        (flatten, bundle)
    } else {
        (None, None)
    };

    let report = AnalyzeReport { entangle, flatten, bundle };

    let out_dir = output_dir(config, output_override)?;
    let mut out = OutputSet { dir: out_dir, manifest: &mut manifest };
    out.write("report.json", &to_json_pretty(&report)?)?;
    if let Some(section) = &report.entangle {
        out.write("crosstab.csv", &crosstab_csv(section)?)?;
    }
    if let Some(section) = &report.flatten {
        out.write("histogram.csv", &histogram_csv(section)?)?;
        if let Some(rankings) = &section.rankings {
            out.write("rankings.csv", &rankings_csv(rankings)?)?;
        }
    }
    if let Some(section) = &report.bundle {
        out.write("strata.csv", &strata_csv(&section.strata)?)?;
    }
    out.finish("analyze")?;
    Ok(report)
}

/// Resolution order for auxiliary inputs: explicit flag, config path,
/// then the conventional name inside the output directory.
fn resolve_aux_path(
    config: &RunConfig,
    output_override: Option<&Path>,
    flag: Option<&Path>,
    config_path: &Option<PathBuf>,
    default_name: &str,
) -> Result<PathBuf, CliError> {
    let path = match (flag, config_path) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => output_dir(config, output_override)?.join(default_name),
    };
    if !path.is_file() {
        return Err(CliError::Input(format!(
            "{} does not exist or is not a file",
            path.display()
        )));
    }
    Ok(path)
}

fn entangle_section(
    traces: &[ParticipantTrace],
    labels: &[RecordLabel],
    catalog: &AppCatalog,
) -> Result<EntangleSection, CliError> {
    let label_map = build_label_map(labels);
    ensure_full_coverage(traces, &label_map)?;
    let mut observations = Vec::new();
    for trace in traces {
        for rec in &trace.records {
            observations.push(FrameObs {
                participant_id: rec.participant_id.clone(),
                political: label_map[&(rec.participant_id.clone(), rec.ts_ms)],
                news: catalog.is_news(rec.app_id.as_deref()),
            });
        }
    }
    let (participants, pooled) = metrics::entangle_crosstab(&observations);
    let x: Vec<f64> = participants.iter().map(|t| t.p_news).collect();
    let y: Vec<f64> = participants.iter().map(|t| t.p_political).collect();
    let (correlation, note) = match metrics::pearson_r(&x, &y) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(EntangleSection { pooled, participants, correlation, correlation_note: note })
}

fn flatten_section(
    political: &[Segment<String>],
    pipeline: &PipelineConfig,
) -> Result<FlattenSection, CliError> {
    let pooled = metrics::duration_histogram(political, pipeline.histogram_bin_s, Grouping::Pooled)
        .map_err(|e| CliError::Input(format!("histogram: {e}")))?
        .pop()
        .expect("pooled histogram exists for nonempty segments");
    let per_participant =
        metrics::duration_histogram(political, pipeline.histogram_bin_s, Grouping::PerParticipant)
            .map_err(|e| CliError::Input(format!("histogram: {e}")))?;
    let durations: Vec<f64> = political.iter().map(|s| s.duration_s).collect();
    let (lognormal, lognormal_note) = match metrics::fit_lognormal(&durations) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (rankings, rankings_note) = match metrics::count_vs_duration_rankings(political) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(FlattenSection {
        political_segment_count: political.len() as u64,
        pooled_histogram: pooled,
        participant_histograms: per_participant,
        lognormal,
        lognormal_note,
        rankings,
        rankings_note,
    })
}

fn crosstab_csv(section: &EntangleSection) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(format!("crosstab csv: {e}"));
    w.write_record([
        "owner",
        "frames_political_news",
        "frames_political_other",
        "frames_nonpolitical_news",
        "frames_nonpolitical_other",
        "p_political",
        "p_news",
        "p_both",
        "p_news_given_political",
        "p_nonpolitical_given_news",
    ])
    .map_err(err)?;
    for tab in section.participants.iter().chain(std::iter::once(&section.pooled)) {
        w.write_record([
            tab.owner.as_str(),
            &tab.frames_political_news.to_string(),
            &tab.frames_political_other.to_string(),
            &tab.frames_nonpolitical_news.to_string(),
            &tab.frames_nonpolitical_other.to_string(),
            &tab.p_political.to_string(),
            &tab.p_news.to_string(),
            &tab.p_both.to_string(),
            &tab.p_news_given_political.to_string(),
            &tab.p_nonpolitical_given_news.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Runtime(format!("crosstab csv: {e}")))
}

fn histogram_csv(section: &FlattenSection) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(format!("histogram csv: {e}"));
    w.write_record(["owner", "bin_upper_s", "count", "percent"]).map_err(err)?;
    let all = std::iter::once(&section.pooled_histogram).chain(&section.participant_histograms);
    for hist in all {
        for (upper, count, percent) in hist.rows() {
            w.write_record([
                hist.owner.as_str(),
                &upper.to_string(),
                &count.to_string(),
                &percent.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner()
        .map_err(|e| CliError::Runtime(format!("histogram csv: {e}")))
}

fn strata_csv(report: &StrataReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(format!("strata csv: {e}"));
    w.write_record([
        "lower_s",
        "upper_s",
        "count",
        "count_share",
        "duration_s",
        "duration_share",
    ])
    .map_err(err)?;
    for s in &report.strata {
        w.write_record([
            &s.lower_s.to_string(),
            &s.upper_s.map_or(String::from("inf"), |u| u.to_string()),
            &s.count.to_string(),
            &s.count_share.to_string(),
            &s.duration_s.to_string(),
            &s.duration_share.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Runtime(format!("strata csv: {e}")))
}

fn rankings_csv(report: &RankingReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(format!("rankings csv: {e}"));
    w.write_record([
        "participant_id",
        "segment_count",
        "total_duration_s",
        "count_rank",
        "duration_rank",
    ])
    .map_err(err)?;
    for p in &report.participants {
        w.write_record([
            p.participant_id.as_str(),
            &p.segment_count.to_string(),
            &p.total_duration_s.to_string(),
            &p.count_rank.to_string(),
            &p.duration_rank.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Runtime(format!("rankings csv: {e}")))
}

/// `synth`: generate a corpus with ground truth into the output directory
/// (trace.jsonl, truth.jsonl, segments.csv, catalog.csv).
pub fn cmd_synth(
    config_path: &Path,
    stems_override: Option<&Path>,
    seed_override: Option<u64>,
    output: &Path,
) -> Result<PathBuf, CliError> {
    let bytes = fs::read(config_path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let mut config: SynthConfig = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Usage(format!("invalid synth config {}: {e}", config_path.display()))
    })?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let stems = match stems_override {
        Some(p) => ingest::load_stems(p)
            .map_err(|e| CliError::Input(format!("stem list {}: {e}", p.display())))?,
        None => political_stems(),
    };

    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(config.seed);
    manifest.config_sha256 = Some(hex_sha256(&bytes));
    if let Some(p) = stems_override {
        manifest.record_input(p)?;
    }

    let out = synth::generate(&config, &stems).map_err(|e| match &e {
        synth::SynthError::BadConfig(_) | synth::SynthError::DecoyMatchesStem { .. } => {
            CliError::Usage(e.to_string())
        }
        synth::SynthError::Catalog(_) => CliError::Usage(e.to_string()),
    })?;

    let mut trace_buf = Vec::new();
    ingest::write_trace_jsonl(&mut trace_buf, &out.traces)
        .map_err(|e| CliError::Runtime(format!("serializing trace: {e}")))?;
    let mut truth_buf = Vec::new();
    ingest::write_labels_jsonl(&mut truth_buf, &out.labels)
        .map_err(|e| CliError::Runtime(format!("serializing labels: {e}")))?;
    let mut segments_buf = Vec::new();
    segment::write_segments_csv(&mut segments_buf, &out.segments)
        .map_err(|e| CliError::Runtime(format!("serializing segments: {e}")))?;
    let mut catalog_buf = Vec::new();
    write_catalog_csv(&mut catalog_buf, &out.catalog)
        .map_err(|e| CliError::Runtime(format!("serializing catalog: {e}")))?;

    let mut set = OutputSet { dir: output.to_path_buf(), manifest: &mut manifest };
    let trace_path = set.write("trace.jsonl", &trace_buf)?;
    set.write("truth.jsonl", &truth_buf)?;
    set.write("segments.csv", &segments_buf)?;
    set.write("catalog.csv", &catalog_buf)?;
    set.finish("synth")?;
    Ok(trace_path)
}

/// Writes an app catalog as CSV (header `app_id,category`).
pub fn write_catalog_csv(writer: &mut impl Write, catalog: &AppCatalog) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["app_id", "category"])?;
    for (app, category) in catalog.iter() {
        w.write_record([app, category])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"not_a_real_key": 1}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.message().contains("not_a_real_key"));
    }

    #[test]
    fn run_config_defaults_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, "{}").unwrap();
        let (config, _) = RunConfig::load(&path).unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.cv_folds, 5);
    }

    #[test]
    fn missing_required_path_is_usage_error() {
        let config = RunConfig::default();
        let err = config.require("model", &config.paths.model).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn nonexistent_input_is_input_error() {
        let mut config = RunConfig::default();
        config.paths.trace = Some(PathBuf::from("/definitely/not/here.jsonl"));
        let err = config.input_path("trace", &config.paths.trace).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn atomic_write_creates_dirs_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep/nested/file.txt");
        write_atomic(&path, b"one").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"one");
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn validate_command_reports() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        fs::write(
            &path,
            "{\"participant_id\":\"p1\",\"ts_ms\":0,\"text\":\"a\"}\nnot json\n",
        )
        .unwrap();
        let report = cmd_validate(&path, TraceFormat::Jsonl).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected_count(), 1);

        let err = cmd_validate(Path::new("/nope"), TraceFormat::Jsonl).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
