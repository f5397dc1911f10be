//! Synthetic trace generator with known ground truth.
//!
//! Generates corpora with configurable session structure, log-normal
//! segment durations (discretized to whole frames), content/format
//! entanglement, and stem-bearing text, together with the exact per-record
//! labels and maximal ground-truth segments. [`expected_stats`] gives the
//! closed-form expectations the generated corpus converges to, which is
//! what end-to-end pipeline validation checks against.
//!
//! Political records embed real stems; non-political records are built
//! purely from decoy tokens (including near-miss traps like "magazine" and
//! "musicians") and are verified at generation time to match no stem.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::derive_stream_seed;
use crate::ingest::{ParticipantTrace, RecordLabel};
use crate::model::{AppCatalog, CatalogError, PipelineConfig, ScreenshotRecord};
use crate::segment::Segment;
use crate::stats::std_normal_cdf;
use crate::textfeat::{normalize, StemList, StemMatcher};

/// One app category with its sampling weight and member apps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    pub weight: f64,
    pub apps: Vec<String>,
}

/// The category name treated as news by the generator and its expectations.
pub const NEWS_CATEGORY: &str = "news";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_participants: usize,
    /// Poisson mean of sessions per participant.
    pub sessions_per_participant: f64,
    /// Poisson mean of segments per session (at least 1 is drawn).
    pub segments_per_session: f64,
    /// Mean of ln(duration in seconds) before frame discretization.
    pub duration_mu: f64,
    /// Standard deviation of ln(duration in seconds).
    pub duration_sigma: f64,
    pub app_categories: Vec<CategorySpec>,
    pub p_political_given_news: f64,
    pub p_political_given_other: f64,
    /// Distinct stems embedded in each political record's text.
    pub stems_per_political_text: usize,
    /// Decoy tokens woven into every record's text.
    pub decoys_per_text: usize,
    pub decoy_tokens: Vec<String>,
    pub pipeline: PipelineConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_participants: 4,
            sessions_per_participant: 8.0,
            segments_per_session: 6.0,
            duration_mu: 1.6,
            duration_sigma: 1.0,
            app_categories: default_categories(),
            p_political_given_news: 0.25,
            p_political_given_other: 0.02,
            stems_per_political_text: 2,
            decoys_per_text: 4,
            decoy_tokens: default_decoys(),
            pipeline: PipelineConfig::default(),
        }
    }
}

fn default_categories() -> Vec<CategorySpec> {
    vec![
        CategorySpec {
            name: NEWS_CATEGORY.to_string(),
            weight: 0.1,
            apps: vec!["com.newsflash".into(), "com.dailywire.reader".into()],
        },
        CategorySpec {
            name: "social".to_string(),
            weight: 0.5,
            apps: vec!["com.chatter".into(), "com.photogrid".into()],
        },
        CategorySpec {
            name: "games".to_string(),
            weight: 0.4,
            apps: vec!["com.puzzlebox".into()],
        },
    ]
}

/// Decoy tokens guaranteed (and verified) not to trip any stem, including
/// near-miss anchor traps.
fn default_decoys() -> Vec<String> {
    [
        "magazine", "musicians", "selection", "reformat", "weather", "soccer", "kitchen",
        "recipe", "puppy", "garden", "coffee", "sunset", "bicycle", "painting", "crossword",
        "yoga", "hiking", "jazz", "pasta", "museum", "aquarium", "origami", "snorkel", "waffle",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
    #[error("decoy vocabulary collides with stem list: {text:?} matches stem {stem:?}")]
    DecoyMatchesStem { text: String, stem: String },
    #[error("catalog error: {0}")]
    Catalog(#[from] CatalogError),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::BadConfig(msg.to_string()));
        self.pipeline
            .validate()
            .map_err(|e| SynthError::BadConfig(e.to_string()))?;
        if !(self.sessions_per_participant > 0.0) {
            return bad("sessions_per_participant must be positive");
        }
        if !(self.segments_per_session > 0.0) {
            return bad("segments_per_session must be positive");
        }
        if !self.duration_mu.is_finite() {
            return bad("duration_mu must be finite");
        }
        if !(self.duration_sigma >= 0.0) || !self.duration_sigma.is_finite() {
            return bad("duration_sigma must be nonnegative and finite");
        }
        for p in [self.p_political_given_news, self.p_political_given_other] {
            if !(0.0..=1.0).contains(&p) {
                return bad("political probabilities must lie in [0,1]");
            }
        }
        if self.app_categories.is_empty() {
            return bad("app_categories must be nonempty");
        }
        let mut total_weight = 0.0;
        for cat in &self.app_categories {
            if cat.weight < 0.0 || !cat.weight.is_finite() {
                return bad("category weights must be nonnegative");
            }
            if cat.apps.is_empty() {
                return bad("every category needs at least one app");
            }
            total_weight += cat.weight;
        }
        if !(total_weight > 0.0) {
            return bad("category weights must not all be zero");
        }
        if self.stems_per_political_text == 0 {
            return bad("stems_per_political_text must be positive");
        }
        if self.decoys_per_text == 0 {
            return bad("decoys_per_text must be positive");
        }
        if self.decoy_tokens.is_empty() {
            return bad("decoy_tokens must be nonempty");
        }
        if self.pipeline.frame_period_ms() > self.pipeline.session_gap_ms() {
            return bad("frame_period_s must not exceed session_gap_s, or every frame would start a new session");
        }
        Ok(())
    }

    fn news_weight_share(&self) -> f64 {
        let total: f64 = self.app_categories.iter().map(|c| c.weight).sum();
        let news: f64 = self
            .app_categories
            .iter()
            .filter(|c| c.name == NEWS_CATEGORY)
            .map(|c| c.weight)
            .sum();
        news / total
    }

    /// The app catalog implied by the configured categories.
    pub fn catalog(&self) -> Result<AppCatalog, SynthError> {
        let entries = self
            .app_categories
            .iter()
            .flat_map(|c| c.apps.iter().map(move |a| (a.clone(), c.name.clone())));
        Ok(AppCatalog::new(entries, NEWS_CATEGORY)?)
    }
}

/// A generated corpus with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub traces: Vec<ParticipantTrace>,
    /// One label per record, in trace order.
    pub labels: Vec<RecordLabel>,
    /// Maximal ground-truth political/non-political segments.
    pub segments: Vec<Segment<bool>>,
    pub catalog: AppCatalog,
}

/// Generates a corpus. Deterministic given the config seed: participant
/// `i` draws from a ChaCha8 stream seeded with `derive_stream_seed(seed, i)`.
pub fn generate(config: &SynthConfig, stems: &StemList) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    if config.stems_per_political_text > stems.len() {
        return Err(SynthError::BadConfig(format!(
            "stems_per_political_text {} exceeds stem count {}",
            config.stems_per_political_text,
            stems.len()
        )));
    }
    let catalog = config.catalog()?;
    let matcher = StemMatcher::new(stems);

    // reject decoys that individually trip a stem before generating anything
    for decoy in &config.decoy_tokens {
        check_no_stem(&normalize(decoy), decoy, &matcher, stems)?;
    }

    let gap_ms = config.pipeline.session_gap_ms();
    let period_ms = config.pipeline.frame_period_ms();
    let total_weight: f64 = config.app_categories.iter().map(|c| c.weight).sum();
    let sessions_dist = Poisson::new(config.sessions_per_participant)
        .map_err(|e| SynthError::BadConfig(e.to_string()))?;
    let segments_dist = Poisson::new(config.segments_per_session)
        .map_err(|e| SynthError::BadConfig(e.to_string()))?;

    let mut traces = Vec::with_capacity(config.n_participants);
    let mut labels = Vec::new();
    let mut segments = Vec::new();

    for p in 0..config.n_participants {
        let participant_id = format!("p{p:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(config.seed, p as u64));
        let mut records: Vec<ScreenshotRecord> = Vec::new();
        let mut ts: i64 = 0;
        let n_sessions = sessions_dist.sample(&mut rng) as usize;

        for session_index in 0..n_sessions {
            if session_index > 0 {
                // strictly greater than the gap threshold
                ts += gap_ms + 1 + rng.random_range(0..=12 * gap_ms);
            }
            let n_segments = (segments_dist.sample(&mut rng) as usize).max(1);
            // run-length state for the merged ground-truth segments
            let mut run: Option<(bool, i64, u64)> = None;

            for _ in 0..n_segments {
                let mut pick = rng.random_range(0.0..total_weight);
                let mut category = &config.app_categories[0];
                for cat in &config.app_categories {
                    if pick < cat.weight {
                        category = cat;
                        break;
                    }
                    pick -= cat.weight;
                }
                let app = &category.apps[rng.random_range(0..category.apps.len())];
                let p_political = if category.name == NEWS_CATEGORY {
                    config.p_political_given_news
                } else {
                    config.p_political_given_other
                };
                let political = rng.random::<f64>() < p_political;
                let z: f64 = rng.sample(StandardNormal);
                let duration = (config.duration_mu + config.duration_sigma * z).exp();
                let frames =
                    ((duration / config.pipeline.frame_period_s).ceil() as u64).max(1);

                for _ in 0..frames {
                    let text = if political {
                        political_text(&mut rng, config, stems)
                    } else {
                        let text = decoy_text(&mut rng, config);
                        check_no_stem(&normalize(&text), &text, &matcher, stems)?;
                        text
                    };
                    records.push(ScreenshotRecord {
                        participant_id: participant_id.clone(),
                        ts_ms: ts,
                        app_id: Some(app.clone()),
                        text,
                    });
                    labels.push(RecordLabel {
                        participant_id: participant_id.clone(),
                        ts_ms: ts,
                        political,
                    });
                    run = match run {
                        Some((label, start, count)) if label == political => {
                            Some((label, start, count + 1))
                        }
                        Some((label, start, count)) => {
                            segments.push(make_segment(
                                &participant_id,
                                session_index,
                                label,
                                start,
                                count,
                                config,
                            ));
                            Some((political, ts, 1))
                        }
                        None => Some((political, ts, 1)),
                    };
                    ts += period_ms;
                }
            }
            if let Some((label, start, count)) = run {
                segments.push(make_segment(
                    &participant_id,
                    session_index,
                    label,
                    start,
                    count,
                    config,
                ));
            }
        }
        traces.push(ParticipantTrace { participant_id, records });
    }

    Ok(SynthOutput { traces, labels, segments, catalog })
}

fn make_segment(
    participant_id: &str,
    session_index: usize,
    label: bool,
    start_ts_ms: i64,
    frame_count: u64,
    config: &SynthConfig,
) -> Segment<bool> {
    Segment {
        participant_id: participant_id.to_string(),
        session_index,
        label,
        start_ts_ms,
        frame_count,
        duration_s: frame_count as f64 * config.pipeline.frame_period_s,
    }
}

fn check_no_stem(
    normalized: &str,
    text: &str,
    matcher: &StemMatcher,
    stems: &StemList,
) -> Result<(), SynthError> {
    let bits = matcher.match_bits(normalized);
    if let Some(i) = bits.bits.iter().position(|&b| b) {
        return Err(SynthError::DecoyMatchesStem {
            text: text.to_string(),
            stem: stems.get(i).expect("bit index in range").source().to_string(),
        });
    }
    Ok(())
}

fn decoy_text(rng: &mut ChaCha8Rng, config: &SynthConfig) -> String {
    let mut tokens = Vec::with_capacity(config.decoys_per_text);
    for _ in 0..config.decoys_per_text {
        tokens.push(config.decoy_tokens[rng.random_range(0..config.decoy_tokens.len())].as_str());
    }
    tokens.join(" ")
}

fn political_text(rng: &mut ChaCha8Rng, config: &SynthConfig, stems: &StemList) -> String {
    // distinct stems by partial Fisher-Yates
    let mut indices: Vec<usize> = (0..stems.len()).collect();
    for i in 0..config.stems_per_political_text {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut parts = Vec::new();
    for &i in indices.iter().take(config.stems_per_political_text) {
        parts.push(config.decoy_tokens[rng.random_range(0..config.decoy_tokens.len())].clone());
        parts.push(stems.get(i).expect("index in range").phrase());
    }
    parts.push(config.decoy_tokens[rng.random_range(0..config.decoy_tokens.len())].clone());
    parts.join(" ")
}

/// Expected count/duration share of one stratum under the discretized
/// duration distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumExpectation {
    pub lower_s: f64,
    pub upper_s: Option<f64>,
    pub count_share: f64,
    pub duration_share: f64,
}

/// Closed-form expectations implied by a [`SynthConfig`].
///
/// Cross-tab cells follow the law of total probability over category
/// weights; duration quantities come from numerical summation over the
/// frame-count distribution `K = max(1, ceil(d / frame_period_s))`,
/// truncated once the remaining tail mass is below 1e-13.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedStats {
    pub p_news: f64,
    pub p_political: f64,
    pub p_both: f64,
    pub p_news_given_political: f64,
    pub single_frame_share: f64,
    pub mean_frames_per_segment: f64,
    pub strata: Vec<StratumExpectation>,
    pub duration_mu: f64,
    pub duration_sigma: f64,
    /// E[ln(K * frame_period_s)] of the discretized duration.
    pub discretized_mu: f64,
    /// Population standard deviation of ln(K * frame_period_s).
    pub discretized_sigma: f64,
}

const TAIL_EPS: f64 = 1e-13;
const MAX_FRAMES_ENUMERATED: u64 = 50_000_000;

pub fn expected_stats(config: &SynthConfig) -> Result<ExpectedStats, SynthError> {
    config.validate()?;
    let w_news = config.news_weight_share();
    let p_both = config.p_political_given_news * w_news;
    let p_political = p_both + config.p_political_given_other * (1.0 - w_news);
    let p_news_given_political = if p_political > 0.0 { p_both / p_political } else { 0.0 };

    let period = config.pipeline.frame_period_s;
    let bounds = &config.pipeline.strata_bounds_s;
    let stratum_of =
        |d: f64| bounds.iter().position(|&b| d <= b).unwrap_or(bounds.len());

    // P(K <= k) = Phi((ln(k * period) - mu) / sigma); sigma = 0 collapses to
    // a point mass at max(1, ceil(exp(mu) / period)).
    let cdf_frames = |k: u64| -> f64 {
        let x = (k as f64 * period).ln();
        if config.duration_sigma == 0.0 {
            if config.duration_mu <= x { 1.0 } else { 0.0 }
        } else {
            std_normal_cdf((x - config.duration_mu) / config.duration_sigma)
        }
    };

    let mut count_share = vec![0.0f64; bounds.len() + 1];
    let mut duration_mass = vec![0.0f64; bounds.len() + 1];
    let mut mean_frames = 0.0;
    let mut single_frame_share = 0.0;
    let mut mean_log = 0.0;
    let mut mean_log_sq = 0.0;
    let mut cdf_prev = 0.0;
    let mut k = 1u64;
    loop {
        let cdf_k = cdf_frames(k);
        let p_k = cdf_k - cdf_prev;
        if p_k > 0.0 {
            let seconds = k as f64 * period;
            let log_d = seconds.ln();
            let stratum = stratum_of(seconds);
            count_share[stratum] += p_k;
            duration_mass[stratum] += p_k * seconds;
            mean_frames += p_k * k as f64;
            mean_log += p_k * log_d;
            mean_log_sq += p_k * log_d * log_d;
            if k == 1 {
                single_frame_share = p_k;
            }
        }
        cdf_prev = cdf_k;
        if 1.0 - cdf_k < TAIL_EPS {
            break;
        }
        k += 1;
        if k > MAX_FRAMES_ENUMERATED {
            return Err(SynthError::BadConfig(
                "duration distribution tail too heavy to enumerate".into(),
            ));
        }
    }
    let total_mass: f64 = count_share.iter().sum();
    if total_mass < 1.0 - 1e-9 {
        return Err(SynthError::BadConfig(format!(
            "frame distribution mass {total_mass} lost to truncation"
        )));
    }
    let total_duration: f64 = duration_mass.iter().sum();
    let strata = (0..count_share.len())
        .map(|i| StratumExpectation {
            lower_s: if i == 0 { 0.0 } else { bounds[i - 1] },
            upper_s: bounds.get(i).copied(),
            count_share: count_share[i] / total_mass,
            duration_share: duration_mass[i] / total_duration,
        })
        .collect();
    let variance = (mean_log_sq / total_mass) - (mean_log / total_mass).powi(2);
    Ok(ExpectedStats {
        p_news: w_news,
        p_political,
        p_both,
        p_news_given_political,
        single_frame_share: single_frame_share / total_mass,
        mean_frames_per_segment: mean_frames / total_mass,
        strata,
        duration_mu: config.duration_mu,
        duration_sigma: config.duration_sigma,
        discretized_mu: mean_log / total_mass,
        discretized_sigma: variance.max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest;
    use crate::textfeat::{featurize, match_stems};
    use std::path::Path;

    fn appendix_stems() -> StemList {
        ingest::load_stems(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/stems.txt")).unwrap()
    }

    fn small_config() -> SynthConfig {
        SynthConfig {
            seed: 11,
            n_participants: 3,
            sessions_per_participant: 4.0,
            segments_per_session: 3.0,
            duration_sigma: 0.8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_participants_yield_empty_corpus() {
        let config = SynthConfig { n_participants: 0, ..small_config() };
        let out = generate(&config, &appendix_stems()).unwrap();
        assert!(out.traces.is_empty());
        assert!(out.labels.is_empty());
        assert!(out.segments.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let stems = appendix_stems();
        let a = generate(&small_config(), &stems).unwrap();
        let b = generate(&small_config(), &stems).unwrap();
        assert_eq!(a, b);

        let c = generate(&SynthConfig { seed: 12, ..small_config() }, &stems).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forced_entanglement_corner() {
        let config = SynthConfig {
            p_political_given_news: 1.0,
            p_political_given_other: 0.0,
            n_participants: 6,
            ..small_config()
        };
        let out = generate(&config, &appendix_stems()).unwrap();
        let mut political_news = 0u64;
        let mut political_total = 0u64;
        let records = out.traces.iter().flat_map(|t| &t.records);
        for (rec, label) in records.zip(&out.labels) {
            if label.political {
                political_total += 1;
                if out.catalog.is_news(rec.app_id.as_deref()) {
                    political_news += 1;
                }
            }
        }
        assert!(political_total > 0);
        assert_eq!(political_news, political_total, "p_news_given_political = 1");
    }

    #[test]
    fn ground_truth_is_consistent_with_trace() {
        let stems = appendix_stems();
        let out = generate(&small_config(), &stems).unwrap();
        // labels align record-for-record
        let records: Vec<_> = out.traces.iter().flat_map(|t| &t.records).collect();
        assert_eq!(records.len(), out.labels.len());
        for (rec, label) in records.iter().zip(&out.labels) {
            assert_eq!(rec.participant_id, label.participant_id);
            assert_eq!(rec.ts_ms, label.ts_ms);
        }
        // segment frame counts conserve records
        let seg_frames: u64 = out.segments.iter().map(|s| s.frame_count).sum();
        assert_eq!(seg_frames as usize, records.len());
        // maximality within a session
        for pair in out.segments.windows(2) {
            if pair[0].participant_id == pair[1].participant_id
                && pair[0].session_index == pair[1].session_index
            {
                assert_ne!(pair[0].label, pair[1].label);
            }
        }
    }

    #[test]
    fn political_texts_carry_stems_and_decoys_never_match() {
        let stems = appendix_stems();
        let config = SynthConfig {
            n_participants: 6,
            p_political_given_news: 0.6,
            p_political_given_other: 0.2,
            ..small_config()
        };
        let out = generate(&config, &stems).unwrap();
        let records: Vec<_> =
            out.traces.iter().flat_map(|t| t.records.clone()).collect();
        let vectors = featurize(&records, &stems, None);
        let mut political_seen = 0;
        for (v, label) in vectors.iter().zip(&out.labels) {
            if label.political {
                political_seen += 1;
                assert!(v.any(), "political record with all-false vector");
            } else {
                assert!(!v.any(), "decoy text matched a stem");
            }
        }
        assert!(political_seen > 0, "corpus should contain political records");
    }

    #[test]
    fn colliding_decoy_is_a_config_error() {
        let stems = appendix_stems();
        let config = SynthConfig {
            decoy_tokens: vec!["taxi".into()], // contains the stem "tax"
            ..small_config()
        };
        let err = generate(&config, &stems).unwrap_err();
        match err {
            SynthError::DecoyMatchesStem { stem, .. } => assert_eq!(stem, "tax"),
            other => panic!("expected DecoyMatchesStem, got {other:?}"),
        }
    }

    #[test]
    fn default_decoys_include_anchor_traps_that_stay_safe() {
        let stems = appendix_stems();
        let decoys = default_decoys();
        assert!(decoys.iter().any(|d| d == "magazine"));
        assert!(decoys.iter().any(|d| d == "musicians"));
        for d in &decoys {
            assert!(
                !match_stems(&normalize(d), &stems).any(),
                "default decoy {d:?} trips a stem"
            );
        }
    }

    #[test]
    fn inter_session_gaps_exceed_threshold() {
        let config = small_config();
        let out = generate(&config, &appendix_stems()).unwrap();
        let gap_ms = config.pipeline.session_gap_ms();
        let period_ms = config.pipeline.frame_period_ms();
        for trace in &out.traces {
            for pair in trace.records.windows(2) {
                let delta = pair[1].ts_ms - pair[0].ts_ms;
                assert!(
                    delta == period_ms || delta > gap_ms,
                    "delta {delta} is neither one period nor a session break"
                );
            }
        }
    }

    #[test]
    fn expected_stats_law_of_total_probability() {
        let config = SynthConfig {
            app_categories: vec![
                CategorySpec {
                    name: NEWS_CATEGORY.into(),
                    weight: 0.2,
                    apps: vec!["com.news".into()],
                },
                CategorySpec { name: "other".into(), weight: 0.8, apps: vec!["com.x".into()] },
            ],
            p_political_given_news: 0.25,
            p_political_given_other: 0.01,
            ..SynthConfig::default()
        };
        let stats = expected_stats(&config).unwrap();
        assert!((stats.p_news - 0.2).abs() < 1e-15);
        assert!((stats.p_both - 0.05).abs() < 1e-15);
        assert!((stats.p_political - 0.058).abs() < 1e-15);
    }

    #[test]
    fn expected_stats_sigma_zero_degenerates() {
        let config = SynthConfig {
            duration_mu: 2.0, // e^2 ~ 7.39 s -> 2 frames of 5 s
            duration_sigma: 0.0,
            ..SynthConfig::default()
        };
        let stats = expected_stats(&config).unwrap();
        assert!((stats.mean_frames_per_segment - 2.0).abs() < 1e-12);
        assert_eq!(stats.single_frame_share, 0.0);
        // 10 s falls in the first stratum (bound 10 inclusive)
        assert!((stats.strata[0].count_share - 1.0).abs() < 1e-12);
        assert!((stats.strata[0].duration_share - 1.0).abs() < 1e-12);
        assert!((stats.discretized_mu - 10.0f64.ln()).abs() < 1e-12);
        assert_eq!(stats.discretized_sigma, 0.0);
    }

    #[test]
    fn expected_stats_match_monte_carlo_summation() {
        // independent oracle: direct sampling of the discretization
        let config = SynthConfig { duration_mu: 2.0, duration_sigma: 1.0, ..Default::default() };
        let stats = expected_stats(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(424242);
        let n = 200_000usize;
        let mut single = 0u64;
        let mut short_count = 0u64;
        let mut short_duration = 0.0f64;
        let mut total_duration = 0.0f64;
        let mut total_frames = 0.0f64;
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let d = (2.0 + z).exp();
            let k = ((d / 5.0).ceil() as u64).max(1);
            let seconds = k as f64 * 5.0;
            if k == 1 {
                single += 1;
            }
            if seconds <= 10.0 {
                short_count += 1;
                short_duration += seconds;
            }
            total_duration += seconds;
            total_frames += k as f64;
        }
        let se = |p: f64| 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        let p_single = single as f64 / n as f64;
        assert!(
            (p_single - stats.single_frame_share).abs() < se(stats.single_frame_share),
            "single-frame share {p_single} vs expected {}",
            stats.single_frame_share
        );
        let p_short = short_count as f64 / n as f64;
        assert!((p_short - stats.strata[0].count_share).abs() < se(stats.strata[0].count_share));
        let short_share = short_duration / total_duration;
        assert!(
            (short_share - stats.strata[0].duration_share).abs() < 0.01,
            "duration share {short_share} vs expected {}",
            stats.strata[0].duration_share
        );
        let mean_frames = total_frames / n as f64;
        assert!((mean_frames - stats.mean_frames_per_segment).abs()
            < 0.05 * stats.mean_frames_per_segment);
    }

    #[test]
    fn config_validation_errors() {
        let stems = appendix_stems();
        let bad = SynthConfig { sessions_per_participant: 0.0, ..SynthConfig::default() };
        assert!(matches!(generate(&bad, &stems), Err(SynthError::BadConfig(_))));

        let bad = SynthConfig { p_political_given_news: 1.5, ..SynthConfig::default() };
        assert!(matches!(expected_stats(&bad), Err(SynthError::BadConfig(_))));

        let mut bad = SynthConfig::default();
        bad.pipeline.frame_period_s = 20.0; // exceeds the 5 s session gap
        assert!(matches!(generate(&bad, &stems), Err(SynthError::BadConfig(_))));

        let bad = SynthConfig { stems_per_political_text: 10_000, ..SynthConfig::default() };
        assert!(matches!(generate(&bad, &stems), Err(SynthError::BadConfig(_))));
    }
}
