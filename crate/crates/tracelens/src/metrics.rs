//! The three measurement-bias diagnostics and their statistical kernels.
//!
//! * entangling — content exposure proxied by format exposure: per-person
//!   and pooled 2x2 cross-tabs of political content vs news-app frames,
//!   plus the between-person correlation of the two proportions.
//! * flattening — duration-blind segment counts: duration histograms,
//!   log-normal fits, duration filters, and count-rank vs duration-rank
//!   comparisons that expose what counting alone hides.
//! * bundling — aggregate durations: totals decomposed by duration strata
//!   so short-exposure mass is visible inside the aggregate.
//!
//! Screentime proportions are computed in frames (each frame is one
//! `frame_period_s` of screentime), which keeps the arithmetic exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::Segment;
use crate::stats::{student_t_p_two_tailed, StatsError};

/// One frame joined with its content label and format flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameObs {
    pub participant_id: String,
    pub political: bool,
    pub news: bool,
}

/// Owner id used for corpus-wide aggregates.
pub const POOLED: &str = "pooled";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("bin width must be positive, got {0}")]
    NonPositiveBinWidth(f64),
    #[error("durations must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("strata bounds must be strictly ascending positive reals")]
    UnsortedBounds,
    #[error("invalid duration range: min {min} > max {max}")]
    InvalidRange { min: f64, max: f64 },
    #[error("need at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// 2x2 frame-count table of political-content vs news-app exposure, with
/// derived screentime proportions. Conditional proportions with a zero
/// denominator are reported as 0 with their `_defined` flag cleared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub owner: String,
    pub frames_political_news: u64,
    pub frames_political_other: u64,
    pub frames_nonpolitical_news: u64,
    pub frames_nonpolitical_other: u64,
    pub p_political: f64,
    pub p_news: f64,
    pub p_both: f64,
    pub p_news_given_political: f64,
    pub p_news_given_political_defined: bool,
    pub p_nonpolitical_given_news: f64,
    pub p_nonpolitical_given_news_defined: bool,
}

impl CrossTab {
    pub fn from_counts(owner: impl Into<String>, pn: u64, po: u64, nn: u64, no: u64) -> Self {
        let total = pn + po + nn + no;
        let frac = |num: u64| if total == 0 { 0.0 } else { num as f64 / total as f64 };
        let political = pn + po;
        let news = pn + nn;
        let cond = |num: u64, den: u64| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (p_news_given_political, ngp_defined) = cond(pn, political);
        let (p_nonpolitical_given_news, npn_defined) = cond(nn, news);
        CrossTab {
            owner: owner.into(),
            frames_political_news: pn,
            frames_political_other: po,
            frames_nonpolitical_news: nn,
            frames_nonpolitical_other: no,
            p_political: frac(political),
            p_news: frac(news),
            p_both: frac(pn),
            p_news_given_political,
            p_news_given_political_defined: ngp_defined,
            p_nonpolitical_given_news,
            p_nonpolitical_given_news_defined: npn_defined,
        }
    }

    pub fn total_frames(&self) -> u64 {
        self.frames_political_news
            + self.frames_political_other
            + self.frames_nonpolitical_news
            + self.frames_nonpolitical_other
    }
}

/// Per-participant and pooled cross-tabs of content vs format exposure.
/// Participants come back sorted by id.
pub fn entangle_crosstab(observations: &[FrameObs]) -> (Vec<CrossTab>, CrossTab) {
    let mut cells: BTreeMap<&str, [u64; 4]> = BTreeMap::new();
    let mut pooled = [0u64; 4];
    for obs in observations {
        let cell = match (obs.political, obs.news) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        cells.entry(&obs.participant_id).or_default()[cell] += 1;
        pooled[cell] += 1;
    }
    let per_participant = cells
        .into_iter()
        .map(|(pid, c)| CrossTab::from_counts(pid, c[0], c[1], c[2], c[3]))
        .collect();
    let pooled = CrossTab::from_counts(POOLED, pooled[0], pooled[1], pooled[2], pooled[3]);
    (per_participant, pooled)
}

/// Pearson correlation with the two-tailed p-value from the Student-t
/// distribution (t = r * sqrt(df / (1 - r^2)), df = n - 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub df: u64,
    pub p_two_tailed: f64,
    pub n: usize,
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<CorrelationResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(MetricsError::TooFewPoints { need: 3, got: n });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("y"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as u64;
    let p = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * (df as f64 / (1.0 - r * r)).sqrt();
        student_t_p_two_tailed(t, df as f64)?
    };
    Ok(CorrelationResult { r, df, p_two_tailed: p, n })
}

/// How segment-level aggregates are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    PerParticipant,
    Pooled,
}

/// Histogram of segment durations; bin `i` covers `(i*w, (i+1)*w]` and is
/// labeled by its upper endpoint, so a 5 s segment lands in the "5 s" bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationHistogram {
    pub owner: String,
    pub bin_width_s: f64,
    /// counts[i] is the number of segments in bin i.
    pub counts: Vec<u64>,
    pub total_segments: u64,
}

impl DurationHistogram {
    pub fn bin_upper_s(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.bin_width_s
    }

    /// Percentage view of a bin (counts / total * 100).
    pub fn percent(&self, i: usize) -> f64 {
        100.0 * self.counts[i] as f64 / self.total_segments as f64
    }

    /// (bin upper bound, count, percent) rows, including empty bins.
    pub fn rows(&self) -> impl Iterator<Item = (f64, u64, f64)> + '_ {
        (0..self.counts.len()).map(|i| (self.bin_upper_s(i), self.counts[i], self.percent(i)))
    }
}

fn bin_index(duration_s: f64, width: f64) -> usize {
    ((duration_s / width).ceil() as usize).saturating_sub(1)
}

/// Duration histograms for a segment set, pooled or per participant.
pub fn duration_histogram<L>(
    segments: &[Segment<L>],
    bin_width_s: f64,
    grouping: Grouping,
) -> Result<Vec<DurationHistogram>, MetricsError> {
    if !(bin_width_s > 0.0) || !bin_width_s.is_finite() {
        return Err(MetricsError::NonPositiveBinWidth(bin_width_s));
    }
    if segments.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for s in segments {
        if !(s.duration_s > 0.0) {
            return Err(MetricsError::NonPositiveDuration(s.duration_s));
        }
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in segments {
        let key = match grouping {
            Grouping::Pooled => POOLED,
            Grouping::PerParticipant => s.participant_id.as_str(),
        };
        groups.entry(key).or_default().push(s.duration_s);
    }
    Ok(groups
        .into_iter()
        .map(|(owner, durations)| {
            let max_bin = durations
                .iter()
                .map(|&d| bin_index(d, bin_width_s))
                .max()
                .expect("group is nonempty");
            let mut counts = vec![0u64; max_bin + 1];
            for &d in &durations {
                counts[bin_index(d, bin_width_s)] += 1;
            }
            DurationHistogram {
                owner: owner.to_string(),
                bin_width_s,
                counts,
                total_segments: durations.len() as u64,
            }
        })
        .collect())
}

/// Log-normal fit: mu is the mean of ln(duration), sigma the sample
/// standard deviation of ln(duration) (n-1 denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

pub fn fit_lognormal(durations: &[f64]) -> Result<LogNormalFit, MetricsError> {
    if durations.len() < 2 {
        return Err(MetricsError::TooFewPoints { need: 2, got: durations.len() });
    }
    for &d in durations {
        if !(d > 0.0) || !d.is_finite() {
            return Err(MetricsError::NonPositiveDuration(d));
        }
    }
    let n = durations.len() as f64;
    let logs: Vec<f64> = durations.iter().map(|&d| d.ln()).collect();
    let mu = logs.iter().sum::<f64>() / n;
    let ss: f64 = logs.iter().map(|&l| (l - mu) * (l - mu)).sum();
    let sigma = (ss / (n - 1.0)).sqrt();
    Ok(LogNormalFit { mu, sigma, n: durations.len() })
}

/// Counts segments matching a predicate, ignoring durations entirely —
/// the flattened measure whose duration-blindness is the documented bias.
pub fn flattened_count<L>(segments: &[Segment<L>], pred: impl Fn(&Segment<L>) -> bool) -> usize {
    segments.iter().filter(|s| pred(s)).count()
}

/// Keeps segments with `min_s <= duration_s <= max_s` (both inclusive);
/// pass `f64::INFINITY` for an open upper end.
pub fn filter_by_duration<L: Clone>(
    segments: &[Segment<L>],
    min_s: f64,
    max_s: f64,
) -> Result<Vec<Segment<L>>, MetricsError> {
    if !(min_s <= max_s) || min_s < 0.0 {
        return Err(MetricsError::InvalidRange { min: min_s, max: max_s });
    }
    Ok(segments
        .iter()
        .filter(|s| s.duration_s >= min_s && s.duration_s <= max_s)
        .cloned()
        .collect())
}

/// Total duration over all segments — the bundled aggregate.
pub fn bundle_total<L>(segments: &[Segment<L>]) -> f64 {
    segments.iter().map(|s| s.duration_s).sum()
}

/// One duration stratum of the aggregate decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub lower_s: f64,
    /// `None` for the unbounded last stratum.
    pub upper_s: Option<f64>,
    pub count: u64,
    pub count_share: f64,
    pub duration_s: f64,
    pub duration_share: f64,
}

/// Aggregate duration decomposed by duration strata; count shares and
/// duration shares each sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataReport {
    pub bounds_s: Vec<f64>,
    pub strata: Vec<Stratum>,
    pub total_count: u64,
    pub total_duration_s: f64,
}

/// Splits the bundled total by duration strata. Stratum i covers
/// `(bounds[i-1], bounds[i]]`; the first starts at 0, the last is open.
pub fn unbundle_strata<L>(
    segments: &[Segment<L>],
    bounds_s: &[f64],
) -> Result<StrataReport, MetricsError> {
    let mut prev = 0.0;
    for &b in bounds_s {
        if !(b > prev) || !b.is_finite() {
            return Err(MetricsError::UnsortedBounds);
        }
        prev = b;
    }
    if segments.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let stratum_of = |d: f64| {
        bounds_s
            .iter()
            .position(|&b| d <= b)
            .unwrap_or(bounds_s.len())
    };
    let mut counts = vec![0u64; bounds_s.len() + 1];
    let mut durations = vec![0.0f64; bounds_s.len() + 1];
    for s in segments {
        if !(s.duration_s > 0.0) {
            return Err(MetricsError::NonPositiveDuration(s.duration_s));
        }
        let i = stratum_of(s.duration_s);
        counts[i] += 1;
        durations[i] += s.duration_s;
    }
    let total_count: u64 = counts.iter().sum();
    let total_duration: f64 = durations.iter().sum();
    let strata = (0..counts.len())
        .map(|i| Stratum {
            lower_s: if i == 0 { 0.0 } else { bounds_s[i - 1] },
            upper_s: bounds_s.get(i).copied(),
            count: counts[i],
            count_share: counts[i] as f64 / total_count as f64,
            duration_s: durations[i],
            duration_share: durations[i] / total_duration,
        })
        .collect();
    Ok(StrataReport {
        bounds_s: bounds_s.to_vec(),
        strata,
        total_count,
        total_duration_s: total_duration,
    })
}

/// A participant's standing under the flattened (count) and
/// duration-weighted measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRanking {
    pub participant_id: String,
    pub segment_count: u64,
    pub total_duration_s: f64,
    /// 1 = most segments; ties break by participant id.
    pub count_rank: u32,
    /// 1 = most total duration; ties break by participant id.
    pub duration_rank: u32,
}

/// A pair whose count ranking and duration ranking disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingInversion {
    pub higher_by_count: String,
    pub higher_by_duration: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub participants: Vec<ParticipantRanking>,
    pub inversions: Vec<RankingInversion>,
}

/// Compares per-participant segment-count ranks with total-duration ranks
/// and flags every pair the two measures order differently.
pub fn count_vs_duration_rankings<L>(
    segments: &[Segment<L>],
) -> Result<RankingReport, MetricsError> {
    let mut totals: BTreeMap<&str, (u64, f64)> = BTreeMap::new();
    for s in segments {
        let entry = totals.entry(s.participant_id.as_str()).or_default();
        entry.0 += 1;
        entry.1 += s.duration_s;
    }
    if totals.len() < 2 {
        return Err(MetricsError::TooFewParticipants(totals.len()));
    }
    let mut participants: Vec<ParticipantRanking> = totals
        .iter()
        .map(|(&pid, &(count, duration))| ParticipantRanking {
            participant_id: pid.to_string(),
            segment_count: count,
            total_duration_s: duration,
            count_rank: 0,
            duration_rank: 0,
        })
        .collect();

    let mut by_count: Vec<usize> = (0..participants.len()).collect();
    by_count.sort_by(|&a, &b| {
        participants[b]
            .segment_count
            .cmp(&participants[a].segment_count)
            .then_with(|| participants[a].participant_id.cmp(&participants[b].participant_id))
    });
    for (rank, &i) in by_count.iter().enumerate() {
        participants[i].count_rank = rank as u32 + 1;
    }
    let mut by_duration: Vec<usize> = (0..participants.len()).collect();
    by_duration.sort_by(|&a, &b| {
        participants[b]
            .total_duration_s
            .partial_cmp(&participants[a].total_duration_s)
            .expect("durations are finite")
            .then_with(|| participants[a].participant_id.cmp(&participants[b].participant_id))
    });
    for (rank, &i) in by_duration.iter().enumerate() {
        participants[i].duration_rank = rank as u32 + 1;
    }

    let mut inversions = Vec::new();
    for i in 0..participants.len() {
        for j in i + 1..participants.len() {
            let (a, b) = (&participants[i], &participants[j]);
            let count_says_a = a.count_rank < b.count_rank;
            let duration_says_a = a.duration_rank < b.duration_rank;
            if count_says_a != duration_says_a {
                let (by_count, by_duration) = if count_says_a {
                    (a.participant_id.clone(), b.participant_id.clone())
                } else {
                    (b.participant_id.clone(), a.participant_id.clone())
                };
                inversions.push(RankingInversion {
                    higher_by_count: by_count,
                    higher_by_duration: by_duration,
                });
            }
        }
    }
    Ok(RankingReport { participants, inversions })
}
