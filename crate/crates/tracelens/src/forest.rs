//! From-scratch random-forest binary classifier over binary feature
//! vectors: training, prediction, stratified cross-validation, F-score
//! evaluation, and decision-threshold tuning.
//!
//! Binary features make each feature a single candidate split
//! (present/absent), so the split search is exact. Determinism is a hard
//! contract: `(examples, config)` fully determine the serialized model
//! bytes, independent of worker count. Tree `t` draws its bootstrap and
//! feature subsamples from a ChaCha8 stream seeded with
//! [`derive_stream_seed`]`(config.seed, t)`; the bootstrap is the first
//! `n` draws of `random_range(0..n)` from that stream, and each split then
//! draws its candidate features by partial Fisher-Yates from the same
//! stream in depth-first node order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::textfeat::FeatureVector;

/// How class imbalance is handled in the split criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    /// Weight class c by n / (2 * n_c), computed on the training set.
    /// With equal class frequencies both weights are exactly 1.
    #[default]
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(F))`.
    pub features_per_split: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub class_weighting: ClassWeighting,
    /// Decision threshold on the positive-vote score; `score >= threshold`
    /// predicts positive.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            features_per_split: None,
            min_leaf: 1,
            max_depth: None,
            class_weighting: ClassWeighting::InverseFrequency,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn validate(&self, feature_count: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::BadConfig("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::BadConfig("min_leaf must be positive".into()));
        }
        if let Some(d) = self.max_depth {
            if d == 0 {
                return Err(ForestError::BadConfig("max_depth must be positive".into()));
            }
        }
        if let Some(m) = self.features_per_split {
            if m == 0 || m > feature_count {
                return Err(ForestError::BadConfig(format!(
                    "features_per_split {m} outside 1..={feature_count}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ForestError::BadConfig(format!(
                "threshold {} outside [0,1]",
                self.threshold
            )));
        }
        Ok(())
    }

    fn resolved_mtry(&self, feature_count: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (feature_count as f64).sqrt().ceil() as usize)
            .min(feature_count)
    }
}

/// One decision-tree node. The `lo` child handles feature-absent records,
/// `hi` feature-present. Leaves carry the positive-vote fraction as counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Split { feature: u32, lo: u32, hi: u32 },
    Leaf { pos: u32, total: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Positive-vote fraction of the leaf this vector falls into.
    pub fn leaf_fraction(&self, v: &FeatureVector) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Split { feature, lo, hi } => {
                    at = if v.bits[feature as usize] { hi as usize } else { lo as usize };
                }
                Node::Leaf { pos, total } => return pos as f64 / total as f64,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub feature_count: usize,
}

/// Confusion counts and the derived precision/recall/F1 (positive class).
/// Ratios with a zero denominator are defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalMetrics {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.true_positives + self.true_negatives) as f64 / self.total() as f64
        }
    }
}

/// Cross-validation outcome: per-fold metrics, their mean F1, and the
/// pooled confusion counts (both views, since they can differ on skewed
/// data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<EvalMetrics>,
    pub mean_f1: f64,
    pub pooled: EvalMetrics,
}

/// Out-of-bag evaluation attached to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobReport {
    pub metrics: EvalMetrics,
    /// Examples that were out of bag for at least one tree.
    pub covered: usize,
    pub total: usize,
}

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("need at least 2 training examples, got {0}")]
    TooFewExamples(usize),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("inconsistent feature-vector lengths: expected {expected}, found {found}")]
    InconsistentLength { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("feature-vector length {found} does not match model feature count {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("predictions and truth have different lengths ({predictions} vs {truth})")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("k must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("a class has only {count} examples, fewer than k={k}")]
    ClassTooSmall { count: usize, k: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic header)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// SplitMix64 finalizer; the documented mixing function behind every
/// derived random stream in this crate.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for logical stream `stream` under master seed `seed`:
/// `splitmix64(seed XOR stream * 0x9E3779B97F4A7C15)`. Tree `t` uses
/// stream `t`; other consumers use fixed high tags.
pub fn derive_stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const CV_SHUFFLE_STREAM: u64 = 0xC56F_0D5E_11AA_77EE;

fn check_examples(examples: &[(FeatureVector, bool)]) -> Result<usize, ForestError> {
    if examples.len() < 2 {
        return Err(ForestError::TooFewExamples(examples.len()));
    }
    let feature_count = examples[0].0.len();
    if feature_count == 0 {
        return Err(ForestError::BadConfig("feature vectors are empty".into()));
    }
    for (v, _) in examples {
        if v.len() != feature_count {
            return Err(ForestError::InconsistentLength {
                expected: feature_count,
                found: v.len(),
            });
        }
    }
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(ForestError::SingleClass);
    }
    Ok(feature_count)
}

fn class_weights(examples: &[(FeatureVector, bool)], weighting: ClassWeighting) -> (f64, f64) {
    match weighting {
        ClassWeighting::None => (1.0, 1.0),
        ClassWeighting::InverseFrequency => {
            let n = examples.len() as f64;
            let pos = examples.iter().filter(|(_, y)| *y).count() as f64;
            let neg = n - pos;
            (n / (2.0 * neg), n / (2.0 * pos))
        }
    }
}

/// Trains a forest. Trees are built in parallel; output is independent of
/// worker count.
pub fn train(
    examples: &[(FeatureVector, bool)],
    config: &ForestConfig,
) -> Result<ForestModel, ForestError> {
    Ok(train_with_oob(examples, config)?.0)
}

/// Trains a forest and evaluates it on the out-of-bag examples.
pub fn train_with_oob(
    examples: &[(FeatureVector, bool)],
    config: &ForestConfig,
) -> Result<(ForestModel, OobReport), ForestError> {
    let feature_count = check_examples(examples)?;
    config.validate(feature_count)?;
    let mtry = config.resolved_mtry(feature_count);
    let weights = class_weights(examples, config.class_weighting);

    let built: Vec<(Tree, Vec<bool>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            build_tree(
                derive_stream_seed(config.seed, t as u64),
                examples,
                feature_count,
                mtry,
                config.min_leaf,
                config.max_depth,
                weights,
            )
        })
        .collect();

    let mut trees = Vec::with_capacity(built.len());
    let mut inbag = Vec::with_capacity(built.len());
    for (tree, bag) in built {
        trees.push(tree);
        inbag.push(bag);
    }

    // out-of-bag score per example, over trees that did not sample it
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    let mut covered = 0usize;
    for (i, (v, truth)) in examples.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0u32;
        for (tree, bag) in trees.iter().zip(&inbag) {
            if !bag[i] {
                sum += tree.leaf_fraction(v);
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        covered += 1;
        let predicted = sum / count as f64 >= config.threshold;
        match (predicted, *truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }

    let model = ForestModel { trees, config: config.clone(), feature_count };
    let report = OobReport {
        metrics: EvalMetrics::from_counts(tp, fp, fn_, tn),
        covered,
        total: examples.len(),
    };
    Ok((model, report))
}

fn build_tree(
    seed: u64,
    examples: &[(FeatureVector, bool)],
    feature_count: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    weights: (f64, f64),
) -> (Tree, Vec<bool>) {
    let n = examples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inbag = vec![false; n];
    let mut samples: Vec<u32> = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..n);
        inbag[i] = true;
        samples.push(i as u32);
    }
    let mut builder = TreeBuilder {
        examples,
        feature_count,
        mtry,
        min_leaf,
        max_depth,
        weights,
        rng,
        nodes: Vec::new(),
        scratch: (0..feature_count as u32).collect(),
    };
    builder.grow(samples, 0);
    (Tree { nodes: builder.nodes }, inbag)
}

struct TreeBuilder<'a> {
    examples: &'a [(FeatureVector, bool)],
    feature_count: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    /// (negative-class weight, positive-class weight)
    weights: (f64, f64),
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch: Vec<u32>,
}

fn weighted_gini(w_pos: f64, w_neg: f64) -> f64 {
    let total = w_pos + w_neg;
    if total <= 0.0 {
        0.0
    } else {
        1.0 - (w_pos * w_pos + w_neg * w_neg) / (total * total)
    }
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: Vec<u32>, depth: usize) -> u32 {
        let pos = samples.iter().filter(|&&i| self.examples[i as usize].1).count();
        let neg = samples.len() - pos;

        let depth_stop = self.max_depth.is_some_and(|d| depth >= d);
        if pos == 0 || neg == 0 || depth_stop || samples.len() < 2 * self.min_leaf {
            return self.push_leaf(pos, samples.len());
        }

        let candidates = self.sample_features();
        let Some(best_feature) = self.best_split(&samples, &candidates, pos, neg) else {
            return self.push_leaf(pos, samples.len());
        };

        let (hi_samples, lo_samples): (Vec<u32>, Vec<u32>) = samples
            .into_iter()
            .partition(|&i| self.examples[i as usize].0.bits[best_feature as usize]);

        let at = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { pos: 0, total: 1 }); // placeholder
        let lo = self.grow(lo_samples, depth + 1);
        let hi = self.grow(hi_samples, depth + 1);
        self.nodes[at as usize] = Node::Split { feature: best_feature, lo, hi };
        at
    }

    fn push_leaf(&mut self, pos: usize, total: usize) -> u32 {
        let at = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { pos: pos as u32, total: total as u32 });
        at
    }

    /// `mtry` distinct features by partial Fisher-Yates, returned in
    /// ascending index order so equal-gain ties resolve to the lowest index.
    fn sample_features(&mut self) -> Vec<u32> {
        for i in 0..self.mtry {
            let j = self.rng.random_range(i..self.feature_count);
            self.scratch.swap(i, j);
        }
        let mut picked = self.scratch[..self.mtry].to_vec();
        picked.sort_unstable();
        picked
    }

    /// Exhaustive weighted-Gini search over the candidate features; returns
    /// the split with the strictly largest positive gain, or `None` if no
    /// candidate separates the node into two children of at least
    /// `min_leaf` samples with positive gain.
    fn best_split(
        &self,
        samples: &[u32],
        candidates: &[u32],
        pos: usize,
        neg: usize,
    ) -> Option<u32> {
        let (w_neg, w_pos) = self.weights;
        let parent_wp = w_pos * pos as f64;
        let parent_wn = w_neg * neg as f64;
        let parent_total = parent_wp + parent_wn;
        let parent_gini = weighted_gini(parent_wp, parent_wn);

        let mut best: Option<(f64, u32)> = None;
        for &f in candidates {
            let mut pos_hi = 0usize;
            let mut neg_hi = 0usize;
            for &i in samples {
                let (v, y) = &self.examples[i as usize];
                if v.bits[f as usize] {
                    if *y {
                        pos_hi += 1;
                    } else {
                        neg_hi += 1;
                    }
                }
            }
            let hi_total = pos_hi + neg_hi;
            let lo_total = samples.len() - hi_total;
            if hi_total < self.min_leaf || lo_total < self.min_leaf {
                continue;
            }
            let hi_wp = w_pos * pos_hi as f64;
            let hi_wn = w_neg * neg_hi as f64;
            let lo_wp = parent_wp - hi_wp;
            let lo_wn = parent_wn - hi_wn;
            let gain = parent_gini
                - ((hi_wp + hi_wn) / parent_total) * weighted_gini(hi_wp, hi_wn)
                - ((lo_wp + lo_wn) / parent_total) * weighted_gini(lo_wp, lo_wn);
            if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, f));
            }
        }
        best.map(|(_, f)| f)
    }
}

/// Mean positive-vote score across trees and the thresholded label
/// (`score >= threshold` predicts positive).
pub fn predict(model: &ForestModel, v: &FeatureVector) -> Result<(bool, f64), ForestError> {
    let score = predict_score(model, v)?;
    Ok((score >= model.config.threshold, score))
}

/// The raw score: exact mean of per-tree leaf positive fractions.
pub fn predict_score(model: &ForestModel, v: &FeatureVector) -> Result<f64, ForestError> {
    if v.len() != model.feature_count {
        return Err(ForestError::DimensionMismatch {
            expected: model.feature_count,
            found: v.len(),
        });
    }
    let sum: f64 = model.trees.iter().map(|t| t.leaf_fraction(v)).sum();
    Ok(sum / model.trees.len() as f64)
}

/// Confusion counts and precision/recall/F1 of predictions against truth.
pub fn evaluate(predictions: &[bool], truth: &[bool]) -> Result<EvalMetrics, ForestError> {
    if predictions.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    if predictions.len() != truth.len() {
        return Err(ForestError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalMetrics::from_counts(tp, fp, fn_, tn))
}

/// Stratified k-fold cross-validation with a deterministic shuffle derived
/// from the config seed. Folds partition the data; each fold's model is
/// trained on the remainder and evaluated on the fold.
pub fn cross_validate(
    examples: &[(FeatureVector, bool)],
    config: &ForestConfig,
    k: usize,
) -> Result<CvReport, ForestError> {
    if k < 2 {
        return Err(ForestError::InvalidFolds(k));
    }
    check_examples(examples)?;
    let mut pos_idx: Vec<usize> = Vec::new();
    let mut neg_idx: Vec<usize> = Vec::new();
    for (i, (_, y)) in examples.iter().enumerate() {
        if *y {
            pos_idx.push(i);
        } else {
            neg_idx.push(i);
        }
    }
    for class in [&pos_idx, &neg_idx] {
        if class.len() < k {
            return Err(ForestError::ClassTooSmall { count: class.len(), k });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(config.seed, CV_SHUFFLE_STREAM));
    shuffle(&mut pos_idx, &mut rng);
    shuffle(&mut neg_idx, &mut rng);

    let mut fold_of = vec![0usize; examples.len()];
    for (i, &idx) in pos_idx.iter().enumerate() {
        fold_of[idx] = i % k;
    }
    for (i, &idx) in neg_idx.iter().enumerate() {
        fold_of[idx] = i % k;
    }

    let mut folds = Vec::with_capacity(k);
    let mut pooled = (0u64, 0u64, 0u64, 0u64);
    for fold in 0..k {
        let mut train_set = Vec::new();
        let mut test_set = Vec::new();
        for (i, ex) in examples.iter().enumerate() {
            if fold_of[i] == fold {
                test_set.push(ex);
            } else {
                train_set.push(ex.clone());
            }
        }
        let model = train(&train_set, config)?;
        let mut predictions = Vec::with_capacity(test_set.len());
        let mut truth = Vec::with_capacity(test_set.len());
        for (v, y) in test_set {
            predictions.push(predict(&model, v)?.0);
            truth.push(*y);
        }
        let metrics = evaluate(&predictions, &truth)?;
        pooled.0 += metrics.true_positives;
        pooled.1 += metrics.false_positives;
        pooled.2 += metrics.false_negatives;
        pooled.3 += metrics.true_negatives;
        folds.push(metrics);
    }
    let mean_f1 = folds.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(CvReport {
        folds,
        mean_f1,
        pooled: EvalMetrics::from_counts(pooled.0, pooled.1, pooled.2, pooled.3),
    })
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// The threshold maximizing F1 on the validation set, chosen among the
/// distinct validation scores plus 0.5; ties break toward the larger
/// threshold.
pub fn tune_threshold(
    model: &ForestModel,
    validation: &[(FeatureVector, bool)],
) -> Result<f64, ForestError> {
    if validation.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    let positives = validation.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == validation.len() {
        return Err(ForestError::SingleClass);
    }
    let truth: Vec<bool> = validation.iter().map(|(_, y)| *y).collect();
    let scores: Vec<f64> = validation
        .iter()
        .map(|(v, _)| predict_score(model, v))
        .collect::<Result<_, _>>()?;

    let mut candidates: Vec<f64> = scores.clone();
    candidates.push(0.5);
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    candidates.dedup();

    let mut best = (f64::NEG_INFINITY, 0.5);
    for &threshold in &candidates {
        let predictions: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
        let f1 = evaluate(&predictions, &truth)?.f1;
        if f1 >= best.0 {
            best = (f1, threshold);
        }
    }
    Ok(best.1)
}

const MODEL_MAGIC: &[u8; 4] = b"TLRF";
const MODEL_VERSION: u32 = 1;

impl ForestModel {
    /// Serializes to the versioned binary model format (magic `TLRF`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.config.n_trees as u32).to_le_bytes());
        out.extend_from_slice(
            &(self.config.features_per_split.map_or(0, |m| m as u32)).to_le_bytes(),
        );
        out.extend_from_slice(&(self.config.min_leaf as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.max_depth.map_or(0, |d| d as u32)).to_le_bytes());
        out.push(match self.config.class_weighting {
            ClassWeighting::None => 0,
            ClassWeighting::InverseFrequency => 1,
        });
        out.extend_from_slice(&self.config.threshold.to_le_bytes());
        out.extend_from_slice(&(self.feature_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match *node {
                    Node::Split { feature, lo, hi } => {
                        out.push(0);
                        out.extend_from_slice(&feature.to_le_bytes());
                        out.extend_from_slice(&lo.to_le_bytes());
                        out.extend_from_slice(&hi.to_le_bytes());
                    }
                    Node::Leaf { pos, total } => {
                        out.push(1);
                        out.extend_from_slice(&pos.to_le_bytes());
                        out.extend_from_slice(&total.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ForestError> {
        let mut cur = Cursor { bytes, at: 0 };
        let magic = cur.take(4)?;
        if magic != MODEL_MAGIC {
            return Err(ForestError::BadMagic);
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(ForestError::UnsupportedVersion(version));
        }
        let seed = cur.u64()?;
        let n_trees = cur.u32()? as usize;
        let features_per_split = match cur.u32()? {
            0 => None,
            m => Some(m as usize),
        };
        let min_leaf = cur.u32()? as usize;
        let max_depth = match cur.u32()? {
            0 => None,
            d => Some(d as usize),
        };
        let class_weighting = match cur.u8()? {
            0 => ClassWeighting::None,
            1 => ClassWeighting::InverseFrequency,
            other => {
                return Err(ForestError::Corrupt(format!("unknown class weighting tag {other}")))
            }
        };
        let threshold = cur.f64()?;
        let feature_count = cur.u32()? as usize;
        let tree_count = cur.u32()? as usize;
        let mut trees = Vec::with_capacity(tree_count);
        for _ in 0..tree_count {
            let node_count = cur.u32()? as usize;
            let mut nodes = Vec::with_capacity(node_count);
            for _ in 0..node_count {
                match cur.u8()? {
                    0 => {
                        let feature = cur.u32()?;
                        let lo = cur.u32()?;
                        let hi = cur.u32()?;
                        if feature as usize >= feature_count {
                            return Err(ForestError::Corrupt(format!(
                                "feature index {feature} out of range"
                            )));
                        }
                        if lo as usize >= node_count || hi as usize >= node_count {
                            return Err(ForestError::Corrupt("child index out of range".into()));
                        }
                        nodes.push(Node::Split { feature, lo, hi });
                    }
                    1 => {
                        let pos = cur.u32()?;
                        let total = cur.u32()?;
                        if total == 0 || pos > total {
                            return Err(ForestError::Corrupt("invalid leaf counts".into()));
                        }
                        nodes.push(Node::Leaf { pos, total });
                    }
                    other => {
                        return Err(ForestError::Corrupt(format!("unknown node tag {other}")))
                    }
                }
            }
            if nodes.is_empty() {
                return Err(ForestError::Corrupt("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        if cur.at != bytes.len() {
            return Err(ForestError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - cur.at
            )));
        }
        Ok(ForestModel {
            trees,
            config: ForestConfig {
                n_trees,
                features_per_split,
                min_leaf,
                max_depth,
                class_weighting,
                threshold,
                seed,
            },
            feature_count,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ForestError> {
        if self.at + n > self.bytes.len() {
            return Err(ForestError::Corrupt("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ForestError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ForestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ForestError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ForestError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    ForestModel::from_bytes(&bytes)
}
