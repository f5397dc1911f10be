//! OCR text normalization, optional spell correction, and word-stem
//! presence features.
//!
//! Stems are literal token patterns. In the stem-list file format a period
//! encodes a space, so `black.lives.matter` is the three-token phrase
//! "black lives matter", while leading/trailing periods anchor the pattern
//! to a token boundary: `.CIA.` only matches "cia" as a whole token, and
//! `maga.` requires a boundary on the right (so "magazine" does not match
//! but "maga hats" does). A stem with no anchors matches as a plain
//! substring anywhere, which is what makes the anchored variants meaningful.
//!
//! Matching runs over [`normalize`]d text, which is lowercase, stripped to
//! `[a-z0-9]` tokens, and padded with a single leading and trailing space so
//! that token boundaries are always literal spaces.

use aho_corasick::AhoCorasick;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::model::ScreenshotRecord;

/// Lowercases, replaces every character outside `[a-z0-9]` with a space,
/// collapses space runs, and pads with exactly one leading and one trailing
/// space. Empty or token-free input yields a single space.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len() + 2);
    out.push(' ');
    let mut prev_space = true;
    for c in lowered.chars() {
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            out.push(c);
            prev_space = false;
        } else if !prev_space {
            out.push(' ');
            prev_space = true;
        }
    }
    if !prev_space {
        out.push(' ');
    }
    out
}

/// Word list for the distance-1 spell corrector.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: BTreeSet<String>,
    by_len: BTreeMap<usize, Vec<(String, Vec<char>)>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("empty word in lexicon")]
    EmptyWord,
}

impl Lexicon {
    /// Builds a lexicon; words are lowercased, duplicates collapse.
    pub fn new(words: impl IntoIterator<Item = String>) -> Result<Self, LexiconError> {
        let mut set = BTreeSet::new();
        for w in words {
            if w.is_empty() {
                return Err(LexiconError::EmptyWord);
            }
            set.insert(w.to_lowercase());
        }
        let mut by_len: BTreeMap<usize, Vec<(String, Vec<char>)>> = BTreeMap::new();
        for w in &set {
            let chars: Vec<char> = w.chars().collect();
            by_len.entry(chars.len()).or_default().push((w.clone(), chars));
        }
        Ok(Lexicon { words: set, by_len })
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    /// The unique lexicon word at Levenshtein distance exactly 1, if any.
    /// Two or more candidates is a tie and yields `None`.
    fn unique_distance1_neighbor(&self, token: &str) -> Option<&str> {
        let tchars: Vec<char> = token.chars().collect();
        let n = tchars.len();
        let mut found: Option<&str> = None;
        let mut lens: Vec<usize> = vec![n, n + 1];
        if n > 1 {
            lens.push(n - 1);
        }
        lens.sort_unstable();
        for len in lens {
            if let Some(words) = self.by_len.get(&len) {
                for (w, wchars) in words {
                    if is_distance_one(&tchars, wchars) {
                        if found.is_some() {
                            return None;
                        }
                        found = Some(w.as_str());
                    }
                }
            }
        }
        found
    }
}

fn is_distance_one(a: &[char], b: &[char]) -> bool {
    if a.len() == b.len() {
        a.iter().zip(b).filter(|(x, y)| x != y).count() == 1
    } else {
        let (short, long) = if a.len() < b.len() { (a, b) } else { (b, a) };
        if long.len() - short.len() != 1 {
            return false;
        }
        let mut i = 0;
        let mut skipped = false;
        for j in 0..long.len() {
            if i < short.len() && short[i] == long[j] {
                i += 1;
            } else if skipped {
                return false;
            } else {
                skipped = true;
            }
        }
        true
    }
}

/// Replaces each token that is not in the lexicon with its unique lexicon
/// neighbor at Levenshtein distance exactly 1; ambiguous or unmatched tokens
/// pass through unchanged. Preserves the normalized padding convention.
pub fn spell_correct(normalized: &str, lexicon: &Lexicon) -> String {
    if lexicon.is_empty() {
        return normalized.to_string();
    }
    let tokens: Vec<&str> = normalized.split_whitespace().collect();
    if tokens.is_empty() {
        return " ".to_string();
    }
    let corrected: Vec<&str> = tokens
        .iter()
        .map(|t| {
            if lexicon.contains(t) {
                *t
            } else {
                lexicon.unique_distance1_neighbor(t).unwrap_or(t)
            }
        })
        .collect();
    format!(" {} ", corrected.join(" "))
}

/// One stem pattern: a token sequence plus optional boundary anchors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stem {
    tokens: Vec<String>,
    left_anchor: bool,
    right_anchor: bool,
    /// Pattern as searched in normalized text: tokens joined with single
    /// spaces, with a space prepended/appended per anchor.
    rendered: String,
    /// Original (lowercased) line in the dot-encoded file format.
    source: String,
}

impl Stem {
    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn left_anchor(&self) -> bool {
        self.left_anchor
    }

    pub fn right_anchor(&self) -> bool {
        self.right_anchor
    }

    /// Pattern text with anchors dropped, as it would be inserted into a
    /// document (used by the synthetic generator).
    pub fn phrase(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Ordered stem list; order defines feature-vector positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemList {
    stems: Vec<Stem>,
}

#[derive(Debug, Error, PartialEq)]
pub enum StemParseError {
    #[error("line {line}: empty stem")]
    EmptyLine { line: usize },
    #[error("line {line}: duplicate stem {stem:?}")]
    Duplicate { line: usize, stem: String },
    #[error("line {line}: invalid character {ch:?} in stem")]
    InvalidCharacter { line: usize, ch: char },
    #[error("line {line}: empty token (consecutive periods) in stem")]
    EmptyToken { line: usize },
    #[error("stem list is empty")]
    NoStems,
}

impl StemList {
    /// Parses dot-encoded stem lines (one per line, order preserved).
    pub fn parse_lines<'a>(
        lines: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, StemParseError> {
        let mut stems = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, raw_line) in lines.into_iter().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                return Err(StemParseError::EmptyLine { line: line_no });
            }
            let lowered = line.to_lowercase();
            for ch in lowered.chars() {
                if !(ch.is_ascii_lowercase() || ch.is_ascii_digit() || ch == '.') {
                    return Err(StemParseError::InvalidCharacter { line: line_no, ch });
                }
            }
            let left_anchor = lowered.starts_with('.');
            let right_anchor = lowered.ends_with('.');
            let inner = lowered.trim_matches('.');
            if inner.is_empty() {
                return Err(StemParseError::EmptyLine { line: line_no });
            }
            let tokens: Vec<String> = inner.split('.').map(String::from).collect();
            if tokens.iter().any(String::is_empty) {
                return Err(StemParseError::EmptyToken { line: line_no });
            }
            let mut rendered = String::new();
            if left_anchor {
                rendered.push(' ');
            }
            rendered.push_str(&tokens.join(" "));
            if right_anchor {
                rendered.push(' ');
            }
            if !seen.insert(rendered.clone()) {
                return Err(StemParseError::Duplicate { line: line_no, stem: lowered });
            }
            stems.push(Stem { tokens, left_anchor, right_anchor, rendered, source: lowered });
        }
        if stems.is_empty() {
            return Err(StemParseError::NoStems);
        }
        Ok(StemList { stems })
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Stem> {
        self.stems.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Stem> {
        self.stems.get(i)
    }
}

/// The full political stem list shipped with the crate
/// (`data/stems.txt`, dot-encoded).
pub fn political_stems() -> StemList {
    StemList::parse_lines(include_str!("../data/stems.txt").lines())
        .expect("shipped stem list parses")
}

/// Binary stem-presence vector; bit i corresponds to stem i.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bits: Vec<bool>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }
}

/// Single-pass multi-pattern matcher over all stems simultaneously.
pub struct StemMatcher {
    automaton: AhoCorasick,
    stem_count: usize,
}

impl StemMatcher {
    pub fn new(stems: &StemList) -> Self {
        let automaton = AhoCorasick::new(stems.iter().map(Stem::rendered))
            .expect("stem patterns are nonempty and within automaton limits");
        StemMatcher { automaton, stem_count: stems.len() }
    }

    /// Presence bits for every stem in one pass over the document.
    pub fn match_bits(&self, normalized: &str) -> FeatureVector {
        let mut bits = vec![false; self.stem_count];
        let mut remaining = self.stem_count;
        for m in self.automaton.find_overlapping_iter(normalized) {
            let i = m.pattern().as_usize();
            if !bits[i] {
                bits[i] = true;
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
        }
        FeatureVector { bits }
    }
}

/// One-shot stem matching; builds the automaton per call. Use
/// [`StemMatcher`] (or [`Featurizer`]) when processing many documents.
pub fn match_stems(normalized: &str, stems: &StemList) -> FeatureVector {
    StemMatcher::new(stems).match_bits(normalized)
}

/// Reusable normalize → (spell correct) → match pipeline.
pub struct Featurizer {
    matcher: StemMatcher,
    lexicon: Option<Lexicon>,
}

impl Featurizer {
    pub fn new(stems: &StemList, lexicon: Option<Lexicon>) -> Self {
        Featurizer { matcher: StemMatcher::new(stems), lexicon }
    }

    pub fn vector_for_text(&self, text: &str) -> FeatureVector {
        let mut normalized = normalize(text);
        if let Some(lex) = &self.lexicon {
            normalized = spell_correct(&normalized, lex);
        }
        self.matcher.match_bits(&normalized)
    }
}

/// One feature vector per record, in input order. The i-th vector depends
/// only on the i-th record's text.
pub fn featurize(
    records: &[ScreenshotRecord],
    stems: &StemList,
    lexicon: Option<&Lexicon>,
) -> Vec<FeatureVector> {
    let featurizer = Featurizer::new(stems, lexicon.cloned());
    records
        .par_iter()
        .map(|r| featurizer.vector_for_text(&r.text))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stems_of(lines: &[&str]) -> StemList {
        StemList::parse_lines(lines.iter().copied()).unwrap()
    }

    /// Brute-force oracle: tries every start offset for every stem.
    fn oracle_bits(normalized: &str, stems: &StemList) -> Vec<bool> {
        let hay: Vec<char> = normalized.chars().collect();
        stems
            .iter()
            .map(|s| {
                let pat: Vec<char> = s.rendered().chars().collect();
                if pat.len() > hay.len() {
                    return false;
                }
                (0..=hay.len() - pat.len()).any(|start| hay[start..start + pat.len()] == pat[..])
            })
            .collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Support Black Lives Matter!"), " support black lives matter ");
        assert_eq!(normalize("O’Rourke2020"), " o rourke2020 ");
        assert_eq!(normalize(""), " ");
        assert_eq!(normalize("   \t\n "), " ");
        assert_eq!(normalize("a"), " a ");
    }

    #[test]
    fn normalize_is_fixpoint_on_outputs() {
        for s in ["", "Hello, World!", "a  b   c", "ALL CAPS 42", "émigré"] {
            let once = normalize(s);
            assert_eq!(normalize(&once), once, "input {s:?}");
        }
    }

    #[test]
    fn spell_correct_examples() {
        let lex = Lexicon::new(["president".to_string()]).unwrap();
        assert_eq!(spell_correct(" presidant ", &lex), " president ");

        let lex2 =
            Lexicon::new(["president".to_string(), "presidants".to_string()]).unwrap();
        assert_eq!(spell_correct(" presidant ", &lex2), " presidant ");

        let empty = Lexicon::new(std::iter::empty()).unwrap();
        assert_eq!(spell_correct(" presidant xyz ", &empty), " presidant xyz ");
    }

    #[test]
    fn spell_correct_leaves_lexicon_words_alone() {
        let lex = Lexicon::new(["cat".to_string(), "cot".to_string()]).unwrap();
        // "cat" is in the lexicon: untouched even though "cot" is at distance 1
        assert_eq!(spell_correct(" cat ", &lex), " cat ");
        // "cut" has two distance-1 neighbors: ambiguous, unchanged
        assert_eq!(spell_correct(" cut ", &lex), " cut ");
        // "catt" has exactly one (deletion)
        assert_eq!(spell_correct(" catt ", &lex), " cat ");
    }

    #[test]
    fn lexicon_rejects_empty_words() {
        assert_eq!(
            Lexicon::new(["".to_string()]).unwrap_err(),
            LexiconError::EmptyWord
        );
    }

    #[test]
    fn stem_parse_examples() {
        let stems = stems_of(&["black.lives.matter", ".CIA.", "maga."]);
        assert_eq!(stems.get(0).unwrap().rendered(), "black lives matter");
        assert!(!stems.get(0).unwrap().left_anchor());
        assert_eq!(stems.get(1).unwrap().rendered(), " cia ");
        assert!(stems.get(1).unwrap().left_anchor() && stems.get(1).unwrap().right_anchor());
        assert_eq!(stems.get(2).unwrap().rendered(), "maga ");
        assert!(!stems.get(2).unwrap().left_anchor() && stems.get(2).unwrap().right_anchor());
    }

    #[test]
    fn stem_parse_errors() {
        assert_eq!(
            StemList::parse_lines(["a", ""]).unwrap_err(),
            StemParseError::EmptyLine { line: 2 }
        );
        assert_eq!(
            StemList::parse_lines(["maga.", ".CIA.", ".cia."]).unwrap_err(),
            StemParseError::Duplicate { line: 3, stem: ".cia.".into() }
        );
        assert_eq!(
            StemList::parse_lines(["a..b"]).unwrap_err(),
            StemParseError::EmptyToken { line: 1 }
        );
        assert_eq!(
            StemList::parse_lines(["héllo"]).unwrap_err(),
            StemParseError::InvalidCharacter { line: 1, ch: 'é' }
        );
        assert_eq!(StemList::parse_lines([]).unwrap_err(), StemParseError::NoStems);
    }

    #[test]
    fn match_stems_multi_token_phrase() {
        let stems = stems_of(&["black.lives.matter"]);
        let v = match_stems(" support black lives matter ", &stems);
        assert!(v.bits[0]);
        let v = match_stems(" black lives do matter ", &stems);
        assert!(!v.bits[0]);
    }

    #[test]
    fn match_stems_anchor_traps() {
        let stems = stems_of(&[".CIA.", "maga."]);
        // "cia" inside "musicians" fails both anchors
        let v = match_stems(&normalize("musicians unite"), &stems);
        assert!(!v.bits[0]);
        let v = match_stems(&normalize("the CIA said"), &stems);
        assert!(v.bits[0]);
        // "maga" inside "magazine" fails the right anchor
        let v = match_stems(&normalize("my magazine"), &stems);
        assert!(!v.bits[1]);
        let v = match_stems(&normalize("maga hats"), &stems);
        assert!(v.bits[1]);
    }

    #[test]
    fn unanchored_stem_matches_inside_words() {
        let stems = stems_of(&["politic"]);
        assert!(match_stems(&normalize("geopolitical drama"), &stems).bits[0]);
    }

    #[test]
    fn featurize_basics() {
        let stems = stems_of(&["president"]);
        assert!(featurize(&[], &stems, None).is_empty());

        let rec = |text: &str| ScreenshotRecord {
            participant_id: "p1".into(),
            ts_ms: 0,
            app_id: None,
            text: text.into(),
        };
        let vs = featurize(&[rec(""), rec("The President spoke")], &stems, None);
        assert_eq!(vs.len(), 2);
        assert!(!vs[0].any());
        assert!(vs[1].bits[0]);
    }

    #[test]
    fn featurize_applies_lexicon() {
        let stems = stems_of(&["president"]);
        let lex = Lexicon::new(["president".to_string()]).unwrap();
        let rec = ScreenshotRecord {
            participant_id: "p1".into(),
            ts_ms: 0,
            app_id: None,
            text: "the presidant waved".into(),
        };
        assert!(!featurize(std::slice::from_ref(&rec), &stems, None)[0].any());
        assert!(featurize(std::slice::from_ref(&rec), &stems, Some(&lex))[0].any());
    }

    #[test]
    fn matcher_agrees_with_oracle_on_appendix_traps() {
        let stems = stems_of(&[".CIA.", "maga.", "black.lives.matter", "politic", "bet0"]);
        for text in [
            "musicians unite",
            "the cia files",
            "magazine rack",
            "maga hat sale",
            "support black lives matter now",
            "apolitical bet0 crowd",
            "",
            "maga",
        ] {
            let n = normalize(text);
            let got = match_stems(&n, &stems).bits;
            assert_eq!(got, oracle_bits(&n, &stems), "text {text:?}");
        }
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in ".{0,80}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn matcher_equals_bruteforce_oracle(
            words in proptest::collection::vec("[abc01]{1,4}", 0..12),
            stem_specs in proptest::collection::vec(
                (proptest::collection::vec("[abc01]{1,3}", 1..3), any::<bool>(), any::<bool>()),
                1..6
            ),
        ) {
            let mut lines = Vec::new();
            let mut seen = std::collections::BTreeSet::new();
            for (tokens, left, right) in &stem_specs {
                let mut line = String::new();
                if *left { line.push('.'); }
                line.push_str(&tokens.join("."));
                if *right { line.push('.'); }
                if seen.insert(line.clone()) {
                    lines.push(line);
                }
            }
            let stems = StemList::parse_lines(lines.iter().map(String::as_str)).unwrap();
            let text = normalize(&words.join(" "));
            let got = match_stems(&text, &stems).bits;
            prop_assert_eq!(got, oracle_bits(&text, &stems));
        }

        #[test]
        fn anchored_implies_unanchored(
            words in proptest::collection::vec("[abc01]{1,4}", 0..12),
            tokens in proptest::collection::vec("[abc01]{1,3}", 1..3),
        ) {
            let plain = tokens.join(".");
            let anchored = format!(".{plain}.");
            let stems = StemList::parse_lines([anchored.as_str(), plain.as_str()]).unwrap();
            let text = normalize(&words.join(" "));
            let bits = match_stems(&text, &stems).bits;
            // bit 0 anchored, bit 1 unanchored
            prop_assert!(!bits[0] || bits[1]);
        }

        #[test]
        fn true_bits_survive_appending_text(
            head in ".{0,40}",
            tail in ".{0,40}",
            tokens in proptest::collection::vec("[abc01]{1,3}", 1..3),
        ) {
            let stems = StemList::parse_lines([tokens.join(".").as_str()]).unwrap();
            let before = match_stems(&normalize(&head), &stems).bits;
            let merged = match_stems(&normalize(&format!("{head} {tail}")), &stems).bits;
            for (b, m) in before.iter().zip(&merged) {
                prop_assert!(!b || *m);
            }
        }
    }
}
