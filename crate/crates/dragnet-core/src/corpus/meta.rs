//! Chunk metadata: years mentioned, known place names, salient entities.
//!
//! Extraction is heuristic on purpose. The output feeds coarse overlap checks
//! during candidate filtering, not a knowledge base, so the rules favor
//! precision and determinism over linguistic coverage.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Per-chunk structured metadata. Each dimension is a sorted set so that
/// serialized corpora are byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMeta {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub years: BTreeSet<i32>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub locations: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub entities: BTreeSet<String>,
}

impl ChunkMeta {
    pub fn is_empty(&self) -> bool {
        self.years.is_empty() && self.locations.is_empty() && self.entities.is_empty()
    }

    /// True when any dimension has a common element.
    pub fn intersects(&self, other: &Self) -> bool {
        self.years.intersection(&other.years).next().is_some()
            || self.locations.intersection(&other.locations).next().is_some()
            || self.entities.intersection(&other.entities).next().is_some()
    }

    /// Total number of shared elements across all dimensions.
    pub fn overlap_count(&self, other: &Self) -> usize {
        self.years.intersection(&other.years).count()
            + self.locations.intersection(&other.locations).count()
            + self.entities.intersection(&other.entities).count()
    }
}

/// Known place names, normalized to lowercase single-spaced phrases.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    names: BTreeSet<String>,
    max_words: usize,
}

impl Gazetteer {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        let mut max_words = 0;
        for name in names {
            let norm = normalize_phrase(name.as_ref());
            if norm.is_empty() {
                continue;
            }
            max_words = max_words.max(norm.split(' ').count());
            set.insert(norm);
        }
        Self { names: set, max_words }
    }

    /// The compiled-in city and region list.
    pub fn builtin() -> Self {
        let raw = include_str!("../../assets/locations.txt");
        Self::new(
            raw.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.names.contains(&normalize_phrase(phrase))
    }
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

const YEAR_PAT: &str = r"(1[5-9][0-9]{2}|2[01][0-9]{2})";

fn year_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"\b{YEAR_PAT}\b")).unwrap())
}

fn year_range_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let dashes = "-\u{2013}\u{2014}";
        Regex::new(&format!(r"\b{YEAR_PAT}\s*[{dashes}]\s*{YEAR_PAT}\b")).unwrap()
    })
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}][\p{L}\p{N}'\u{2019}-]*").unwrap())
}

fn sentence_start_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[.!?]['\u{2019}\u{201d})\]]*\s+|\n+").unwrap())
}

fn quoted_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new("\"([^\"\n]{1,100})\"|\u{201c}([^\u{201d}\n]{1,100})\u{201d}").unwrap())
}

/// Ranges wider than this keep only their endpoints.
const RANGE_EXPANSION_CAP: i32 = 30;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "as", "at", "but", "by", "for", "from", "he", "her", "his", "i", "in",
    "is", "it", "its", "of", "on", "or", "she", "that", "the", "these", "they", "this",
    "those", "to", "was", "we", "were", "with", "you",
];

fn is_stopword(w: &str) -> bool {
    STOPWORDS.binary_search(&w).is_ok()
}

/// Extracts all three metadata dimensions from a chunk of text.
///
/// Year ranges like "2019-2023" always contribute both endpoints; when
/// `expand_year_ranges` is set and the range spans at most
/// `RANGE_EXPANSION_CAP` years, the interior years are added too. Locations
/// come from the gazetteer via longest-phrase matching. Entities are
/// capitalized runs, non-sentence-initial capitalized words, and short quoted
/// phrases, all lowercased; gazetteer hits and bare years are excluded so the
/// dimensions stay disjoint.
pub fn extract_metadata(text: &str, gaz: &Gazetteer, expand_year_ranges: bool) -> ChunkMeta {
    let mut meta = ChunkMeta::default();

    for caps in year_range_re().captures_iter(text) {
        let lo: i32 = caps[1].parse().unwrap();
        let hi: i32 = caps[2].parse().unwrap();
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        meta.years.insert(lo);
        meta.years.insert(hi);
        if expand_year_ranges && hi - lo <= RANGE_EXPANSION_CAP {
            for y in lo..=hi {
                meta.years.insert(y);
            }
        }
    }
    for caps in year_re().captures_iter(text) {
        meta.years.insert(caps[1].parse().unwrap());
    }

    meta.locations = find_locations(text, gaz);
    meta.entities = find_entities(text, gaz);
    meta
}

fn find_locations(text: &str, gaz: &Gazetteer) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if gaz.is_empty() {
        return out;
    }
    let tokens: Vec<String> = token_re()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect();
    let mut i = 0;
    while i < tokens.len() {
        let mut matched = 0;
        let longest = gaz.max_words.min(tokens.len() - i);
        for len in (1..=longest).rev() {
            let phrase = tokens[i..i + len].join(" ");
            if gaz.names.contains(&phrase) {
                out.insert(phrase);
                matched = len;
                break;
            }
        }
        i += matched.max(1);
    }
    out
}

fn find_entities(text: &str, gaz: &Gazetteer) -> BTreeSet<String> {
    let mut out = BTreeSet::new();

    let mut sentence_starts = BTreeSet::new();
    sentence_starts.insert(0usize);
    for m in sentence_start_re().find_iter(text) {
        sentence_starts.insert(m.end());
    }

    let tokens: Vec<(usize, usize, &str)> = token_re()
        .find_iter(text)
        .map(|m| (m.start(), m.end(), m.as_str()))
        .collect();

    let capitalized =
        |s: &str| s.chars().next().map(char::is_uppercase).unwrap_or(false);
    let all_digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());

    let mut i = 0;
    while i < tokens.len() {
        if !capitalized(tokens[i].2) {
            i += 1;
            continue;
        }
        // extend a run while the next token is also capitalized and only
        // plain spaces separate the two
        let mut j = i + 1;
        while j < tokens.len()
            && capitalized(tokens[j].2)
            && text[tokens[j - 1].1..tokens[j].0].bytes().all(|b| b == b' ')
        {
            j += 1;
        }
        let words: Vec<String> = tokens[i..j].iter().map(|t| t.2.to_lowercase()).collect();
        let keep = if words.len() >= 2 {
            !words.iter().all(|w| is_stopword(w))
        } else {
            !sentence_starts.contains(&tokens[i].0)
                && !is_stopword(&words[0])
                && !all_digits(&words[0])
                && words[0].chars().count() >= 2
        };
        if keep {
            let phrase = words.join(" ");
            if !gaz.names.contains(&phrase) {
                out.insert(phrase);
            }
        }
        i = j;
    }

    for caps in quoted_re().captures_iter(text) {
        let inner = caps.get(1).or_else(|| caps.get(2)).unwrap().as_str();
        let norm = normalize_phrase(inner);
        let words = norm.split(' ').count();
        if !norm.is_empty() && words <= 8 && !gaz.names.contains(&norm) {
            out.insert(norm);
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaz() -> Gazetteer {
        Gazetteer::builtin()
    }

    #[test]
    fn stopword_list_is_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn single_years_extracted() {
        let m = extract_metadata("the festival ran in 2023 and again in 2024.", &gaz(), true);
        assert_eq!(m.years, BTreeSet::from([2023, 2024]));
    }

    #[test]
    fn year_out_of_window_ignored() {
        let m = extract_metadata("code 1234 and 9999 and room 20233", &gaz(), true);
        assert!(m.years.is_empty());
    }

    #[test]
    fn year_range_expands_when_narrow() {
        let m = extract_metadata("operations from 2019-2022 were steady", &gaz(), true);
        assert_eq!(m.years, BTreeSet::from([2019, 2020, 2021, 2022]));
    }

    #[test]
    fn year_range_endpoints_only_when_wide() {
        let m = extract_metadata("records span 1900\u{2013}2000 overall", &gaz(), true);
        assert_eq!(m.years, BTreeSet::from([1900, 2000]));
    }

    #[test]
    fn year_range_endpoints_only_when_expansion_off() {
        let m = extract_metadata("operations from 2019-2022 were steady", &gaz(), false);
        assert_eq!(m.years, BTreeSet::from([2019, 2022]));
    }

    #[test]
    fn gazetteer_longest_match_wins() {
        let m = extract_metadata("flights from new york to kunming sold out", &gaz(), true);
        assert_eq!(
            m.locations,
            BTreeSet::from(["new york".to_string(), "kunming".to_string()])
        );
        assert!(!m.locations.contains("york"));
    }

    #[test]
    fn capitalized_run_becomes_entity() {
        let m = extract_metadata("they toured the Horticultural Exposition Hall today", &gaz(), true);
        assert!(m.entities.contains("horticultural exposition hall"));
    }

    #[test]
    fn sentence_initial_single_word_is_not_entity() {
        let m = extract_metadata("Rainfall was light. Nothing changed.", &gaz(), true);
        assert!(m.entities.is_empty());
    }

    #[test]
    fn mid_sentence_single_capitalized_word_is_entity() {
        let m = extract_metadata("the committee praised Wei for the design", &gaz(), true);
        assert!(m.entities.contains("wei"));
    }

    #[test]
    fn quoted_phrase_is_entity() {
        let m = extract_metadata("the theme was \"green rivers of tomorrow\" this year", &gaz(), true);
        assert!(m.entities.contains("green rivers of tomorrow"));
    }

    #[test]
    fn gazetteer_hit_not_duplicated_into_entities() {
        let m = extract_metadata("the delegation visited Kunming in spring", &gaz(), true);
        assert!(m.locations.contains("kunming"));
        assert!(!m.entities.contains("kunming"));
    }

    #[test]
    fn intersects_and_overlap_count() {
        let a = extract_metadata("Kunming hosted the expo in 2023", &gaz(), true);
        let b = extract_metadata("in 2023 the venue opened", &gaz(), true);
        let c = extract_metadata("nothing relevant here", &gaz(), true);
        assert!(a.intersects(&b));
        assert_eq!(a.overlap_count(&b), 1);
        assert!(!a.intersects(&c));
        assert!(c.is_empty());
    }

    #[test]
    fn stopword_only_runs_dropped() {
        let m = extract_metadata("we said The And This should vanish", &gaz(), true);
        assert!(!m.entities.iter().any(|e| e == "the and this"));
    }
}
