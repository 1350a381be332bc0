//! Snippet features: readability, word-level attractiveness, url properties
//! and query/snippet matching, plus the attractive-word lexicon they use.
//!
//! Matching features look at the token stream `title ++ abstract`, except
//! `frac_apx_match`, which looks at title and url tokens. Coherence
//! features (`is_exact_match`, `is_order_match`, `is_seg_match`) are checked
//! within single units, where a unit is the title or one abstract segment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{raw_words, tokenize, Query, Snippet, UrlStats};

/// Top-level domain bucket of a url.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopLevelDomain {
    Com,
    Org,
    Net,
    Edu,
    Others,
}

impl TopLevelDomain {
    pub const ALL: [TopLevelDomain; 5] = [
        TopLevelDomain::Com,
        TopLevelDomain::Org,
        TopLevelDomain::Net,
        TopLevelDomain::Edu,
        TopLevelDomain::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopLevelDomain::Com => "com",
            TopLevelDomain::Org => "org",
            TopLevelDomain::Net => "net",
            TopLevelDomain::Edu => "edu",
            TopLevelDomain::Others => "others",
        }
    }
}

impl fmt::Display for TopLevelDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Host part of a url with or without a scheme, lowercased.
pub fn url_host(url: &str) -> Option<String> {
    let rest = url.trim().split_once("://").map_or(url.trim(), |(_, r)| r);
    let authority = rest.split(['/', '?', '#']).next().unwrap_or("");
    let host = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
    let host = host.split(':').next().unwrap_or("").trim_end_matches('.');
    if host.is_empty() || host.split('.').any(str::is_empty) {
        None
    } else {
        Some(host.to_lowercase())
    }
}

pub fn top_level_domain(url: &str) -> TopLevelDomain {
    let Some(host) = url_host(url) else {
        log::warn!("cannot parse a host out of url {url:?}");
        return TopLevelDomain::Others;
    };
    match host.rsplit('.').next() {
        Some("com") => TopLevelDomain::Com,
        Some("org") => TopLevelDomain::Org,
        Some("net") => TopLevelDomain::Net,
        Some("edu") => TopLevelDomain::Edu,
        _ => TopLevelDomain::Others,
    }
}

/// Number of dot-separated labels in the url host; 0 when unparseable.
pub fn num_level_domain(url: &str) -> usize {
    url_host(url).map_or(0, |h| h.split('.').count())
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance allowed for a query token: one per four characters.
pub fn approx_threshold(query_token: &str) -> usize {
    query_token.chars().count() / 4
}

pub fn approx_match(query_token: &str, snippet_token: &str) -> bool {
    let limit = approx_threshold(query_token);
    if limit == 0 {
        return query_token == snippet_token;
    }
    let (lq, ls) = (query_token.chars().count(), snippet_token.chars().count());
    // length gap is a lower bound on the distance
    lq.abs_diff(ls) <= limit && levenshtein(query_token, snippet_token) <= limit
}

/// Distinct query tokens in order of first appearance.
fn distinct_tokens(tokens: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    tokens.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
}

/// Fraction of distinct query tokens with an approximate match among the
/// title and url tokens.
pub fn frac_apx_match(query_tokens: &[String], title_tokens: &[String], url_tokens: &[String]) -> f64 {
    let q = distinct_tokens(query_tokens);
    if q.is_empty() {
        return 0.0;
    }
    let pool: BTreeSet<&str> = title_tokens.iter().chain(url_tokens).map(String::as_str).collect();
    let hits = q.iter().filter(|qt| pool.iter().any(|t| approx_match(qt, t))).count();
    hits as f64 / q.len() as f64
}

/// Fraction of distinct query tokens found among the tokens of the expanded
/// queries; 0 for an empty expansion.
pub fn frac_match_expanded<'a>(query_tokens: &[String], expanded_queries: impl IntoIterator<Item = &'a str>) -> f64 {
    let q = distinct_tokens(query_tokens);
    if q.is_empty() {
        return 0.0;
    }
    let pool: HashSet<String> = expanded_queries.into_iter().flat_map(tokenize).collect();
    if pool.is_empty() {
        return 0.0;
    }
    q.iter().filter(|t| pool.contains(**t)).count() as f64 / q.len() as f64
}

/// Distinct query tokens with no exact match in the title.
pub fn miss_count(query_tokens: &[String], title_tokens: &[String]) -> usize {
    let title: HashSet<&str> = title_tokens.iter().map(String::as_str).collect();
    distinct_tokens(query_tokens)
        .into_iter()
        .filter(|t| !title.contains(t))
        .count()
}

// ---- attractive-word lexicon ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    pub t: f64,
    pub p: f64,
}

/// Words that appear significantly more often in the titles of the most
/// attractive results than in those of the least attractive ones
/// (Welch two-sample t-test on presence indicators).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttractiveLexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

/// Titles of one head query with their estimated attractiveness.
#[derive(Debug, Clone)]
pub struct RatedTitles {
    pub query: String,
    pub titles: Vec<(Vec<String>, f64)>,
}

pub const DEFAULT_LEXICON_ALPHA: f64 = 0.05;
const TITLES_PER_SIDE: usize = 2;

impl AttractiveLexicon {
    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.get(word)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = LexiconEntry>) -> Self {
        AttractiveLexicon {
            entries: entries.into_iter().map(|e| (e.word.clone(), e)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let list: Vec<&LexiconEntry> = self.entries.values().collect();
        serde_json::to_string_pretty(&list).expect("lexicon serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let list: Vec<LexiconEntry> = serde_json::from_str(text)?;
        Ok(Self::from_entries(list))
    }
}

/// Welch t statistic, degrees of freedom and two-sided p-value for the
/// difference in means of two 0/1 samples given their counts of ones.
fn welch_indicator_test(ones_a: usize, n_a: usize, ones_b: usize, n_b: usize) -> Option<(f64, f64)> {
    let (na, nb) = (n_a as f64, n_b as f64);
    let (ma, mb) = (ones_a as f64 / na, ones_b as f64 / nb);
    let va = na * ma * (1.0 - ma) / (na - 1.0);
    let vb = nb * mb * (1.0 - mb) / (nb - 1.0);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    if se2 <= 0.0 {
        return (diff != 0.0).then(|| (f64::MAX.copysign(diff), 0.0));
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Some((t, p))
}

fn word_set(tokens: &[String]) -> BTreeSet<&str> {
    tokens.iter().map(String::as_str).collect()
}

fn document_frequency<'a>(sets: &[BTreeSet<&'a str>]) -> BTreeMap<&'a str, usize> {
    let mut c = BTreeMap::new();
    for s in sets {
        for &w in s {
            *c.entry(w).or_default() += 1;
        }
    }
    c
}

/// Builds the lexicon from head queries. Queries with fewer than four
/// titles are skipped.
pub fn build_attractive_lexicon(head: &[RatedTitles], alpha: f64) -> AttractiveLexicon {
    let mut attractive: Vec<BTreeSet<&str>> = Vec::new();
    let mut unattractive: Vec<BTreeSet<&str>> = Vec::new();
    for q in head {
        if q.titles.len() < 2 * TITLES_PER_SIDE {
            log::warn!(
                "query {:?} has {} rated titles; need {} for the lexicon",
                q.query,
                q.titles.len(),
                2 * TITLES_PER_SIDE
            );
            continue;
        }
        let mut ranked: Vec<&(Vec<String>, f64)> = q.titles.iter().collect();
        ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        attractive.extend(ranked.iter().take(TITLES_PER_SIDE).map(|t| word_set(&t.0)));
        unattractive.extend(ranked.iter().rev().take(TITLES_PER_SIDE).map(|t| word_set(&t.0)));
    }
    if attractive.len() < 2 {
        return AttractiveLexicon::default();
    }
    let in_a = document_frequency(&attractive);
    let in_u = document_frequency(&unattractive);
    let (n_a, n_u) = (attractive.len(), unattractive.len());
    let entries = in_a.iter().filter_map(|(&word, &ca)| {
        let cu = in_u.get(word).copied().unwrap_or(0);
        if ca as f64 / n_a as f64 <= cu as f64 / n_u as f64 {
            return None;
        }
        let (t, p) = welch_indicator_test(ca, n_a, cu, n_u)?;
        (p <= alpha).then(|| LexiconEntry {
            word: word.to_owned(),
            t,
            p,
        })
    });
    AttractiveLexicon::from_entries(entries.collect::<Vec<_>>())
}

// ---- the feature vector ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetFeatures {
    pub num_chars_snippet: f64,
    pub num_words_snippet: f64,
    pub num_segments: f64,
    pub num_word_init_cap: f64,
    pub frac_word_init_cap: f64,
    pub num_cap_char_title_url: f64,
    pub frac_cap_char_title_abstract: f64,
    pub frac_attr_word: f64,
    pub url_num_chars: f64,
    pub top_level_domain: TopLevelDomain,
    pub num_level_domain: f64,
    pub num_views: f64,
    pub num_match: f64,
    pub num_uniq_match: f64,
    pub num_apx_match: f64,
    pub frac_match: f64,
    pub frac_apx_match: f64,
    pub num_bef_match: f64,
    pub num_btw_match: f64,
    pub is_exact_match: f64,
    pub is_order_match: f64,
    pub is_seg_match: f64,
    pub frac_match_expanded: f64,
}

/// Column names of [`SnippetFeatures::to_vec`]; the domain is one-hot.
pub const FEATURE_NAMES: [&str; 27] = [
    "num_chars_snippet",
    "num_words_snippet",
    "num_segments",
    "num_word_init_cap",
    "frac_word_init_cap",
    "num_cap_char_title_url",
    "frac_cap_char_title_abstract",
    "frac_attr_word",
    "url_num_chars",
    "top_level_domain_com",
    "top_level_domain_org",
    "top_level_domain_net",
    "top_level_domain_edu",
    "top_level_domain_others",
    "num_level_domain",
    "num_views",
    "num_match",
    "num_uniq_match",
    "num_apx_match",
    "frac_match",
    "frac_apx_match",
    "num_bef_match",
    "num_btw_match",
    "is_exact_match",
    "is_order_match",
    "is_seg_match",
    "frac_match_expanded",
];

pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

impl SnippetFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.num_chars_snippet,
            self.num_words_snippet,
            self.num_segments,
            self.num_word_init_cap,
            self.frac_word_init_cap,
            self.num_cap_char_title_url,
            self.frac_cap_char_title_abstract,
            self.frac_attr_word,
            self.url_num_chars,
        ];
        v.extend(
            TopLevelDomain::ALL
                .iter()
                .map(|&d| f64::from(u8::from(d == self.top_level_domain))),
        );
        v.extend([
            self.num_level_domain,
            self.num_views,
            self.num_match,
            self.num_uniq_match,
            self.num_apx_match,
            self.frac_match,
            self.frac_apx_match,
            self.num_bef_match,
            self.num_btw_match,
            self.is_exact_match,
            self.is_order_match,
            self.is_seg_match,
            self.frac_match_expanded,
        ]);
        v
    }
}

fn flag(b: bool) -> f64 {
    f64::from(u8::from(b))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn is_subsequence(seq: &[&str], within: &[String]) -> bool {
    let mut it = within.iter();
    seq.iter().all(|s| it.any(|t| t == s))
}

/// Shortest window of `stream` that contains every token of `targets`,
/// minus the number of targets. 0 when fewer than two targets.
fn extra_words_between(stream: &[String], targets: &[&str]) -> usize {
    if targets.len() < 2 {
        return 0;
    }
    let index: BTreeMap<&str, usize> = targets.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut have = vec![0usize; targets.len()];
    let mut covered = 0;
    let mut best = usize::MAX;
    let mut left = 0;
    for (right, tok) in stream.iter().enumerate() {
        if let Some(&i) = index.get(tok.as_str()) {
            have[i] += 1;
            if have[i] == 1 {
                covered += 1;
            }
        }
        while covered == targets.len() {
            best = best.min(right - left + 1);
            if let Some(&i) = index.get(stream[left].as_str()) {
                have[i] -= 1;
                if have[i] == 0 {
                    covered -= 1;
                }
            }
            left += 1;
        }
    }
    best - targets.len()
}

/// Computes the full feature vector. Missing url statistics give zero
/// views and zero expanded-query match; the query itself is never counted
/// as its own expansion.
pub fn extract_features(
    query: &Query,
    snippet: &Snippet,
    url_stats: Option<&UrlStats>,
    lexicon: &AttractiveLexicon,
) -> SnippetFeatures {
    let title = &snippet.title;
    let abs = &snippet.abstract_text;
    let num_chars = title.chars().count() + abs.chars().count();
    let num_words = snippet.title_tokens.len() + snippet.abstract_tokens.len();
    let init_caps = raw_words(title)
        .chain(raw_words(abs))
        .filter(|w| w.chars().next().is_some_and(char::is_uppercase))
        .count();
    let upper = |s: &str| s.chars().filter(|c| c.is_uppercase()).count();
    let attr_words = snippet.title_tokens.iter().filter(|t| lexicon.contains(t)).count();

    let q = distinct_tokens(&query.tokens);
    let q_set: HashSet<&str> = q.iter().copied().collect();
    let stream: Vec<String> = snippet
        .title_tokens
        .iter()
        .chain(&snippet.abstract_tokens)
        .cloned()
        .collect();
    let num_match = stream.iter().filter(|t| q_set.contains(t.as_str())).count();
    let stream_set: HashSet<&str> = stream.iter().map(String::as_str).collect();
    let matched: Vec<&str> = q.iter().copied().filter(|t| stream_set.contains(t)).collect();
    let num_apx = stream.iter().filter(|t| q.iter().any(|qt| approx_match(qt, t))).count();
    let num_bef = stream
        .iter()
        .position(|t| q_set.contains(t.as_str()))
        .unwrap_or(stream.len());

    let mut units: Vec<Vec<String>> = vec![snippet.title_tokens.clone()];
    units.extend(snippet.segments.iter().map(|s| tokenize(s)));
    let unit_has_all = |u: &Vec<String>| matched.iter().all(|m| u.iter().any(|t| t == m));
    let has_matches = !matched.is_empty();
    let is_exact = units.iter().any(|u| contains_run(u, &query.tokens));
    let is_order = has_matches && units.iter().any(|u| unit_has_all(u) && is_subsequence(&matched, u));
    let is_seg = has_matches && units.iter().any(unit_has_all);

    let expanded = url_stats.map_or(0.0, |st| {
        frac_match_expanded(
            &query.tokens,
            st.expanded_queries
                .iter()
                .map(String::as_str)
                .filter(|e| *e != query.id),
        )
    });

    SnippetFeatures {
        num_chars_snippet: num_chars as f64,
        num_words_snippet: num_words as f64,
        num_segments: snippet.segments.len() as f64,
        num_word_init_cap: init_caps as f64,
        frac_word_init_cap: ratio(init_caps, num_words),
        num_cap_char_title_url: (upper(title) + upper(&snippet.url)) as f64,
        frac_cap_char_title_abstract: ratio(upper(title) + upper(abs), num_chars),
        frac_attr_word: ratio(attr_words, snippet.title_tokens.len()),
        url_num_chars: snippet.url.chars().count() as f64,
        top_level_domain: top_level_domain(&snippet.url),
        num_level_domain: num_level_domain(&snippet.url) as f64,
        num_views: url_stats.map_or(0.0, |s| s.num_views as f64),
        num_match: num_match as f64,
        num_uniq_match: matched.len() as f64,
        num_apx_match: num_apx as f64,
        frac_match: ratio(matched.len(), q.len()),
        frac_apx_match: frac_apx_match(&query.tokens, &snippet.title_tokens, &snippet.url_tokens),
        num_bef_match: num_bef as f64,
        num_btw_match: extra_words_between(&stream, &matched) as f64,
        is_exact_match: flag(is_exact),
        is_order_match: flag(is_order),
        is_seg_match: flag(is_seg),
        frac_match_expanded: expanded,
    }
}

// ---- features.tsv ----

/// Feature rows keyed by `(query, url)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<(String, String), Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FeatureTable {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), TableError> {
        write!(w, "query\turl")?;
        for n in &self.names {
            write!(w, "\t{n}")?;
        }
        writeln!(w)?;
        for ((q, u), row) in &self.rows {
            if [q, u].iter().any(|s| s.contains(['\t', '\n', '\r'])) {
                return Err(TableError::Format {
                    line: 0,
                    message: format!("({q:?}, {u:?}) contains a tab or newline"),
                });
            }
            write!(w, "{q}\t{u}")?;
            for x in row {
                write!(w, "\t{x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, TableError> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Ok(FeatureTable::default()),
        };
        let mut cols = header.split('\t');
        if cols.next() != Some("query") || cols.next() != Some("url") {
            return Err(TableError::Format {
                line: 1,
                message: "header must start with query, url".into(),
            });
        }
        let names: Vec<String> = cols.map(str::to_owned).collect();
        let mut rows = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split('\t');
            let (Some(q), Some(u)) = (cells.next(), cells.next()) else {
                return Err(TableError::Format {
                    line: line_no,
                    message: "missing query or url".into(),
                });
            };
            let row = cells
                .map(|c| c.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TableError::Format {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if row.len() != names.len() {
                return Err(TableError::Format {
                    line: line_no,
                    message: format!("{} values for {} columns", row.len(), names.len()),
                });
            }
            rows.insert((q.to_owned(), u.to_owned()), row);
        }
        Ok(FeatureTable { names, rows })
    }
}
