//! Queries, snippets, sessions and graded judgments, plus their JSON-lines
//! readers and writers.
//!
//! Every record is validated on load; a bad record is reported with the
//! 1-based line number it came from.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of results shown in one session.
pub const DEFAULT_MAX_RESULTS: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("invalid {what}: {message}")]
    Value { what: &'static str, message: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Lowercases `text` and splits it on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    raw_words(text).map(str::to_lowercase).collect()
}

/// Same split as [`tokenize`] but with the original casing kept.
pub fn raw_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}

/// Splits an abstract into period/ellipsis separated segments. Empty and
/// whitespace-only pieces are dropped and the rest are trimmed.
pub fn split_segments(text: &str) -> Vec<String> {
    text.split(['.', '\u{2026}'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Query {
    /// Builds a query whose identifier is its raw text.
    pub fn new(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        if tokens.is_empty() {
            return Err(CorpusError::Value {
                what: "query",
                message: format!("{raw:?} has no tokens"),
            });
        }
        Ok(Query {
            id: raw.clone(),
            raw,
            tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub url: String,
    pub title: String,
    pub abstract_text: String,
    pub title_tokens: Vec<String>,
    pub abstract_tokens: Vec<String>,
    pub url_tokens: Vec<String>,
    pub segments: Vec<String>,
}

impl Snippet {
    pub fn new(url: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        let url = url.into();
        let title = title.into();
        let abstract_text = abstract_text.into();
        Snippet {
            title_tokens: tokenize(&title),
            abstract_tokens: tokenize(&abstract_text),
            url_tokens: tokenize(&url),
            segments: split_segments(&abstract_text),
            url,
            title,
            abstract_text,
        }
    }
}

/// One user impression for one query: the ranked urls and which were clicked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub query_id: String,
    pub results: Vec<String>,
    pub clicks: Vec<bool>,
    pub user_id: Option<String>,
}

impl Session {
    pub fn new(
        query_id: impl Into<String>,
        results: Vec<String>,
        clicks: Vec<bool>,
        user_id: Option<String>,
        max_results: usize,
    ) -> std::result::Result<Self, String> {
        let session = Session {
            query_id: query_id.into(),
            results,
            clicks,
            user_id,
        };
        session.validate(max_results)?;
        Ok(session)
    }

    pub fn validate(&self, max_results: usize) -> std::result::Result<(), String> {
        if self.results.len() != self.clicks.len() {
            return Err(format!(
                "{} results but {} click flags",
                self.results.len(),
                self.clicks.len()
            ));
        }
        if self.results.is_empty() {
            return Err("session has no results".into());
        }
        if self.results.len() > max_results {
            return Err(format!(
                "{} results exceeds the maximum of {max_results}",
                self.results.len()
            ));
        }
        if self.query_id.trim().is_empty() {
            return Err("empty query".into());
        }
        let mut seen = HashSet::with_capacity(self.results.len());
        for url in &self.results {
            if !seen.insert(url.as_str()) {
                return Err(format!("url {url:?} repeated within the session"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedJudgment {
    pub query_id: String,
    pub url: String,
    pub grade: u8,
    pub baseline_score: f64,
    /// Optional ranking features behind `baseline_score`.
    pub baseline_features: Option<Vec<f64>>,
}

impl GradedJudgment {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.grade > 4 {
            return Err(format!("grade {} outside 0..=4", self.grade));
        }
        if !self.baseline_score.is_finite() {
            return Err("baseline_score is not finite".into());
        }
        if let Some(xs) = &self.baseline_features {
            if xs.iter().any(|x| !x.is_finite()) {
                return Err("baseline_features contain a non-finite value".into());
            }
        }
        Ok(())
    }
}

/// Aggregate, query-independent log statistics for one url.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UrlStats {
    pub url: String,
    pub num_views: u64,
    pub expanded_queries: BTreeSet<String>,
}

/// Counts impressions per url and collects the queries whose sessions clicked it.
pub fn build_url_stats<'a, I>(sessions: I) -> BTreeMap<String, UrlStats>
where
    I: IntoIterator<Item = &'a Session>,
{
    let mut stats: BTreeMap<String, UrlStats> = BTreeMap::new();
    for session in sessions {
        for (url, &clicked) in session.results.iter().zip(&session.clicks) {
            let entry = stats.entry(url.clone()).or_insert_with(|| UrlStats {
                url: url.clone(),
                ..UrlStats::default()
            });
            entry.num_views += 1;
            if clicked {
                entry.expanded_queries.insert(session.query_id.clone());
            }
        }
    }
    stats
}

// ---- wire records ----

#[derive(Debug, Serialize, Deserialize)]
struct SessionRecord {
    query: String,
    results: Vec<String>,
    clicks: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnippetRecord {
    query: String,
    url: String,
    title: String,
    #[serde(rename = "abstract")]
    abstract_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct JudgmentRecord {
    query: String,
    url: String,
    grade: u8,
    baseline_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline_features: Option<Vec<f64>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Iterates the non-blank lines of a JSON-lines stream, parsing each.
fn json_lines<R: BufRead, T: for<'de> Deserialize<'de>>(reader: R) -> impl Iterator<Item = Result<(usize, T)>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let line_no = idx + 1;
        match line {
            Err(e) => Some(Err(CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(
                serde_json::from_str::<T>(&l)
                    .map(|rec| (line_no, rec))
                    .map_err(|e| CorpusError::Parse {
                        line: line_no,
                        message: e.to_string(),
                    }),
            ),
        }
    })
}

/// Streams validated sessions from any buffered reader.
pub fn read_sessions<R: BufRead>(reader: R, max_results: usize) -> impl Iterator<Item = Result<Session>> {
    json_lines::<R, SessionRecord>(reader).map(move |rec| {
        let (line, rec) = rec?;
        let clicks = rec
            .clicks
            .iter()
            .map(|&c| match c {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(CorpusError::Invalid {
                    line,
                    message: format!("click flag {other} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Session::new(rec.query, rec.results, clicks, rec.user, max_results)
            .map_err(|message| CorpusError::Invalid { line, message })
    })
}

pub fn load_sessions(path: &Path, max_results: usize) -> Result<Vec<Session>> {
    read_sessions(open(path)?, max_results).collect()
}

pub fn write_sessions<'a, W: Write>(
    mut writer: W,
    sessions: impl IntoIterator<Item = &'a Session>,
) -> std::io::Result<()> {
    for s in sessions {
        let rec = SessionRecord {
            query: s.query_id.clone(),
            results: s.results.clone(),
            clicks: s.clicks.iter().map(|&c| u8::from(c)).collect(),
            user: s.user_id.clone(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    write_sessions(create(path)?, sessions).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Snippets keyed by `(query, url)`.
pub type SnippetMap = BTreeMap<(String, String), Snippet>;

pub fn read_snippets<R: BufRead>(reader: R) -> Result<SnippetMap> {
    let mut out = SnippetMap::new();
    for rec in json_lines::<R, SnippetRecord>(reader) {
        let (line, rec) = rec?;
        if tokenize(&rec.query).is_empty() {
            return Err(CorpusError::Invalid {
                line,
                message: format!("query {:?} has no tokens", rec.query),
            });
        }
        if rec.url.is_empty() {
            return Err(CorpusError::Invalid {
                line,
                message: "empty url".into(),
            });
        }
        let key = (rec.query, rec.url.clone());
        if out.contains_key(&key) {
            return Err(CorpusError::Invalid {
                line,
                message: format!("duplicate snippet for ({:?}, {:?})", key.0, key.1),
            });
        }
        out.insert(key, Snippet::new(rec.url, rec.title, rec.abstract_text));
    }
    Ok(out)
}

pub fn load_snippets(path: &Path) -> Result<SnippetMap> {
    read_snippets(open(path)?)
}

pub fn write_snippets<W: Write>(mut writer: W, snippets: &SnippetMap) -> std::io::Result<()> {
    for ((query, url), snip) in snippets {
        let rec = SnippetRecord {
            query: query.clone(),
            url: url.clone(),
            title: snip.title.clone(),
            abstract_text: snip.abstract_text.clone(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_snippets(path: &Path, snippets: &SnippetMap) -> Result<()> {
    write_snippets(create(path)?, snippets).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_judgments<R: BufRead>(reader: R) -> Result<Vec<GradedJudgment>> {
    json_lines::<R, JudgmentRecord>(reader)
        .map(|rec| {
            let (line, rec) = rec?;
            let j = GradedJudgment {
                query_id: rec.query,
                url: rec.url,
                grade: rec.grade,
                baseline_score: rec.baseline_score,
                baseline_features: rec.baseline_features,
            };
            j.validate().map_err(|message| CorpusError::Invalid { line, message })?;
            Ok(j)
        })
        .collect()
}

pub fn load_judgments(path: &Path) -> Result<Vec<GradedJudgment>> {
    read_judgments(open(path)?)
}

pub fn write_judgments<W: Write>(mut writer: W, judgments: &[GradedJudgment]) -> std::io::Result<()> {
    for j in judgments {
        let rec = JudgmentRecord {
            query: j.query_id.clone(),
            url: j.url.clone(),
            grade: j.grade,
            baseline_score: j.baseline_score,
            baseline_features: j.baseline_features.clone(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_judgments(path: &Path, judgments: &[GradedJudgment]) -> Result<()> {
    write_judgments(create(path)?, judgments).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}
