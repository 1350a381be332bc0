//! Training pairs from click-model attractiveness and graded judgments,
//! the click-augmented snippet features, and the two reranking
//! strategies: blending baseline and attractiveness scores, and
//! retraining on baseline features extended with snippet features.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::click_sim::{label_key, substream};
use crate::corpus::{GradedJudgment, Session};
use crate::dbn::{fit_dbn, DbnError, DbnEstimate, DbnFitConfig};
use crate::features::FeatureTable;
use crate::gbrank::{GbrankError, PreferencePair, TreeEnsemble};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("query {query:?}: url {url:?} missing from {side} scores")]
    MissingUrl {
        query: String,
        url: String,
        side: &'static str,
    },
    #[error("query {query:?}: no features for url {url:?}")]
    MissingFeatures { query: String, url: String },
    #[error("query {query:?}: non-finite score for url {url:?}")]
    NonFinite { query: String, url: String },
    #[error("blend weight {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("invalid sampling rate: {0}")]
    InvalidRate(String),
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("query {query:?}: url {url:?} judged more than once")]
    DuplicateJudgment { query: String, url: String },
    #[error("query {query:?}, url {url:?}: expected {expected} values, got {got}")]
    Dimension {
        query: String,
        url: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Dbn(#[from] DbnError),
    #[error(transparent)]
    Model(#[from] GbrankError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RankingError>;

type Key = (String, String);

// ---- ranked lists ----

/// Urls of one query in descending score order, ties by ascending url.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    #[serde(rename = "query")]
    pub query_id: String,
    #[serde(rename = "ranking")]
    pub entries: Vec<RankedUrl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUrl {
    pub url: String,
    pub score: f64,
}

impl RankedList {
    pub fn from_scores<I, S>(query_id: &str, scores: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut entries = Vec::new();
        for (url, score) in scores {
            let url = url.into();
            if !score.is_finite() {
                return Err(RankingError::NonFinite {
                    query: query_id.to_owned(),
                    url,
                });
            }
            entries.push(RankedUrl { url, score });
        }
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.url.cmp(&b.url)));
        Ok(RankedList {
            query_id: query_id.to_owned(),
            entries,
        })
    }

    pub fn urls(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.url.as_str()).collect()
    }
}

/// Groups `(query, url) -> score` into one ranked list per query.
pub fn rank_all(scores: &BTreeMap<Key, f64>) -> Result<Vec<RankedList>> {
    group_by_query(scores)
        .into_iter()
        .map(|(q, urls)| RankedList::from_scores(q, urls.into_iter().map(|(u, s)| (u, *s))))
        .collect()
}

fn group_by_query<V>(map: &BTreeMap<Key, V>) -> BTreeMap<&str, Vec<(&str, &V)>> {
    let mut out: BTreeMap<&str, Vec<(&str, &V)>> = BTreeMap::new();
    for ((q, u), v) in map {
        out.entry(q.as_str()).or_default().push((u.as_str(), v));
    }
    out
}

/// Scores every row of `table` with `model`.
pub fn score_table(model: &TreeEnsemble, table: &FeatureTable) -> Result<BTreeMap<Key, f64>> {
    let rows: Vec<(&Key, &Vec<f64>)> = table.rows.iter().collect();
    let scored: Vec<(Key, f64)> = rows
        .par_iter()
        .map(|(k, x)| model.predict(x).map(|s| ((*k).clone(), s)))
        .collect::<std::result::Result<_, _>>()?;
    Ok(scored.into_iter().collect())
}

pub fn write_rankings<W: Write>(mut w: W, lists: &[RankedList]) -> std::io::Result<()> {
    for l in lists {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_rankings<R: BufRead>(r: R) -> Result<Vec<RankedList>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let list: RankedList = serde_json::from_str(&line).map_err(|e| RankingError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(list);
    }
    Ok(out)
}

// ---- preference pairs ----

/// A within-query preference: `hi` should outrank `lo` by `margin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRef {
    pub query: String,
    pub hi: String,
    pub lo: String,
    pub margin: f64,
}

/// All within-query ordered pairs with a strictly larger target, in
/// query, `hi`, `lo` order. Queries with fewer than two urls give none.
pub fn target_pairs(targets: &BTreeMap<Key, f64>) -> Vec<PairRef> {
    let mut out = Vec::new();
    for (q, urls) in group_by_query(targets) {
        for &(hi, &a_hi) in &urls {
            for &(lo, &a_lo) in &urls {
                if a_hi > a_lo {
                    out.push(PairRef {
                        query: q.to_owned(),
                        hi: hi.to_owned(),
                        lo: lo.to_owned(),
                        margin: a_hi - a_lo,
                    });
                }
            }
        }
    }
    out
}

/// Attaches feature vectors to pair references.
pub fn materialise(refs: &[PairRef], features: &BTreeMap<Key, Vec<f64>>) -> Result<Vec<PreferencePair>> {
    let get = |q: &str, u: &str| {
        features
            .get(&(q.to_owned(), u.to_owned()))
            .ok_or_else(|| RankingError::MissingFeatures {
                query: q.to_owned(),
                url: u.to_owned(),
            })
    };
    refs.iter()
        .map(|r| {
            Ok(PreferencePair {
                features_hi: get(&r.query, &r.hi)?.clone(),
                features_lo: get(&r.query, &r.lo)?.clone(),
                margin: r.margin,
            })
        })
        .collect()
}

/// Attractiveness targets for the featurised pairs the estimate covers.
pub fn attractiveness_targets(estimate: &DbnEstimate, features: &BTreeMap<Key, Vec<f64>>) -> BTreeMap<Key, f64> {
    features
        .keys()
        .filter_map(|k| estimate.entries.get(k).map(|e| (k.clone(), e.a)))
        .collect()
}

/// Pairs `(hi, lo, a_hi - a_lo)` for every query url pair with
/// `a_hi > a_lo`. Urls without a click-model estimate are skipped.
pub fn attractiveness_pairs(estimate: &DbnEstimate, features: &BTreeMap<Key, Vec<f64>>) -> Result<Vec<PreferencePair>> {
    materialise(&target_pairs(&attractiveness_targets(estimate, features)), features)
}

/// Within-query pairs with a strictly higher grade; the margin is the
/// grade difference.
pub fn judgment_pair_refs(judgments: &[GradedJudgment]) -> Result<Vec<PairRef>> {
    let mut grades = BTreeMap::new();
    for j in judgments {
        let key = (j.query_id.clone(), j.url.clone());
        if grades.insert(key, f64::from(j.grade)).is_some() {
            return Err(RankingError::DuplicateJudgment {
                query: j.query_id.clone(),
                url: j.url.clone(),
            });
        }
    }
    Ok(target_pairs(&grades))
}

pub fn judgment_pairs(judgments: &[GradedJudgment], features: &BTreeMap<Key, Vec<f64>>) -> Result<Vec<PreferencePair>> {
    materialise(&judgment_pair_refs(judgments)?, features)
}

// ---- click augmentation ----

/// Per-query session sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    /// Fixed percentage in `(0, 100]`.
    Percent(f64),
    /// Percentage drawn uniformly per query.
    Uniform { min_percent: f64, max_percent: f64 },
    /// Fixed number of sessions per query (all of them if fewer exist).
    Sessions { sessions: usize },
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r > 0.0 && r <= 100.0;
        match *self {
            RateSpec::Percent(r) if ok(r) => Ok(()),
            RateSpec::Uniform {
                min_percent,
                max_percent,
            } if ok(min_percent) && ok(max_percent) && min_percent <= max_percent => Ok(()),
            RateSpec::Sessions { sessions } if sessions > 0 => Ok(()),
            _ => Err(RankingError::InvalidRate(format!("{self:?}"))),
        }
    }

    fn sample_size<R: Rng>(&self, available: usize, rng: &mut R) -> usize {
        let percent = |r: f64| ((r / 100.0 * available as f64).ceil() as usize).min(available);
        match *self {
            RateSpec::Percent(r) => percent(r),
            RateSpec::Uniform {
                min_percent,
                max_percent,
            } => percent(rng.random_range(min_percent..=max_percent)),
            RateSpec::Sessions { sessions } => sessions.min(available),
        }
    }
}

/// Draws a per-query subsample of `sessions`, preserving input order.
/// The draw for a query depends only on `seed` and the query string.
pub fn subsample_sessions(sessions: &[Session], rate: &RateSpec, seed: u64) -> Result<Vec<Session>> {
    rate.validate()?;
    let mut by_query: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sessions.iter().enumerate() {
        by_query.entry(&s.query_id).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (q, idx) in by_query {
        let mut rng = substream(seed, &[label_key(q)]);
        let k = rate.sample_size(idx.len(), &mut rng);
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, idx.len(), k)
            .into_iter()
            .map(|j| idx[j])
            .collect();
        chosen.sort_unstable();
        keep.extend(chosen);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| sessions[i].clone()).collect())
}

pub const A_PRIME: &str = "a_prime";
pub const SESSION_COUNT: &str = "session_count";

/// Snippet features with the two click-derived columns appended.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeatures {
    pub snippet: Vec<f64>,
    pub a_prime: f64,
    pub session_count: u64,
}

impl AugmentedFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.snippet.clone();
        v.push(self.a_prime);
        v.push(self.session_count as f64);
        v
    }
}

/// Fits the click model to `subsample` and appends `a_prime` and
/// `session_count` to every row. Pairs the subsample never showed get the
/// prior mode; queries without sessions also get a count of zero.
pub fn augment_with_click(
    features: &FeatureTable,
    subsample: &[Session],
    dbn_config: &DbnFitConfig,
) -> Result<FeatureTable> {
    let estimate = if subsample.is_empty() {
        None
    } else {
        Some(fit_dbn(subsample, dbn_config)?)
    };
    let mut names = features.names.clone();
    for extra in [A_PRIME, SESSION_COUNT] {
        if names.iter().any(|n| n == extra) {
            return Err(RankingError::DuplicateName(extra.to_owned()));
        }
        names.push(extra.to_owned());
    }
    let rows = features
        .rows
        .iter()
        .map(|((q, u), x)| {
            let aug = AugmentedFeatures {
                snippet: x.clone(),
                a_prime: estimate
                    .as_ref()
                    .map_or(dbn_config.prior_a.mode(), |e| e.attractiveness(q, u)),
                session_count: estimate.as_ref().map_or(0, |e| e.sessions_for(q)),
            };
            ((q.clone(), u.clone()), aug.to_vec())
        })
        .collect();
    Ok(FeatureTable { names, rows })
}

// ---- strategy I: score blending ----

/// Per-query score normalisation applied before blending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(x - min) / (max - min)`; a constant list maps to zeros.
    #[default]
    MinMax,
    None,
}

fn normalise(scores: &BTreeMap<&str, f64>, how: Normalization) -> BTreeMap<String, f64> {
    match how {
        Normalization::None => scores.iter().map(|(u, s)| ((*u).to_owned(), *s)).collect(),
        Normalization::MinMax => {
            let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            scores
                .iter()
                .map(|(u, s)| {
                    let v = if range > 0.0 { (s - lo) / range } else { 0.0 };
                    ((*u).to_owned(), v)
                })
                .collect()
        }
    }
}

/// Reranks one query by `lambda * baseline + (1 - lambda) * attr`.
pub fn strategy_one(
    query_id: &str,
    baseline: &BTreeMap<&str, f64>,
    attr: &BTreeMap<&str, f64>,
    lambda: f64,
    normalization: Normalization,
) -> Result<RankedList> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RankingError::InvalidLambda(lambda));
    }
    let missing = |url: &str, side| RankingError::MissingUrl {
        query: query_id.to_owned(),
        url: url.to_owned(),
        side,
    };
    if let Some(u) = baseline.keys().find(|u| !attr.contains_key(*u)) {
        return Err(missing(u, "attractiveness"));
    }
    if let Some(u) = attr.keys().find(|u| !baseline.contains_key(*u)) {
        return Err(missing(u, "baseline"));
    }
    for (u, s) in baseline.iter().chain(attr) {
        if !s.is_finite() {
            return Err(RankingError::NonFinite {
                query: query_id.to_owned(),
                url: (*u).to_owned(),
            });
        }
    }
    let b = normalise(baseline, normalization);
    let a = normalise(attr, normalization);
    RankedList::from_scores(
        query_id,
        b.iter().map(|(u, sb)| (u.clone(), lambda * sb + (1.0 - lambda) * a[u])),
    )
}

/// [`strategy_one`] over every query, in query order.
pub fn strategy_one_all(
    baseline: &BTreeMap<Key, f64>,
    attr: &BTreeMap<Key, f64>,
    lambda: f64,
    normalization: Normalization,
) -> Result<Vec<RankedList>> {
    let b = group_by_query(baseline);
    let a = group_by_query(attr);
    let queries: BTreeSet<&str> = b.keys().chain(a.keys()).copied().collect();
    queries
        .into_par_iter()
        .map(|q| strategy_one(q, &url_scores(b.get(q)), &url_scores(a.get(q)), lambda, normalization))
        .collect()
}

fn url_scores<'a>(v: Option<&Vec<(&'a str, &f64)>>) -> BTreeMap<&'a str, f64> {
    v.map(|v| v.iter().map(|(u, s)| (*u, **s)).collect())
        .unwrap_or_default()
}

// ---- strategy II: feature expansion ----

/// Column names of the concatenated vector; errors on any repeat.
pub fn concat_names(baseline: &[String], snippet: &[String]) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    for n in baseline.iter().chain(snippet) {
        if !seen.insert(n.as_str()) {
            return Err(RankingError::DuplicateName(n.clone()));
        }
    }
    Ok(baseline.iter().chain(snippet).cloned().collect())
}

pub fn strategy_two_features(baseline: &[f64], snippet: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(baseline.len() + snippet.len());
    v.extend_from_slice(baseline);
    v.extend_from_slice(snippet);
    v
}

/// Default names for an unnamed baseline feature block.
pub fn baseline_feature_names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("baseline_{i}")).collect()
}

/// Rows of `[baseline, snippet]` for every judged pair. `snippet` may be
/// `None` to reproduce the baseline input alone.
pub fn strategy_two_table(
    judgments: &[GradedJudgment],
    baseline_names: &[String],
    snippet: Option<&FeatureTable>,
) -> Result<FeatureTable> {
    let snippet_names = snippet.map(|t| t.names.as_slice()).unwrap_or_default();
    let names = concat_names(baseline_names, snippet_names)?;
    let mut rows = BTreeMap::new();
    for j in judgments {
        let key = (j.query_id.clone(), j.url.clone());
        let dim_err = |expected, got| RankingError::Dimension {
            query: j.query_id.clone(),
            url: j.url.clone(),
            expected,
            got,
        };
        let base = j
            .baseline_features
            .as_deref()
            .ok_or_else(|| RankingError::MissingFeatures {
                query: j.query_id.clone(),
                url: j.url.clone(),
            })?;
        if base.len() != baseline_names.len() {
            return Err(dim_err(baseline_names.len(), base.len()));
        }
        let snip: &[f64] = match snippet {
            None => &[],
            Some(t) => t.rows.get(&key).ok_or_else(|| RankingError::MissingFeatures {
                query: j.query_id.clone(),
                url: j.url.clone(),
            })?,
        };
        if snip.len() != snippet_names.len() {
            return Err(dim_err(snippet_names.len(), snip.len()));
        }
        if rows.insert(key, strategy_two_features(base, snip)).is_some() {
            return Err(RankingError::DuplicateJudgment {
                query: j.query_id.clone(),
                url: j.url.clone(),
            });
        }
    }
    Ok(FeatureTable { names, rows })
}
