//! Metrics and report assembly: NDCG, pairwise precision/recall over a
//! score-gap threshold, the title-miss versus click-count estimator, the
//! Wilcoxon signed-rank test, and `report.json` / CSV output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::corpus::{Query, Session, SnippetMap};
use crate::features::miss_count;
use crate::ranking::{target_pairs, RankedList};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty grade list")]
    EmptyList,
    #[error("cutoff k must be at least 1")]
    InvalidCutoff,
    #[error("grade {0} outside 0..=4")]
    InvalidGrade(u8),
    #[error("no evaluation pairs")]
    NoPairs,
    #[error("position-balanced estimate needs tuples in both presentation orders")]
    Unbalanced,
    #[error("report field {field} = {value} outside its valid range")]
    OutOfRange { field: String, value: f64 },
}

pub type Result<T> = std::result::Result<T, EvalError>;

type Key = (String, String);

// ---- NDCG ----

fn gain(grade: u8) -> f64 {
    f64::from((1u32 << grade) - 1)
}

fn dcg(grades: &[u8], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with gain `2^grade - 1`, normalised by the ideal ordering of the
/// same list. A list with no positive grade scores 1.
pub fn ndcg_at_k(grades: &[u8], k: usize) -> Result<f64> {
    if grades.is_empty() {
        return Err(EvalError::EmptyList);
    }
    if k == 0 {
        return Err(EvalError::InvalidCutoff);
    }
    if let Some(&g) = grades.iter().find(|&&g| g > 4) {
        return Err(EvalError::InvalidGrade(g));
    }
    let mut ideal = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let z = dcg(&ideal, k);
    if z == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(grades, k) / z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryNdcg {
    pub query: String,
    /// Every retrieved url has grade 0, so each cutoff scores 1.
    pub all_zero: bool,
    pub values: BTreeMap<usize, f64>,
}

/// Per-query NDCG of `lists` against graded judgments. Urls without a
/// judgment are dropped; queries with no judged urls are skipped.
pub fn ndcg_per_query(lists: &[RankedList], grades: &BTreeMap<Key, u8>, ks: &[usize]) -> Result<Vec<QueryNdcg>> {
    let mut out = Vec::new();
    for list in lists {
        let g: Vec<u8> = list
            .entries
            .iter()
            .filter_map(|e| grades.get(&(list.query_id.clone(), e.url.clone())).copied())
            .collect();
        if g.is_empty() {
            continue;
        }
        let values = ks
            .iter()
            .map(|&k| ndcg_at_k(&g, k).map(|v| (k, v)))
            .collect::<Result<_>>()?;
        out.push(QueryNdcg {
            query: list.query_id.clone(),
            all_zero: g.iter().all(|&x| x == 0),
            values,
        });
    }
    Ok(out)
}

/// Mean over queries for each cutoff.
pub fn mean_ndcg(per_query: &[QueryNdcg]) -> BTreeMap<usize, f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for q in per_query {
        for (&k, &v) in &q.values {
            let e = sums.entry(k).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

// ---- pairwise precision / recall ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub num_predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_pairs: usize,
}

/// Score gaps `f(hi) - f(lo)` over every within-query pair whose true
/// attractiveness differs, oriented by the truth.
pub fn pair_gaps(predicted: &BTreeMap<Key, f64>, truth: &BTreeMap<Key, f64>) -> Result<Vec<f64>> {
    let covered: BTreeMap<Key, f64> = truth
        .iter()
        .filter(|(k, _)| predicted.contains_key(*k))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    let gaps: Vec<f64> = target_pairs(&covered)
        .iter()
        .map(|p| predicted[&(p.query.clone(), p.hi.clone())] - predicted[&(p.query.clone(), p.lo.clone())])
        .collect();
    if gaps.is_empty() {
        return Err(EvalError::NoPairs);
    }
    Ok(gaps)
}

/// A pair is predicted at `tau` when its score gap exceeds `tau` in
/// either direction, and correct when the preferred url wins.
pub fn pr_from_gaps(gaps: &[f64], taus: &[f64]) -> Result<PrCurve> {
    if gaps.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let n = gaps.len();
    let mut sorted_taus = taus.to_vec();
    sorted_taus.sort_by(f64::total_cmp);
    let points = sorted_taus
        .into_iter()
        .map(|tau| {
            let correct = gaps.iter().filter(|&&d| d > tau).count();
            let predicted = gaps.iter().filter(|&&d| d > tau || -d > tau).count();
            PrPoint {
                tau,
                precision: if predicted == 0 {
                    1.0
                } else {
                    correct as f64 / predicted as f64
                },
                recall: correct as f64 / n as f64,
                num_predicted: predicted,
            }
        })
        .collect();
    Ok(PrCurve { points, num_pairs: n })
}

pub fn pairwise_pr(predicted: &BTreeMap<Key, f64>, truth: &BTreeMap<Key, f64>, taus: &[f64]) -> Result<PrCurve> {
    pr_from_gaps(&pair_gaps(predicted, truth)?, taus)
}

/// Area under the precision/recall curve traced by every `tau >= 0`:
/// the sum of recall increments times precision at each distinct gap.
pub fn pr_auc_from_gaps(gaps: &[f64]) -> Result<f64> {
    if gaps.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let n = gaps.len() as f64;
    let mut by_size: Vec<f64> = gaps.iter().copied().filter(|d| *d != 0.0).collect();
    by_size.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let (mut correct, mut predicted, mut weighted) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < by_size.len() {
        let level = by_size[i].abs();
        let before = correct;
        while i < by_size.len() && by_size[i].abs() == level {
            predicted += 1;
            if by_size[i] > 0.0 {
                correct += 1;
            }
            i += 1;
        }
        weighted += (correct - before) as f64 * (correct as f64 / predicted as f64);
    }
    Ok(weighted / n)
}

pub fn pr_auc(predicted: &BTreeMap<Key, f64>, truth: &BTreeMap<Key, f64>) -> Result<f64> {
    pr_auc_from_gaps(&pair_gaps(predicted, truth)?)
}

/// `count` evenly spaced thresholds from 0 to the largest absolute gap,
/// plus one just below zero.
pub fn tau_grid(gaps: &[f64], count: usize) -> Vec<f64> {
    let top = gaps.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut taus = vec![-f64::MIN_POSITIVE];
    let steps = count.max(2) - 1;
    taus.extend((0..=steps).map(|i| top * i as f64 / steps as f64));
    taus
}

// ---- title misses versus clicks ----

/// Two urls co-shown for one query, with click totals over the sessions
/// where `u1` was shown above `u2` (`u1_above`) or below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickTuple {
    pub query: String,
    pub u1: String,
    pub u2: String,
    pub u1_above: bool,
    pub clicks1: u64,
    pub clicks2: u64,
    pub impressions: u64,
    pub miss1: usize,
    pub miss2: usize,
}

impl ClickTuple {
    /// The same observation with the roles of the two urls exchanged.
    pub fn swapped(&self) -> Self {
        ClickTuple {
            query: self.query.clone(),
            u1: self.u2.clone(),
            u2: self.u1.clone(),
            u1_above: !self.u1_above,
            clicks1: self.clicks2,
            clicks2: self.clicks1,
            impressions: self.impressions,
            miss1: self.miss2,
            miss2: self.miss1,
        }
    }
}

/// One tuple per query, unordered url pair and presentation order.
/// Urls without a snippet are skipped.
pub fn build_click_tuples(sessions: &[Session], snippets: &SnippetMap) -> Vec<ClickTuple> {
    // (query, first url, second url, first above) -> (clicks first, clicks second, impressions)
    let mut acc: BTreeMap<(String, String, String, bool), (u64, u64, u64)> = BTreeMap::new();
    for s in sessions {
        for i in 0..s.results.len() {
            for j in (i + 1)..s.results.len() {
                let (a, b) = (&s.results[i], &s.results[j]);
                let (first, second, ca, cb, above) = if a < b {
                    (a, b, s.clicks[i], s.clicks[j], true)
                } else {
                    (b, a, s.clicks[j], s.clicks[i], false)
                };
                let e = acc
                    .entry((s.query_id.clone(), first.clone(), second.clone(), above))
                    .or_default();
                e.0 += u64::from(ca);
                e.1 += u64::from(cb);
                e.2 += 1;
            }
        }
    }
    let mut query_tokens: BTreeMap<String, Option<Vec<String>>> = BTreeMap::new();
    let mut out = Vec::new();
    for ((q, u1, u2, above), (c1, c2, n)) in acc {
        let tokens = query_tokens
            .entry(q.clone())
            .or_insert_with(|| Query::new(q.clone()).ok().map(|q| q.tokens));
        let Some(tokens) = tokens else { continue };
        let (Some(s1), Some(s2)) = (
            snippets.get(&(q.clone(), u1.clone())),
            snippets.get(&(q.clone(), u2.clone())),
        ) else {
            continue;
        };
        out.push(ClickTuple {
            miss1: miss_count(tokens, &s1.title_tokens),
            miss2: miss_count(tokens, &s2.title_tokens),
            query: q,
            u1,
            u2,
            u1_above: above,
            clicks1: c1,
            clicks2: c2,
            impressions: n,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissClickEstimate {
    /// `None` when no tuple qualifies.
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub n0: usize,
    pub n1: usize,
    pub position_balanced: bool,
    pub per_impression: bool,
}

/// Estimates how often the url with fewer title misses is clicked more.
/// `P0` conditions on `miss(u1) < miss(u2)`, `P1` on
/// `miss(u1) + 1 < miss(u2)`. Each tuple is first oriented so `u1` has
/// fewer misses. With `position_balanced`, the tuples where the
/// fewer-miss url was shown above and those where it was shown below each
/// carry half the weight. With `per_impression`, click counts are divided
/// by the tuple's impressions.
pub fn p0_p1(tuples: &[ClickTuple], position_balanced: bool, per_impression: bool) -> Result<MissClickEstimate> {
    let oriented: Vec<ClickTuple> = tuples
        .iter()
        .map(|t| if t.miss1 <= t.miss2 { t.clone() } else { t.swapped() })
        .collect();
    let wins = |t: &ClickTuple| {
        if per_impression {
            let n = t.impressions.max(1) as f64;
            t.clicks1 as f64 / n > t.clicks2 as f64 / n
        } else {
            t.clicks1 > t.clicks2
        }
    };
    let estimate = |gap: usize| -> Result<(Option<f64>, usize)> {
        let qualifying: Vec<&ClickTuple> = oriented.iter().filter(|t| t.miss1 + gap < t.miss2).collect();
        let n = qualifying.len();
        if n == 0 {
            return Ok((None, 0));
        }
        let frac = |ts: &[&&ClickTuple]| ts.iter().filter(|t| wins(t)).count() as f64 / ts.len() as f64;
        if position_balanced {
            let above: Vec<&&ClickTuple> = qualifying.iter().filter(|t| t.u1_above).collect();
            let below: Vec<&&ClickTuple> = qualifying.iter().filter(|t| !t.u1_above).collect();
            if above.is_empty() || below.is_empty() {
                return Err(EvalError::Unbalanced);
            }
            Ok((Some(0.5 * frac(&above) + 0.5 * frac(&below)), n))
        } else {
            let all: Vec<&&ClickTuple> = qualifying.iter().collect();
            Ok((Some(frac(&all)), n))
        }
    };
    let (p0, n0) = estimate(0)?;
    let (p1, n1) = estimate(1)?;
    Ok(MissClickEstimate {
        p0,
        p1,
        n0,
        n1,
        position_balanced,
        per_impression,
    })
}

// ---- Wilcoxon signed-rank ----

/// Largest number of non-zero differences given the exact null
/// distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Sum of the ranks of the positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Mid-ranks of `|d|`, doubled so they are integers.
fn doubled_ranks(nonzero: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..nonzero.len()).collect();
    order.sort_by(|&a, &b| nonzero[a].abs().total_cmp(&nonzero[b].abs()));
    let mut ranks = vec![0u64; nonzero.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && nonzero[order[j + 1]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        // positions i..=j hold 1-based ranks i+1..=j+1; doubled mean = i + j + 2
        for &o in &order[i..=j] {
            ranks[o] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided test of a zero median. Zero differences are dropped and ties
/// share mid-ranks. Up to [`WILCOXON_EXACT_MAX`] differences use the exact
/// null distribution, beyond that a normal approximation with tie and
/// continuity corrections. All-zero input gives `p = 1`.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> WilcoxonResult {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return WilcoxonResult {
            n,
            w_plus: 0.0,
            p_value: 1.0,
            exact: true,
        };
    }
    let ranks = doubled_ranks(&nonzero);
    let w2: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let w_plus = w2 as f64 / 2.0;
    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX {
        (exact_p(&ranks, w2), true)
    } else {
        (normal_p(&ranks, w_plus), false)
    };
    WilcoxonResult {
        n,
        w_plus,
        p_value,
        exact,
    }
}

fn exact_p(ranks: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    // counts[s]: sign assignments whose doubled positive-rank sum is s
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=w2 as usize].iter().sum();
    let upper: f64 = counts[w2 as usize..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

fn normal_p(ranks: &[u64], w_plus: f64) -> f64 {
    let nf = ranks.len() as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let tie_term: f64 = sorted
        .chunk_by(|a, b| a == b)
        .map(|g| {
            let t = g.len() as f64;
            t * t * t - t
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let dev = (w_plus - mean).abs() - 0.5;
    if dev <= 0.0 || var <= 0.0 {
        return 1.0;
    }
    (2.0 * Normal::standard().sf(dev / var.sqrt())).min(1.0)
}

// ---- report ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub metric: String,
    pub baseline: String,
    pub method: String,
    pub mean_difference: f64,
    pub wilcoxon: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
    /// Score normalisation used for blending.
    pub normalization: String,
    pub heldout_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// method -> cutoff -> mean NDCG
    pub ndcg: BTreeMap<String, BTreeMap<usize, f64>>,
    pub per_query_ndcg: BTreeMap<String, Vec<QueryNdcg>>,
    pub pr_curves: BTreeMap<String, PrCurve>,
    pub pr_auc: BTreeMap<String, f64>,
    pub miss_click: Option<MissClickEstimate>,
    pub significance: Vec<SignificanceResult>,
    pub lambda_sweep: Vec<LambdaPoint>,
    /// model -> features by descending importance
    pub feature_importance: BTreeMap<String, Vec<(String, f64)>>,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let check = |field: String, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(EvalError::OutOfRange { field, value: v })
            }
        };
        for (m, ks) in &self.ndcg {
            for (k, v) in ks {
                check(format!("ndcg.{m}.{k}"), *v)?;
            }
        }
        for (m, c) in &self.pr_curves {
            for p in &c.points {
                check(format!("pr_curves.{m}.precision"), p.precision)?;
                check(format!("pr_curves.{m}.recall"), p.recall)?;
            }
        }
        for (m, v) in &self.pr_auc {
            check(format!("pr_auc.{m}"), *v)?;
        }
        if let Some(mc) = &self.miss_click {
            for v in mc.p0.iter().chain(&mc.p1) {
                check("miss_click".into(), *v)?;
            }
        }
        for s in &self.significance {
            check(format!("significance.{}", s.method), s.wilcoxon.p_value)?;
        }
        for l in &self.lambda_sweep {
            for v in l.ndcg.values() {
                check(format!("lambda_sweep.{}", l.lambda), *v)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn write_pr_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,tau,precision,recall,num_predicted")?;
        for (m, c) in &self.pr_curves {
            for p in &c.points {
                writeln!(w, "{m},{},{},{},{}", p.tau, p.precision, p.recall, p.num_predicted)?;
            }
        }
        w.flush()
    }

    pub fn write_ndcg_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,query,k,ndcg,all_zero")?;
        for (m, qs) in &self.per_query_ndcg {
            for q in qs {
                for (k, v) in &q.values {
                    writeln!(w, "{m},{},{k},{v},{}", csv_field(&q.query), q.all_zero)?;
                }
            }
        }
        w.flush()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::click_sim::substream;
    use crate::corpus::Snippet;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    /// Direct transcription of the NDCG sum, independent of the main path.
    fn ndcg_oracle(grades: &[u8], k: usize) -> f64 {
        let mut num = 0.0;
        for i in 1..=k.min(grades.len()) {
            num += (2f64.powi(i32::from(grades[i - 1])) - 1.0) / ((i + 1) as f64).ln() * std::f64::consts::LN_2;
        }
        let mut best = grades.to_vec();
        best.sort();
        best.reverse();
        let mut z = 0.0;
        for i in 1..=k.min(best.len()) {
            z += (2f64.powi(i32::from(best[i - 1])) - 1.0) / ((i + 1) as f64).ln() * std::f64::consts::LN_2;
        }
        if z == 0.0 {
            1.0
        } else {
            num / z
        }
    }

    #[test]
    fn ndcg_fixed_cases() {
        assert_eq!(ndcg_at_k(&[4, 3, 2, 1, 0], 5).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[2, 2, 2], 2).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[0, 0], 1).unwrap(), 1.0);
        let rev = ndcg_at_k(&[0, 1, 2, 3, 4], 5).unwrap();
        assert!((rev - ndcg_oracle(&[0, 1, 2, 3, 4], 5)).abs() < 1e-12);
        assert!(rev < 1.0);
        assert_eq!(ndcg_at_k(&[], 3), Err(EvalError::EmptyList));
        assert_eq!(ndcg_at_k(&[1], 0), Err(EvalError::InvalidCutoff));
        assert_eq!(ndcg_at_k(&[5], 1), Err(EvalError::InvalidGrade(5)));
    }

    proptest! {
        #[test]
        fn ndcg_matches_oracle(grades in prop::collection::vec(0u8..5, 1..15), k in 1usize..12) {
            let v = ndcg_at_k(&grades, k).unwrap();
            prop_assert!((v - ndcg_oracle(&grades, k)).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
        }

        #[test]
        fn ndcg_ignores_reordering_below_cutoff(grades in prop::collection::vec(0u8..5, 2..15), k in 1usize..8) {
            let mut g = grades.clone();
            if k < g.len() {
                g[k..].reverse();
            }
            prop_assert_eq!(ndcg_at_k(&g, k).unwrap(), ndcg_at_k(&grades, k).unwrap());
        }

        #[test]
        fn pr_curve_is_monotone(gaps in prop::collection::vec(-5.0f64..5.0, 1..60), taus in prop::collection::vec(-1.0f64..6.0, 1..20)) {
            let c = pr_from_gaps(&gaps, &taus).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
                prop_assert!(w[1].num_predicted <= w[0].num_predicted);
            }
            for p in &c.points {
                prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
            }
        }

        #[test]
        fn p0_unchanged_by_role_swap(
            raw in prop::collection::vec((0u64..20, 0u64..20, 0usize..4, 0usize..4, prop::bool::ANY), 1..40)
        ) {
            let tuples: Vec<ClickTuple> = raw.iter().enumerate().map(|(i, &(c1, c2, m1, m2, above))| ClickTuple {
                query: format!("q{i}"),
                u1: "a".into(),
                u2: "b".into(),
                u1_above: above,
                clicks1: c1,
                clicks2: c2,
                impressions: 20,
                miss1: m1,
                miss2: m2,
            }).collect();
            let swapped: Vec<ClickTuple> = tuples.iter().map(ClickTuple::swapped).collect();
            prop_assert_eq!(p0_p1(&tuples, false, false).unwrap(), p0_p1(&swapped, false, false).unwrap());
            prop_assert_eq!(p0_p1(&tuples, false, true).unwrap(), p0_p1(&swapped, false, true).unwrap());
        }
    }

    #[test]
    fn pr_boundaries() {
        let truth: BTreeMap<Key, f64> = (0..5)
            .map(|i| (("q".to_string(), format!("u{i}")), i as f64 / 10.0))
            .collect();
        let c = pairwise_pr(&truth, &truth, &[-1e-9, f64::INFINITY]).unwrap();
        assert_eq!((c.points[0].precision, c.points[0].recall), (1.0, 1.0));
        assert_eq!(c.points[0].num_predicted, 10);
        assert_eq!(
            (c.points[1].precision, c.points[1].recall, c.points[1].num_predicted),
            (1.0, 0.0, 0)
        );
        assert_eq!(pr_auc(&truth, &truth).unwrap(), 1.0);
        let single: BTreeMap<Key, f64> = [(("q".to_string(), "u".to_string()), 1.0)].into_iter().collect();
        assert_eq!(pairwise_pr(&single, &single, &[0.0]), Err(EvalError::NoPairs));
    }

    #[test]
    fn pr_auc_hand_case() {
        // |gap| order: 3 (right), 2 (wrong), 1 (right), 0 (never predicted)
        let auc = pr_auc_from_gaps(&[1.0, -2.0, 3.0, 0.0]).unwrap();
        let expected = 0.25 * 1.0 + 0.25 * (2.0 / 3.0);
        assert!((auc - expected).abs() < 1e-15);
        // tied magnitudes enter together
        let tied = pr_auc_from_gaps(&[1.0, -1.0]).unwrap();
        assert!((tied - 0.25).abs() < 1e-15);
    }

    #[test]
    fn random_scores_give_chance_precision() {
        let mut rng = substream(5, &[]);
        let gaps: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() - rng.random::<f64>()).collect();
        let c = pr_from_gaps(&gaps, &[1e-6]).unwrap();
        let p = c.points[0].precision;
        let sigma = (0.25 / c.points[0].num_predicted as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "precision {p}");
    }

    #[test]
    fn tau_grid_spans_gaps() {
        let g = tau_grid(&[0.5, -2.0, 1.0], 5);
        assert_eq!(g.len(), 6);
        assert!(g[0] < 0.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(*g.last().unwrap(), 2.0);
    }

    fn tuple(c1: u64, c2: u64, m1: usize, m2: usize, above: bool) -> ClickTuple {
        ClickTuple {
            query: "q".into(),
            u1: "a".into(),
            u2: "b".into(),
            u1_above: above,
            clicks1: c1,
            clicks2: c2,
            impressions: 10,
            miss1: m1,
            miss2: m2,
        }
    }

    #[test]
    fn p0_p1_fixed_cases() {
        let all = [tuple(5, 1, 0, 2, true), tuple(3, 2, 1, 3, false)];
        let e = p0_p1(&all, true, false).unwrap();
        assert_eq!((e.p0, e.p1, e.n0, e.n1), (Some(1.0), Some(1.0), 2, 2));
        let mixed = [
            tuple(5, 1, 0, 1, true),
            tuple(1, 5, 0, 1, true),
            tuple(2, 2, 0, 3, true),
        ];
        let e = p0_p1(&mixed, false, false).unwrap();
        assert_eq!(e.p0, Some(1.0 / 3.0));
        assert_eq!((e.p1, e.n1), (Some(0.0), 1));
        assert_eq!(p0_p1(&mixed, true, false), Err(EvalError::Unbalanced));
        let none = p0_p1(&[tuple(1, 0, 2, 2, true)], false, false).unwrap();
        assert_eq!((none.p0, none.p1), (None, None));
    }

    #[test]
    fn balanced_weights_each_presentation_order_equally() {
        let ts = [
            tuple(5, 1, 0, 1, true),
            tuple(5, 1, 0, 1, true),
            tuple(5, 1, 0, 1, true),
            tuple(1, 5, 0, 1, false),
        ];
        let e = p0_p1(&ts, true, false).unwrap();
        assert_eq!(e.p0, Some(0.5));
        assert_eq!(p0_p1(&ts, false, false).unwrap().p0, Some(0.75));
    }

    #[test]
    fn click_tuples_from_sessions() {
        let mut snippets = SnippetMap::new();
        for (u, t) in [("a", "red fox"), ("b", "red"), ("c", "nothing")] {
            snippets.insert(("red fox".into(), u.into()), Snippet::new(u, t, ""));
        }
        let s = |res: [&str; 3], clicks: [bool; 3]| Session {
            query_id: "red fox".into(),
            results: res.iter().map(|x| x.to_string()).collect(),
            clicks: clicks.to_vec(),
            user_id: None,
        };
        let sessions = [
            s(["a", "b", "c"], [true, false, false]),
            s(["b", "a", "c"], [true, true, false]),
            s(["a", "b", "c"], [false, true, false]),
        ];
        let ts = build_click_tuples(&sessions, &snippets);
        // (a, b) appears in both orders; (a, c) and (b, c) only one way
        assert_eq!(ts.len(), 4);
        let ab_above = ts.iter().find(|t| t.u1 == "a" && t.u2 == "b" && t.u1_above).unwrap();
        assert_eq!((ab_above.clicks1, ab_above.clicks2, ab_above.impressions), (1, 1, 2));
        assert_eq!((ab_above.miss1, ab_above.miss2), (0, 1));
        let ab_below = ts.iter().find(|t| t.u1 == "a" && t.u2 == "b" && !t.u1_above).unwrap();
        assert_eq!((ab_below.clicks1, ab_below.clicks2, ab_below.impressions), (1, 1, 1));
        let ac = ts.iter().find(|t| t.u1 == "a" && t.u2 == "c").unwrap();
        assert_eq!(ac.miss2, 2);
    }

    /// Two-sided p-value by enumerating every sign assignment.
    fn wilcoxon_oracle(diffs: &[f64]) -> f64 {
        let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
        if d.is_empty() {
            return 1.0;
        }
        let mut abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let rank = |v: f64| {
            let below = abs.iter().filter(|&&a| a < v).count() as f64;
            let equal = abs.iter().filter(|&&a| a == v).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = d.iter().map(|x| rank(x.abs())).collect();
        let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let n = d.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn wilcoxon_fixed_cases() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(r.p_value, 0.03125);
        assert_eq!(r.w_plus, 21.0);
        assert_eq!(wilcoxon_signed_rank(&[1.0, -1.0, 2.5, -2.5, 3.0, -3.0]).p_value, 1.0);
        assert_eq!(wilcoxon_signed_rank(&[0.0, 0.0]).p_value, 1.0);
        assert_eq!(wilcoxon_signed_rank(&[]).p_value, 1.0);
    }

    proptest! {
        #[test]
        fn wilcoxon_exact_matches_enumeration(diffs in prop::collection::vec(prop::sample::select(vec![-3.0, -2.0, -1.5, -1.0, 0.0, 1.0, 1.5, 2.0, 3.0, 4.0]), 1..12)) {
            let r = wilcoxon_signed_rank(&diffs);
            prop_assert!(r.exact);
            prop_assert!((r.p_value - wilcoxon_oracle(&diffs)).abs() < 1e-10);
        }
    }

    #[test]
    fn wilcoxon_large_sample() {
        let mut rng = substream(7, &[]);
        let shifted: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.35).collect();
        let r = wilcoxon_signed_rank(&shifted);
        assert!(!r.exact);
        assert!(r.p_value < 0.01, "{r:?}");
        let centred: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 1.0 + i as f64 } else { -(i as f64) })
            .collect();
        let r = wilcoxon_signed_rank(&centred);
        assert!(r.p_value > 0.5, "{r:?}");
        // exact and approximate agree closely at the switch-over size
        let d: Vec<f64> = (1..=25)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 })
            .collect();
        let ranks = doubled_ranks(&d);
        let w2: u64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
        let (exact, approx) = (exact_p(&ranks, w2), normal_p(&ranks, w2 as f64 / 2.0));
        assert!((approx - exact).abs() < 0.005, "{approx} vs {exact}");
    }

    #[test]
    fn report_round_trip_and_csv() {
        let mut r = EvalReport::default();
        r.ndcg
            .insert("f_org".into(), [(1, 0.5), (5, 0.75)].into_iter().collect());
        r.per_query_ndcg.insert(
            "f_org".into(),
            vec![QueryNdcg {
                query: "a, b".into(),
                all_zero: false,
                values: [(1, 0.5)].into_iter().collect(),
            }],
        );
        r.pr_curves
            .insert("a_tail".into(), pr_from_gaps(&[1.0, -0.5], &[0.0, 0.7]).unwrap());
        r.pr_auc.insert("a_tail".into(), 0.5);
        r.validate().unwrap();
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let mut csv = Vec::new();
        r.write_ndcg_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "method,query,k,ndcg,all_zero\nf_org,\"a, b\",1,0.5,false\n"
        );
        let mut pr = Vec::new();
        r.write_pr_csv(&mut pr).unwrap();
        assert_eq!(String::from_utf8(pr).unwrap().lines().count(), 3);
        r.pr_auc.insert("bad".into(), 1.5);
        assert!(matches!(r.validate(), Err(EvalError::OutOfRange { .. })));
    }

    #[test]
    fn per_query_ndcg_records_all_zero_queries() {
        let lists = vec![
            RankedList::from_scores("q1", [("a", 2.0), ("b", 1.0), ("x", 0.5)]).unwrap(),
            RankedList::from_scores("q2", [("c", 1.0)]).unwrap(),
        ];
        let grades: BTreeMap<Key, u8> = [
            (("q1".into(), "a".into()), 1),
            (("q1".into(), "b".into()), 3),
            (("q2".into(), "c".into()), 0),
        ]
        .into_iter()
        .collect();
        let per = ndcg_per_query(&lists, &grades, &[1, 5]).unwrap();
        assert_eq!(per.len(), 2);
        assert!((per[0].values[&1] - 1.0 / 7.0).abs() < 1e-15);
        assert!(per[1].all_zero);
        let mean = mean_ndcg(&per);
        assert!((mean[&1] - (1.0 / 7.0 + 1.0) / 2.0).abs() < 1e-15);
    }
}
