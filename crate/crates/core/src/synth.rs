//! Synthetic corpora with known ground truth.
//!
//! Head queries get snippets, planted click-model parameters and simulated
//! sessions; tail queries get snippets and graded judgments with a
//! baseline feature block. Planted attractiveness is a noisy logistic
//! function of how well the title and abstract match the query, how many
//! attractive words the title carries, the url length and its top-level
//! domain.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::click_sim::{simulate_clicks, substream, DbnQueryParams};
use crate::corpus::{GradedJudgment, Session, Snippet, SnippetMap};
use crate::features::TopLevelDomain;

/// Share of each top-level domain among generated urls, in
/// [`TopLevelDomain::ALL`] order.
pub const TLD_WEIGHTS: [f64; 5] = [0.7526, 0.1019, 0.0408, 0.0189, 0.0858];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitWeights {
    pub intercept: f64,
    /// Per unit of `(exact + 0.5 * misspelt) / query length` in the title.
    pub title_match: f64,
    /// Per attractive word in the title, counting at most two.
    pub attractive_word: f64,
    /// Per unit of the fraction of query tokens found in the abstract.
    pub abstract_match: f64,
    /// Per ten url characters beyond thirty.
    pub url_length: f64,
    /// Indexed like [`TopLevelDomain::ALL`].
    pub domain: [f64; 5],
    pub noise_sd: f64,
}

impl Default for LogitWeights {
    fn default() -> Self {
        LogitWeights {
            intercept: -1.2,
            title_match: 2.5,
            attractive_word: 0.9,
            abstract_match: 0.8,
            url_length: -0.3,
            domain: [0.2, 0.3, 0.0, 0.3, -0.4],
            noise_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgmentSynth {
    pub baseline_dim: usize,
    /// Leading baseline columns that carry signal about latent relevance.
    pub informative: usize,
    pub baseline_noise: f64,
    /// Weight of centred planted attractiveness in the graded relevance.
    pub attractiveness_weight: f64,
    pub grade_noise: f64,
}

impl Default for JudgmentSynth {
    fn default() -> Self {
        JudgmentSynth {
            baseline_dim: 20,
            informative: 8,
            baseline_noise: 1.5,
            attractiveness_weight: 3.0,
            grade_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub head_queries: usize,
    pub tail_queries: usize,
    pub urls_per_query: usize,
    pub sessions_per_query: usize,
    pub vocabulary: usize,
    pub attractive_words: usize,
    pub gamma: f64,
    pub satisfaction_min: f64,
    pub satisfaction_max: f64,
    /// Chance that each adjacent pair of the default order is swapped in a
    /// session.
    pub swap_prob: f64,
    pub logit: LogitWeights,
    pub judgments: JudgmentSynth,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            head_queries: 1000,
            tail_queries: 300,
            urls_per_query: 10,
            sessions_per_query: 300,
            vocabulary: 3000,
            attractive_words: 40,
            gamma: 0.7,
            satisfaction_min: 0.1,
            satisfaction_max: 0.6,
            swap_prob: 0.3,
            logit: LogitWeights::default(),
            judgments: JudgmentSynth::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.urls_per_query < 2 || self.urls_per_query > crate::corpus::DEFAULT_MAX_RESULTS {
            return Err(format!(
                "urls_per_query must lie in [2, {}]",
                crate::corpus::DEFAULT_MAX_RESULTS
            ));
        }
        if self.head_queries + self.tail_queries == 0 {
            return Err("no queries requested".into());
        }
        if self.vocabulary < 50 + self.attractive_words {
            return Err("vocabulary must exceed attractive_words by at least 50".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err("gamma must lie in [0, 1]".into());
        }
        if !(0.0 <= self.satisfaction_min
            && self.satisfaction_min <= self.satisfaction_max
            && self.satisfaction_max <= 1.0)
        {
            return Err("satisfaction range must lie within [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err("swap_prob must lie in [0, 1]".into());
        }
        let j = &self.judgments;
        if j.informative > j.baseline_dim {
            return Err("informative baseline columns exceed baseline_dim".into());
        }
        if self.logit.noise_sd < 0.0 || j.baseline_noise < 0.0 || j.grade_noise < 0.0 {
            return Err("noise scales must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUrl {
    pub url: String,
    pub a: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedQuery {
    pub query: String,
    /// Default presentation order.
    pub urls: Vec<PlantedUrl>,
}

impl PlantedQuery {
    pub fn params(&self, gamma: f64) -> DbnQueryParams {
        DbnQueryParams {
            attractiveness: self.urls.iter().map(|u| u.a).collect(),
            satisfaction: self.urls.iter().map(|u| u.s).collect(),
            gamma,
        }
    }
}

/// Planted parameters, written as `params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub gamma: f64,
    pub queries: Vec<PlantedQuery>,
}

impl GroundTruth {
    pub fn attractiveness(&self) -> BTreeMap<(String, String), f64> {
        self.queries
            .iter()
            .flat_map(|q| q.urls.iter().map(move |u| ((q.query.clone(), u.url.clone()), u.a)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ground truth serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sessions: Vec<Session>,
    pub snippets: SnippetMap,
    pub judgments: Vec<GradedJudgment>,
    /// Head queries only.
    pub truth: GroundTruth,
    /// Planted attractiveness of the judged tail urls.
    pub tail_attractiveness: BTreeMap<(String, String), f64>,
}

// substream tags
const VOCAB: u64 = 1;
const HEAD: u64 = 2;
const TAIL: u64 = 3;
const SESSIONS: u64 = 4;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Vocabulary {
    content: Vec<String>,
    attractive: Vec<String>,
}

impl Vocabulary {
    fn generate(size: usize, attractive: usize, rng: &mut ChaCha8Rng) -> Self {
        const ONSETS: &[&str] = &[
            "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "st",
        ];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
        let mut seen = BTreeSet::new();
        let mut words = Vec::with_capacity(size);
        while words.len() < size {
            let syllables = rng.random_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS[rng.random_range(0..ONSETS.len())],
                        VOWELS[rng.random_range(0..VOWELS.len())]
                    )
                })
                .collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let content = words.split_off(attractive);
        Vocabulary {
            content,
            attractive: words,
        }
    }

    fn content_word(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.content[rng.random_range(0..self.content.len())]
    }
}

/// Replaces one interior character so the edit distance is 1.
fn misspell(word: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    let i = rng.random_range(1..chars.len());
    let mut out = chars.clone();
    out[i] = if chars[i] == 'x' { 'q' } else { 'x' };
    out.into_iter().collect()
}

fn capitalise(word: &str) -> String {
    let mut c = word.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

struct GeneratedUrl {
    snippet: Snippet,
    a: f64,
}

fn generate_snippet(
    query_tokens: &[String],
    vocab: &Vocabulary,
    weights: &LogitWeights,
    used_urls: &mut BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> GeneratedUrl {
    let qlen = query_tokens.len();
    let filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        let mut v = Vec::with_capacity(n);
        while v.len() < n {
            let w = vocab.content_word(rng);
            if !query_tokens.iter().any(|q| q == w) {
                v.push(w.to_owned());
            }
        }
        v
    };

    // title
    let shown = rng.random_range(0..=qlen);
    let mut picked: Vec<usize> = (0..qlen).collect();
    picked.shuffle(rng);
    picked.truncate(shown);
    picked.sort_unstable();
    let (mut exact, mut misspelt) = (0usize, 0usize);
    let mut matched: Vec<String> = Vec::new();
    for &i in &picked {
        let t = &query_tokens[i];
        if t.chars().count() >= 4 && rng.random::<f64>() < 0.2 {
            misspelt += 1;
            matched.push(misspell(t, rng));
        } else {
            exact += 1;
            matched.push(t.clone());
        }
    }
    let attractive_count = match rng.random::<f64>() {
        p if p < 0.12 => 2,
        p if p < 0.4 => 1,
        _ => 0,
    };
    let n = rng.random_range(2..=6);
    let mut words = filler(rng, n);
    for _ in 0..attractive_count {
        words.push(vocab.attractive[rng.random_range(0..vocab.attractive.len())].clone());
    }
    words.shuffle(rng);
    if rng.random::<f64>() < 0.5 {
        // keep the matched tokens together and in query order
        let at = rng.random_range(0..=words.len());
        words.splice(at..at, matched);
    } else {
        for m in matched {
            let at = rng.random_range(0..=words.len());
            words.insert(at, m);
        }
    }
    let title = words
        .iter()
        .map(|w| {
            if rng.random::<f64>() < 0.4 {
                capitalise(w)
            } else {
                w.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ");

    // abstract
    let segments = rng.random_range(1..=3);
    let mut in_abstract = BTreeSet::new();
    let mut segs = Vec::with_capacity(segments);
    for _ in 0..segments {
        let n = rng.random_range(4..=9);
        let mut seg = filler(rng, n);
        for (i, t) in query_tokens.iter().enumerate() {
            if rng.random::<f64>() < 0.35 {
                seg.insert(rng.random_range(0..=seg.len()), t.clone());
                in_abstract.insert(i);
            }
        }
        segs.push(seg.join(" "));
    }
    let abstract_text = format!("{}.", segs.join(". "));

    // url
    let tld_index = {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        TLD_WEIGHTS
            .iter()
            .position(|w| {
                acc += w;
                x < acc
            })
            .unwrap_or(TLD_WEIGHTS.len() - 1)
    };
    let tld = match TopLevelDomain::ALL[tld_index] {
        TopLevelDomain::Others => ["uk", "de", "info", "gov"][rng.random_range(0..4)],
        d => d.as_str(),
    };
    let url = loop {
        let host = if rng.random::<f64>() < 0.3 && qlen > 0 {
            query_tokens[rng.random_range(0..qlen)].clone()
        } else {
            vocab.content_word(rng).to_owned()
        };
        let sub = if rng.random::<f64>() < 0.7 { "www." } else { "" };
        let depth = rng.random_range(0..=3);
        let path: Vec<String> = filler(rng, depth);
        let candidate = format!("http://{sub}{host}.{tld}/{}", path.join("/"));
        if used_urls.insert(candidate.clone()) {
            break candidate;
        }
    };

    let title_score = (exact as f64 + 0.5 * misspelt as f64) / qlen as f64;
    let abstract_score = in_abstract.len() as f64 / qlen as f64;
    let url_chars = url.chars().count() as f64;
    let noise = Normal::new(0.0, weights.noise_sd.max(0.0))
        .expect("noise scale is finite")
        .sample(rng);
    let z = weights.intercept
        + weights.title_match * title_score
        + weights.attractive_word * attractive_count as f64
        + weights.abstract_match * abstract_score
        + weights.url_length * (url_chars - 30.0) / 10.0
        + weights.domain[tld_index]
        + noise;
    GeneratedUrl {
        snippet: Snippet::new(url, title, abstract_text),
        a: sigmoid(z).clamp(0.02, 0.98),
    }
}

fn generate_query(vocab: &Vocabulary, used: &mut BTreeSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    loop {
        let len = rng.random_range(1..=3);
        let mut tokens: Vec<String> = Vec::with_capacity(len);
        while tokens.len() < len {
            let w = vocab.content_word(rng).to_owned();
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        if used.insert(tokens.join(" ")) {
            return tokens;
        }
    }
}

/// Session result orders: the default order with each adjacent pair
/// swapped independently, scanning top to bottom.
fn presentation_order(k: usize, swap_prob: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    let mut i = 0;
    while i + 1 < k {
        if rng.random::<f64>() < swap_prob {
            order.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    order
}

/// Sessions for planted queries; session `j` of query `i` uses the
/// substream `(seed, [SESSIONS, i, j])`.
pub fn simulate_planted(truth: &GroundTruth, sessions_per_query: usize, swap_prob: f64, seed: u64) -> Vec<Session> {
    use rayon::prelude::*;
    truth
        .queries
        .par_iter()
        .enumerate()
        .flat_map_iter(|(qi, q)| {
            (0..sessions_per_query).map(move |j| {
                let mut rng = substream(seed, &[SESSIONS, qi as u64, j as u64]);
                let order = presentation_order(q.urls.len(), swap_prob, &mut rng);
                let shown: Vec<&PlantedUrl> = order.iter().map(|&o| &q.urls[o]).collect();
                let params = DbnQueryParams {
                    attractiveness: shown.iter().map(|u| u.a).collect(),
                    satisfaction: shown.iter().map(|u| u.s).collect(),
                    gamma: truth.gamma,
                };
                Session {
                    query_id: q.query.clone(),
                    results: shown.iter().map(|u| u.url.clone()).collect(),
                    clicks: simulate_clicks(&params, &mut rng),
                    user_id: None,
                }
            })
        })
        .collect()
}

/// Queries `q0..` with urls `q{i}-u{j}`, attractiveness and satisfaction
/// drawn uniformly from the given ranges.
pub fn uniform_truth(
    queries: usize,
    urls: usize,
    a_range: (f64, f64),
    s_range: (f64, f64),
    gamma: f64,
    seed: u64,
) -> GroundTruth {
    let queries = (0..queries)
        .map(|i| {
            let mut rng = substream(seed, &[HEAD, i as u64]);
            PlantedQuery {
                query: format!("q{i}"),
                urls: (0..urls)
                    .map(|j| PlantedUrl {
                        url: format!("q{i}-u{j}"),
                        a: rng.random_range(a_range.0..=a_range.1),
                        s: rng.random_range(s_range.0..=s_range.1),
                    })
                    .collect(),
            }
        })
        .collect();
    GroundTruth { gamma, queries }
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthCorpus, String> {
    config.validate()?;
    let vocab = Vocabulary::generate(
        config.vocabulary,
        config.attractive_words,
        &mut substream(seed, &[VOCAB]),
    );
    let mut used_queries = BTreeSet::new();
    let mut used_urls = BTreeSet::new();
    let mut snippets = SnippetMap::new();
    let k = config.urls_per_query;

    let mut head = Vec::with_capacity(config.head_queries);
    for qi in 0..config.head_queries {
        let mut rng = substream(seed, &[HEAD, qi as u64]);
        let tokens = generate_query(&vocab, &mut used_queries, &mut rng);
        let query = tokens.join(" ");
        let mut urls: Vec<(PlantedUrl, f64)> = (0..k)
            .map(|_| {
                let g = generate_snippet(&tokens, &vocab, &config.logit, &mut used_urls, &mut rng);
                let s = rng.random_range(config.satisfaction_min..=config.satisfaction_max);
                let url = g.snippet.url.clone();
                snippets.insert((query.clone(), url.clone()), g.snippet);
                // the default order follows a noisy view of attractiveness
                let order_key = g.a + 0.3 * (rng.random::<f64>() - 0.5);
                (PlantedUrl { url, a: g.a, s }, order_key)
            })
            .collect();
        urls.sort_by(|x, y| y.1.total_cmp(&x.1));
        head.push(PlantedQuery {
            query,
            urls: urls.into_iter().map(|(u, _)| u).collect(),
        });
    }
    let truth = GroundTruth {
        gamma: config.gamma,
        queries: head,
    };
    let sessions = simulate_planted(&truth, config.sessions_per_query, config.swap_prob, seed);

    let j = &config.judgments;
    let mut judgments = Vec::new();
    let mut tail_attractiveness = BTreeMap::new();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for ti in 0..config.tail_queries {
        let mut rng = substream(seed, &[TAIL, ti as u64]);
        let tokens = generate_query(&vocab, &mut used_queries, &mut rng);
        let query = tokens.join(" ");
        let loadings: Vec<f64> = (0..j.baseline_dim)
            .map(|c| if c < j.informative { 1.0 } else { 0.0 })
            .collect();
        for _ in 0..k {
            let g = generate_snippet(&tokens, &vocab, &config.logit, &mut used_urls, &mut rng);
            let relevance = unit.sample(&mut rng);
            let features: Vec<f64> = loadings
                .iter()
                .map(|l| l * relevance + j.baseline_noise * unit.sample(&mut rng))
                .collect();
            let baseline_score = features[..j.informative].iter().sum::<f64>() / (j.informative.max(1) as f64);
            let y = relevance + j.attractiveness_weight * (g.a - 0.5) + j.grade_noise * unit.sample(&mut rng);
            let grade = (y + 2.0).round().clamp(0.0, 4.0) as u8;
            let url = g.snippet.url.clone();
            tail_attractiveness.insert((query.clone(), url.clone()), g.a);
            snippets.insert((query.clone(), url.clone()), g.snippet);
            judgments.push(GradedJudgment {
                query_id: query.clone(),
                url,
                grade,
                baseline_score,
                baseline_features: Some(features),
            });
        }
    }

    Ok(SynthCorpus {
        sessions,
        snippets,
        judgments,
        truth,
        tail_attractiveness,
    })
}
