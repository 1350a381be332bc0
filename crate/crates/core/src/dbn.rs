//! MAP estimation of DBN click-model parameters by expectation maximisation.
//!
//! Attractiveness `a` and satisfaction `s` are shared by every impression of
//! a `(query, url)` pair regardless of its rank, so position bias is
//! absorbed by the examination chain. Perseverance `gamma` is one value for
//! the whole fit; it is either fixed or picked from a grid by held-out
//! likelihood.
//!
//! E-step: forward-backward over the examination chain of each distinct
//! `(result list, click vector)` pattern gives the posterior expectations of
//! the hidden attractiveness and satisfaction indicators. M-step: the mode of
//! the Beta posterior implied by those expected counts.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::click_sim::{click_log_likelihood, ClickModelError, DbnQueryParams};
use crate::corpus::Session;

#[derive(Debug, Error)]
pub enum DbnError {
    #[error("no sessions to fit")]
    NoSessions,
    #[error("invalid DBN configuration: {0}")]
    InvalidConfig(String),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error(transparent)]
    ClickModel(#[from] ClickModelError),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DbnError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior { alpha: 1.0, beta: 1.0 }
    }
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Self {
        BetaPrior { alpha, beta }
    }

    /// Mode of the prior; the mean (1/2) when the mode is not unique.
    pub fn mode(&self) -> f64 {
        self.posterior_mode(0.0, 0.0)
    }

    /// Posterior mode after `successes` out of `trials` (both may be
    /// fractional expected counts).
    pub fn posterior_mode(&self, successes: f64, trials: f64) -> f64 {
        let den = trials + self.alpha + self.beta - 2.0;
        if den <= 0.0 {
            return 0.5;
        }
        ((successes + self.alpha - 1.0) / den).clamp(0.0, 1.0)
    }

    /// Log density up to the normalising constant.
    fn log_density(&self, p: f64) -> f64 {
        let term = |w: f64, x: f64| if w == 0.0 { 0.0 } else { w * x.ln() };
        term(self.alpha - 1.0, p) + term(self.beta - 1.0, 1.0 - p)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.alpha >= 1.0 && self.beta >= 1.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(())
        } else {
            Err(DbnError::InvalidConfig(format!(
                "{what} prior Beta({}, {}) needs alpha, beta >= 1 for a posterior mode",
                self.alpha, self.beta
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Fixed(f64),
    Grid(Vec<f64>),
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Grid(vec![0.6, 0.7, 0.8, 0.9, 0.95, 1.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbnFitConfig {
    pub prior_a: BetaPrior,
    pub prior_s: BetaPrior,
    pub gamma: GammaSpec,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// For grid selection every `heldout_every`-th session of each query is
    /// held out.
    pub heldout_every: usize,
}

impl Default for DbnFitConfig {
    fn default() -> Self {
        DbnFitConfig {
            prior_a: BetaPrior::default(),
            prior_s: BetaPrior::default(),
            gamma: GammaSpec::default(),
            tol: 1e-6,
            max_iter: 200,
            heldout_every: 5,
        }
    }
}

impl DbnFitConfig {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = GammaSpec::Fixed(gamma);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.prior_a.validate("attractiveness")?;
        self.prior_s.validate("satisfaction")?;
        let gammas = match &self.gamma {
            GammaSpec::Fixed(g) => std::slice::from_ref(g),
            GammaSpec::Grid(gs) => gs.as_slice(),
        };
        if gammas.is_empty() {
            return Err(DbnError::InvalidConfig("empty gamma grid".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(DbnError::InvalidConfig(format!("gamma {g} outside [0, 1]")));
        }
        if !(self.tol > 0.0) {
            return Err(DbnError::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(DbnError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if matches!(self.gamma, GammaSpec::Grid(_)) && self.heldout_every < 2 {
            return Err(DbnError::InvalidConfig("heldout_every must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbnEntry {
    pub a: f64,
    pub s: f64,
    /// Sessions in which the url was shown for the query.
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnEstimate {
    pub gamma: f64,
    pub entries: BTreeMap<(String, String), DbnEntry>,
    pub query_sessions: BTreeMap<String, u64>,
    pub prior_a: BetaPrior,
    pub prior_s: BetaPrior,
    /// MAP objective (log-likelihood plus unnormalised log-priors) after
    /// each E-step; the last entry belongs to the returned parameters.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl DbnEstimate {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }

    pub fn entry(&self, query: &str, url: &str) -> Option<&DbnEntry> {
        self.entries.get(&(query.to_owned(), url.to_owned()))
    }

    /// Attractiveness, or the prior mode for an unseen pair.
    pub fn attractiveness(&self, query: &str, url: &str) -> f64 {
        self.entry(query, url).map_or(self.prior_a.mode(), |e| e.a)
    }

    pub fn satisfaction(&self, query: &str, url: &str) -> f64 {
        self.entry(query, url).map_or(self.prior_s.mode(), |e| e.s)
    }

    pub fn sessions_for(&self, query: &str) -> u64 {
        self.query_sessions.get(query).copied().unwrap_or(0)
    }

    /// Per-position parameters for the result list of `session`.
    pub fn params_for(&self, session: &Session) -> DbnQueryParams {
        DbnQueryParams {
            attractiveness: session
                .results
                .iter()
                .map(|u| self.attractiveness(&session.query_id, u))
                .collect(),
            satisfaction: session
                .results
                .iter()
                .map(|u| self.satisfaction(&session.query_id, u))
                .collect(),
            gamma: self.gamma,
        }
    }
}

/// Forward and backward messages of the examination chain for one click
/// vector. `forward[i] = (P(C_<i, E_i=0), P(C_<i, E_i=1))`,
/// `backward[i] = (P(C_>=i | E_i=0), P(C_>=i | E_i=1))`.
struct Chain {
    forward: Vec<(f64, f64)>,
    backward: Vec<(f64, f64)>,
    likelihood: f64,
}

impl Chain {
    /// P(E_i = 1 | clicks), normalised locally so position 0 is exactly 1.
    fn examined(&self, i: usize) -> f64 {
        let on = self.forward[i].1 * self.backward[i].1;
        let off = self.forward[i].0 * self.backward[i].0;
        on / (on + off)
    }
}

fn transition(a: f64, s: f64, g: f64, clicked: bool) -> [[f64; 2]; 2] {
    // m[from][to], from/to: 0 = not examined, 1 = examined
    if clicked {
        [[0.0, 0.0], [a * (s + (1.0 - s) * (1.0 - g)), a * (1.0 - s) * g]]
    } else {
        [[1.0, 0.0], [(1.0 - a) * (1.0 - g), (1.0 - a) * g]]
    }
}

fn chain(params: &DbnQueryParams, clicks: &[bool]) -> Chain {
    let k = clicks.len();
    let mats: Vec<_> = (0..k)
        .map(|i| {
            transition(
                params.attractiveness[i],
                params.satisfaction[i],
                params.gamma,
                clicks[i],
            )
        })
        .collect();
    let mut forward = Vec::with_capacity(k + 1);
    forward.push((0.0, 1.0));
    for m in &mats {
        let (f0, f1) = *forward.last().unwrap();
        forward.push((f0 * m[0][0] + f1 * m[1][0], f0 * m[0][1] + f1 * m[1][1]));
    }
    let mut backward = vec![(1.0, 1.0); k + 1];
    for i in (0..k).rev() {
        let m = &mats[i];
        let (b0, b1) = backward[i + 1];
        backward[i] = (m[0][0] * b0 + m[0][1] * b1, m[1][0] * b0 + m[1][1] * b1);
    }
    let (l0, l1) = forward[k];
    Chain {
        forward,
        backward,
        likelihood: l0 + l1,
    }
}

/// Posterior probability that each position was examined, given the clicks.
pub fn posterior_examination(params: &DbnQueryParams, session: &Session) -> Result<Vec<f64>> {
    params.validate()?;
    if session.clicks.len() != params.len() {
        return Err(ClickModelError::LengthMismatch {
            session: session.clicks.len(),
            params: params.len(),
        }
        .into());
    }
    let c = chain(params, &session.clicks);
    if !(c.likelihood > 0.0) {
        return Err(ClickModelError::ZeroProbability.into());
    }
    Ok((0..session.clicks.len()).map(|i| c.examined(i)).collect())
}

/// Sessions of one query, collapsed into distinct patterns.
struct QueryData {
    query: String,
    urls: Vec<String>,
    impressions: Vec<u64>,
    sessions: u64,
    patterns: Vec<Pattern>,
}

struct Pattern {
    slots: Vec<usize>,
    clicks: Vec<bool>,
    count: f64,
}

fn group_sessions(sessions: &[&Session]) -> Vec<QueryData> {
    let mut by_query: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        by_query.entry(&s.query_id).or_default().push(s);
    }
    by_query
        .into_iter()
        .map(|(query, list)| {
            let mut slot_of: HashMap<&str, usize> = HashMap::new();
            let mut urls = Vec::new();
            let mut impressions = Vec::new();
            let mut pattern_of: HashMap<(Vec<usize>, &[bool]), usize> = HashMap::new();
            let mut patterns: Vec<Pattern> = Vec::new();
            for s in &list {
                let slots: Vec<usize> = s
                    .results
                    .iter()
                    .map(|u| {
                        *slot_of.entry(u.as_str()).or_insert_with(|| {
                            urls.push(u.clone());
                            impressions.push(0);
                            urls.len() - 1
                        })
                    })
                    .collect();
                for &slot in &slots {
                    impressions[slot] += 1;
                }
                match pattern_of.entry((slots, s.clicks.as_slice())) {
                    std::collections::hash_map::Entry::Occupied(e) => {
                        patterns[*e.get()].count += 1.0;
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        let slots = e.key().0.clone();
                        e.insert(patterns.len());
                        patterns.push(Pattern {
                            slots,
                            clicks: s.clicks.clone(),
                            count: 1.0,
                        });
                    }
                }
            }
            QueryData {
                query: query.to_owned(),
                urls,
                impressions,
                sessions: list.len() as u64,
                patterns,
            }
        })
        .collect()
}

#[derive(Clone)]
struct QueryParams {
    a: Vec<f64>,
    s: Vec<f64>,
}

struct QueryStats {
    a_num: Vec<f64>,
    a_den: Vec<f64>,
    s_num: Vec<f64>,
    s_den: Vec<f64>,
    log_lik: f64,
}

fn e_step(data: &QueryData, params: &QueryParams, gamma: f64) -> QueryStats {
    let n = data.urls.len();
    let mut st = QueryStats {
        a_num: vec![0.0; n],
        a_den: vec![0.0; n],
        s_num: vec![0.0; n],
        s_den: vec![0.0; n],
        log_lik: 0.0,
    };
    for pat in &data.patterns {
        let qp = DbnQueryParams {
            attractiveness: pat.slots.iter().map(|&j| params.a[j]).collect(),
            satisfaction: pat.slots.iter().map(|&j| params.s[j]).collect(),
            gamma,
        };
        let c = chain(&qp, &pat.clicks);
        st.log_lik += pat.count * c.likelihood.ln();
        if !(c.likelihood > 0.0) {
            continue;
        }
        for (i, &j) in pat.slots.iter().enumerate() {
            st.a_den[j] += pat.count;
            if pat.clicks[i] {
                st.a_num[j] += pat.count;
                let satisfied =
                    c.forward[i].1 * qp.attractiveness[i] * qp.satisfaction[i] * c.backward[i + 1].0 / c.likelihood;
                st.s_num[j] += pat.count * satisfied;
                st.s_den[j] += pat.count;
            } else {
                let examined = c.examined(i);
                st.a_num[j] += pat.count * (1.0 - examined) * qp.attractiveness[i];
            }
        }
    }
    st
}

fn log_prior(params: &QueryParams, prior_a: &BetaPrior, prior_s: &BetaPrior) -> f64 {
    params.a.iter().map(|&a| prior_a.log_density(a)).sum::<f64>()
        + params.s.iter().map(|&s| prior_s.log_density(s)).sum::<f64>()
}

fn fit_fixed_gamma(data: &[QueryData], gamma: f64, config: &DbnFitConfig) -> Result<(Vec<QueryParams>, Vec<f64>)> {
    let mut params: Vec<QueryParams> = data
        .iter()
        .map(|q| QueryParams {
            a: vec![0.5; q.urls.len()],
            s: vec![0.5; q.urls.len()],
        })
        .collect();
    let mut history: Vec<f64> = Vec::new();
    loop {
        let stats: Vec<QueryStats> = data
            .par_iter()
            .zip(params.par_iter())
            .map(|(q, p)| e_step(q, p, gamma))
            .collect();
        let objective: f64 = stats
            .iter()
            .zip(&params)
            .map(|(st, p)| st.log_lik + log_prior(p, &config.prior_a, &config.prior_s))
            .sum();
        if !objective.is_finite() {
            return Err(DbnError::NonFinite {
                iteration: history.len(),
            });
        }
        let converged = history
            .last()
            .is_some_and(|&prev| (objective - prev).abs() <= config.tol * prev.abs().max(1e-300));
        history.push(objective);
        if converged || history.len() > config.max_iter {
            break;
        }
        params = stats
            .iter()
            .map(|st| QueryParams {
                a: st
                    .a_num
                    .iter()
                    .zip(&st.a_den)
                    .map(|(&n, &d)| config.prior_a.posterior_mode(n, d))
                    .collect(),
                s: st
                    .s_num
                    .iter()
                    .zip(&st.s_den)
                    .map(|(&n, &d)| config.prior_s.posterior_mode(n, d))
                    .collect(),
            })
            .collect();
    }
    Ok((params, history))
}

fn assemble(
    data: &[QueryData],
    params: Vec<QueryParams>,
    history: Vec<f64>,
    gamma: f64,
    config: &DbnFitConfig,
) -> DbnEstimate {
    let mut entries = BTreeMap::new();
    let mut query_sessions = BTreeMap::new();
    for (q, p) in data.iter().zip(params) {
        query_sessions.insert(q.query.clone(), q.sessions);
        for (j, url) in q.urls.iter().enumerate() {
            entries.insert(
                (q.query.clone(), url.clone()),
                DbnEntry {
                    a: p.a[j],
                    s: p.s[j],
                    sessions: q.impressions[j],
                },
            );
        }
    }
    DbnEstimate {
        gamma,
        entries,
        query_sessions,
        prior_a: config.prior_a,
        prior_s: config.prior_s,
        iterations: history.len() - 1,
        objective_history: history,
    }
}

fn fit_with_gamma(sessions: &[&Session], gamma: f64, config: &DbnFitConfig) -> Result<DbnEstimate> {
    let data = group_sessions(sessions);
    let (params, history) = fit_fixed_gamma(&data, gamma, config)?;
    Ok(assemble(&data, params, history, gamma, config))
}

/// Fits the model to `sessions`. With a gamma grid, each candidate is fit
/// on the non-held-out sessions and scored on the held-out ones; the best
/// is then refit on everything.
pub fn fit_dbn(sessions: &[Session], config: &DbnFitConfig) -> Result<DbnEstimate> {
    config.validate()?;
    if sessions.is_empty() {
        return Err(DbnError::NoSessions);
    }
    let all: Vec<&Session> = sessions.iter().collect();
    match &config.gamma {
        GammaSpec::Fixed(g) => fit_with_gamma(&all, *g, config),
        GammaSpec::Grid(grid) => {
            let (train, heldout) = split_heldout(sessions, config.heldout_every);
            if train.is_empty() || heldout.is_empty() {
                log::warn!("too few sessions for gamma selection; using gamma = {}", grid[0]);
                return fit_with_gamma(&all, grid[0], config);
            }
            let heldout: Vec<Session> = heldout.into_iter().cloned().collect();
            let mut best: Option<(f64, f64)> = None;
            for &g in grid {
                let est = fit_with_gamma(&train, g, config)?;
                let ll = heldout_loglik(&est, &heldout)?;
                log::debug!("gamma {g}: held-out log-likelihood {ll}");
                if best.is_none_or(|(_, b)| ll > b) {
                    best = Some((g, ll));
                }
            }
            let (g, _) = best.expect("grid is non-empty");
            fit_with_gamma(&all, g, config)
        }
    }
}

/// Splits per query, holding out every `every`-th session in input order.
fn split_heldout(sessions: &[Session], every: usize) -> (Vec<&Session>, Vec<&Session>) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for s in sessions {
        let n = seen.entry(&s.query_id).or_insert(0);
        if *n % every == every - 1 {
            heldout.push(s);
        } else {
            train.push(s);
        }
        *n += 1;
    }
    (train, heldout)
}

const LIKELIHOOD_FLOOR: f64 = 1e-6;

/// Mean per-session log-likelihood of `sessions` under `estimate`. Unseen
/// pairs use the prior mode and all probabilities are clamped to
/// `[1e-6, 1 - 1e-6]`, so only a degenerate `gamma` can yield `-inf`.
pub fn heldout_loglik(estimate: &DbnEstimate, sessions: &[Session]) -> Result<f64> {
    if sessions.is_empty() {
        return Err(DbnError::NoSessions);
    }
    let clamp = |p: f64| p.clamp(LIKELIHOOD_FLOOR, 1.0 - LIKELIHOOD_FLOOR);
    let mut total = 0.0;
    for s in sessions {
        let mut p = estimate.params_for(s);
        p.attractiveness.iter_mut().for_each(|a| *a = clamp(*a));
        p.satisfaction.iter_mut().for_each(|x| *x = clamp(*x));
        total += match click_log_likelihood(&p, &s.clicks) {
            Ok(ll) => ll,
            Err(ClickModelError::ZeroProbability) => f64::NEG_INFINITY,
            Err(e) => return Err(e.into()),
        };
    }
    Ok(total / sessions.len() as f64)
}

// ---- dbn.json ----

#[derive(Debug, Serialize, Deserialize)]
struct ModelEntry {
    query: String,
    url: String,
    a: f64,
    s: f64,
    sessions: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    gamma: f64,
    entries: Vec<ModelEntry>,
    #[serde(default)]
    prior_a: Option<[f64; 2]>,
    #[serde(default)]
    prior_s: Option<[f64; 2]>,
    #[serde(default)]
    queries: BTreeMap<String, u64>,
    #[serde(default)]
    objective_history: Vec<f64>,
}

impl DbnEstimate {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            gamma: self.gamma,
            entries: self
                .entries
                .iter()
                .map(|((q, u), e)| ModelEntry {
                    query: q.clone(),
                    url: u.clone(),
                    a: e.a,
                    s: e.s,
                    sessions: e.sessions,
                })
                .collect(),
            prior_a: Some([self.prior_a.alpha, self.prior_a.beta]),
            prior_s: Some([self.prior_s.alpha, self.prior_s.beta]),
            queries: self.query_sessions.clone(),
            objective_history: self.objective_history.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&file.gamma) {
            return Err(format!("gamma {} outside [0, 1]", file.gamma));
        }
        let mut entries = BTreeMap::new();
        for e in file.entries {
            if !(0.0..=1.0).contains(&e.a) || !(0.0..=1.0).contains(&e.s) {
                return Err(format!("entry ({}, {}) out of range", e.query, e.url));
            }
            entries.insert(
                (e.query, e.url),
                DbnEntry {
                    a: e.a,
                    s: e.s,
                    sessions: e.sessions,
                },
            );
        }
        let prior = |p: Option<[f64; 2]>| p.map_or_else(BetaPrior::default, |[a, b]| BetaPrior::new(a, b));
        Ok(DbnEstimate {
            gamma: file.gamma,
            entries,
            query_sessions: file.queries,
            prior_a: prior(file.prior_a),
            prior_s: prior(file.prior_s),
            iterations: file.objective_history.len().saturating_sub(1),
            objective_history: file.objective_history,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DbnError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|message| DbnError::ModelFile {
            path: path.display().to_string(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::click_sim::{enumerate_click_distribution, simulate_clicks, substream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn session(q: &str, urls: &[&str], clicks: &[bool]) -> Session {
        Session {
            query_id: q.into(),
            results: urls.iter().map(|s| s.to_string()).collect(),
            clicks: clicks.to_vec(),
            user_id: None,
        }
    }

    #[test]
    fn prior_modes() {
        assert_eq!(BetaPrior::default().mode(), 0.5);
        assert_eq!(BetaPrior::new(2.0, 2.0).mode(), 0.5);
        assert_abs_diff_eq!(BetaPrior::new(3.0, 2.0).mode(), 2.0 / 3.0);
        assert_eq!(BetaPrior::default().posterior_mode(3.0, 4.0), 0.75);
    }

    #[test]
    fn examination_first_position_and_forced_continuation() {
        let p = DbnQueryParams::new(vec![0.6, 0.3, 0.2], vec![0.0, 0.4, 0.1], 1.0).unwrap();
        let e = posterior_examination(&p, &session("q", &["a", "b", "c"], &[true, false, false])).unwrap();
        assert_eq!(e[0], 1.0);
        assert_abs_diff_eq!(e[1], 1.0, epsilon = 1e-15);
    }

    /// Joint probability of every hidden assignment (E, A, S) per position,
    /// accumulated into P(clicks) and P(clicks, E_i = 1).
    fn brute_force(p: &DbnQueryParams, clicks: &[bool]) -> (f64, Vec<f64>) {
        let k = clicks.len();
        let mut total = 0.0;
        let mut examined = vec![0.0; k];
        for bits in 0..1usize << (3 * k) {
            let bit = |n: usize| bits >> n & 1 == 1;
            let (e, a, s): (Vec<bool>, Vec<bool>, Vec<bool>) = (
                (0..k).map(|i| bit(3 * i)).collect(),
                (0..k).map(|i| bit(3 * i + 1)).collect(),
                (0..k).map(|i| bit(3 * i + 2)).collect(),
            );
            let mut prob = 1.0;
            for i in 0..k {
                // E_i given the previous position
                let pe = if i == 0 {
                    1.0
                } else if !e[i - 1] || s[i - 1] {
                    0.0
                } else {
                    p.gamma
                };
                prob *= if e[i] { pe } else { 1.0 - pe };
                let pa = p.attractiveness[i];
                prob *= if a[i] { pa } else { 1.0 - pa };
                let c = e[i] && a[i];
                if c != clicks[i] {
                    prob = 0.0;
                }
                let ps = if c { p.satisfaction[i] } else { 0.0 };
                prob *= if s[i] { ps } else { 1.0 - ps };
            }
            total += prob;
            for i in 0..k {
                if e[i] {
                    examined[i] += prob;
                }
            }
        }
        (total, examined)
    }

    proptest! {
        #[test]
        fn examination_matches_enumeration(
            a in proptest::collection::vec(0.01..0.99f64, 4),
            s in proptest::collection::vec(0.0..1.0f64, 4),
            g in 0.0..=1.0f64,
        ) {
            let p = DbnQueryParams::new(a, s, g).unwrap();
            let dist = enumerate_click_distribution(&p).unwrap();
            for (clicks, prob) in &dist {
                let (total, joint) = brute_force(&p, clicks);
                prop_assert!((total - prob).abs() < 1e-12);
                if *prob < 1e-9 {
                    continue;
                }
                let e = posterior_examination(&p, &session("q", &["a", "b", "c", "d"], clicks)).unwrap();
                for i in 0..4 {
                    let expect = joint[i] / total;
                    prop_assert!((e[i] - expect).abs() < 1e-9, "{} vs {}", e[i], expect);
                }
            }
        }
    }

    #[test]
    fn degenerate_all_click_first() {
        let sessions: Vec<Session> = (0..50).map(|_| session("q", &["u"], &[true])).collect();
        let cfg = DbnFitConfig {
            prior_a: BetaPrior::new(2.0, 2.0),
            ..DbnFitConfig::default().with_gamma(0.9)
        };
        let est = fit_dbn(&sessions, &cfg).unwrap();
        assert_abs_diff_eq!(est.attractiveness("q", "u"), 51.0 / 52.0, epsilon = 1e-12);
        assert_eq!(est.sessions_for("q"), 50);
        assert_eq!(est.attractiveness("q", "unseen"), 0.5);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(
            fit_dbn(&[], &DbnFitConfig::default()),
            Err(DbnError::NoSessions)
        ));
        let est = fit_dbn(
            &[session("q", &["u"], &[true])],
            &DbnFitConfig::default().with_gamma(0.5),
        )
        .unwrap();
        assert!(matches!(heldout_loglik(&est, &[]), Err(DbnError::NoSessions)));
    }

    #[test]
    fn config_validation() {
        let bad = DbnFitConfig {
            prior_a: BetaPrior::new(0.5, 1.0),
            ..DbnFitConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(DbnFitConfig::default().with_gamma(1.5).validate().is_err());
        assert!(DbnFitConfig {
            gamma: GammaSpec::Grid(vec![]),
            ..DbnFitConfig::default()
        }
        .validate()
        .is_err());
    }

    fn simulate(truth: &[(Vec<f64>, Vec<f64>)], gamma: f64, n: usize, shuffle: bool, seed: u64) -> Vec<Session> {
        use rand::seq::SliceRandom;
        let mut out = Vec::new();
        for (qi, (a, s)) in truth.iter().enumerate() {
            let urls: Vec<String> = (0..a.len()).map(|j| format!("q{qi}u{j}")).collect();
            for si in 0..n {
                let mut rng = substream(seed, &[qi as u64, si as u64]);
                let mut order: Vec<usize> = (0..a.len()).collect();
                if shuffle {
                    order.shuffle(&mut rng);
                }
                let p = DbnQueryParams {
                    attractiveness: order.iter().map(|&j| a[j]).collect(),
                    satisfaction: order.iter().map(|&j| s[j]).collect(),
                    gamma,
                };
                out.push(Session {
                    query_id: format!("q{qi}"),
                    results: order.iter().map(|&j| urls[j].clone()).collect(),
                    clicks: simulate_clicks(&p, &mut rng),
                    user_id: None,
                });
            }
        }
        out
    }

    #[test]
    fn recovers_planted_parameters_monotonically() {
        let truth = vec![
            (vec![0.8, 0.5, 0.3, 0.6], vec![0.6, 0.3, 0.5, 0.2]),
            (vec![0.2, 0.9, 0.4, 0.1], vec![0.3, 0.7, 0.2, 0.4]),
        ];
        let sessions = simulate(&truth, 0.9, 20_000, false, 11);
        let est = fit_dbn(&sessions, &DbnFitConfig::default().with_gamma(0.9)).unwrap();
        for w in est.objective_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{w:?}");
        }
        let mut err = 0.0;
        for (qi, (a, _)) in truth.iter().enumerate() {
            for (j, &aj) in a.iter().enumerate() {
                err += (est.attractiveness(&format!("q{qi}"), &format!("q{qi}u{j}")) - aj).abs();
            }
        }
        assert!(err / 8.0 < 0.03, "mae {}", err / 8.0);
    }

    #[test]
    fn gamma_grid_finds_planted_value() {
        let truth: Vec<_> = (0..20)
            .map(|q| {
                let a: Vec<f64> = (0..5)
                    .map(|j| 0.15 + 0.7 * ((q * 7 + j * 3) % 10) as f64 / 10.0)
                    .collect();
                let s: Vec<f64> = (0..5).map(|j| 0.2 + 0.5 * ((q + j * 5) % 7) as f64 / 7.0).collect();
                (a, s)
            })
            .collect();
        let sessions = simulate(&truth, 0.7, 3000, true, 5);
        let est = fit_dbn(&sessions, &DbnFitConfig::default()).unwrap();
        assert!((est.gamma - 0.7).abs() <= 0.1 + 1e-12, "picked {}", est.gamma);
    }

    #[test]
    fn true_params_beat_perturbed_on_heldout() {
        let truth = vec![(vec![0.7, 0.4, 0.5], vec![0.4, 0.5, 0.3])];
        let sessions = simulate(&truth, 0.8, 40_000, true, 9);
        let mut est = fit_dbn(&sessions[..10], &DbnFitConfig::default().with_gamma(0.8)).unwrap();
        for (j, (a, s)) in truth[0].0.iter().zip(&truth[0].1).enumerate() {
            let e = est.entries.get_mut(&("q0".to_string(), format!("q0u{j}"))).unwrap();
            e.a = *a;
            e.s = *s;
        }
        let base = heldout_loglik(&est, &sessions).unwrap();
        for (j, delta) in [(0, 0.1), (1, -0.1), (2, 0.15)] {
            let mut other = est.clone();
            other.entries.get_mut(&("q0".to_string(), format!("q0u{j}"))).unwrap().a += delta;
            assert!(heldout_loglik(&other, &sessions).unwrap() < base);
        }
    }

    #[test]
    fn position_bias_is_removed() {
        // Two urls with identical attractiveness, one almost always shown first.
        let a = 0.5;
        let mut sessions = Vec::new();
        for i in 0..40_000u64 {
            let mut rng = substream(21, &[i]);
            let first_is_x = i % 10 != 0;
            let urls = if first_is_x { ["x", "y", "z"] } else { ["y", "x", "z"] };
            let p = DbnQueryParams::new(vec![a, a, 0.3], vec![0.3, 0.3, 0.3], 0.8).unwrap();
            sessions.push(session("q", &urls, &simulate_clicks(&p, &mut rng)));
        }
        let est = fit_dbn(&sessions, &DbnFitConfig::default().with_gamma(0.8)).unwrap();
        let (ax, ay) = (est.attractiveness("q", "x"), est.attractiveness("q", "y"));
        assert!((ax - ay).abs() < 0.03, "{ax} {ay}");
        // raw CTR is strongly position-biased
        let ctr = |u: &str| {
            let (mut c, mut n) = (0.0, 0.0);
            for s in &sessions {
                let i = s.results.iter().position(|r| r == u).unwrap();
                n += 1.0;
                c += f64::from(u8::from(s.clicks[i]));
            }
            c / n
        };
        assert!(ctr("x") - ctr("y") > 0.1);
    }

    #[test]
    fn model_file_round_trip() {
        let truth = vec![(vec![0.6, 0.3], vec![0.5, 0.5])];
        let sessions = simulate(&truth, 0.9, 200, true, 1);
        let est = fit_dbn(&sessions, &DbnFitConfig::default().with_gamma(0.9)).unwrap();
        let back = DbnEstimate::from_json(&est.to_json()).unwrap();
        assert_eq!(back, est);
    }
}
