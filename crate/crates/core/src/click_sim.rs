//! Cascade and DBN click models: a seeded session generator, an exact
//! hidden-variable enumeration of the click distribution, and a linear-time
//! session likelihood.
//!
//! Positions are 0-based throughout. The user always examines position 0.
//! After position `i` the user stops if satisfied; otherwise they move on
//! to `i + 1` with probability `gamma`. Once examination stops it never
//! resumes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Session;

/// Largest list length accepted by [`enumerate_click_distribution`].
pub const MAX_ENUMERATION_POSITIONS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClickModelError {
    #[error("invalid click model parameters: {0}")]
    InvalidParams(String),
    #[error("position {index} out of range for {len} results")]
    PositionOutOfRange { index: usize, len: usize },
    #[error("exact enumeration supports at most {max} positions, got {k}")]
    TooManyPositions { k: usize, max: usize },
    #[error("session has {session} results but parameters cover {params}")]
    LengthMismatch { session: usize, params: usize },
    #[error("session has probability zero under the given parameters")]
    ZeroProbability,
}

fn check_prob(what: &str, p: f64) -> Result<(), ClickModelError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ClickModelError::InvalidParams(format!("{what} = {p} outside [0, 1]")))
    }
}

/// Per-position attractiveness and satisfaction for one result list, plus
/// the perseverance `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnQueryParams {
    pub attractiveness: Vec<f64>,
    pub satisfaction: Vec<f64>,
    pub gamma: f64,
}

impl DbnQueryParams {
    pub fn new(attractiveness: Vec<f64>, satisfaction: Vec<f64>, gamma: f64) -> Result<Self, ClickModelError> {
        let p = DbnQueryParams {
            attractiveness,
            satisfaction,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ClickModelError> {
        if self.attractiveness.len() != self.satisfaction.len() {
            return Err(ClickModelError::InvalidParams(format!(
                "{} attractiveness values but {} satisfaction values",
                self.attractiveness.len(),
                self.satisfaction.len()
            )));
        }
        for &a in &self.attractiveness {
            check_prob("attractiveness", a)?;
        }
        for &s in &self.satisfaction {
            check_prob("satisfaction", s)?;
        }
        check_prob("gamma", self.gamma)
    }

    pub fn len(&self) -> usize {
        self.attractiveness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractiveness.is_empty()
    }
}

/// Cascade-model probability that the single click lands on `position`:
/// `a[position] * prod_{u < position} (1 - a[u])`.
pub fn cascade_click_prob(attractiveness: &[f64], position: usize) -> Result<f64, ClickModelError> {
    if position >= attractiveness.len() {
        return Err(ClickModelError::PositionOutOfRange {
            index: position,
            len: attractiveness.len(),
        });
    }
    for &a in attractiveness {
        check_prob("attractiveness", a)?;
    }
    let skip: f64 = attractiveness[..position].iter().map(|a| 1.0 - a).product();
    Ok(attractiveness[position] * skip)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for the substream addressed by `path` under
/// `seed`, e.g. `substream(seed, &[query_index, session_index])`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let stream = path.iter().fold(GOLDEN, |acc, &p| splitmix(acc ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit key for a string label, for use in [`substream`] paths.
pub fn label_key(label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Draws one click vector from the DBN generative procedure.
pub fn simulate_clicks<R: Rng + ?Sized>(params: &DbnQueryParams, rng: &mut R) -> Vec<bool> {
    let k = params.len();
    let mut clicks = vec![false; k];
    for i in 0..k {
        // position i is examined here
        let attracted = rng.random::<f64>() < params.attractiveness[i];
        clicks[i] = attracted;
        let satisfied = attracted && rng.random::<f64>() < params.satisfaction[i];
        if satisfied || rng.random::<f64>() >= params.gamma {
            break;
        }
    }
    clicks
}

/// Simulates one session for `query` over `urls` using the substream `seed`.
pub fn simulate_session(
    query: &str,
    urls: &[String],
    params: &DbnQueryParams,
    seed: u64,
) -> Result<Session, ClickModelError> {
    params.validate()?;
    if urls.len() != params.len() {
        return Err(ClickModelError::LengthMismatch {
            session: urls.len(),
            params: params.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Session {
        query_id: query.to_owned(),
        results: urls.to_vec(),
        clicks: simulate_clicks(params, &mut rng),
        user_id: None,
    })
}

/// Exact distribution over all `2^K` click vectors, obtained by summing
/// over every joint assignment of the hidden examination, attractiveness
/// and satisfaction variables.
pub fn enumerate_click_distribution(params: &DbnQueryParams) -> Result<BTreeMap<Vec<bool>, f64>, ClickModelError> {
    params.validate()?;
    let k = params.len();
    if k > MAX_ENUMERATION_POSITIONS {
        return Err(ClickModelError::TooManyPositions {
            k,
            max: MAX_ENUMERATION_POSITIONS,
        });
    }
    let mut mass = vec![0.0; 1 << k];
    walk(params, 0, true, 0, 1.0, &mut mass);
    Ok(mass
        .into_iter()
        .enumerate()
        .map(|(bits, p)| ((0..k).map(|i| bits >> i & 1 == 1).collect(), p))
        .collect())
}

fn walk(params: &DbnQueryParams, i: usize, examined: bool, bits: usize, prob: f64, mass: &mut [f64]) {
    if i == params.len() {
        mass[bits] += prob;
        return;
    }
    let a = params.attractiveness[i];
    let s = params.satisfaction[i];
    let g = params.gamma;
    for attracted in [false, true] {
        let p_a = if attracted { a } else { 1.0 - a };
        let clicked = examined && attracted;
        let bits = if clicked { bits | 1 << i } else { bits };
        for satisfied in [false, true] {
            let p_s = match (clicked, satisfied) {
                (true, true) => s,
                (true, false) => 1.0 - s,
                (false, false) => 1.0,
                (false, true) => 0.0,
            };
            for next in [false, true] {
                let p_e = if satisfied || !examined {
                    if next {
                        0.0
                    } else {
                        1.0
                    }
                } else if next {
                    g
                } else {
                    1.0 - g
                };
                let p = prob * p_a * p_s * p_e;
                if p > 0.0 {
                    walk(params, i + 1, next, bits, p, mass);
                }
            }
        }
    }
}

/// Log-probability of an observed click vector, by a forward pass over the
/// examination chain.
pub fn click_log_likelihood(params: &DbnQueryParams, clicks: &[bool]) -> Result<f64, ClickModelError> {
    if clicks.len() != params.len() {
        return Err(ClickModelError::LengthMismatch {
            session: clicks.len(),
            params: params.len(),
        });
    }
    // (P(prefix, E_i = 0), P(prefix, E_i = 1)), renormalised each step.
    let (mut off, mut on) = (0.0_f64, 1.0_f64);
    let mut log_scale = 0.0;
    let g = params.gamma;
    for (i, &c) in clicks.iter().enumerate() {
        let a = params.attractiveness[i];
        let s = params.satisfaction[i];
        let (next_off, next_on) = if c {
            let w = on * a;
            (w * (s + (1.0 - s) * (1.0 - g)), w * (1.0 - s) * g)
        } else {
            let w = on * (1.0 - a);
            (off + w * (1.0 - g), w * g)
        };
        let total = next_off + next_on;
        if total <= 0.0 {
            return Err(ClickModelError::ZeroProbability);
        }
        log_scale += total.ln();
        off = next_off / total;
        on = next_on / total;
    }
    Ok(log_scale)
}

/// [`click_log_likelihood`] for a whole session.
pub fn session_log_likelihood(params: &DbnQueryParams, session: &Session) -> Result<f64, ClickModelError> {
    params.validate()?;
    click_log_likelihood(params, &session.clicks)
}
