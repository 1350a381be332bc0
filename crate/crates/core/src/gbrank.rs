//! GBRank: gradient-boosted regression trees trained on preference pairs
//! with the squared hinge loss
//! `sum max(0, margin - (f(hi) - f(lo)))^2`.
//!
//! Each round collects the pairs the current model violates and builds
//! swapped targets (`f(lo) + margin` for the preferred document,
//! `f(hi) - margin` for the other). See [`UpdateRule`] for how the fitted
//! tree is merged. A round that cannot lower the training loss ends
//! training, so the recorded loss never goes up.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GbrankError {
    #[error("no preference pairs to train on")]
    NoPairs,
    #[error("feature vector has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature or margin in pair {0}")]
    NonFinite(usize),
    #[error("negative margin in pair {0}")]
    NegativeMargin(usize),
    #[error("invalid GBRank configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, GbrankError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub features_hi: Vec<f64>,
    pub features_lo: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbrankConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
    /// Upper bound on distinct split candidates per feature.
    pub max_bins: usize,
    pub update: UpdateRule,
}

/// How each round's tree enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// The tree fits `pseudo-target - f(doc)` and is added as
    /// `f + eta w* g`, `w*` minimising the loss along `g`.
    #[default]
    Additive,
    /// The tree fits the pseudo-targets themselves and is merged as
    /// `(t f + eta g) / (t + 1)`; rounds where that raises the loss fall
    /// back to the additive line-search step.
    Averaged,
}

impl Default for GbrankConfig {
    fn default() -> Self {
        GbrankConfig {
            num_trees: 300,
            max_depth: 4,
            shrinkage: 0.05,
            min_samples_leaf: 20,
            subsample: 1.0,
            seed: 0,
            max_bins: 256,
            update: UpdateRule::Additive,
        }
    }
}

impl GbrankConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GbrankError::InvalidConfig(m.into()));
        if self.num_trees == 0 {
            return bad("num_trees must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if self.max_bins < 2 || self.max_bins > usize::from(u16::MAX) {
            return bad("max_bins must lie in [2, 65535]");
        }
        Ok(())
    }
}

/// One internal node. A child reference `>= 0` is a split index, a
/// negative one `c` is the leaf `-c - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feat: usize,
    pub thr: f64,
    pub left: i64,
    pub right: i64,
    /// Squared-error reduction achieved by the split at training time.
    #[serde(default)]
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub splits: Vec<Split>,
    pub leaves: Vec<f64>,
}

fn leaf_ref(i: usize) -> i64 {
    -(i as i64) - 1
}

impl RegressionTree {
    /// Routes `x` to a leaf: `x[feat] <= thr` goes left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.splits.is_empty() {
            return self.leaves[0];
        }
        let mut node: i64 = 0;
        loop {
            let s = &self.splits[node as usize];
            node = if x[s.feat] <= s.thr { s.left } else { s.right };
            if node < 0 {
                return self.leaves[(-node - 1) as usize];
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(GbrankError::InvalidModel(m));
        if self.leaves.is_empty() {
            return bad("tree without leaves".into());
        }
        if self.splits.is_empty() && self.leaves.len() != 1 {
            return bad("split-less tree must have exactly one leaf".into());
        }
        if self.leaves.iter().any(|v| !v.is_finite()) {
            return bad("non-finite leaf value".into());
        }
        for (i, s) in self.splits.iter().enumerate() {
            if s.feat >= dim {
                return bad(format!("split feature {} >= dimension {dim}", s.feat));
            }
            if s.thr.is_nan() {
                return bad("NaN threshold".into());
            }
            for child in [s.left, s.right] {
                let ok = if child >= 0 {
                    (child as usize) > i && (child as usize) < self.splits.len()
                } else {
                    ((-child - 1) as usize) < self.leaves.len()
                };
                if !ok {
                    return bad(format!("split {i} has dangling child {child}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub weights: Vec<f64>,
    pub trees: Vec<RegressionTree>,
    pub features: Vec<String>,
}

impl TreeEnsemble {
    pub fn empty(features: Vec<String>) -> Self {
        TreeEnsemble {
            weights: Vec::new(),
            trees: Vec::new(),
            features,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(GbrankError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.score(x))
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * t.predict(x))
            .sum()
    }

    /// Normalised total squared-error reduction per feature, descending,
    /// ties by feature index. All zeros for an ensemble without splits.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut gain = vec![0.0; self.dim()];
        for t in &self.trees {
            for s in &t.splits {
                gain[s.feat] += s.gain;
            }
        }
        let total: f64 = gain.iter().sum();
        if total > 0.0 {
            gain.iter_mut().for_each(|g| *g /= total);
        }
        let mut order: Vec<usize> = (0..gain.len()).collect();
        order.sort_by(|&a, &b| gain[b].total_cmp(&gain[a]).then(a.cmp(&b)));
        order.into_iter().map(|i| (self.features[i].clone(), gain[i])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.trees.len() {
            return Err(GbrankError::InvalidModel(format!(
                "{} weights for {} trees",
                self.weights.len(),
                self.trees.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(GbrankError::InvalidModel("non-finite weight".into()));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.dim()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TreeEnsemble = serde_json::from_str(text).map_err(|e| GbrankError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GbrankError::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Preference pairs over a deduplicated document table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub docs: Vec<Vec<f64>>,
    /// `(hi, lo, margin)` indices into `docs`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl PairDataset {
    /// Deduplicates documents by exact value and puts documents and pairs
    /// in a canonical order, so the result does not depend on pair order.
    pub fn from_pairs(pairs: &[PreferencePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(GbrankError::NoPairs);
        }
        let dim = pairs[0].features_hi.len();
        let key = |x: &[f64]| x.iter().map(|v| (*v + 0.0).to_bits()).collect::<Vec<u64>>();
        let mut docs: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            for x in [&p.features_hi, &p.features_lo] {
                if x.len() != dim {
                    return Err(GbrankError::DimensionMismatch {
                        expected: dim,
                        got: x.len(),
                    });
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(GbrankError::NonFinite(i));
                }
                docs.insert(key(x), 0);
            }
            if !p.margin.is_finite() {
                return Err(GbrankError::NonFinite(i));
            }
            if p.margin < 0.0 {
                return Err(GbrankError::NegativeMargin(i));
            }
        }
        for (i, v) in docs.values_mut().enumerate() {
            *v = i;
        }
        let table: Vec<Vec<f64>> = docs
            .keys()
            .map(|k| k.iter().map(|b| f64::from_bits(*b)).collect())
            .collect();
        let mut indexed: Vec<(usize, usize, f64)> = pairs
            .iter()
            .map(|p| (docs[&key(&p.features_hi)], docs[&key(&p.features_lo)], p.margin))
            .collect();
        indexed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        Ok(PairDataset {
            docs: table,
            pairs: indexed,
        })
    }

    pub fn dim(&self) -> usize {
        self.docs.first().map_or(0, Vec::len)
    }

    /// Training loss of per-document scores.
    pub fn loss(&self, scores: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|&(h, l, m)| {
                let r = m - (scores[h] - scores[l]);
                if r > 0.0 {
                    r * r
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Squared hinge loss of a scoring function over preference pairs.
pub fn pairwise_loss(pairs: &[PreferencePair], f: impl Fn(&[f64]) -> f64) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let r = p.margin - (f(&p.features_hi) - f(&p.features_lo));
            if r > 0.0 {
                r * r
            } else {
                0.0
            }
        })
        .sum()
}

/// Per-feature binning of the document table.
struct Bins {
    /// `codes[f][doc]`
    codes: Vec<Vec<u16>>,
    /// `cuts[f][b]`: threshold separating bin `b` from bin `b + 1`.
    cuts: Vec<Vec<f64>>,
}

impl Bins {
    fn build(docs: &[Vec<f64>], dim: usize, max_bins: usize) -> Self {
        let mut codes = Vec::with_capacity(dim);
        let mut cuts = Vec::with_capacity(dim);
        for f in 0..dim {
            let mut values: Vec<f64> = docs.iter().map(|d| d[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            // upper edges of each bin, as indices into `values`
            let edges: Vec<usize> = if values.len() <= max_bins {
                (0..values.len()).collect()
            } else {
                let mut e: Vec<usize> = (1..=max_bins)
                    .map(|b| (b * values.len()).div_ceil(max_bins) - 1)
                    .collect();
                e.dedup();
                e
            };
            let feature_cuts: Vec<f64> = edges
                .windows(2)
                .map(|w| {
                    let (lo, hi) = (values[w[0]], values[w[0] + 1]);
                    let mid = lo + (hi - lo) / 2.0;
                    if mid < hi {
                        mid
                    } else {
                        lo
                    }
                })
                .collect();
            let feature_codes = docs
                .iter()
                .map(|d| feature_cuts.partition_point(|&c| c < d[f]) as u16)
                .collect();
            codes.push(feature_codes);
            cuts.push(feature_cuts);
        }
        Bins { codes, cuts }
    }
}

struct TreeBuilder<'a> {
    bins: &'a Bins,
    counts: &'a [f64],
    sums: &'a [f64],
    max_depth: usize,
    min_leaf: f64,
    splits: Vec<Split>,
    leaves: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, docs: &[usize]) -> i64 {
        let (c, s) = docs
            .iter()
            .fold((0.0, 0.0), |(c, s), &d| (c + self.counts[d], s + self.sums[d]));
        self.leaves.push(if c > 0.0 { s / c } else { 0.0 });
        leaf_ref(self.leaves.len() - 1)
    }

    /// Best `(gain, feature, bin)`; earliest feature then lowest bin wins ties.
    fn best_split(&self, docs: &[usize]) -> Option<(f64, usize, usize)> {
        let (total_c, total_s) = docs
            .iter()
            .fold((0.0, 0.0), |(c, s), &d| (c + self.counts[d], s + self.sums[d]));
        let parent = total_s * total_s / total_c;
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, cuts) in self.bins.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let mut hist = vec![(0.0f64, 0.0f64); cuts.len() + 1];
            for &d in docs {
                let h = &mut hist[usize::from(self.bins.codes[f][d])];
                h.0 += self.counts[d];
                h.1 += self.sums[d];
            }
            let (mut lc, mut ls) = (0.0, 0.0);
            for (b, h) in hist[..cuts.len()].iter().enumerate() {
                lc += h.0;
                ls += h.1;
                let rc = total_c - lc;
                if lc < self.min_leaf || rc < self.min_leaf {
                    continue;
                }
                let rs = total_s - ls;
                let gain = ls * ls / lc + rs * rs / rc - parent;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, b));
                }
            }
        }
        best.filter(|&(g, _, _)| g > 1e-12 * parent.abs().max(1e-300))
    }

    fn grow(&mut self, docs: Vec<usize>, depth: usize) -> i64 {
        if depth >= self.max_depth {
            return self.leaf(&docs);
        }
        let Some((gain, f, b)) = self.best_split(&docs) else {
            return self.leaf(&docs);
        };
        let idx = self.splits.len();
        self.splits.push(Split {
            feat: f,
            thr: self.bins.cuts[f][b],
            left: 0,
            right: 0,
            gain,
        });
        let (left, right): (Vec<usize>, Vec<usize>) =
            docs.into_iter().partition(|&d| usize::from(self.bins.codes[f][d]) <= b);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.splits[idx].left = l;
        self.splits[idx].right = r;
        idx as i64
    }
}

fn fit_tree(bins: &Bins, counts: &[f64], sums: &[f64], config: &GbrankConfig) -> RegressionTree {
    let docs: Vec<usize> = (0..counts.len()).filter(|&d| counts[d] > 0.0).collect();
    let mut b = TreeBuilder {
        bins,
        counts,
        sums,
        max_depth: config.max_depth,
        min_leaf: config.min_samples_leaf as f64,
        splits: Vec::new(),
        leaves: Vec::new(),
    };
    let root = b.grow(docs, 0);
    debug_assert!(root == 0 || (b.splits.is_empty() && root == -1));
    RegressionTree {
        splits: b.splits,
        leaves: b.leaves,
    }
}

/// Minimises the convex loss `sum max(0, r_p - w dg_p)^2` over `w >= 0`.
fn line_search(residuals: &[f64], deltas: &[f64]) -> f64 {
    let slope = |w: f64| -> f64 {
        residuals
            .iter()
            .zip(deltas)
            .map(|(&r, &d)| {
                let v = r - w * d;
                if v > 0.0 {
                    -2.0 * v * d
                } else {
                    0.0
                }
            })
            .sum()
    };
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while slope(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// How a boosting round merged its tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    Averaged,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TreeEnsemble,
    /// Training loss before the first round and after each accepted round.
    pub loss_history: Vec<f64>,
    pub rounds: Vec<RoundKind>,
}

pub fn train(pairs: &[PreferencePair], feature_names: &[String], config: &GbrankConfig) -> Result<TrainOutcome> {
    let data = PairDataset::from_pairs(pairs)?;
    train_dataset(&data, feature_names, config)
}

pub fn train_dataset(data: &PairDataset, feature_names: &[String], config: &GbrankConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.pairs.is_empty() {
        return Err(GbrankError::NoPairs);
    }
    if feature_names.len() != data.dim() {
        return Err(GbrankError::DimensionMismatch {
            expected: feature_names.len(),
            got: data.dim(),
        });
    }
    let n = data.docs.len();
    let bins = Bins::build(&data.docs, data.dim(), config.max_bins);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TreeEnsemble::empty(feature_names.to_vec());
    let mut scores = vec![0.0; n];
    let mut loss = data.loss(&scores);
    let mut history = vec![loss];
    let mut rounds = Vec::new();
    let mut counts = vec![0.0; n];
    let mut sums = vec![0.0; n];

    for _ in 0..config.num_trees {
        counts.iter_mut().for_each(|c| *c = 0.0);
        sums.iter_mut().for_each(|s| *s = 0.0);
        let mut any = false;
        for &(h, l, m) in &data.pairs {
            if config.subsample < 1.0 && rng.random::<f64>() >= config.subsample {
                continue;
            }
            if h == l || scores[h] - scores[l] >= m {
                continue;
            }
            any = true;
            let (th, tl) = match config.update {
                UpdateRule::Additive => (scores[l] + m - scores[h], scores[h] - m - scores[l]),
                UpdateRule::Averaged => (scores[l] + m, scores[h] - m),
            };
            counts[h] += 1.0;
            sums[h] += th;
            counts[l] += 1.0;
            sums[l] += tl;
        }
        if !any {
            if config.subsample < 1.0 {
                continue;
            }
            break;
        }
        let tree = fit_tree(&bins, &counts, &sums, config);
        let g: Vec<f64> = data.docs.iter().map(|d| tree.predict(d)).collect();

        let (res, del): (Vec<f64>, Vec<f64>) = data
            .pairs
            .iter()
            .map(|&(h, l, m)| (m - (scores[h] - scores[l]), g[h] - g[l]))
            .unzip();
        let step_weight = |w_star: f64| match config.update {
            UpdateRule::Additive => config.shrinkage * w_star,
            UpdateRule::Averaged => w_star,
        };

        if config.update == UpdateRule::Averaged {
            let t = model.trees.len() as f64 + 1.0;
            let averaged: Vec<f64> = scores
                .iter()
                .zip(&g)
                .map(|(&f, &gv)| (t * f + config.shrinkage * gv) / (t + 1.0))
                .collect();
            let averaged_loss = data.loss(&averaged);
            if averaged_loss <= loss {
                model.weights.iter_mut().for_each(|wt| *wt *= t / (t + 1.0));
                model.weights.push(config.shrinkage / (t + 1.0));
                model.trees.push(tree);
                scores = averaged;
                loss = averaged_loss;
                rounds.push(RoundKind::Averaged);
                history.push(loss);
                continue;
            }
        }

        let w = step_weight(line_search(&res, &del));
        let stepped: Vec<f64> = scores.iter().zip(&g).map(|(&f, &gv)| f + w * gv).collect();
        let stepped_loss = data.loss(&stepped);
        if w > 0.0 && stepped_loss < loss {
            model.weights.push(w);
            model.trees.push(tree);
            scores = stepped;
            loss = stepped_loss;
            rounds.push(RoundKind::LineSearch);
        } else if config.subsample < 1.0 {
            continue;
        } else {
            break;
        }
        history.push(loss);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
        rounds,
    })
}

/// Fraction of pairs ordered correctly (strictly) by `model`.
pub fn pairwise_accuracy(model: &TreeEnsemble, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(GbrankError::NoPairs);
    }
    let mut ok = 0usize;
    for p in pairs {
        if model.predict(&p.features_hi)? > model.predict(&p.features_lo)? {
            ok += 1;
        }
    }
    Ok(ok as f64 / pairs.len() as f64)
}
