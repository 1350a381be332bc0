//! Run configuration: one TOML file, optionally patched by `--seed` and
//! `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tailrank::dbn::DbnFitConfig;
use tailrank::gbrank::GbrankConfig;
use tailrank::ranking::{Normalization, RateSpec};
use tailrank::synth::SynthConfig;

use crate::error::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub sessions: PathBuf,
    pub snippets: PathBuf,
    pub judgments: PathBuf,
    /// Planted parameters written by `simulate`.
    pub params: PathBuf,
    pub models: PathBuf,
    pub outputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of queries held out for evaluation.
    pub heldout_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { heldout_fraction: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickConfig {
    /// Per-query session sampling used to build the click-augmented
    /// training rows.
    pub rate: RateSpec,
    /// Sessions kept per held-out head query to imitate a tail query.
    pub tail_sessions: usize,
}

impl Default for ClickConfig {
    fn default() -> Self {
        ClickConfig {
            rate: RateSpec::Uniform {
                min_percent: 1.0,
                max_percent: 100.0,
            },
            tail_sessions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Blend weight used by `rerank`.
    pub lambda: f64,
    /// Blend weights swept by `eval`.
    pub lambdas: Vec<f64>,
    pub normalization: Normalization,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            lambda: 0.5,
            lambdas: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            normalization: Normalization::MinMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Explicit thresholds for the pairwise precision/recall curves; when
    /// empty, `tau_points` evenly spaced values are used per method.
    pub taus: Vec<f64>,
    pub tau_points: usize,
    pub ndcg_ks: Vec<usize>,
    /// Cutoff compared by the significance tests.
    pub significance_k: usize,
    pub per_impression: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            taus: Vec::new(),
            tau_points: 50,
            ndcg_ks: vec![1, 3, 5, 10],
            significance_k: 5,
            per_impression: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub dbn: DbnFitConfig,
    #[serde(default)]
    pub gbrank: GbrankConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub click: ClickConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

/// Sets `dotted.key = value` inside a TOML table, creating intermediate
/// tables. The value is parsed as TOML and kept as a string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry((*part).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override key {key:?} crosses a non-table value")))?;
    }
    table.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies overrides and validates. Relative paths are
    /// resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, seed: Option<u64>, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e| config_err(format!("{e}")))?;
        cfg.validate()?;
        for p in [
            &mut cfg.paths.sessions,
            &mut cfg.paths.snippets,
            &mut cfg.paths.judgments,
            &mut cfg.paths.params,
            &mut cfg.paths.models,
            &mut cfg.paths.outputs,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, seed, overrides)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.synth.validate().map_err(config_err)?;
        self.dbn.validate().map_err(|e| config_err(e.to_string()))?;
        self.gbrank.validate().map_err(|e| config_err(e.to_string()))?;
        self.click.rate.validate().map_err(|e| config_err(e.to_string()))?;
        if self.click.tail_sessions == 0 {
            return Err(config_err("click.tail_sessions must be at least 1"));
        }
        let f = self.split.heldout_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(config_err("split.heldout_fraction must lie in (0, 1)"));
        }
        let s = &self.strategy;
        if s.lambdas.is_empty() {
            return Err(config_err("strategy.lambdas must not be empty"));
        }
        if std::iter::once(&s.lambda)
            .chain(&s.lambdas)
            .any(|l| !(0.0..=1.0).contains(l))
        {
            return Err(config_err("blend weights must lie in [0, 1]"));
        }
        let e = &self.eval;
        if e.taus.is_empty() && e.tau_points < 2 {
            return Err(config_err("eval.taus is empty and eval.tau_points < 2"));
        }
        if e.taus.iter().any(|t| t.is_nan()) {
            return Err(config_err("eval.taus contains NaN"));
        }
        if e.ndcg_ks.is_empty() || e.ndcg_ks.contains(&0) {
            return Err(config_err("eval.ndcg_ks must be non-empty and positive"));
        }
        if !e.ndcg_ks.contains(&e.significance_k) {
            return Err(config_err("eval.significance_k must be one of eval.ndcg_ks"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, paths excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("paths");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[paths]
sessions = "data/sessions.jsonl"
snippets = "data/snippets.jsonl"
judgments = "data/judgments.jsonl"
params = "data/params.json"
models = "models"
outputs = "out"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml(MINIMAL, Path::new("/base"), None, &[]).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.paths.models, Path::new("/base/models"));
        assert_eq!(c.gbrank, GbrankConfig::default());
        assert_eq!(c.strategy.lambdas.len(), 11);
    }

    #[test]
    fn overrides_and_seed() {
        let o = vec![
            "gbrank.num_trees=12".to_string(),
            "strategy.normalization=none".to_string(),
            "dbn.gamma=[0.5, 0.9]".to_string(),
            "click.rate.sessions=10".to_string(),
        ];
        let c = RunConfig::from_toml(MINIMAL, Path::new("."), Some(99), &o).unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(c.gbrank.num_trees, 12);
        assert_eq!(c.strategy.normalization, Normalization::None);
        assert_eq!(c.click.rate, RateSpec::Sessions { sessions: 10 });
        let a = RunConfig::from_toml(MINIMAL, Path::new("."), None, &[]).unwrap();
        assert_ne!(a.hash(), c.hash());
        let moved = RunConfig::from_toml(MINIMAL, Path::new("/elsewhere"), None, &[]).unwrap();
        assert_eq!(a.hash(), moved.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let no_seed = MINIMAL.replace("seed = 7", "");
        assert!(matches!(
            RunConfig::from_toml(&no_seed, Path::new("."), None, &[]),
            Err(PipelineError::Config(_))
        ));
        let no_path = MINIMAL.replace("models = \"models\"", "");
        assert!(RunConfig::from_toml(&no_path, Path::new("."), None, &[]).is_err());
        for o in [
            "strategy.lambdas=[]",
            "strategy.lambda=2",
            "gbrank.shrinkage=0",
            "bogus.key=1",
            "seed",
        ] {
            assert!(
                RunConfig::from_toml(MINIMAL, Path::new("."), None, &[o.to_string()]).is_err(),
                "{o}"
            );
        }
    }
}
