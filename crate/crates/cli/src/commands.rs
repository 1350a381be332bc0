//! One function per subcommand. Each reads its inputs from the paths in
//! the run configuration, checks their lineage, writes its outputs and
//! records a manifest next to each of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;
use tailrank::click_sim::{label_key, substream};
use tailrank::corpus::{self, GradedJudgment, Query, Session, SnippetMap};
use tailrank::dbn::{fit_dbn, DbnEstimate};
use tailrank::eval::{
    self, build_click_tuples, mean_ndcg, ndcg_per_query, p0_p1, pair_gaps, pr_auc_from_gaps, pr_from_gaps, tau_grid,
    wilcoxon_signed_rank, EvalError, EvalReport, LambdaPoint, QueryNdcg, RunMetadata, SignificanceResult,
};
use tailrank::features::{
    build_attractive_lexicon, extract_features, feature_names, AttractiveLexicon, FeatureTable, RatedTitles,
    DEFAULT_LEXICON_ALPHA,
};
use tailrank::gbrank::{train, PreferencePair, TreeEnsemble};
use tailrank::ranking::{
    attractiveness_pairs, augment_with_click, baseline_feature_names, judgment_pairs, rank_all, score_table,
    strategy_one_all, strategy_two_table, subsample_sessions, write_rankings, RankedList, RateSpec,
};
use tailrank::synth::{self, GroundTruth};

use crate::config::RunConfig;
use crate::error::PipelineError;
use crate::manifest::{record, verify_lineage};

type Key = (String, String);
type Params = BTreeMap<String, serde_json::Value>;

pub const DBN_MODEL: &str = "dbn.json";
pub const LEXICON: &str = "lexicon.json";
pub const FEATURES: &str = "features.tsv";
pub const F_SNIPPET: &str = "f_snippet.json";
pub const F_SNIPPET_CLICK: &str = "f_snippet_click.json";
pub const F_ORG: &str = "f_org.json";
pub const F_II: &str = "f_ii.json";
pub const BASELINE_RANKING: &str = "baseline.jsonl";
pub const RERANKED: &str = "reranked.jsonl";
pub const RERANKED_STRATEGY_TWO: &str = "reranked_strategy2.jsonl";
pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const DBN_RECOVERY: &str = "dbn_recovery.json";
pub const REPORT: &str = "report.json";
pub const PR_CSV: &str = "pr_curves.csv";
pub const NDCG_CSV: &str = "ndcg.csv";

// substream tags for the query split and the session subsamples
const SPLIT: u64 = 101;
const TRAIN_SAMPLE: u64 = 102;
const TAIL_SAMPLE: u64 = 103;

/// Every subcommand in pipeline order.
pub const ALL: [&str; 8] = [
    "simulate",
    "fit-dbn",
    "lexicon",
    "features",
    "train-attr",
    "train-rank",
    "rerank",
    "eval",
];

pub fn dispatch(command: &str, cfg: &RunConfig) -> Result<(), PipelineError> {
    match command {
        "simulate" => cmd_simulate(cfg),
        "fit-dbn" => cmd_fit_dbn(cfg),
        "lexicon" => cmd_lexicon(cfg),
        "features" => cmd_features(cfg),
        "train-attr" => cmd_train_attr(cfg),
        "train-rank" => cmd_train_rank(cfg),
        "rerank" => cmd_rerank(cfg),
        "eval" => cmd_eval(cfg),
        "run" => cmd_run(cfg),
        other => Err(PipelineError::Config(format!("unknown subcommand {other:?}"))),
    }
}

pub fn cmd_run(cfg: &RunConfig) -> Result<(), PipelineError> {
    for c in ALL {
        log::info!("running {c}");
        dispatch(c, cfg)?;
    }
    Ok(())
}

// ---- helpers ----

fn model(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.models.join(name)
}

fn output(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.outputs.join(name)
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| PipelineError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    verify_lineage(path)?;
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn load_sessions(path: &Path) -> Result<Vec<Session>, PipelineError> {
    verify_lineage(path)?;
    Ok(corpus::load_sessions(path, corpus::DEFAULT_MAX_RESULTS)?)
}

fn load_snippets(path: &Path) -> Result<SnippetMap, PipelineError> {
    verify_lineage(path)?;
    Ok(corpus::load_snippets(path)?)
}

fn load_judgments(path: &Path) -> Result<Vec<GradedJudgment>, PipelineError> {
    verify_lineage(path)?;
    Ok(corpus::load_judgments(path)?)
}

fn load_dbn(path: &Path) -> Result<DbnEstimate, PipelineError> {
    verify_lineage(path)?;
    Ok(DbnEstimate::load(path)?)
}

fn load_model(path: &Path) -> Result<TreeEnsemble, PipelineError> {
    verify_lineage(path)?;
    Ok(TreeEnsemble::load(path)?)
}

fn load_features(path: &Path) -> Result<FeatureTable, PipelineError> {
    verify_lineage(path)?;
    let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(FeatureTable::read_tsv(BufReader::new(f))?)
}

fn finish(
    cfg: &RunConfig,
    command: &str,
    params: Params,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), PipelineError> {
    record(command, cfg.seed, &cfg.hash(), params, inputs, outputs)?;
    Ok(())
}

/// Whether `query` belongs to the evaluation split.
pub fn is_heldout(cfg: &RunConfig, query: &str) -> bool {
    substream(cfg.seed, &[SPLIT, label_key(query)]).random::<f64>() < cfg.split.heldout_fraction
}

fn sub_table(table: &FeatureTable, keep: impl Fn(&Key) -> bool) -> FeatureTable {
    FeatureTable {
        names: table.names.clone(),
        rows: table
            .rows
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}

fn train_model(
    pairs: &[PreferencePair],
    names: &[String],
    cfg: &RunConfig,
    label: &str,
) -> Result<(TreeEnsemble, Params), PipelineError> {
    let out = train(pairs, names, &cfg.gbrank)?;
    let final_loss = out.loss_history.last().copied().unwrap_or(0.0);
    log::info!(
        "{label}: {} pairs, {} trees, loss {} -> {final_loss}",
        pairs.len(),
        out.model.trees.len(),
        out.loss_history[0]
    );
    let mut p = Params::new();
    p.insert(format!("{label}.pairs"), json!(pairs.len()));
    p.insert(format!("{label}.trees"), json!(out.model.trees.len()));
    p.insert(format!("{label}.initial_loss"), json!(out.loss_history[0]));
    p.insert(format!("{label}.final_loss"), json!(final_loss));
    p.insert(format!("{label}.loss_history"), json!(out.loss_history));
    Ok((out.model, p))
}

// ---- subcommands ----

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), PipelineError> {
    let corpus = synth::generate(&cfg.synth, cfg.seed).map_err(PipelineError::Config)?;
    let p = &cfg.paths;
    for path in [&p.sessions, &p.snippets, &p.judgments, &p.params] {
        ensure_parent(path)?;
    }
    corpus::save_sessions(&p.sessions, &corpus.sessions)?;
    corpus::save_snippets(&p.snippets, &corpus.snippets)?;
    corpus::save_judgments(&p.judgments, &corpus.judgments)?;
    write_text(&p.params, &corpus.truth.to_json())?;
    log::info!(
        "simulated {} sessions over {} head queries and {} judgments",
        corpus.sessions.len(),
        corpus.truth.queries.len(),
        corpus.judgments.len()
    );
    let mut params = Params::new();
    params.insert("synth".into(), serde_json::to_value(&cfg.synth).expect("serialisable"));
    finish(
        cfg,
        "simulate",
        params,
        &[],
        &[&p.sessions, &p.snippets, &p.judgments, &p.params],
    )
}

pub fn cmd_fit_dbn(cfg: &RunConfig) -> Result<(), PipelineError> {
    let sessions = load_sessions(&cfg.paths.sessions)?;
    let est = fit_dbn(&sessions, &cfg.dbn)?;
    let out = model(cfg, DBN_MODEL);
    ensure_parent(&out)?;
    est.save(&out).map_err(|e| PipelineError::io(&out, e))?;
    log::info!("click model: gamma {} after {} iterations", est.gamma, est.iterations);
    let mut params = Params::new();
    params.insert("gamma".into(), json!(est.gamma));
    params.insert("iterations".into(), json!(est.iterations));
    let mut outputs = vec![out.clone()];

    // planted-versus-recovered comparison when ground truth is available
    if cfg.paths.params.exists() {
        let truth = GroundTruth::from_json(&read_text(&cfg.paths.params)?)
            .map_err(|e| PipelineError::io(&cfg.paths.params, e))?;
        let planted = truth.attractiveness();
        let errors: Vec<f64> = planted
            .iter()
            .filter_map(|(k, a)| est.entries.get(k).map(|e| (e.a - a).abs()))
            .collect();
        if !errors.is_empty() {
            let mae = errors.iter().sum::<f64>() / errors.len() as f64;
            log::info!("attractiveness MAE against planted values: {mae:.4}");
            let report = json!({
                "pairs": errors.len(),
                "mae": mae,
                "planted_gamma": truth.gamma,
                "fitted_gamma": est.gamma,
            });
            let path = output(cfg, DBN_RECOVERY);
            write_text(
                &path,
                &format!("{}\n", serde_json::to_string_pretty(&report).expect("json")),
            )?;
            params.insert("mae".into(), json!(mae));
            outputs.push(path);
        }
    }
    let inputs: Vec<&Path> = if cfg.paths.params.exists() {
        vec![&cfg.paths.sessions, &cfg.paths.params]
    } else {
        vec![&cfg.paths.sessions]
    };
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish(cfg, "fit-dbn", params, &inputs, &outs)
}

pub fn cmd_lexicon(cfg: &RunConfig) -> Result<(), PipelineError> {
    let snippets = load_snippets(&cfg.paths.snippets)?;
    let dbn_path = model(cfg, DBN_MODEL);
    let est = load_dbn(&dbn_path)?;
    let mut by_query: BTreeMap<&str, Vec<(Vec<String>, f64)>> = BTreeMap::new();
    for ((q, u), entry) in &est.entries {
        if is_heldout(cfg, q) {
            continue;
        }
        if let Some(s) = snippets.get(&(q.clone(), u.clone())) {
            by_query.entry(q).or_default().push((s.title_tokens.clone(), entry.a));
        }
    }
    let rated: Vec<RatedTitles> = by_query
        .into_iter()
        .map(|(q, titles)| RatedTitles {
            query: q.to_owned(),
            titles,
        })
        .collect();
    let lexicon = build_attractive_lexicon(&rated, DEFAULT_LEXICON_ALPHA);
    log::info!(
        "lexicon: {} attractive words from {} queries",
        lexicon.len(),
        rated.len()
    );
    let out = model(cfg, LEXICON);
    write_text(&out, &format!("{}\n", lexicon.to_json()))?;
    let mut params = Params::new();
    params.insert("words".into(), json!(lexicon.len()));
    params.insert("alpha".into(), json!(DEFAULT_LEXICON_ALPHA));
    finish(cfg, "lexicon", params, &[&cfg.paths.snippets, &dbn_path], &[&out])
}

pub fn cmd_features(cfg: &RunConfig) -> Result<(), PipelineError> {
    let snippets = load_snippets(&cfg.paths.snippets)?;
    let sessions = load_sessions(&cfg.paths.sessions)?;
    let lex_path = model(cfg, LEXICON);
    let lexicon = AttractiveLexicon::from_json(&read_text(&lex_path)?).map_err(|e| PipelineError::io(&lex_path, e))?;
    let stats = corpus::build_url_stats(&sessions);
    let mut rows = BTreeMap::new();
    let mut queries: BTreeMap<&str, Query> = BTreeMap::new();
    for ((q, u), snippet) in &snippets {
        if !queries.contains_key(q.as_str()) {
            queries.insert(q, Query::new(q.clone())?);
        }
        let f = extract_features(&queries[q.as_str()], snippet, stats.get(u), &lexicon);
        rows.insert((q.clone(), u.clone()), f.to_vec());
    }
    let table = FeatureTable {
        names: feature_names(),
        rows,
    };
    let out = output(cfg, FEATURES);
    ensure_parent(&out)?;
    let file = File::create(&out).map_err(|e| PipelineError::io(&out, e))?;
    table.write_tsv(BufWriter::new(file))?;
    let mut params = Params::new();
    params.insert("rows".into(), json!(table.rows.len()));
    finish(
        cfg,
        "features",
        params,
        &[&cfg.paths.snippets, &cfg.paths.sessions, &lex_path],
        &[&out],
    )
}

pub fn cmd_train_attr(cfg: &RunConfig) -> Result<(), PipelineError> {
    let feat_path = output(cfg, FEATURES);
    let dbn_path = model(cfg, DBN_MODEL);
    let table = load_features(&feat_path)?;
    let est = load_dbn(&dbn_path)?;
    let sessions = load_sessions(&cfg.paths.sessions)?;

    let head: BTreeSet<&str> = est.query_sessions.keys().map(String::as_str).collect();
    let train_table = sub_table(&table, |(q, _)| head.contains(q.as_str()) && !is_heldout(cfg, q));
    let train_queries: BTreeSet<&str> = train_table.rows.keys().map(|(q, _)| q.as_str()).collect();

    let pairs = attractiveness_pairs(&est, &train_table.rows)?;
    let (f_snippet, mut params) = train_model(&pairs, &train_table.names, cfg, "f_snippet")?;

    let train_sessions: Vec<Session> = sessions
        .into_iter()
        .filter(|s| train_queries.contains(s.query_id.as_str()))
        .collect();
    let sample = subsample_sessions(&train_sessions, &cfg.click.rate, cfg.seed ^ TRAIN_SAMPLE)?;
    let augmented = augment_with_click(&train_table, &sample, &cfg.dbn.clone().with_gamma(est.gamma))?;
    let click_pairs = attractiveness_pairs(&est, &augmented.rows)?;
    let (f_click, p2) = train_model(&click_pairs, &augmented.names, cfg, "f_snippet_click")?;
    params.extend(p2);
    params.insert("sampled_sessions".into(), json!(sample.len()));
    params.insert(
        "rate".into(),
        serde_json::to_value(&cfg.click.rate).expect("serialisable"),
    );

    let out1 = model(cfg, F_SNIPPET);
    let out2 = model(cfg, F_SNIPPET_CLICK);
    write_text(&out1, &f_snippet.to_json())?;
    write_text(&out2, &f_click.to_json())?;
    finish(
        cfg,
        "train-attr",
        params,
        &[&feat_path, &dbn_path, &cfg.paths.sessions],
        &[&out1, &out2],
    )
}

fn baseline_rows(judgments: &[GradedJudgment]) -> Result<(Vec<String>, BTreeMap<Key, Vec<f64>>), PipelineError> {
    let dim = judgments
        .iter()
        .find_map(|j| j.baseline_features.as_ref().map(Vec::len))
        .ok_or_else(|| PipelineError::Data("judgments carry no baseline_features".into()))?;
    let mut rows = BTreeMap::new();
    for j in judgments {
        let x = j.baseline_features.as_ref().filter(|x| x.len() == dim).ok_or_else(|| {
            PipelineError::Data(format!(
                "judgment ({:?}, {:?}) lacks a {dim}-value baseline_features block",
                j.query_id, j.url
            ))
        })?;
        rows.insert((j.query_id.clone(), j.url.clone()), x.clone());
    }
    Ok((baseline_feature_names(dim), rows))
}

pub fn cmd_train_rank(cfg: &RunConfig) -> Result<(), PipelineError> {
    let feat_path = output(cfg, FEATURES);
    let table = load_features(&feat_path)?;
    let judgments = load_judgments(&cfg.paths.judgments)?;
    let train_j: Vec<GradedJudgment> = judgments
        .iter()
        .filter(|j| !is_heldout(cfg, &j.query_id))
        .cloned()
        .collect();
    let (names, base_rows) = baseline_rows(&train_j)?;
    let pairs = judgment_pairs(&train_j, &base_rows)?;
    let (f_org, mut params) = train_model(&pairs, &names, cfg, "f_org")?;
    let expanded = strategy_two_table(&train_j, &names, Some(&table))?;
    let pairs2 = judgment_pairs(&train_j, &expanded.rows)?;
    let (f_ii, p2) = train_model(&pairs2, &expanded.names, cfg, "f_ii")?;
    params.extend(p2);
    let out1 = model(cfg, F_ORG);
    let out2 = model(cfg, F_II);
    write_text(&out1, &f_org.to_json())?;
    write_text(&out2, &f_ii.to_json())?;
    finish(
        cfg,
        "train-rank",
        params,
        &[&feat_path, &cfg.paths.judgments],
        &[&out1, &out2],
    )
}

fn baseline_scores(judgments: &[GradedJudgment]) -> BTreeMap<Key, f64> {
    judgments
        .iter()
        .map(|j| ((j.query_id.clone(), j.url.clone()), j.baseline_score))
        .collect()
}

fn judged_snippet_rows(table: &FeatureTable, judgments: &[GradedJudgment]) -> Result<FeatureTable, PipelineError> {
    let keys: BTreeSet<Key> = judgments.iter().map(|j| (j.query_id.clone(), j.url.clone())).collect();
    if let Some((q, u)) = keys.iter().find(|k| !table.rows.contains_key(*k)) {
        return Err(PipelineError::Data(format!(
            "no features for judged url ({q:?}, {u:?})"
        )));
    }
    Ok(sub_table(table, |k| keys.contains(k)))
}

pub fn cmd_rerank(cfg: &RunConfig) -> Result<(), PipelineError> {
    let feat_path = output(cfg, FEATURES);
    let attr_path = model(cfg, F_SNIPPET);
    let ii_path = model(cfg, F_II);
    let table = load_features(&feat_path)?;
    let judgments = load_judgments(&cfg.paths.judgments)?;
    let f_attr = load_model(&attr_path)?;
    let f_ii = load_model(&ii_path)?;

    let baseline = baseline_scores(&judgments);
    let attr = score_table(&f_attr, &judged_snippet_rows(&table, &judgments)?)?;
    let blended = strategy_one_all(&baseline, &attr, cfg.strategy.lambda, cfg.strategy.normalization)?;
    let (names, _) = baseline_rows(&judgments)?;
    let expanded = strategy_two_table(&judgments, &names, Some(&table))?;
    let second = rank_all(&score_table(&f_ii, &expanded)?)?;
    let base_lists = rank_all(&baseline)?;

    let out_base = output(cfg, BASELINE_RANKING);
    let out_one = output(cfg, RERANKED);
    let out_two = output(cfg, RERANKED_STRATEGY_TWO);
    write_with(&out_base, |w| write_rankings(w, &base_lists))?;
    write_with(&out_one, |w| write_rankings(w, &blended))?;
    write_with(&out_two, |w| write_rankings(w, &second))?;

    let mut params = Params::new();
    params.insert("lambda".into(), json!(cfg.strategy.lambda));
    params.insert(
        "normalization".into(),
        serde_json::to_value(cfg.strategy.normalization).expect("serialisable"),
    );
    params.insert(
        "strategies".into(),
        json!({ RERANKED: "score blending", RERANKED_STRATEGY_TWO: "expanded features", BASELINE_RANKING: "baseline" }),
    );
    let inputs: [&Path; 4] = [&feat_path, &cfg.paths.judgments, &attr_path, &ii_path];
    let outputs: [&Path; 3] = [&out_base, &out_one, &out_two];
    let manifest = record("rerank", cfg.seed, &cfg.hash(), params, &inputs, &outputs)?;
    let run_manifest = output(cfg, RUN_MANIFEST);
    write_text(
        &run_manifest,
        &format!("{}\n", serde_json::to_string_pretty(&manifest).expect("json")),
    )
}

fn taus_for(cfg: &RunConfig, gaps: &[f64]) -> Vec<f64> {
    if cfg.eval.taus.is_empty() {
        tau_grid(gaps, cfg.eval.tau_points)
    } else {
        cfg.eval.taus.clone()
    }
}

fn per_query_values(per: &[QueryNdcg], k: usize) -> BTreeMap<&str, f64> {
    per.iter().map(|q| (q.query.as_str(), q.values[&k])).collect()
}

fn significance(
    per: &BTreeMap<String, Vec<QueryNdcg>>,
    baseline: &str,
    method: &str,
    k: usize,
) -> Option<SignificanceResult> {
    let b = per_query_values(per.get(baseline)?, k);
    let m = per_query_values(per.get(method)?, k);
    let diffs: Vec<f64> = m.iter().filter_map(|(q, v)| b.get(q).map(|bv| v - bv)).collect();
    if diffs.is_empty() {
        return None;
    }
    Some(SignificanceResult {
        metric: format!("ndcg@{k}"),
        baseline: baseline.to_owned(),
        method: method.to_owned(),
        mean_difference: diffs.iter().sum::<f64>() / diffs.len() as f64,
        wilcoxon: wilcoxon_signed_rank(&diffs),
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), PipelineError> {
    let feat_path = output(cfg, FEATURES);
    let dbn_path = model(cfg, DBN_MODEL);
    let paths: Vec<PathBuf> = [F_SNIPPET, F_SNIPPET_CLICK, F_ORG, F_II]
        .iter()
        .map(|m| model(cfg, m))
        .collect();
    let table = load_features(&feat_path)?;
    let est = load_dbn(&dbn_path)?;
    let sessions = load_sessions(&cfg.paths.sessions)?;
    let snippets = load_snippets(&cfg.paths.snippets)?;
    let judgments = load_judgments(&cfg.paths.judgments)?;
    let f_snippet = load_model(&paths[0])?;
    let f_click = load_model(&paths[1])?;
    let f_org = load_model(&paths[2])?;
    let f_ii = load_model(&paths[3])?;
    let mut report = EvalReport::default();

    // held-out head queries, treated as tail queries
    let head: BTreeSet<&str> = est.query_sessions.keys().map(String::as_str).collect();
    let test_table = sub_table(&table, |(q, _)| head.contains(q.as_str()) && is_heldout(cfg, q));
    let test_queries: BTreeSet<&str> = test_table.rows.keys().map(|(q, _)| q.as_str()).collect();
    if !test_table.rows.is_empty() {
        let truth: BTreeMap<Key, f64> = test_table
            .rows
            .keys()
            .filter_map(|k| est.entries.get(k).map(|e| (k.clone(), e.a)))
            .collect();
        let test_sessions: Vec<Session> = sessions
            .iter()
            .filter(|s| test_queries.contains(s.query_id.as_str()))
            .cloned()
            .collect();
        let tail = subsample_sessions(
            &test_sessions,
            &RateSpec::Sessions {
                sessions: cfg.click.tail_sessions,
            },
            cfg.seed ^ TAIL_SAMPLE,
        )?;
        let tail_cfg = cfg.dbn.clone().with_gamma(est.gamma);
        let tail_est = fit_dbn(&tail, &tail_cfg)?;
        let a_tail: BTreeMap<Key, f64> = truth
            .keys()
            .map(|(q, u)| ((q.clone(), u.clone()), tail_est.attractiveness(q, u)))
            .collect();
        let snippet_scores = score_table(&f_snippet, &test_table)?;
        let click_scores = score_table(&f_click, &augment_with_click(&test_table, &tail, &tail_cfg)?)?;
        for (name, scores) in [
            ("a_tail", &a_tail),
            ("f_snippet", &snippet_scores),
            ("f_snippet+click", &click_scores),
        ] {
            match pair_gaps(scores, &truth) {
                Ok(gaps) => {
                    report
                        .pr_curves
                        .insert(name.into(), pr_from_gaps(&gaps, &taus_for(cfg, &gaps))?);
                    report.pr_auc.insert(name.into(), pr_auc_from_gaps(&gaps)?);
                }
                Err(EvalError::NoPairs) => log::warn!("no evaluation pairs for {name}"),
                Err(e) => return Err(e.into()),
            }
        }
    }

    // held-out judged queries
    let test_j: Vec<GradedJudgment> = judgments
        .iter()
        .filter(|j| is_heldout(cfg, &j.query_id))
        .cloned()
        .collect();
    if !test_j.is_empty() {
        let grades: BTreeMap<Key, u8> = test_j
            .iter()
            .map(|j| ((j.query_id.clone(), j.url.clone()), j.grade))
            .collect();
        let ks = &cfg.eval.ndcg_ks;
        let baseline = baseline_scores(&test_j);
        let attr = score_table(&f_snippet, &judged_snippet_rows(&table, &test_j)?)?;
        let (names, base_rows) = baseline_rows(&test_j)?;
        let org_table = FeatureTable {
            names: names.clone(),
            rows: base_rows,
        };
        let expanded = strategy_two_table(&test_j, &names, Some(&table))?;
        let mut lists: Vec<(String, Vec<RankedList>)> = vec![
            ("baseline".into(), rank_all(&baseline)?),
            ("f_attr".into(), rank_all(&attr)?),
            ("f_org".into(), rank_all(&score_table(&f_org, &org_table)?)?),
            ("f_ii".into(), rank_all(&score_table(&f_ii, &expanded)?)?),
            (
                format!("strategy_one@{}", cfg.strategy.lambda),
                strategy_one_all(&baseline, &attr, cfg.strategy.lambda, cfg.strategy.normalization)?,
            ),
        ];
        for (name, l) in lists.drain(..) {
            let per = ndcg_per_query(&l, &grades, ks)?;
            report.ndcg.insert(name.clone(), mean_ndcg(&per));
            report.per_query_ndcg.insert(name, per);
        }
        for &lambda in &cfg.strategy.lambdas {
            let l = strategy_one_all(&baseline, &attr, lambda, cfg.strategy.normalization)?;
            report.lambda_sweep.push(LambdaPoint {
                lambda,
                ndcg: mean_ndcg(&ndcg_per_query(&l, &grades, ks)?),
            });
        }
        let k = cfg.eval.significance_k;
        let blend = format!("strategy_one@{}", cfg.strategy.lambda);
        report.significance = [("f_org", "f_ii"), ("baseline", blend.as_str())]
            .iter()
            .filter_map(|(b, m)| significance(&report.per_query_ndcg, b, m, k))
            .collect();
    }

    let tuples = build_click_tuples(&sessions, &snippets);
    report.miss_click = match p0_p1(&tuples, true, cfg.eval.per_impression) {
        Ok(e) => Some(e),
        Err(EvalError::Unbalanced) => {
            log::warn!("click tuples do not cover both presentation orders; using the unbalanced estimate");
            Some(p0_p1(&tuples, false, cfg.eval.per_impression)?)
        }
        Err(e) => return Err(e.into()),
    };

    for (name, m) in [
        ("f_snippet", &f_snippet),
        ("f_snippet+click", &f_click),
        ("f_org", &f_org),
        ("f_ii", &f_ii),
    ] {
        report.feature_importance.insert(name.into(), m.feature_importance());
    }
    report.metadata = RunMetadata {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        normalization: serde_json::to_value(cfg.strategy.normalization)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        heldout_queries: test_queries.len() + test_j.iter().map(|j| &j.query_id).collect::<BTreeSet<_>>().len(),
    };
    report.validate()?;

    let out = output(cfg, REPORT);
    let pr = output(cfg, PR_CSV);
    let nd = output(cfg, NDCG_CSV);
    write_text(&out, &report.to_json())?;
    write_with(&pr, |w| report.write_pr_csv(w))?;
    write_with(&nd, |w| report.write_ndcg_csv(w))?;
    let mut inputs: Vec<&Path> = vec![
        &feat_path,
        &dbn_path,
        &cfg.paths.sessions,
        &cfg.paths.snippets,
        &cfg.paths.judgments,
    ];
    inputs.extend(paths.iter().map(PathBuf::as_path));
    finish(cfg, "eval", Params::new(), &inputs, &[&out, &pr, &nd])
}

/// Re-exported so tests can compare against the evaluation code path.
pub use eval::pr_auc;
