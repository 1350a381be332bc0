//! Perceived-relevance modelling for search results without per-query
//! clicks: DBN click-model estimation, snippet features, a pairwise
//! gradient-boosted ranker and the evaluation harness around them.

pub mod click_sim;
pub mod corpus;
pub mod dbn;
pub mod eval;
pub mod features;
pub mod gbrank;
pub mod ranking;
pub mod synth;
