//! Evaluation: effects retrieval (recall@K / mAP@10 over candidate pools)
//! and differentiable effects-parameter matching.

mod matching;
mod retrieval;

pub use matching::{
    make_triplet, param_match, seven_effect_template, sweep_single_param, MatchConfig,
    MatchObjective, MatchResult, MatchStrategy, MatchTriplet,
};
pub use retrieval::{
    build_pool, effect_count_sweep, embed_extracted, metrics_from_ranks,
    metrics_with_query_class, retrieval_metrics, target_ranks, EvalConfig, RetrievalMetrics,
    RetrievalPool, Scenario,
};
