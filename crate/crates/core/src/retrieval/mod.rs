//! BM25 and dense search, score fusion, hard-negative mining, retrieval
//! finetuning, and ranking metrics.

mod bm25;
mod dense;
mod finetune;
mod fusion;
mod metrics;
mod run;

pub use bm25::{bm25_score, bm25_search, Bm25Index, Bm25Params};
pub use dense::{dense_search, DenseIndex};
pub use finetune::{
    bm25_run, dense_run, finetune_retrieval, mine_hard_negatives, retrieval_batch_loss, training_pairs,
    RetrievalConfig, TrainQuery,
};
pub use fusion::{fuse, fuse_with, tune_fusion_weight, FusionNorm, FusionTuning, TuneOptions};
pub use metrics::{
    evaluate, mrr_at_k, ndcg_at_k, per_query, precision_at_k, score_query, EvalOptions, Gain, Metric, MetricKind,
};
pub use run::{hit_order, queries_from_tsv, queries_to_tsv, rank_hits, Hit, Qrels, Run};
