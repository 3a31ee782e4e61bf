//! Classification finetuning, k-means clustering, and clustering scores.

mod classify;
mod cluster;

pub use classify::{
    accuracy, argmax, batch_logits, classification_loss, evaluate_accuracy, finetune_classification, predict,
    predictions_tsv, ClassifyConfig, ClassifyLog, EpochRecord,
};
pub use cluster::{
    cluster_eval, kmeans, nearest, nmi, purity, ClusterAssignment, ClusterConfig, ClusterReport, NmiNorm,
};
