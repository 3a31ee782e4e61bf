//! Documents, passage graphs, and the graph-attention document encoder.

mod document;
mod graph;
mod model;
mod text;

pub use document::Document;
pub use graph::{build_graph, DocumentGraph, GraphTopology};
pub use model::{
    attention_csv, gat_layer, init_doc_node, DocumentForward, GatLayer, GraphDocModel, ModelConfig, Phase,
    EMBEDDING, HEAD_BIAS, HEAD_WEIGHT, PROJ_BIAS, PROJ_WEIGHT,
};
pub use text::{fnv1a64, split_into_passages, tokenize, words};
