//! Intra-modal enhancement: multi-head self-attention for both modalities
//! and the visual spatial-semantic graph with its relationship-aware GCN.

mod attention;
mod graph;

pub use attention::{self_attend, Head, SelfAttnParams};
pub use graph::{
    build_graph_mask, edge_weights, rgcn, EdgeNorm, EdgeParams, GraphDump, RelGraph, RgcnParams,
};

#[cfg(test)]
mod tests;
