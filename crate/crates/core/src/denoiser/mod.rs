//! Equivariant message-passing denoiser over a heterogeneous graph of ligand
//! atoms, motifs and pocket/protein atoms.
//!
//! Every layer computes edge messages from both endpoint embeddings, the
//! edge type, the time embedding and a radial basis of the edge length;
//! sums them into a residual node update; and moves mutable nodes along
//! relative vectors `x_i - x_j` (plus the vector to the pocket anchor),
//! each weighted by a learned invariant scalar. The coordinate displacement
//! after the last layer is the noise prediction.

mod graph;
mod net;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molio::{NUM_ATOM_TYPES, POCKET_FEATURES};
use crate::topo::FINGERPRINT_LEN;

pub use graph::{build_graph, Edge, HeteroGraph, LigandNodes, MotifNodes, NodeKind, PocketNodes};
pub use net::{backward, forward, time_embedding, Condition, DenoiserOutput, OutputGrad, Tape};
pub use params::{
    read_checkpoint, write_checkpoint, Checkpoint, DenoiserParams, ParamEntry, ParamLayout, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

/// 16 ordered kind pairs plus the two cross-view directions.
pub const EDGE_TYPES: usize = 18;
pub const NODE_KINDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DenoiserError {
    #[error("non-finite value after layer {layer}")]
    NumericOverflow { layer: usize },
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("time step {t} outside 1..={max}")]
    Step { t: usize, max: usize },
    #[error("{0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub layers: usize,
    pub k: usize,
    /// Motif vocabulary size `W`; motif logits have `W + 1` entries.
    pub vocab_size: usize,
    pub rbf_count: usize,
    /// Largest radial-basis center, in model-frame units.
    pub rbf_max: f64,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { hidden: 64, layers: 4, k: 8, vocab_size: 0, rbf_count: 16, rbf_max: 10.0, time_dim: 16 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 || self.layers == 0 {
            return Err("hidden and layers must be at least 1".into());
        }
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.rbf_count < 2 || !(self.rbf_max > 0.0) {
            return Err("rbf_count must be >= 2 and rbf_max > 0".into());
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err("time_dim must be a positive even number".into());
        }
        Ok(())
    }
}

/// Width of the per-node input features, excluding the time embedding.
pub fn feature_dim(vocab_size: usize) -> usize {
    NODE_KINDS + NUM_ATOM_TYPES + vocab_size + 1 + POCKET_FEATURES + FINGERPRINT_LEN
}
