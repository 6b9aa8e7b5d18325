//! Inductive knowledge-graph completion by query-conditioned path reasoning.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`graph`] loads and indexes knowledge graphs (with inverse-relation
//!    closure) and inductive train/test splits.
//! 2. [`confidence`] mines single-rule confidences `C(r => r_q)` from the
//!    training graph.
//! 3. [`mask`] turns per-hop candidate-relation confidences into removal
//!    probabilities and samples the retained relation subset.
//! 4. [`reasoner`] runs the L-step forward pass: masked expansion, cumulative
//!    path scoring, and top-k frontier pruning, on a gradient tape.
//! 5. [`tape`] / [`params`] provide the dense-tensor reverse-mode gradient
//!    engine and the Adam optimizer backing training.
//! 6. [`train`] and [`metrics`] implement the multi-class log-loss training
//!    loop and filtered-ranking evaluation (MRR, Hits@k).
//!
//! Everything is deterministic given the configured seeds: random decisions
//! draw from streams derived in [`rng`], so results do not depend on
//! execution order or thread count. The crate is `no_std` (alloc only); all
//! file and process concerns live in the companion `qaspr` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod confidence;
pub mod gradcheck;
pub mod graph;
pub mod mask;
mod math;
pub mod metrics;
pub mod model;
pub mod params;
pub mod reasoner;
pub mod rng;
pub mod split;
pub mod tape;
pub mod tensor;
pub mod train;

pub use confidence::{ConfidenceTable, confidence_row, mine_confidence};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Triple, Vocab, build_graph};
pub use mask::{HopMask, MaskConfig, build_hop_mask, candidate_relations};
pub use metrics::{
    AblationRun, AblationVariant, FilterIndex, MaskMode, MetricsReport, ablate, evaluate_queries,
    evaluate_split_test, filtered_rank,
};
pub use model::ModelParams;
pub use params::{ParamId, ParamStore};
pub use reasoner::{ForwardRun, ReasonerConfig, ReasonerState, forward};
pub use split::InductiveSplit;
pub use tape::{Tape, ValId};
pub use tensor::Tensor;
pub use train::{CurvePoint, FitResult, QueryRunner, SerialRunner, TrainConfig, fit, train_epoch};
