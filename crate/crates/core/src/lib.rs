//! Pseudo-label refinement with cross-generation clustering consensus.
//!
//! Each generation re-clusters the embeddings into a fresh set of pseudo
//! classes. The IoU consensus between consecutive partitions lets labels
//! (hard one-hots or prototype confidences) from generation `t-1` be
//! transported into generation `t`'s class space, where they are blended
//! with the current one-hot labels by a momentum coefficient.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation.

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod consensus;
mod error;
pub mod learner;
pub mod partitions;
pub mod propagation;
pub mod refinery;
mod scalar;
pub mod sim;
mod textio;

pub use clustering::{dbscan, pairwise_distances, ClusterParams, Clusterer, EmbeddingSet, Metric};
pub use consensus::{compute_consensus, ConsensusMatrix};
pub use error::{Error, Result};
pub use learner::{
    class_confidence, loss_and_grads, train_generation, PrototypeBank, Snapshot, TrainParams,
    TrainReport,
};
pub use partitions::{validate, LabelMatrix, LabelVector, Partition, Violation};
pub use propagation::{
    propagate_blend, propagate_hard, propagate_soft, prototype_confidence, PropagationConfig,
    PropagationMode,
};
pub use refinery::{
    refine_label, refined_cross_entropy, run_generation, GenerationState, RefineryConfig,
};
pub use scalar::Scalar;

pub type LabelVectorF64 = LabelVector<f64>;
pub type LabelMatrixF64 = LabelMatrix<f64>;
pub type ConsensusMatrixF64 = ConsensusMatrix<f64>;
pub type EmbeddingSetF64 = EmbeddingSet<f64>;
pub type PrototypeBankF64 = PrototypeBank<f64>;
pub type GenerationStateF64 = GenerationState<f64>;
pub type RefineryConfigF64 = RefineryConfig<f64>;

pub type LabelVectorF32 = LabelVector<f32>;
pub type LabelMatrixF32 = LabelMatrix<f32>;
pub type ConsensusMatrixF32 = ConsensusMatrix<f32>;
pub type EmbeddingSetF32 = EmbeddingSet<f32>;
pub type PrototypeBankF32 = PrototypeBank<f32>;
pub type GenerationStateF32 = GenerationState<f32>;
pub type RefineryConfigF32 = RefineryConfig<f32>;
