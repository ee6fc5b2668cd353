//! Standard simulator setting and the ablation grids run against it.

use crate::clustering::{ClusterParams, Metric};
use crate::learner::{Snapshot, TrainParams};
use crate::propagation::{PropagationConfig, PropagationMode};
use crate::refinery::RefineryConfig;
use crate::sim::{NoiseModel, SimConfig};

/// Momentum values compared against the `alpha = 1` baseline.
pub const ALPHA_SWEEP: [f64; 5] = [1.0, 0.95, 0.9, 0.85, 0.8];
/// Hard-label weight in blend mode, from pure soft to pure hard.
pub const BETA_SWEEP: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const TAU_SWEEP: [f64; 6] = [1.0, 5.0, 10.0, 30.0, 50.0, 100.0];
pub const FLIP_SWEEP: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

/// 20 identities x 30 samples, 20% flips per generation, 10 generations,
/// soft propagation with `alpha = 0.9`, `tau = 30`. DBSCAN runs with
/// `eps = 0.15`: at this spread the library default of 0.5 chains every
/// identity into one cluster.
pub fn standard() -> SimConfig {
    SimConfig {
        seed: 0,
        num_identities: 20,
        samples_per_identity: 30,
        dim: 16,
        intra_spread: 0.07,
        noise: NoiseModel {
            flip_rate: 0.2,
            drift: 0.02,
        },
        generations: 10,
        refinery: RefineryConfig {
            alpha: 0.9,
            propagation: PropagationConfig {
                mode: PropagationMode::Soft,
                beta: 0.0,
                temperature: 30.0,
            },
            prototype_snapshot: Snapshot::Begin,
        },
        cluster: Some(ClusterParams {
            eps: 0.15,
            min_pts: 4,
            metric: Metric::Cosine,
        }),
        learner: TrainParams {
            lr: 0.5,
            epochs: 10,
            grad_check_stride: 0,
        },
        replicates: 1,
    }
}

pub fn with_mode(base: &SimConfig, mode: PropagationMode) -> SimConfig {
    let mut cfg = base.clone();
    cfg.refinery.propagation.mode = mode;
    cfg
}

pub fn with_snapshot(base: &SimConfig, snapshot: Snapshot) -> SimConfig {
    let mut cfg = base.clone();
    cfg.refinery.prototype_snapshot = snapshot;
    cfg
}
