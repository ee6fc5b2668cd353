//! Deterministic multi-generation simulator.
//!
//! A synthetic roster of identities is embedded on the unit sphere. Each
//! generation the embeddings drift, get clustered (or ground truth is used
//! when clustering is disabled), a fraction of assignments is flipped, and
//! the refinery and learner run exactly as they would on real features.

mod experiment;
pub mod metrics;
pub mod presets;
pub mod rng;
mod world;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterParams;
use crate::error::{Error, Result};
use crate::learner::TrainParams;
use crate::propagation::PropagationMode;
use crate::refinery::RefineryConfig;

pub use experiment::{
    final_means, mean_records, records_to_csv, run_experiment, run_replicates, RunRecord, CSV_HEADER,
};
pub use world::{drift, generate_world, perturb};

/// Label noise injected on top of the clustering front-end.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Fraction of samples reassigned to a wrong cluster each generation.
    pub flip_rate: f64,
    /// Per-generation Gaussian embedding jitter before re-normalization.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default = "defaults::num_identities")]
    pub num_identities: usize,
    #[serde(default = "defaults::samples_per_identity")]
    pub samples_per_identity: usize,
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    #[serde(default = "defaults::intra_spread")]
    pub intra_spread: f64,
    #[serde(default = "defaults::noise")]
    pub noise: NoiseModel,
    #[serde(default = "defaults::generations")]
    pub generations: usize,
    #[serde(default)]
    pub refinery: RefineryConfig<f64>,
    /// `null` disables clustering: ground truth is perturbed directly.
    #[serde(default = "defaults::cluster")]
    pub cluster: Option<ClusterParams<f64>>,
    #[serde(default = "defaults::learner")]
    pub learner: TrainParams<f64>,
    /// Seeds `seed, seed + 1, ...` averaged by sweeps.
    #[serde(default = "defaults::replicates")]
    pub replicates: usize,
}

mod defaults {
    use super::*;

    pub fn num_identities() -> usize {
        presets::standard().num_identities
    }
    pub fn samples_per_identity() -> usize {
        presets::standard().samples_per_identity
    }
    pub fn dim() -> usize {
        presets::standard().dim
    }
    pub fn intra_spread() -> f64 {
        presets::standard().intra_spread
    }
    pub fn noise() -> NoiseModel {
        presets::standard().noise
    }
    pub fn generations() -> usize {
        presets::standard().generations
    }
    pub fn cluster() -> Option<ClusterParams<f64>> {
        presets::standard().cluster
    }
    pub fn learner() -> TrainParams<f64> {
        presets::standard().learner
    }
    pub fn replicates() -> usize {
        1
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_identities", self.num_identities),
            ("samples_per_identity", self.samples_per_identity),
            ("dim", self.dim),
            ("generations", self.generations),
            ("replicates", self.replicates),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(Error::Precondition(format!("{name} must be at least 1")));
            }
        }
        if !(self.intra_spread >= 0.0) || !self.intra_spread.is_finite() {
            return Err(Error::Precondition("intra_spread must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.noise.flip_rate) {
            return Err(Error::Precondition("noise.flip_rate must lie in [0, 1]".into()));
        }
        if !(self.noise.drift >= 0.0) || !self.noise.drift.is_finite() {
            return Err(Error::Precondition("noise.drift must be non-negative".into()));
        }
        if !(self.learner.lr > 0.0) || self.learner.epochs < 1 {
            return Err(Error::Precondition(
                "learner needs a positive lr and at least one epoch".into(),
            ));
        }
        if let Some(cluster) = &self.cluster {
            cluster.validate()?;
        }
        self.refinery.validate()
    }

    pub fn num_samples(&self) -> usize {
        self.num_identities * self.samples_per_identity
    }
}

/// Hyper-parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Tau,
    /// Sets blend mode with the given hard-label weight.
    Beta,
    FlipRate,
}

impl SweepParam {
    pub fn apply(self, base: &SimConfig, value: f64) -> SimConfig {
        let mut cfg = base.clone();
        match self {
            SweepParam::Alpha => cfg.refinery.alpha = value,
            SweepParam::Tau => cfg.refinery.propagation.temperature = value,
            SweepParam::Beta => {
                cfg.refinery.propagation.mode = PropagationMode::Blend;
                cfg.refinery.propagation.beta = value;
            }
            SweepParam::FlipRate => cfg.noise.flip_rate = value,
        }
        cfg
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Tau => "tau",
            SweepParam::Beta => "beta",
            SweepParam::FlipRate => "flip_rate",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "tau" => Ok(SweepParam::Tau),
            "beta" => Ok(SweepParam::Beta),
            "flip_rate" => Ok(SweepParam::FlipRate),
            other => Err(Error::Precondition(format!(
                "unknown sweep parameter `{other}` (expected alpha, tau, beta or flip_rate)"
            ))),
        }
    }
}
