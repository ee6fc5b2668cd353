use std::fmt::Write as _;

use rayon::prelude::*;

use crate::clustering::{dbscan, EmbeddingSet};
use crate::error::Result;
use crate::learner::train_generation;
use crate::partitions::Partition;
use crate::refinery::{run_generation, GenerationState};
use crate::sim::metrics::{cross_entropy_vs_truth, majority_identity, score};
use crate::sim::rng::{stream, Purpose};
use crate::sim::{drift, generate_world, perturb, SimConfig};

pub const CSV_HEADER: &str =
    "generation,m,ari_raw,ari_refined,nmi_raw,nmi_refined,ce_raw,ce_refined,diag_mass";

/// Label quality for one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub generation: u32,
    pub m: usize,
    pub ari_raw: f64,
    /// ARI of the refined labels' argmax partition.
    pub ari_refined: f64,
    pub nmi_raw: f64,
    pub nmi_refined: f64,
    /// Mean cross-entropy of raw one-hots against ground truth.
    pub ce_raw: f64,
    pub ce_refined: f64,
    /// Mean peak of the normalized consensus rows; 1 at bootstrap.
    pub diag_mass: f64,
    /// Probabilities clamped at the log floor while computing the CE columns.
    pub log_clamps: usize,
}

fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// CSV with [`CSV_HEADER`]; floats carry 9 significant digits.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.generation,
            r.m,
            sig9(r.ari_raw),
            sig9(r.ari_refined),
            sig9(r.nmi_raw),
            sig9(r.nmi_refined),
            sig9(r.ce_raw),
            sig9(r.ce_refined),
            sig9(r.diag_mass)
        );
    }
    out
}

fn record(state: &GenerationState<f64>, truth: &Partition) -> Result<RunRecord> {
    let raw = &state.partition;
    let refined = state.refined_labels.argmax_partition();
    let raw_scores = score(raw, truth)?;
    let refined_scores = score(&refined, truth)?;
    let mapping = majority_identity(raw, truth)?;
    let ce_raw = cross_entropy_vs_truth(&raw.one_hot_matrix(), &mapping, truth)?;
    let ce_refined = cross_entropy_vs_truth(&state.refined_labels, &mapping, truth)?;
    Ok(RunRecord {
        generation: raw.generation(),
        m: raw.num_clusters(),
        ari_raw: raw_scores.ari,
        ari_refined: refined_scores.ari,
        nmi_raw: raw_scores.nmi,
        nmi_refined: refined_scores.nmi,
        ce_raw: ce_raw.loss,
        ce_refined: ce_refined.loss,
        diag_mass: state.consensus.as_ref().map_or(1.0, |c| c.mean_peak_mass()),
        log_clamps: ce_raw.clamped + ce_refined.clamped,
    })
}

/// Runs `cfg.generations` rounds of drift, clustering, label flips,
/// refinement, training and scoring for the single seed `cfg.seed`.
pub fn run_experiment(cfg: &SimConfig) -> Result<Vec<RunRecord>> {
    let (mut embeddings, truth) = generate_world(cfg)?;
    let tau = cfg.refinery.propagation.temperature;
    let mut prev: Option<GenerationState<f64>> = None;
    let mut records = Vec::with_capacity(cfg.generations);
    for t in 0..cfg.generations as u32 {
        if t > 0 {
            drift(&mut embeddings, cfg.noise.drift, &mut stream(cfg.seed, t, Purpose::Drift));
        }
        let mut clusterer = |e: &EmbeddingSet<f64>| -> Result<Partition> {
            let base = match &cfg.cluster {
                Some(params) => dbscan(e, params)?,
                None => truth.clone(),
            };
            Ok(perturb(&base, &cfg.noise, &mut stream(cfg.seed, t, Purpose::Flip)))
        };
        let state = run_generation(prev.as_ref(), &embeddings, &cfg.refinery, &mut clusterer)?;
        records.push(record(&state, &truth)?);
        let (trained_bank, trained, _) = train_generation(
            &state.prototype_begin,
            &embeddings,
            &state.refined_labels,
            tau,
            &cfg.learner,
        )?;
        embeddings = trained;
        prev = Some(state.with_end_snapshot(trained_bank)?);
    }
    Ok(records)
}

/// One run per seed `cfg.seed + r` for `r < cfg.replicates`, in seed order.
pub fn run_replicates(cfg: &SimConfig) -> Result<Vec<Vec<RunRecord>>> {
    cfg.validate()?;
    (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            run_experiment(&SimConfig {
                seed: cfg.seed.wrapping_add(r),
                ..cfg.clone()
            })
        })
        .collect()
}

/// Per-generation average over runs of equal length; `m` is rounded.
pub fn mean_records(runs: &[Vec<RunRecord>]) -> Vec<RunRecord> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let count = runs.len() as f64;
    (0..first.len())
        .map(|g| {
            let mean = |f: fn(&RunRecord) -> f64| runs.iter().map(|run| f(&run[g])).sum::<f64>() / count;
            RunRecord {
                generation: first[g].generation,
                m: mean(|r| r.m as f64).round() as usize,
                ari_raw: mean(|r| r.ari_raw),
                ari_refined: mean(|r| r.ari_refined),
                nmi_raw: mean(|r| r.nmi_raw),
                nmi_refined: mean(|r| r.nmi_refined),
                ce_raw: mean(|r| r.ce_raw),
                ce_refined: mean(|r| r.ce_refined),
                diag_mass: mean(|r| r.diag_mass),
                log_clamps: runs.iter().map(|run| run[g].log_clamps).sum(),
            }
        })
        .collect()
}

/// Seed-averaged record of the final generation.
pub fn final_means(runs: &[Vec<RunRecord>]) -> Option<RunRecord> {
    mean_records(runs).last().copied()
}

/// Mean over every generation and seed of one column.
#[cfg(test)]
pub(crate) fn overall_mean(runs: &[Vec<RunRecord>], f: fn(&RunRecord) -> f64) -> f64 {
    let n: usize = runs.iter().map(Vec::len).sum();
    runs.iter().flatten().map(f).sum::<f64>() / n as f64
}
