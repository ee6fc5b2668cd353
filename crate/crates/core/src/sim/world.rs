//! Synthetic identities, label flips and embedding drift.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::clustering::EmbeddingSet;
use crate::error::Result;
use crate::partitions::Partition;
use crate::scalar::normalize_in_place;
use crate::sim::rng::{stream, Purpose};
use crate::sim::{NoiseModel, SimConfig};

fn gaussian_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

/// Identity means uniform on the unit sphere; each sample is
/// `normalize(mean + intra_spread * N(0, I))`. Samples are grouped by
/// identity, so ground truth is `[0; S] ++ [1; S] ++ ...`.
pub fn generate_world(cfg: &SimConfig) -> Result<(EmbeddingSet<f64>, Partition)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0, Purpose::World);
    let dim = cfg.dim;
    let means: Vec<Vec<f64>> = (0..cfg.num_identities)
        .map(|_| gaussian_unit(&mut rng, dim))
        .collect();
    let n = cfg.num_identities * cfg.samples_per_identity;
    let mut data = Vec::with_capacity(n * dim);
    let mut truth = Vec::with_capacity(n);
    for (g, mean) in means.iter().enumerate() {
        for _ in 0..cfg.samples_per_identity {
            let mut x: Vec<f64> = mean
                .iter()
                .map(|&m| m + cfg.intra_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if !normalize_in_place(&mut x) {
                x.clone_from(mean);
            }
            data.extend(x);
            truth.push(g);
        }
    }
    let truth = Partition::new(truth, cfg.num_identities, 0)?;
    Ok((EmbeddingSet::from_raw(data, n, dim, 0), truth))
}

/// Reassigns exactly `round(flip_rate * N)` samples, drawn without
/// replacement, to a uniformly chosen different cluster, then compacts
/// away clusters left empty. With a single cluster there is nowhere to
/// flip to and the partition is returned unchanged.
pub fn perturb<R: Rng>(partition: &Partition, noise: &NoiseModel, rng: &mut R) -> Partition {
    let n = partition.len();
    let m = partition.num_clusters();
    let flips = (noise.flip_rate * n as f64).round() as usize;
    if flips == 0 || m < 2 {
        return partition.clone();
    }
    let mut chosen = index::sample(rng, n, flips.min(n)).into_vec();
    chosen.sort_unstable();
    let mut labels = partition.assignment().to_vec();
    for k in chosen {
        let other = rng.random_range(0..m - 1);
        labels[k] = if other >= labels[k] { other + 1 } else { other };
    }
    Partition::from_labels(&labels, partition.generation())
}

/// `normalize(f + scale * N(0, I))` for every row; a no-op at zero scale.
pub fn drift<R: Rng>(e: &mut EmbeddingSet<f64>, scale: f64, rng: &mut R) {
    if scale == 0.0 {
        return;
    }
    let dim = e.dim();
    for row in e.data_mut().chunks_mut(dim) {
        let before = row.to_vec();
        for x in row.iter_mut() {
            *x += scale * rng.sample::<f64, _>(StandardNormal);
        }
        if !normalize_in_place(row) {
            row.copy_from_slice(&before);
        }
    }
}
