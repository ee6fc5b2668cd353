//! DBSCAN over unit-norm embeddings. Noise points become singleton classes
//! appended after the density clusters.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitions::Partition;
use crate::scalar::{dot, norm, normalize_in_place, Scalar};
use crate::textio::{parse_row_major, write_row_major};

/// N x L matrix of unit-norm feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    data: Vec<T>,
    len: usize,
    dim: usize,
    generation: u32,
}

impl<T: Scalar> EmbeddingSet<T> {
    /// Wraps row-major data, checking that every row is unit norm.
    pub fn new(data: Vec<T>, len: usize, dim: usize) -> Result<Self> {
        if data.len() != len * dim {
            return Err(Error::dim("embedding data", len * dim, data.len()));
        }
        let set = Self {
            data,
            len,
            dim,
            generation: 0,
        };
        for k in 0..len {
            let n = norm(set.row(k));
            if (n - T::one()).abs() > T::norm_tol() {
                return Err(Error::Precondition(format!(
                    "embedding row {k} has norm {n}, expected 1"
                )));
            }
        }
        Ok(set)
    }

    /// Normalizes each row. Zero rows are rejected.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let len = rows.len();
        let mut data = Vec::with_capacity(len * dim);
        for (k, mut row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dim("embedding row", dim, row.len()));
            }
            if !normalize_in_place(&mut row) {
                return Err(Error::Precondition(format!("embedding row {k} has zero norm")));
            }
            data.extend(row);
        }
        Ok(Self {
            data,
            len,
            dim,
            generation: 0,
        })
    }

    pub(crate) fn from_raw(data: Vec<T>, len: usize, dim: usize, generation: u32) -> Self {
        Self {
            data,
            len,
            dim,
            generation,
        }
    }

    pub fn with_generation(mut self, generation: u32) -> Self {
        self.generation = generation;
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Rows permuted so that new row `r` is old row `order[r]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&k| self.row(k).iter().copied()).collect();
        Self::from_raw(data, order.len(), self.dim, self.generation)
    }

    /// `# rows cols generation embedding` then one row per line.
    pub fn to_text(&self) -> String {
        write_row_major(self.len, self.dim, self.generation, "embedding", &self.data)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let m = parse_row_major::<T>(text)?;
        Ok(Self::new(m.data, m.rows, m.cols)?.with_generation(m.generation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// `1 - <a, b>` on unit vectors.
    Cosine,
}

impl Metric {
    pub fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
                .sqrt(),
            Metric::Cosine => (T::one() - dot(a, b)).max(T::zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams<T> {
    pub eps: T,
    pub min_pts: usize,
    pub metric: Metric,
}

impl<T: Scalar> Default for ClusterParams<T> {
    fn default() -> Self {
        Self {
            eps: T::of(0.5),
            min_pts: 4,
            metric: Metric::Cosine,
        }
    }
}

impl<T: Scalar> ClusterParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > T::zero()) || !self.eps.is_finite() {
            return Err(Error::Precondition(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts < 1 {
            return Err(Error::Precondition("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Upper-triangle distances, pair `(i, j)` with `i < j` stored in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedDistances<T> {
    len: usize,
    values: Vec<T>,
}

impl<T: Scalar> CondensedDistances<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i == j {
            return T::zero();
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // rows before `a` hold (len-1) + (len-2) + ... + (len-a) entries
        let offset = a * (2 * self.len - a - 1) / 2;
        self.values[offset + (b - a - 1)]
    }
}

pub fn pairwise_distances<T: Scalar>(e: &EmbeddingSet<T>, metric: Metric) -> CondensedDistances<T> {
    let values = (0..e.len())
        .into_par_iter()
        .flat_map_iter(|i| ((i + 1)..e.len()).map(move |j| metric.distance(e.row(i), e.row(j))))
        .collect();
    CondensedDistances {
        len: e.len(),
        values,
    }
}

/// Neighbor lists (self included), ascending, and core flags.
pub fn neighborhoods<T: Scalar>(e: &EmbeddingSet<T>, params: &ClusterParams<T>) -> Vec<Vec<usize>> {
    (0..e.len())
        .into_par_iter()
        .map(|i| {
            (0..e.len())
                .filter(|&j| params.metric.distance(e.row(i), e.row(j)) <= params.eps)
                .collect()
        })
        .collect()
}

/// Density-based clustering with deterministic ordering.
///
/// Clusters are seeded from core points in ascending index and expanded
/// breadth-first, neighbors enqueued in ascending index. A border point
/// joins the cluster of its nearest core neighbor (lowest index on ties),
/// which keeps the result independent of input order. Noise points follow
/// as singleton clusters in ascending index.
pub fn dbscan<T: Scalar>(e: &EmbeddingSet<T>, params: &ClusterParams<T>) -> Result<Partition> {
    params.validate()?;
    if e.is_empty() {
        return Err(Error::Precondition("dbscan needs at least one sample".into()));
    }
    let neighbors = neighborhoods(e, params);
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= params.min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; e.len()];
    let mut clusters = 0;
    let mut queue = VecDeque::new();
    for seed in 0..e.len() {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(clusters);
        queue.push_back(seed);
        while let Some(q) = queue.pop_front() {
            for &nb in &neighbors[q] {
                if core[nb] && labels[nb].is_none() {
                    labels[nb] = Some(clusters);
                    queue.push_back(nb);
                }
            }
        }
        clusters += 1;
    }
    for k in 0..e.len() {
        if core[k] {
            continue;
        }
        let nearest = neighbors[k]
            .iter()
            .copied()
            .filter(|&nb| core[nb])
            .map(|nb| (params.metric.distance(e.row(k), e.row(nb)), nb))
            .reduce(|best, cand| if cand.0 < best.0 { cand } else { best });
        if let Some((_, nb)) = nearest {
            labels[k] = labels[nb];
        }
    }
    let assignment = labels
        .into_iter()
        .map(|l| {
            l.unwrap_or_else(|| {
                clusters += 1;
                clusters - 1
            })
        })
        .collect();
    Partition::new(assignment, clusters, e.generation())
}

/// Produces one generation's partition from the current embeddings.
pub trait Clusterer<T> {
    fn cluster(&mut self, embeddings: &EmbeddingSet<T>) -> Result<Partition>;
}

impl<T: Scalar> Clusterer<T> for ClusterParams<T> {
    fn cluster(&mut self, embeddings: &EmbeddingSet<T>) -> Result<Partition> {
        dbscan(embeddings, self)
    }
}

impl<T, F> Clusterer<T> for F
where
    F: FnMut(&EmbeddingSet<T>) -> Result<Partition>,
{
    fn cluster(&mut self, embeddings: &EmbeddingSet<T>) -> Result<Partition> {
        self(embeddings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: Vec<Vec<f64>>) -> EmbeddingSet<f64> {
        EmbeddingSet::from_rows(rows).unwrap()
    }

    /// Points on the unit circle at the given angles (radians).
    fn circle(angles: &[f64]) -> EmbeddingSet<f64> {
        set(angles.iter().map(|a| vec![a.cos(), a.sin()]).collect())
    }

    #[test]
    fn distance_examples() {
        let e = set(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let d = pairwise_distances(&e, Metric::Cosine);
        assert_eq!(d.values().len(), 6);
        assert!(d.get(0, 1).abs() < 1e-15);
        assert!((d.get(0, 2) - 1.0).abs() < 1e-15);
        assert!((d.get(3, 0) - 2.0).abs() < 1e-15);
        assert_eq!(d.get(2, 2), 0.0);
        let de = pairwise_distances(&e, Metric::Euclidean);
        assert!((de.get(0, 3) - 2.0).abs() < 1e-15);
        assert_eq!(de.get(1, 2), de.get(2, 1));
    }

    #[test]
    fn two_separated_groups() {
        let mut angles: Vec<f64> = (0..5).map(|i| 0.01 * i as f64).collect();
        angles.extend((0..5).map(|i| 2.0 + 0.01 * i as f64));
        let e = circle(&angles);
        let params = ClusterParams {
            eps: 0.01,
            min_pts: 3,
            metric: Metric::Cosine,
        };
        let p = dbscan(&e, &params).unwrap();
        assert_eq!(p.num_clusters(), 2);
        assert_eq!(p.assignment(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn single_dense_blob() {
        let e = circle(&[0.0, 0.01, 0.02, 0.03]);
        let params = ClusterParams {
            eps: 0.5,
            min_pts: 4,
            metric: Metric::Cosine,
        };
        assert_eq!(dbscan(&e, &params).unwrap().num_clusters(), 1);
    }

    #[test]
    fn all_noise_becomes_singletons() {
        let e = circle(&[0.0, 1.5, 3.0, 4.5]);
        let params = ClusterParams {
            eps: 0.1,
            min_pts: 2,
            metric: Metric::Cosine,
        };
        let p = dbscan(&e, &params).unwrap();
        assert_eq!(p.assignment(), &[0, 1, 2, 3]);
    }

    #[test]
    fn noise_appended_after_clusters() {
        // noise at index 0, dense group at 1..=4
        let e = circle(&[3.0, 0.0, 0.01, 0.02, 0.03]);
        let params = ClusterParams {
            eps: 0.01,
            min_pts: 3,
            metric: Metric::Cosine,
        };
        let p = dbscan(&e, &params).unwrap();
        assert_eq!(p.assignment(), &[1, 0, 0, 0, 0]);
    }

    #[test]
    fn border_joins_nearest_core() {
        // cores at 0..3 and 5..8; border point 4 sits nearer the second group
        let e = circle(&[0.0, 0.01, 0.02, 0.03, 0.079, 0.12, 0.13, 0.14, 0.15]);
        let params = ClusterParams {
            eps: 0.05,
            min_pts: 4,
            metric: Metric::Euclidean,
        };
        let p = dbscan(&e, &params).unwrap();
        assert_eq!(p.num_clusters(), 2);
        assert_eq!(p.assignment()[4], p.assignment()[5]);
    }

    #[test]
    fn bad_params() {
        let e = circle(&[0.0]);
        let bad = ClusterParams {
            eps: 0.0,
            min_pts: 1,
            metric: Metric::Cosine,
        };
        assert!(dbscan(&e, &bad).is_err());
        let bad = ClusterParams {
            eps: 0.1,
            min_pts: 0,
            metric: Metric::Cosine,
        };
        assert!(dbscan(&e, &bad).is_err());
    }

    #[test]
    fn embedding_checks_and_text() {
        assert!(EmbeddingSet::new(vec![1.0, 1.0], 1, 2).is_err());
        assert!(EmbeddingSet::from_rows(vec![vec![0.0, 0.0]]).is_err());
        let e = set(vec![vec![3.0, 4.0], vec![0.0, -2.0]]).with_generation(5);
        let text = e.to_text();
        assert!(text.starts_with("# 2 2 5 embedding\n5.9999999999999998e-1 8.0000000000000004e-1\n"));
        assert_eq!(EmbeddingSet::<f64>::from_text(&text).unwrap(), e);
    }
}
