//! Hard partitions of a fixed sample roster and the probability vectors
//! used as soft pseudo labels.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textio::{field, split_header, KvHeader};

/// First invariant a candidate assignment breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    OutOfRange {
        sample: usize,
        index: usize,
        num_clusters: usize,
    },
    EmptyCluster(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange {
                sample,
                index,
                num_clusters,
            } => write!(
                f,
                "sample {sample}: index {index} out of range for {num_clusters} clusters"
            ),
            Violation::EmptyCluster(j) => write!(f, "cluster {j} empty"),
        }
    }
}

/// Checks that every index lies in `[0, num_clusters)` and every cluster is
/// used. Out-of-range indices are reported before empty clusters.
pub fn validate(assignment: &[usize], num_clusters: usize) -> Result<(), Violation> {
    let mut used = vec![false; num_clusters];
    for (sample, &index) in assignment.iter().enumerate() {
        if index >= num_clusters {
            return Err(Violation::OutOfRange {
                sample,
                index,
                num_clusters,
            });
        }
        used[index] = true;
    }
    match used.iter().position(|u| !u) {
        Some(j) => Err(Violation::EmptyCluster(j)),
        None => Ok(()),
    }
}

/// One generation's hard pseudo-label assignment.
///
/// Cluster indices are dense: every index in `[0, num_clusters)` owns at
/// least one sample. Samples are identified by position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<usize>,
    num_clusters: usize,
    generation: u32,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, num_clusters: usize, generation: u32) -> Result<Self> {
        validate(&assignment, num_clusters)
            .map_err(|v| Error::Precondition(format!("invalid partition: {v}")))?;
        Ok(Self {
            assignment,
            num_clusters,
            generation,
        })
    }

    /// Builds a partition from arbitrary labels, compacting them to dense
    /// indices in ascending label order.
    pub fn from_labels(labels: &[usize], generation: u32) -> Self {
        let mut remap: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
        for (dense, slot) in remap.values_mut().enumerate() {
            *slot = dense;
        }
        let assignment = labels.iter().map(|l| remap[l]).collect();
        Self {
            assignment,
            num_clusters: remap.len(),
            generation,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn with_generation(mut self, generation: u32) -> Self {
        self.generation = generation;
        self
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn label_of(&self, sample: usize) -> Result<usize> {
        self.assignment.get(sample).copied().ok_or(Error::Index {
            what: "sample",
            index: sample,
            len: self.len(),
        })
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &j in &self.assignment {
            sizes[j] += 1;
        }
        sizes
    }

    /// Samples carrying label `cluster`, in ascending order.
    pub fn cluster_members(&self, cluster: usize) -> Result<Vec<usize>> {
        if cluster >= self.num_clusters {
            return Err(Error::Index {
                what: "cluster",
                index: cluster,
                len: self.num_clusters,
            });
        }
        Ok(self
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, &j)| j == cluster)
            .map(|(k, _)| k)
            .collect())
    }

    pub fn one_hot<T: Scalar>(&self, sample: usize) -> Result<LabelVector<T>> {
        let label = self.label_of(sample)?;
        LabelVector::one_hot(label, self.num_clusters)
    }

    pub fn one_hot_matrix<T: Scalar>(&self) -> LabelMatrix<T> {
        let rows = self
            .assignment
            .iter()
            .map(|&j| LabelVector::basis(j, self.num_clusters))
            .collect();
        LabelMatrix {
            rows,
            num_classes: self.num_clusters,
            generation: self.generation,
        }
    }

    /// `# generation=<t> n=<N> m=<M>` followed by `sample<TAB>cluster` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# generation={} n={} m={}\n",
            self.generation,
            self.len(),
            self.num_clusters
        );
        for (k, j) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "{k}\t{j}");
        }
        out
    }

    /// Parses the text format. Labels with gaps are compacted to dense
    /// indices; every sample in `[0, n)` must appear exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let (header, lines) = split_header(text)?;
        let header = KvHeader::parse(header)?;
        let generation: u32 = header.get("generation")?;
        let n: usize = header.get("n")?;
        let m: usize = header.get("m")?;
        let mut labels: Vec<Option<usize>> = vec![None; n];
        for (line, raw) in lines {
            let mut cols = raw.split('\t');
            let k: usize = field(line, cols.next(), "sample")?;
            let j: usize = field(line, cols.next(), "cluster")?;
            if cols.next().is_some() {
                return Err(Error::parse(line, "expected two tab-separated columns"));
            }
            if k >= n {
                return Err(Error::parse(line, format!("sample {k} out of range for n={n}")));
            }
            if j >= m {
                return Err(Error::parse(line, format!("cluster {j} out of range for m={m}")));
            }
            if labels[k].replace(j).is_some() {
                return Err(Error::parse(line, format!("sample {k} listed twice")));
            }
        }
        let labels: Vec<usize> = labels
            .into_iter()
            .enumerate()
            .map(|(k, l)| l.ok_or_else(|| Error::parse(0, format!("sample {k} missing"))))
            .collect::<Result<_>>()?;
        Ok(Self::from_labels(&labels, generation))
    }
}

/// Probability vector over the classes of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector<T> {
    weights: Vec<T>,
}

impl<T: Scalar> LabelVector<T> {
    /// Validates non-negativity and unit sum.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        let v = Self { weights };
        v.check()?;
        Ok(v)
    }

    /// Wraps weights whose simplex membership is guaranteed by construction.
    pub(crate) fn from_raw(weights: Vec<T>) -> Self {
        debug_assert!(weights.iter().all(|w| *w >= T::zero()));
        Self { weights }
    }

    pub fn one_hot(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Index {
                what: "class",
                index,
                len: dim,
            });
        }
        Ok(Self::basis(index, dim))
    }

    pub(crate) fn basis(index: usize, dim: usize) -> Self {
        let mut weights = vec![T::zero(); dim];
        weights[index] = T::one();
        Self { weights }
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            weights: vec![T::one() / T::of_count(dim); dim],
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Precondition("label vector is empty".into()));
        }
        if let Some((j, w)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < T::zero())
        {
            return Err(Error::Precondition(format!(
                "label weight {j} is {w}, expected a finite non-negative value"
            )));
        }
        let total: T = self.weights.iter().copied().sum();
        if (total - T::one()).abs() > T::simplex_tol() {
            return Err(Error::Precondition(format!(
                "label weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<T> {
        self.weights
    }

    pub fn sum(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// Index of the largest weight; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = j;
            }
        }
        best
    }
}

/// N soft labels over a shared class count.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix<T> {
    pub(crate) rows: Vec<LabelVector<T>>,
    pub(crate) num_classes: usize,
    pub(crate) generation: u32,
}

impl<T: Scalar> LabelMatrix<T> {
    pub fn new(rows: Vec<LabelVector<T>>, num_classes: usize, generation: u32) -> Result<Self> {
        for row in &rows {
            if row.dim() != num_classes {
                return Err(Error::dim("label matrix row", num_classes, row.dim()));
            }
            row.check()?;
        }
        Ok(Self {
            rows,
            num_classes,
            generation,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn rows(&self) -> &[LabelVector<T>] {
        &self.rows
    }

    pub fn row(&self, sample: usize) -> Result<&LabelVector<T>> {
        self.rows.get(sample).ok_or(Error::Index {
            what: "sample",
            index: sample,
            len: self.rows.len(),
        })
    }

    /// Hard partition from per-row argmax, compacted to dense indices.
    pub fn argmax_partition(&self) -> Partition {
        let labels: Vec<usize> = self.rows.iter().map(LabelVector::argmax).collect();
        Partition::from_labels(&labels, self.generation)
    }
}
