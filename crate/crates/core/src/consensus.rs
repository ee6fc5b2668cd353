//! Cross-generation clustering consensus.
//!
//! Entry `(i, j)` of the raw matrix is the IoU between the sample set of
//! cluster `i` in the previous generation and cluster `j` in the current
//! one. Row normalization turns it into a row-stochastic transport that
//! carries label distributions from the old class space into the new one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::partitions::{LabelVector, Partition};
use crate::scalar::Scalar;
use crate::textio::{field, split_header, KvHeader};

/// Sparse `rows x cols` consensus matrix in compressed-row form. Column
/// indices within each row are strictly ascending and every stored value
/// is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    normalized: bool,
}

/// Raw IoU consensus between two partitions of the same roster.
///
/// Runs in `O(N + M_prev + M_curr)`: samples are counting-sorted by
/// `(prev, curr)` label pair so each nonzero co-occurrence is a contiguous
/// run, and union sizes come from the cluster-size arrays.
pub fn compute_consensus<T: Scalar>(prev: &Partition, curr: &Partition) -> Result<ConsensusMatrix<T>> {
    if prev.len() != curr.len() {
        return Err(Error::dim("consensus sample count", prev.len(), curr.len()));
    }
    let rows = prev.num_clusters();
    let cols = curr.num_clusters();
    let prev_sizes = prev.cluster_sizes();
    let curr_sizes = curr.cluster_sizes();

    let by_curr = counting_sort(0..prev.len(), curr.assignment(), &curr_sizes);
    let by_pair = counting_sort(by_curr.into_iter(), prev.assignment(), &prev_sizes);

    let mut row_ptr = vec![0; rows + 1];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut run = 0usize;
    for (pos, &k) in by_pair.iter().enumerate() {
        let i = prev.assignment()[k];
        let j = curr.assignment()[k];
        run += 1;
        let run_ends = by_pair.get(pos + 1).is_none_or(|&next| {
            prev.assignment()[next] != i || curr.assignment()[next] != j
        });
        if run_ends {
            let union = prev_sizes[i] + curr_sizes[j] - run;
            col_idx.push(j);
            values.push(T::of_count(run) / T::of_count(union));
            row_ptr[i + 1] += 1;
            run = 0;
        }
    }
    for i in 0..rows {
        row_ptr[i + 1] += row_ptr[i];
    }
    Ok(ConsensusMatrix {
        rows,
        cols,
        row_ptr,
        col_idx,
        values,
        normalized: false,
    })
}

/// Stable counting sort of `items` by `key[item]`.
fn counting_sort(items: impl Iterator<Item = usize>, key: &[usize], sizes: &[usize]) -> Vec<usize> {
    let mut next = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        next.push(acc);
        acc += s;
    }
    let mut out = vec![0; acc];
    for item in items {
        let slot = &mut next[key[item]];
        out[*slot] = item;
        *slot += 1;
    }
    out
}

impl<T: Scalar> ConsensusMatrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero entries of row `i` as `(column, value)` in ascending column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i >= self.rows {
            return T::zero();
        }
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => T::zero(),
        }
    }

    /// All stored entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut dense = vec![vec![T::zero(); self.cols]; self.rows];
        for (i, j, v) in self.triplets() {
            dense[i][j] = v;
        }
        dense
    }

    /// Divides every row by its sum. A row without mass means the two
    /// partitions did not cover the same roster and is reported as an error.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.rows {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            let total: T = self.values[span.clone()].iter().copied().sum();
            if !(total > T::zero()) {
                return Err(Error::Consistency(format!(
                    "consensus row {i} has no mass; partitions cover different samples"
                )));
            }
            for v in &mut out.values[span] {
                *v = *v / total;
            }
        }
        out.normalized = true;
        Ok(out)
    }

    /// `result(j) = sum_i C(i, j) * v(i)`: pushes a distribution over the
    /// previous generation's classes into the current generation's classes.
    /// Only rows where `v` is nonzero are touched.
    pub fn transport(&self, v: &LabelVector<T>) -> Result<LabelVector<T>> {
        if !self.normalized {
            return Err(Error::State(
                "transport requires a row-normalized consensus matrix".into(),
            ));
        }
        if v.dim() != self.rows {
            return Err(Error::dim("transport input", self.rows, v.dim()));
        }
        Ok(LabelVector::from_raw(self.transport_weights(v.weights())))
    }

    pub(crate) fn transport_weights(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (i, &w) in v.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            for (j, c) in self.row(i) {
                out[j] = out[j] + c * w;
            }
        }
        out
    }

    /// Mean over rows of the largest entry: how concentrated each previous
    /// cluster's successor distribution is. Zero for an empty matrix.
    pub fn mean_peak_mass(&self) -> T {
        if self.rows == 0 {
            return T::zero();
        }
        let total: T = (0..self.rows)
            .map(|i| self.row(i).map(|(_, v)| v).fold(T::zero(), T::max))
            .sum();
        total / T::of_count(self.rows)
    }

    /// `# rows=<M_prev> cols=<M_curr> normalized=<bool>` then
    /// `i<TAB>j<TAB>value` per stored entry.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# rows={} cols={} normalized={}\n",
            self.rows, self.cols, self.normalized
        );
        for (i, j, v) in self.triplets() {
            let _ = writeln!(out, "{i}\t{j}\t{v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, lines) = split_header(text)?;
        let header = KvHeader::parse(header)?;
        let rows: usize = header.get("rows")?;
        let cols: usize = header.get("cols")?;
        let normalized: bool = header.get("normalized")?;
        let mut entries = BTreeMap::new();
        for (line, raw) in lines {
            let mut it = raw.split('\t');
            let i: usize = field(line, it.next(), "row")?;
            let j: usize = field(line, it.next(), "column")?;
            let v: T = field(line, it.next(), "value")?;
            if i >= rows || j >= cols {
                return Err(Error::parse(line, format!("entry ({i},{j}) outside {rows}x{cols}")));
            }
            if !(v > T::zero() && v <= T::one()) {
                return Err(Error::parse(line, format!("value {v} outside (0, 1]")));
            }
            if entries.insert((i, j), v).is_some() {
                return Err(Error::parse(line, format!("duplicate entry ({i},{j})")));
            }
        }
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for ((i, j), v) in entries {
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            normalized,
        })
    }
}
