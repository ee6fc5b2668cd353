//! Prototype-bank softmax learner.
//!
//! Class logits are `tau * <w_m, f>` between unit-norm prototypes and
//! embeddings. Training minimizes the mean soft-label cross-entropy over
//! both prototypes and embeddings by projected gradient descent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::EmbeddingSet;
use crate::error::{Error, Result};
use crate::partitions::{LabelMatrix, LabelVector, Partition};
use crate::scalar::{dot, norm, normalize_in_place, Scalar};
use crate::textio::{parse_row_major, write_row_major};

/// Point within a generation at which a prototype bank was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Snapshot {
    #[default]
    Begin,
    End,
}

impl Snapshot {
    pub fn as_str(self) -> &'static str {
        match self {
            Snapshot::Begin => "begin",
            Snapshot::End => "end",
        }
    }
}

/// M x L unit-norm class prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<T> {
    data: Vec<T>,
    classes: usize,
    dim: usize,
    generation: u32,
    tag: Snapshot,
}

impl<T: Scalar> PrototypeBank<T> {
    pub fn new(data: Vec<T>, classes: usize, dim: usize, generation: u32, tag: Snapshot) -> Result<Self> {
        if data.len() != classes * dim {
            return Err(Error::dim("prototype data", classes * dim, data.len()));
        }
        let bank = Self {
            data,
            classes,
            dim,
            generation,
            tag,
        };
        for m in 0..classes {
            let n = norm(bank.row(m));
            if (n - T::one()).abs() > T::norm_tol() {
                return Err(Error::Precondition(format!(
                    "prototype {m} has norm {n}, expected 1"
                )));
            }
        }
        Ok(bank)
    }

    /// Normalized mean embedding of each cluster, tagged `begin`. A cluster
    /// whose members cancel out falls back to its first member.
    pub fn from_centroids(e: &EmbeddingSet<T>, partition: &Partition) -> Result<Self> {
        if e.len() != partition.len() {
            return Err(Error::dim("centroid samples", partition.len(), e.len()));
        }
        let dim = e.dim();
        let classes = partition.num_clusters();
        let mut data = vec![T::zero(); classes * dim];
        let mut first = vec![usize::MAX; classes];
        for (k, &j) in partition.assignment().iter().enumerate() {
            if first[j] == usize::MAX {
                first[j] = k;
            }
            for (acc, &x) in data[j * dim..(j + 1) * dim].iter_mut().zip(e.row(k)) {
                *acc = *acc + x;
            }
        }
        for j in 0..classes {
            let row = &mut data[j * dim..(j + 1) * dim];
            if !normalize_in_place(row) {
                row.copy_from_slice(e.row(first[j]));
            }
        }
        Ok(Self {
            data,
            classes,
            dim,
            generation: partition.generation(),
            tag: Snapshot::Begin,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn tag(&self) -> Snapshot {
        self.tag
    }

    pub fn row(&self, m: usize) -> &[T] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Independent copy carrying `tag`.
    pub fn snapshot(&self, tag: Snapshot) -> Self {
        Self {
            tag,
            ..self.clone()
        }
    }

    /// `# rows cols generation tag` then one prototype per line.
    pub fn to_text(&self) -> String {
        write_row_major(self.classes, self.dim, self.generation, self.tag.as_str(), &self.data)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let m = parse_row_major::<T>(text)?;
        let tag = match m.tag.as_str() {
            "begin" => Snapshot::Begin,
            "end" => Snapshot::End,
            other => return Err(Error::parse(1, format!("unknown snapshot tag `{other}`"))),
        };
        Self::new(m.data, m.rows, m.cols, m.generation, tag)
    }

    fn logits_into(&self, f: &[T], tau: T, out: &mut [T]) {
        for (m, z) in out.iter_mut().enumerate() {
            *z = tau * dot(self.row(m), f);
        }
    }
}

fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in z.iter_mut() {
        *v = *v / total;
    }
}

/// `softmax(tau * W f)`, computed with max-logit subtraction.
pub fn class_confidence<T: Scalar>(w: &PrototypeBank<T>, f: &[T], tau: T) -> Result<LabelVector<T>> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Precondition(format!("temperature must be positive, got {tau}")));
    }
    if f.len() != w.dim() {
        return Err(Error::dim("embedding", w.dim(), f.len()));
    }
    let n = norm(f);
    if (n - T::one()).abs() > T::norm_tol() {
        return Err(Error::Precondition(format!("embedding has norm {n}, expected 1")));
    }
    if w.classes() == 0 {
        return Err(Error::Precondition("prototype bank is empty".into()));
    }
    let mut z = vec![T::zero(); w.classes()];
    w.logits_into(f, tau, &mut z);
    softmax_in_place(&mut z);
    Ok(LabelVector::from_raw(z))
}

/// Mean loss and its gradients with respect to prototypes and embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub loss: T,
    /// M x L, row-major.
    pub prototypes: Vec<T>,
    /// N x L, row-major.
    pub embeddings: Vec<T>,
}

/// Mean soft-label cross-entropy `(1/N) sum_k -<y_k, log softmax(tau W f_k)>`
/// and its analytic gradients. With `d_k = softmax_k - y_k`:
/// `dL/dw_m = (tau/N) sum_k d_km f_k` and `dL/df_k = (tau/N) sum_m d_km w_m`.
///
/// Rows need not be unit norm here, so finite-difference probes off the
/// sphere are valid.
pub fn loss_and_grads<T: Scalar>(
    w: &PrototypeBank<T>,
    e: &EmbeddingSet<T>,
    labels: &LabelMatrix<T>,
    tau: T,
) -> Result<Gradients<T>> {
    if labels.len() != e.len() {
        return Err(Error::dim("label rows", e.len(), labels.len()));
    }
    if labels.num_classes() != w.classes() {
        return Err(Error::dim("label classes", w.classes(), labels.num_classes()));
    }
    if e.dim() != w.dim() {
        return Err(Error::dim("feature dimension", w.dim(), e.dim()));
    }
    let (n, classes, dim) = (e.len(), w.classes(), w.dim());
    if n == 0 {
        return Ok(Gradients {
            loss: T::zero(),
            prototypes: vec![T::zero(); classes * dim],
            embeddings: Vec::new(),
        });
    }

    // per-sample (loss, softmax - target)
    let per_sample: Vec<(T, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut z = vec![T::zero(); classes];
            w.logits_into(e.row(k), tau, &mut z);
            // The top logit contributes exactly 1 to the shifted partition
            // sum; keeping it out of `rest` preserves precision when the
            // other classes are vanishingly unlikely.
            let top = (1..classes).fold(0, |best, m| if z[m] > z[best] { m } else { best });
            let max = z[top];
            let rest = (0..classes)
                .filter(|&m| m != top)
                .map(|m| (z[m] - max).exp())
                .sum::<T>();
            let log_total = rest.ln_1p();
            let target = labels.rows()[k].weights();
            let mut loss = T::zero();
            let delta = z
                .iter()
                .zip(target)
                .enumerate()
                .map(|(m, (&zm, &ym))| {
                    let log_p = zm - max - log_total;
                    if ym > T::zero() {
                        loss = loss - ym * log_p;
                    }
                    if m == top {
                        (T::one() - ym) - rest / (T::one() + rest)
                    } else {
                        log_p.exp() - ym
                    }
                })
                .collect();
            (loss, delta)
        })
        .collect();

    let scale = tau / T::of_count(n);
    let loss = per_sample.iter().map(|(l, _)| *l).sum::<T>() / T::of_count(n);

    let embeddings = (0..n)
        .into_par_iter()
        .flat_map_iter(|k| {
            let delta = &per_sample[k].1;
            (0..dim).map(move |c| {
                (0..classes).map(|m| delta[m] * w.row(m)[c]).sum::<T>() * scale
            })
        })
        .collect();
    let prototypes = (0..classes)
        .into_par_iter()
        .flat_map_iter(|m| {
            let per_sample = &per_sample;
            (0..dim).map(move |c| {
                (0..n).map(|k| per_sample[k].1[m] * e.row(k)[c]).sum::<T>() * scale
            })
        })
        .collect();
    Ok(Gradients {
        loss,
        prototypes,
        embeddings,
    })
}

/// Largest normalized deviation between analytic and central-difference
/// gradients. For each parameter block the error is
/// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over the
/// probed coordinates; every `stride`-th coordinate is probed.
pub fn gradient_check<T: Scalar>(
    w: &PrototypeBank<T>,
    e: &EmbeddingSet<T>,
    labels: &LabelMatrix<T>,
    tau: T,
    step: T,
    stride: usize,
) -> Result<T> {
    let analytic = loss_and_grads(w, e, labels, tau)?;
    let stride = stride.max(1);
    let two = T::one() + T::one();

    let mut worst = T::zero();
    let block = |analytic: &[T], probe: &dyn Fn(usize, T) -> Result<T>| -> Result<T> {
        let mut max_dev = T::zero();
        let mut scale = T::of(1e-8);
        for c in (0..analytic.len()).step_by(stride) {
            let numeric = (probe(c, step)? - probe(c, -step)?) / (two * step);
            max_dev = max_dev.max((analytic[c] - numeric).abs());
            scale = scale.max(analytic[c].abs()).max(numeric.abs());
        }
        Ok(max_dev / scale)
    };

    let probe_w = |c: usize, h: T| -> Result<T> {
        let mut moved = w.clone();
        moved.data[c] = moved.data[c] + h;
        Ok(loss_and_grads(&moved, e, labels, tau)?.loss)
    };
    worst = worst.max(block(&analytic.prototypes, &probe_w)?);

    let probe_e = |c: usize, h: T| -> Result<T> {
        let mut moved = e.clone();
        moved.data_mut()[c] = moved.data_mut()[c] + h;
        Ok(loss_and_grads(w, &moved, labels, tau)?.loss)
    };
    worst = worst.max(block(&analytic.embeddings, &probe_e)?);
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams<T> {
    pub lr: T,
    pub epochs: usize,
    /// Probe every n-th coordinate in a finite-difference check before the
    /// first step; zero disables the check.
    #[serde(default)]
    pub grad_check_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub epochs_run: usize,
    /// Mean loss at the start of each epoch.
    pub loss_trace: Vec<T>,
    pub grad_check_error: Option<T>,
}

/// Full-batch projected gradient descent on prototypes and embeddings.
/// Rows that moved are re-projected onto the unit sphere after each step.
/// The returned bank is tagged `end`.
pub fn train_generation<T: Scalar>(
    w: &PrototypeBank<T>,
    e: &EmbeddingSet<T>,
    labels: &LabelMatrix<T>,
    tau: T,
    params: &TrainParams<T>,
) -> Result<(PrototypeBank<T>, EmbeddingSet<T>, TrainReport<T>)> {
    if !(params.lr > T::zero()) {
        return Err(Error::Precondition(format!("learning rate must be positive, got {}", params.lr)));
    }
    if params.epochs < 1 {
        return Err(Error::Precondition("epochs must be at least 1".into()));
    }
    let grad_check_error = match params.grad_check_stride {
        0 => None,
        stride => Some(gradient_check(w, e, labels, tau, T::of(1e-6), stride)?),
    };
    let mut w = w.snapshot(Snapshot::End);
    let mut e = e.clone();
    let mut loss_trace = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let g = loss_and_grads(&w, &e, labels, tau)?;
        loss_trace.push(g.loss);
        let dim = w.dim();
        descend_rows(&mut w.data, &g.prototypes, dim, params.lr);
        descend_rows(e.data_mut(), &g.embeddings, dim, params.lr);
    }
    let report = TrainReport {
        epochs_run: params.epochs,
        loss_trace,
        grad_check_error,
    };
    Ok((w, e, report))
}

fn descend_rows<T: Scalar>(data: &mut [T], grad: &[T], dim: usize, lr: T) {
    if dim == 0 {
        return;
    }
    data.par_chunks_mut(dim)
        .zip(grad.par_chunks(dim))
        .for_each(|(row, g)| {
            if g.iter().all(|&v| v == T::zero()) {
                return;
            }
            let before = row.to_vec();
            for (x, &gx) in row.iter_mut().zip(g) {
                *x = *x - lr * gx;
            }
            if !normalize_in_place(row) {
                row.copy_from_slice(&before);
            }
        });
}

/// Confidences of every sample against a bank.
pub fn confidence_matrix<T: Scalar>(
    w: &PrototypeBank<T>,
    e: &EmbeddingSet<T>,
    tau: T,
) -> Result<Vec<LabelVector<T>>> {
    (0..e.len())
        .into_par_iter()
        .map(|k| class_confidence(w, e.row(k), tau))
        .collect()
}
