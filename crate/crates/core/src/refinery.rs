//! Momentum ensembling of current and propagated labels, and the
//! per-generation refinement step.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{Clusterer, EmbeddingSet};
use crate::consensus::{compute_consensus, ConsensusMatrix};
use crate::error::{Error, Result};
use crate::learner::{confidence_matrix, PrototypeBank, Snapshot};
use crate::partitions::{LabelMatrix, LabelVector, Partition};
use crate::propagation::{propagate_all, PropagationConfig};
use crate::scalar::Scalar;
use crate::textio::{field, split_header, KvHeader};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RefineryConfig<T> {
    /// Weight kept on the current one-hot label.
    pub alpha: T,
    pub propagation: PropagationConfig<T>,
    /// Which previous-generation prototype bank supplies confidences.
    pub prototype_snapshot: Snapshot,
}

impl<T: Scalar> Default for RefineryConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::of(0.9),
            propagation: PropagationConfig::default(),
            prototype_snapshot: Snapshot::Begin,
        }
    }
}

impl<T: Scalar> RefineryConfig<T> {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        self.propagation.validate()
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::Precondition(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `alpha * current + (1 - alpha) * propagated`, evaluated as
/// `current + (1 - alpha) * (propagated - current)` so that equal inputs come
/// back bit-for-bit.
pub fn refine_label<T: Scalar>(
    current: &LabelVector<T>,
    propagated: &LabelVector<T>,
    alpha: T,
) -> Result<LabelVector<T>> {
    check_alpha(alpha)?;
    if current.dim() != propagated.dim() {
        return Err(Error::dim("refined label", current.dim(), propagated.dim()));
    }
    let rest = T::one() - alpha;
    let weights = current
        .weights()
        .iter()
        .zip(propagated.weights())
        .map(|(&y, &p)| y + rest * (p - y))
        .collect();
    Ok(LabelVector::from_raw(weights))
}

/// Refines every sample of `current` against its propagated label.
pub fn refine_all<T: Scalar>(
    current: &Partition,
    propagated: &[LabelVector<T>],
    alpha: T,
) -> Result<LabelMatrix<T>> {
    if propagated.len() != current.len() {
        return Err(Error::dim("propagated rows", current.len(), propagated.len()));
    }
    let rows = (0..current.len())
        .into_par_iter()
        .map(|k| refine_label(&current.one_hot(k)?, &propagated[k], alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelMatrix {
        rows,
        num_classes: current.num_clusters(),
        generation: current.generation(),
    })
}

/// Everything one generation hands to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState<T> {
    pub partition: Partition,
    pub refined_labels: LabelMatrix<T>,
    /// Normalized consensus from the previous generation; absent at bootstrap.
    pub consensus: Option<ConsensusMatrix<T>>,
    /// Centroid prototypes captured when the generation's clusters formed.
    pub prototype_begin: PrototypeBank<T>,
    /// Prototypes after the generation's training, once attached.
    pub prototype_end: Option<PrototypeBank<T>>,
}

impl<T: Scalar> GenerationState<T> {
    pub fn generation(&self) -> u32 {
        self.partition.generation()
    }

    pub fn with_end_snapshot(mut self, bank: PrototypeBank<T>) -> Result<Self> {
        if bank.classes() != self.partition.num_clusters() {
            return Err(Error::dim("end prototypes", self.partition.num_clusters(), bank.classes()));
        }
        self.prototype_end = Some(bank.snapshot(Snapshot::End));
        Ok(self)
    }

    pub fn prototypes(&self, which: Snapshot) -> Result<&PrototypeBank<T>> {
        match which {
            Snapshot::Begin => Ok(&self.prototype_begin),
            Snapshot::End => self.prototype_end.as_ref().ok_or_else(|| {
                Error::State(format!(
                    "generation {} has no end-of-generation prototypes",
                    self.generation()
                ))
            }),
        }
    }
}

/// One refinement step: cluster, build consensus with the previous
/// partition, propagate, and ensemble. Without a previous state the refined
/// labels are the raw one-hots.
pub fn run_generation<T: Scalar, C: Clusterer<T> + ?Sized>(
    prev: Option<&GenerationState<T>>,
    embeddings: &EmbeddingSet<T>,
    cfg: &RefineryConfig<T>,
    clusterer: &mut C,
) -> Result<GenerationState<T>> {
    cfg.validate()?;
    let generation = prev.map_or(0, |s| s.generation() + 1);
    let partition = clusterer.cluster(embeddings)?.with_generation(generation);
    if partition.len() != embeddings.len() {
        return Err(Error::dim("clustered samples", embeddings.len(), partition.len()));
    }
    let prototype_begin = PrototypeBank::from_centroids(embeddings, &partition)?;

    let Some(prev) = prev else {
        return Ok(GenerationState {
            refined_labels: partition.one_hot_matrix(),
            partition,
            consensus: None,
            prototype_begin,
            prototype_end: None,
        });
    };
    let consensus = compute_consensus(&prev.partition, &partition)?.normalize_rows()?;
    let confidences = if cfg.propagation.needs_confidences() {
        let bank = prev.prototypes(cfg.prototype_snapshot)?;
        Some(confidence_matrix(bank, embeddings, cfg.propagation.temperature)?)
    } else {
        None
    };
    let propagated = propagate_all(&consensus, &prev.partition, confidences.as_deref(), &cfg.propagation)?;
    let refined_labels = refine_all(&partition, &propagated, cfg.alpha)?;
    Ok(GenerationState {
        partition,
        refined_labels,
        consensus: Some(consensus),
        prototype_begin,
        prototype_end: None,
    })
}

/// Cross-entropy value with the number of probabilities that hit the log floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub clamped: usize,
}

/// `-sum_j refined(j) * ln(confidence(j))`. Confidences below the log floor
/// (1e-12) are clamped and counted rather than rejected.
pub fn refined_cross_entropy<T: Scalar>(
    confidence: &LabelVector<T>,
    refined: &LabelVector<T>,
) -> Result<CrossEntropy<T>> {
    if confidence.dim() != refined.dim() {
        return Err(Error::dim("cross-entropy", refined.dim(), confidence.dim()));
    }
    let mut loss = T::zero();
    let mut clamped = 0;
    for (&p, &q) in confidence.weights().iter().zip(refined.weights()) {
        if q == T::zero() {
            continue;
        }
        let p = if p < T::log_floor() {
            clamped += 1;
            T::log_floor()
        } else {
            p
        };
        loss = loss - q * p.ln();
    }
    Ok(CrossEntropy { loss, clamped })
}

/// Batch mean of [`refined_cross_entropy`] over paired rows.
pub fn mean_refined_cross_entropy<T: Scalar>(
    confidences: &[LabelVector<T>],
    refined: &[LabelVector<T>],
) -> Result<CrossEntropy<T>> {
    if confidences.len() != refined.len() {
        return Err(Error::dim("cross-entropy rows", refined.len(), confidences.len()));
    }
    if refined.is_empty() {
        return Ok(CrossEntropy {
            loss: T::zero(),
            clamped: 0,
        });
    }
    let mut total = T::zero();
    let mut clamped = 0;
    for (p, q) in confidences.iter().zip(refined) {
        let ce = refined_cross_entropy(p, q)?;
        total = total + ce.loss;
        clamped += ce.clamped;
    }
    Ok(CrossEntropy {
        loss: total / T::of_count(refined.len()),
        clamped,
    })
}

/// Weights below this are left out of the text format.
const WEIGHT_CUTOFF: f64 = 1e-9;

impl<T: Scalar> LabelMatrix<T> {
    /// `# generation=<t> n=<N> m=<M> alpha=<a>` then `sample<TAB>class<TAB>weight`
    /// for every weight of at least 1e-9.
    pub fn to_text(&self, alpha: T) -> String {
        let mut out = format!(
            "# generation={} n={} m={} alpha={}\n",
            self.generation,
            self.len(),
            self.num_classes,
            alpha
        );
        let cutoff = T::of(WEIGHT_CUTOFF);
        for (k, row) in self.rows.iter().enumerate() {
            for (j, &w) in row.weights().iter().enumerate() {
                if w >= cutoff {
                    let _ = writeln!(out, "{k}\t{j}\t{w}");
                }
            }
        }
        out
    }

    /// Parses the text format, returning the matrix and its recorded alpha.
    pub fn from_text(text: &str) -> Result<(Self, T)> {
        let (header, lines) = split_header(text)?;
        let header = KvHeader::parse(header)?;
        let generation: u32 = header.get("generation")?;
        let n: usize = header.get("n")?;
        let m: usize = header.get("m")?;
        let alpha: T = header.get("alpha")?;
        let mut rows = vec![vec![T::zero(); m]; n];
        for (line, raw) in lines {
            let mut it = raw.split('\t');
            let k: usize = field(line, it.next(), "sample")?;
            let j: usize = field(line, it.next(), "class")?;
            let w: T = field(line, it.next(), "weight")?;
            if k >= n || j >= m {
                return Err(Error::parse(line, format!("entry ({k},{j}) outside {n}x{m}")));
            }
            if !(w >= T::zero()) || !w.is_finite() {
                return Err(Error::parse(line, format!("weight {w} is not a probability")));
            }
            rows[k][j] = w;
        }
        // omitted entries may remove up to m * cutoff of mass per row
        let tol = T::simplex_tol() + T::of_count(m) * T::of(WEIGHT_CUTOFF);
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(k, w)| {
                let total: T = w.iter().copied().sum();
                if (total - T::one()).abs() > tol {
                    return Err(Error::parse(0, format!("row {k} sums to {total}, expected 1")));
                }
                Ok(LabelVector::from_raw(w))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                rows,
                num_classes: m,
                generation,
            },
            alpha,
        ))
    }
}

/// Whether text in the label-matrix format (rather than a partition).
pub fn looks_like_label_matrix(text: &str) -> bool {
    split_header(text)
        .ok()
        .and_then(|(h, _)| KvHeader::parse(h).ok())
        .is_some_and(|h| h.has("alpha"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::PropagationMode;

    fn lv(w: &[f64]) -> LabelVector<f64> {
        LabelVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn refine_examples() {
        let y = lv(&[1.0, 0.0]);
        let r = refine_label(&y, &lv(&[2.0 / 3.0, 1.0 / 3.0]), 0.9).unwrap();
        assert!((r.weights()[0] - 29.0 / 30.0).abs() < 1e-15);
        assert!((r.weights()[1] - 1.0 / 30.0).abs() < 1e-15);
        let yhat = lv(&[0.25, 0.75]);
        assert_eq!(refine_label(&y, &yhat, 1.0).unwrap(), y);
        assert_eq!(refine_label(&y, &yhat, 0.0).unwrap(), yhat);
        assert!(refine_label(&y, &lv(&[1.0]), 0.5).is_err());
        assert!(refine_label(&y, &yhat, 1.1).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = |p: &[f64], q: &[f64]| refined_cross_entropy(&lv(p), &lv(q)).unwrap();
        assert_eq!(ce(&[1.0, 0.0], &[1.0, 0.0]).loss, 0.0);
        assert!((ce(&[0.5, 0.5], &[1.0, 0.0]).loss - std::f64::consts::LN_2).abs() < 1e-15);
        let v = ce(&[0.9, 0.1], &[29.0 / 30.0, 1.0 / 30.0]);
        let expected = -(29.0 / 30.0) * 0.9f64.ln() - (1.0 / 30.0) * 0.1f64.ln();
        assert!((v.loss - expected).abs() < 1e-15);
        assert!((v.loss - 0.1786).abs() < 1e-4);
        let guarded = ce(&[1.0, 0.0], &[0.5, 0.5]);
        assert_eq!(guarded.clamped, 1);
        assert!((guarded.loss - 0.5 * -(1e-12f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_mean() {
        let p = vec![lv(&[0.5, 0.5]), lv(&[1.0, 0.0])];
        let q = vec![lv(&[1.0, 0.0]), lv(&[1.0, 0.0])];
        let m = mean_refined_cross_entropy(&p, &q).unwrap();
        assert!((m.loss - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
    }

    fn fixed(labels: &'static [usize]) -> impl FnMut(&EmbeddingSet<f64>) -> Result<Partition> {
        move |_: &EmbeddingSet<f64>| Ok(Partition::from_labels(labels, 0))
    }

    fn embeddings4() -> EmbeddingSet<f64> {
        EmbeddingSet::from_rows(vec![
            vec![1.0, 0.1],
            vec![1.0, -0.1],
            vec![0.1, 1.0],
            vec![-0.1, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn bootstrap_gives_one_hots() {
        let e = embeddings4();
        let s = run_generation(None, &e, &RefineryConfig::default(), &mut fixed(&[0, 0, 1, 1])).unwrap();
        assert_eq!(s.generation(), 0);
        assert!(s.consensus.is_none());
        assert_eq!(s.refined_labels, s.partition.one_hot_matrix());
    }

    #[test]
    fn worked_hard_generation() {
        let e = embeddings4();
        let cfg = RefineryConfig {
            alpha: 0.9,
            propagation: PropagationConfig {
                mode: PropagationMode::Hard,
                ..Default::default()
            },
            prototype_snapshot: Snapshot::Begin,
        };
        let s0 = run_generation(None, &e, &cfg, &mut fixed(&[0, 0, 1, 1])).unwrap();
        let s1 = run_generation(Some(&s0), &e, &cfg, &mut fixed(&[0, 1, 1, 1])).unwrap();
        assert_eq!(s1.generation(), 1);
        assert_eq!(s1.refined_labels.generation(), 1);
        let r = s1.refined_labels.row(0).unwrap().weights();
        assert!((r[0] - 29.0 / 30.0).abs() < 1e-15 && (r[1] - 1.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn end_snapshot_required_when_selected() {
        let e = embeddings4();
        let cfg = RefineryConfig {
            prototype_snapshot: Snapshot::End,
            ..RefineryConfig::default()
        };
        let s0 = run_generation(None, &e, &cfg, &mut fixed(&[0, 0, 1, 1])).unwrap();
        assert!(matches!(
            run_generation(Some(&s0), &e, &cfg, &mut fixed(&[0, 0, 1, 1])),
            Err(Error::State(_))
        ));
        let bank = s0.prototype_begin.clone();
        let s0 = s0.with_end_snapshot(bank).unwrap();
        assert!(run_generation(Some(&s0), &e, &cfg, &mut fixed(&[0, 0, 1, 1])).is_ok());
    }

    #[test]
    fn identical_partitions_with_one_hot_confidences() {
        let p = Partition::from_labels(&[0, 1, 1, 2], 1);
        let c = compute_consensus::<f64>(&p, &p).unwrap().normalize_rows().unwrap();
        let conf: Vec<LabelVector<f64>> = (0..4).map(|k| p.one_hot(k).unwrap()).collect();
        let cfg = PropagationConfig::default();
        let propagated = propagate_all(&c, &p, Some(&conf), &cfg).unwrap();
        for alpha in [0.0, 0.3, 0.9, 1.0] {
            assert_eq!(refine_all(&p, &propagated, alpha).unwrap(), p.one_hot_matrix());
        }
    }

    #[test]
    fn label_matrix_text() {
        let rows = vec![lv(&[29.0 / 30.0, 1.0 / 30.0]), lv(&[0.0, 1.0])];
        let m = LabelMatrix::new(rows, 2, 1).unwrap();
        let text = m.to_text(0.9);
        assert!(text.starts_with("# generation=1 n=2 m=2 alpha=0.9\n0\t0\t0.9666666666666667\n"));
        assert!(text.ends_with("1\t1\t1\n"));
        assert!(looks_like_label_matrix(&text));
        assert!(!looks_like_label_matrix("# generation=0 n=1 m=1\n0\t0\n"));
        let (back, alpha) = LabelMatrix::<f64>::from_text(&text).unwrap();
        assert_eq!(alpha, 0.9);
        assert_eq!(back, m);
        assert!(LabelMatrix::<f64>::from_text("# generation=0 n=1 m=2 alpha=1\n0\t0\t0.5\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0f64..1.0, n).prop_map(|mut w| {
                w[0] += 1e-3;
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
        }

        proptest! {
            #[test]
            fn refined_is_convex(
                (y, p) in (1usize..8).prop_flat_map(|m| (simplex(m), simplex(m))),
                alpha in 0.0f64..=1.0,
            ) {
                let (y, p) = (lv(&y), lv(&p));
                let r = refine_label(&y, &p, alpha).unwrap();
                prop_assert!(r.check().is_ok());
                for j in 0..r.dim() {
                    let (a, b) = (y.weights()[j], p.weights()[j]);
                    let v = r.weights()[j];
                    prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
                }
            }
        }
    }
}
