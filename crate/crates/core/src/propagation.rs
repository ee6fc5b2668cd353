//! Carrying previous-generation labels into the current class space.
//!
//! Hard propagation transports the previous one-hot label, soft
//! propagation transports the previous model's class confidences, and the
//! blend transports a convex mix of the two.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusMatrix;
use crate::error::{Error, Result};
use crate::learner::{class_confidence, PrototypeBank};
use crate::partitions::{LabelVector, Partition};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    Hard,
    Soft,
    Blend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PropagationConfig<T> {
    pub mode: PropagationMode,
    /// Weight of the hard label in blend mode.
    pub beta: T,
    /// Softmax temperature applied to prototype logits.
    pub temperature: T,
}

impl<T: Scalar> Default for PropagationConfig<T> {
    fn default() -> Self {
        Self {
            mode: PropagationMode::Soft,
            beta: T::zero(),
            temperature: T::of(30.0),
        }
    }
}

impl<T: Scalar> PropagationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.temperature > T::zero()) || !self.temperature.is_finite() {
            return Err(Error::Precondition(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hard behaves as beta = 1, soft as beta = 0.
    pub fn effective_beta(&self) -> T {
        match self.mode {
            PropagationMode::Hard => T::one(),
            PropagationMode::Soft => T::zero(),
            PropagationMode::Blend => self.beta,
        }
    }

    /// Whether previous-generation confidences are consumed.
    pub fn needs_confidences(&self) -> bool {
        self.effective_beta() < T::one()
    }
}

fn check_beta<T: Scalar>(beta: T) -> Result<()> {
    if !(beta >= T::zero() && beta <= T::one()) {
        return Err(Error::Precondition(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

fn check_source<T: Scalar>(c: &ConsensusMatrix<T>, prev: &Partition) -> Result<()> {
    if c.rows() != prev.num_clusters() {
        return Err(Error::dim("consensus rows vs previous clusters", prev.num_clusters(), c.rows()));
    }
    Ok(())
}

/// Row `prev[k]` of the normalized consensus.
pub fn propagate_hard<T: Scalar>(
    c: &ConsensusMatrix<T>,
    prev: &Partition,
    sample: usize,
) -> Result<LabelVector<T>> {
    check_source(c, prev)?;
    c.transport(&prev.one_hot(sample)?)
}

/// `softmax(tau * W f)` over the previous generation's prototypes.
pub fn prototype_confidence<T: Scalar>(w: &PrototypeBank<T>, f: &[T], tau: T) -> Result<LabelVector<T>> {
    class_confidence(w, f, tau)
}

pub fn propagate_soft<T: Scalar>(c: &ConsensusMatrix<T>, conf: &LabelVector<T>) -> Result<LabelVector<T>> {
    c.transport(conf)
}

/// Transports `beta * one_hot(prev, k) + (1 - beta) * conf`.
pub fn propagate_blend<T: Scalar>(
    c: &ConsensusMatrix<T>,
    prev: &Partition,
    sample: usize,
    conf: &LabelVector<T>,
    beta: T,
) -> Result<LabelVector<T>> {
    check_beta(beta)?;
    check_source(c, prev)?;
    if conf.dim() != c.rows() {
        return Err(Error::dim("confidence vector", c.rows(), conf.dim()));
    }
    let label = prev.label_of(sample)?;
    let rest = T::one() - beta;
    let mix: Vec<T> = conf
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let hard = if i == label { beta } else { T::zero() };
            hard + rest * w
        })
        .collect();
    c.transport(&LabelVector::from_raw(mix))
}

/// Propagated labels for every sample under `cfg`. `confidences` holds one
/// previous-generation confidence vector per sample and is required unless
/// the mode is hard.
pub fn propagate_all<T: Scalar>(
    c: &ConsensusMatrix<T>,
    prev: &Partition,
    confidences: Option<&[LabelVector<T>]>,
    cfg: &PropagationConfig<T>,
) -> Result<Vec<LabelVector<T>>> {
    cfg.validate()?;
    check_source(c, prev)?;
    match (cfg.mode, confidences) {
        _ if !cfg.needs_confidences() => (0..prev.len())
            .into_par_iter()
            .map(|k| propagate_hard(c, prev, k))
            .collect(),
        (_, None) => Err(Error::Precondition(
            "soft and blend propagation need previous-generation confidences".into(),
        )),
        (mode, Some(conf)) => {
            if conf.len() != prev.len() {
                return Err(Error::dim("confidence rows", prev.len(), conf.len()));
            }
            (0..prev.len())
                .into_par_iter()
                .map(|k| match mode {
                    PropagationMode::Soft => propagate_soft(c, &conf[k]),
                    _ => propagate_blend(c, prev, k, &conf[k], cfg.beta),
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::compute_consensus;
    use crate::learner::Snapshot;

    fn p(labels: &[usize]) -> Partition {
        Partition::from_labels(labels, 0)
    }

    fn worked() -> (Partition, ConsensusMatrix<f64>) {
        let prev = p(&[0, 0, 1, 1]);
        let c = compute_consensus(&prev, &p(&[0, 1, 1, 1]))
            .unwrap()
            .normalize_rows()
            .unwrap();
        (prev, c)
    }

    fn lv(w: &[f64]) -> LabelVector<f64> {
        LabelVector::new(w.to_vec()).unwrap()
    }

    fn close(a: &LabelVector<f64>, b: &[f64]) -> bool {
        a.weights().iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn hard_examples() {
        let (prev, c) = worked();
        assert!(close(&propagate_hard(&c, &prev, 0).unwrap(), &[2.0 / 3.0, 1.0 / 3.0]));
        assert!(close(&propagate_hard(&c, &prev, 3).unwrap(), &[0.0, 1.0]));
        let same = p(&[0, 1, 1, 2]);
        let id = compute_consensus(&same, &same).unwrap().normalize_rows().unwrap();
        for k in 0..4 {
            assert_eq!(propagate_hard::<f64>(&id, &same, k).unwrap(), same.one_hot(k).unwrap());
        }
    }

    #[test]
    fn hard_dimension_mismatch() {
        let (_, c) = worked();
        assert!(matches!(
            propagate_hard(&c, &p(&[0, 1, 2, 2]), 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn soft_examples() {
        let (_, c) = worked();
        assert!(close(&propagate_soft(&c, &lv(&[0.6, 0.4])).unwrap(), &[0.4, 0.6]));
        let one_hot = propagate_soft(&c, &lv(&[0.0, 1.0])).unwrap();
        assert_eq!(one_hot.weights(), &[c.get(1, 0), c.get(1, 1)]);
        let id = compute_consensus(&p(&[0, 1]), &p(&[0, 1])).unwrap().normalize_rows().unwrap();
        assert_eq!(propagate_soft(&id, &lv(&[0.7, 0.3])).unwrap(), lv(&[0.7, 0.3]));
    }

    #[test]
    fn blend_examples() {
        let (prev, c) = worked();
        let conf = lv(&[0.6, 0.4]);
        assert_eq!(
            propagate_blend(&c, &prev, 0, &conf, 1.0).unwrap(),
            propagate_hard(&c, &prev, 0).unwrap()
        );
        assert_eq!(
            propagate_blend(&c, &prev, 0, &conf, 0.0).unwrap(),
            propagate_soft(&c, &conf).unwrap()
        );
        let id_prev = p(&[0, 1]);
        let id = compute_consensus(&id_prev, &id_prev).unwrap().normalize_rows().unwrap();
        assert!(close(&propagate_blend(&id, &id_prev, 0, &conf, 0.5).unwrap(), &[0.8, 0.2]));
        assert!(propagate_blend(&c, &prev, 0, &conf, 1.5).is_err());
        assert!(propagate_blend(&c, &prev, 0, &conf, -0.1).is_err());
    }

    #[test]
    fn config_reductions() {
        let mut cfg = PropagationConfig::<f64>::default();
        assert_eq!(cfg.mode, PropagationMode::Soft);
        assert_eq!(cfg.temperature, 30.0);
        assert_eq!(cfg.effective_beta(), 0.0);
        cfg.mode = PropagationMode::Hard;
        assert_eq!(cfg.effective_beta(), 1.0);
        assert!(!cfg.needs_confidences());
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sharpening_with_temperature() {
        let w = PrototypeBank::new(vec![1.0, 0.0, 0.6, 0.8, 0.0, 1.0], 3, 2, 0, Snapshot::Begin).unwrap();
        let f = [0.8, 0.6];
        let mut last = 0.0;
        for tau in [1.0, 10.0, 30.0, 100.0] {
            let c = prototype_confidence(&w, &f, tau).unwrap();
            let peak = c.weights()[c.argmax()];
            assert!(peak > last);
            assert_eq!(c.argmax(), 1);
            last = peak;
        }
    }

    #[test]
    fn propagate_all_requires_confidences() {
        let (prev, c) = worked();
        let cfg = PropagationConfig::default();
        assert!(propagate_all(&c, &prev, None, &cfg).is_err());
        let hard = PropagationConfig {
            mode: PropagationMode::Hard,
            ..cfg
        };
        let out = propagate_all(&c, &prev, None, &hard).unwrap();
        assert_eq!(out.len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<f64>, usize, f64)> {
            (2usize..30).prop_flat_map(|n| {
                (
                    prop::collection::vec(0usize..6, n),
                    prop::collection::vec(0usize..6, n),
                    prop::collection::vec(0.0f64..1.0, 6),
                    0..n,
                    0.0f64..=1.0,
                )
            })
        }

        fn to_simplex(raw: &[f64]) -> LabelVector<f64> {
            let mut w = raw.to_vec();
            w[0] += 1e-3;
            let s: f64 = w.iter().sum();
            LabelVector::new(w.iter().map(|x| x / s).collect()).unwrap()
        }

        proptest! {
            #[test]
            fn blend_is_linear((a, b, raw, k, beta) in instance()) {
                let (a, b) = (p(&a), p(&b));
                let c = compute_consensus::<f64>(&a, &b).unwrap().normalize_rows().unwrap();
                let conf = to_simplex(&raw[..a.num_clusters()]);
                let blend = propagate_blend(&c, &a, k, &conf, beta).unwrap();
                let hard = propagate_hard(&c, &a, k).unwrap();
                let soft = propagate_soft(&c, &conf).unwrap();
                prop_assert!(blend.check().is_ok() && hard.check().is_ok() && soft.check().is_ok());
                for j in 0..blend.dim() {
                    let lin = beta * hard.weights()[j] + (1.0 - beta) * soft.weights()[j];
                    prop_assert!((blend.weights()[j] - lin).abs() <= 1e-9);
                }
            }

            #[test]
            fn argmax_matches_logits(
                raw in prop::collection::vec(-1.0f64..1.0, 12),
                f in prop::collection::vec(-1.0f64..1.0, 3),
                tau in 0.01f64..200.0,
            ) {
                let mut data = raw.clone();
                for row in data.chunks_mut(3) {
                    row[0] += 2.0;
                    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    row.iter_mut().for_each(|x| *x /= n);
                }
                let w = PrototypeBank::new(data, 4, 3, 0, Snapshot::Begin).unwrap();
                let mut f = f;
                f[1] += 2.0;
                let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                f.iter_mut().for_each(|x| *x /= n);
                let logits: Vec<f64> = (0..4).map(|m| w.row(m).iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
                let best = (0..4).fold(0, |b, m| if logits[m] > logits[b] { m } else { b });
                let conf = prototype_confidence(&w, &f, tau).unwrap();
                prop_assert!(conf.check().is_ok());
                prop_assert_eq!(conf.argmax(), best);
            }
        }
    }
}
