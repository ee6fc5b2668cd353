//! External clustering-quality metrics against ground truth.

use crate::error::{Error, Result};
use crate::partitions::{LabelMatrix, LabelVector, Partition};
use crate::refinery::{refined_cross_entropy, CrossEntropy};

/// Agreement between a predicted partition and ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionScores {
    pub ari: f64,
    /// Mutual information over the arithmetic mean of the two entropies.
    pub nmi: f64,
    /// Pairwise precision, recall and F over same-cluster sample pairs.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Nonzero contingency cells `(pred, truth, count)` in ascending order.
fn contingency(pred: &Partition, truth: &Partition) -> Vec<(usize, usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = pred
        .assignment()
        .iter()
        .copied()
        .zip(truth.assignment().iter().copied())
        .collect();
    pairs.sort_unstable();
    let mut cells = Vec::new();
    let mut run = 0;
    for (pos, pair) in pairs.iter().enumerate() {
        run += 1;
        if pairs.get(pos + 1) != Some(pair) {
            cells.push((pair.0, pair.1, run));
            run = 0;
        }
    }
    cells
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn score(pred: &Partition, truth: &Partition) -> Result<PartitionScores> {
    if pred.len() != truth.len() {
        return Err(Error::dim("scored samples", truth.len(), pred.len()));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::Precondition("cannot score an empty partition".into()));
    }
    let pred_sizes = pred.cluster_sizes();
    let truth_sizes = truth.cluster_sizes();

    let cells = contingency(pred, truth);

    let together: f64 = cells.iter().map(|&(_, _, c)| comb2(c)).sum();
    let pred_pairs: f64 = pred_sizes.iter().map(|&s| comb2(s)).sum();
    let truth_pairs: f64 = truth_sizes.iter().map(|&s| comb2(s)).sum();
    let total = comb2(n);

    let ari = if total == 0.0 {
        1.0
    } else {
        // scaled by `total` so that every term stays an exact integer
        let expected = pred_pairs * truth_pairs;
        let max_index = 0.5 * (pred_pairs + truth_pairs) * total;
        if max_index == expected {
            1.0
        } else {
            (together * total - expected) / (max_index - expected)
        }
    };

    let nf = n as f64;
    let h_pred = entropy(&pred_sizes, nf);
    let h_truth = entropy(&truth_sizes, nf);
    let joint: Vec<usize> = cells.iter().map(|&(_, _, c)| c).collect();
    let mi = h_pred + h_truth - entropy(&joint, nf);
    let h = 0.5 * (h_pred + h_truth);
    let nmi = if h == 0.0 { 1.0 } else { (mi / h).clamp(0.0, 1.0) };

    let precision = if pred_pairs == 0.0 { 1.0 } else { together / pred_pairs };
    let recall = if truth_pairs == 0.0 { 1.0 } else { together / truth_pairs };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PartitionScores {
        ari,
        nmi,
        precision,
        recall,
        f1,
    })
}

/// Ground-truth identity holding the most members of each cluster (lowest
/// identity on ties).
pub fn majority_identity(partition: &Partition, truth: &Partition) -> Result<Vec<usize>> {
    if partition.len() != truth.len() {
        return Err(Error::dim("mapped samples", truth.len(), partition.len()));
    }
    let mut counts = vec![vec![0usize; truth.num_clusters()]; partition.num_clusters()];
    for (&j, &g) in partition.assignment().iter().zip(truth.assignment()) {
        counts[j][g] += 1;
    }
    Ok(counts
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (g, &c)| if c > row[best] { g } else { best })
        })
        .collect())
}

/// Mean cross-entropy of soft labels against ground-truth one-hots. Label
/// mass on cluster `j` is credited to `mapping[j]`.
pub fn cross_entropy_vs_truth(
    labels: &LabelMatrix<f64>,
    mapping: &[usize],
    truth: &Partition,
) -> Result<CrossEntropy<f64>> {
    if labels.len() != truth.len() {
        return Err(Error::dim("labelled samples", truth.len(), labels.len()));
    }
    if mapping.len() != labels.num_classes() {
        return Err(Error::dim("cluster mapping", labels.num_classes(), mapping.len()));
    }
    let identities = truth.num_clusters();
    let mut total = 0.0;
    let mut clamped = 0;
    for (k, row) in labels.rows().iter().enumerate() {
        let mut mass = vec![0.0; identities];
        for (j, &w) in row.weights().iter().enumerate() {
            mass[mapping[j]] += w;
        }
        let ce = refined_cross_entropy(&LabelVector::from_raw(mass), &truth.one_hot(k)?)?;
        total += ce.loss;
        clamped += ce.clamped;
    }
    Ok(CrossEntropy {
        loss: total / labels.len().max(1) as f64,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(labels: &[usize]) -> Partition {
        Partition::from_labels(labels, 0)
    }

    /// Pair-counting over every unordered pair of samples.
    fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let total = both + only_a + only_b + neither;
        let expected = (both + only_a) * (both + only_b) / total;
        let max = 0.5 * ((both + only_a) + (both + only_b));
        (both - expected) / (max - expected)
    }

    #[test]
    fn identical_partitions_score_one() {
        let s = score(&p(&[0, 0, 1, 1, 2]), &p(&[0, 0, 1, 1, 2])).unwrap();
        assert_eq!((s.ari, s.nmi, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn singletons_have_zero_recall() {
        let s = score(&p(&[0, 1, 2, 3]), &p(&[0, 0, 1, 1])).unwrap();
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn crossed_pairs_give_negative_half() {
        assert!((brute_ari(&[0, 0, 1, 1], &[0, 1, 0, 1]) + 0.5).abs() < 1e-15);
        let s = score(&p(&[0, 0, 1, 1]), &p(&[0, 1, 0, 1])).unwrap();
        assert!((s.ari + 0.5).abs() < 1e-15);
        assert!(s.nmi.abs() < 1e-15);
    }

    #[test]
    fn invariant_under_relabeling() {
        let a = score(&p(&[0, 0, 1, 2, 2, 1]), &p(&[0, 0, 0, 1, 1, 1])).unwrap();
        let b = score(&p(&[2, 2, 0, 1, 1, 0]), &p(&[1, 1, 1, 0, 0, 0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch() {
        assert!(score(&p(&[0, 1]), &p(&[0, 1, 1])).is_err());
    }

    #[test]
    fn cross_entropy_through_majority_mapping() {
        let truth = p(&[0, 0, 0, 1, 1, 1]);
        let raw = p(&[0, 0, 1, 1, 1, 1]);
        let mapping = majority_identity(&raw, &truth).unwrap();
        assert_eq!(mapping, vec![0, 1]);
        let ce = cross_entropy_vs_truth(&raw.one_hot_matrix(), &mapping, &truth).unwrap();
        // sample 2 sits in a cluster mapped to the wrong identity
        assert_eq!(ce.clamped, 1);
        assert!((ce.loss - (-(1e-12f64).ln()) / 6.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ari_matches_pair_count(
                (a, b) in (3usize..30).prop_flat_map(|n| (
                    prop::collection::vec(0usize..5, n),
                    prop::collection::vec(0usize..5, n),
                ))
            ) {
                let (pa, pb) = (p(&a), p(&b));
                let s = score(&pa, &pb).unwrap();
                let brute = brute_ari(pa.assignment(), pb.assignment());
                if brute.is_finite() {
                    prop_assert!((s.ari - brute).abs() < 1e-9);
                }
                prop_assert!((-1.0..=1.0).contains(&s.ari));
                prop_assert!((0.0..=1.0).contains(&s.nmi));
                let self_score = score(&pa, &pa).unwrap();
                prop_assert_eq!((self_score.ari, self_score.nmi), (1.0, 1.0));
            }
        }
    }
}
