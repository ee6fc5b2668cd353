use rlcc::sim::presets;
use rlcc::sim::{run_replicates, SimConfig, SweepParam};
use rlcc::{
    compute_consensus, dbscan, run_generation, train_generation, ClusterParams, ConsensusMatrixF64,
    EmbeddingSet, EmbeddingSetF32, EmbeddingSetF64, GenerationState, LabelMatrixF64, Metric, Partition,
    PrototypeBankF64, RefineryConfig, RefineryConfigF32, RefineryConfigF64, Snapshot, TrainParams,
};

fn blobs() -> Vec<Vec<f64>> {
    let centers = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut rows = Vec::new();
    for (g, c) in centers.iter().enumerate() {
        for s in 0..5 {
            let jitter = 0.03 * (s as f64 - 2.0) + 0.01 * g as f64;
            rows.push(vec![c[0] + jitter, c[1] - jitter, c[2] + 0.5 * jitter]);
        }
    }
    rows
}

fn labels(flip: Option<usize>) -> Vec<usize> {
    let mut l: Vec<usize> = (0..15).map(|k| k / 5).collect();
    if let Some(k) = flip {
        l[k] = (l[k] + 1) % 3;
    }
    l
}

fn two_generations<T: rlcc::Scalar>(
    e: &EmbeddingSet<T>,
    cfg: &RefineryConfig<T>,
) -> GenerationState<T> {
    let mut first = |_: &EmbeddingSet<T>| Ok(Partition::from_labels(&labels(None), 0));
    let s0 = run_generation(None, e, cfg, &mut first).unwrap();
    let params = TrainParams {
        lr: T::from(0.5).unwrap(),
        epochs: 3,
        grad_check_stride: 0,
    };
    let (bank, trained, report) =
        train_generation(&s0.prototype_begin, e, &s0.refined_labels, cfg.propagation.temperature, &params).unwrap();
    assert_eq!(report.epochs_run, 3);
    assert!(report.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    let s0 = s0.with_end_snapshot(bank).unwrap();
    let mut second = |_: &EmbeddingSet<T>| Ok(Partition::from_labels(&labels(Some(7)), 1));
    run_generation(Some(&s0), &trained, cfg, &mut second).unwrap()
}

#[test]
fn f32_and_f64_pipelines_agree() {
    let rows = blobs();
    let e64 = EmbeddingSetF64::from_rows(rows.clone()).unwrap();
    let e32 = EmbeddingSetF32::from_rows(
        rows.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect(),
    )
    .unwrap();
    let s64 = two_generations(&e64, &RefineryConfigF64::default());
    let s32 = two_generations(&e32, &RefineryConfigF32::default());
    assert_eq!(s64.partition, s32.partition);
    for (a, b) in s64.refined_labels.rows().iter().zip(s32.refined_labels.rows()) {
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - f64::from(*y)).abs() < 1e-4, "{x} vs {y}");
        }
    }
}

#[test]
fn flipped_sample_keeps_some_mass_on_its_old_cluster() {
    let e = EmbeddingSetF64::from_rows(blobs()).unwrap();
    let state = two_generations(&e, &RefineryConfigF64::default());
    let row = state.refined_labels.row(7).unwrap().weights().to_vec();
    let current = state.partition.assignment()[7];
    assert_eq!(state.refined_labels.row(7).unwrap().argmax(), current);
    let old = state.partition.assignment()[5];
    assert!(row[old] > 0.01, "{row:?}");
}

#[test]
fn begin_and_end_snapshots_are_distinct_banks() {
    let e = EmbeddingSetF64::from_rows(blobs()).unwrap();
    let cfg = RefineryConfigF64::default();
    let mut first = |_: &EmbeddingSetF64| Ok(Partition::from_labels(&labels(None), 0));
    let s0 = run_generation(None, &e, &cfg, &mut first).unwrap();
    assert!(s0.prototypes(Snapshot::End).is_err());
    let params = TrainParams {
        lr: 0.5,
        epochs: 2,
        grad_check_stride: 1,
    };
    let (bank, _, report) = train_generation(&s0.prototype_begin, &e, &s0.refined_labels, 30.0, &params).unwrap();
    let err = report.grad_check_error.unwrap(); assert!(err < 1e-5, "{err}");
    let s0 = s0.with_end_snapshot(bank).unwrap();
    assert_eq!(s0.prototypes(Snapshot::Begin).unwrap().tag(), Snapshot::Begin);
    assert_eq!(s0.prototypes(Snapshot::End).unwrap().tag(), Snapshot::End);
    assert_ne!(
        s0.prototypes(Snapshot::Begin).unwrap().as_slice(),
        s0.prototypes(Snapshot::End).unwrap().as_slice()
    );
}

#[test]
fn text_formats_round_trip() {
    let e = EmbeddingSetF64::from_rows(blobs()).unwrap();
    let params = ClusterParams {
        eps: 0.05,
        min_pts: 3,
        metric: Metric::Cosine,
    };
    let p = dbscan(&e, &params).unwrap();
    assert_eq!(p.num_clusters(), 3);
    assert_eq!(Partition::from_text(&p.to_text()).unwrap(), p);

    let q = Partition::from_labels(&labels(Some(3)), 1);
    let c: ConsensusMatrixF64 = compute_consensus(&p, &q).unwrap().normalize_rows().unwrap();
    assert_eq!(ConsensusMatrixF64::from_text(&c.to_text()).unwrap(), c);

    let back = EmbeddingSetF64::from_text(&e.to_text()).unwrap();
    assert_eq!(back.as_slice(), e.as_slice());

    let state = two_generations(&e, &RefineryConfigF64::default());
    let text = state.refined_labels.to_text(0.9);
    let (labels, alpha) = LabelMatrixF64::from_text(&text).unwrap();
    assert_eq!(alpha, 0.9);
    assert_eq!(labels.argmax_partition(), state.refined_labels.argmax_partition());
    for (a, b) in labels.rows().iter().zip(state.refined_labels.rows()) {
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    let bank = &state.prototype_begin;
    assert_eq!(&PrototypeBankF64::from_text(&bank.to_text()).unwrap(), bank);
}

#[test]
fn soft_propagation_lowers_refined_cross_entropy_over_beta_sweep() {
    let base = SimConfig {
        replicates: 20,
        ..presets::standard()
    };
    let mean_ce = |beta: f64| {
        let runs = run_replicates(&SweepParam::Beta.apply(&base, beta)).unwrap();
        let n = runs.iter().map(Vec::len).sum::<usize>() as f64;
        runs.iter().flatten().map(|r| r.ce_refined).sum::<f64>() / n
    };
    let soft = mean_ce(0.0);
    let hard = mean_ce(1.0);
    assert!(soft <= hard, "soft {soft} vs hard {hard}");
}

#[test]
fn disabled_clustering_perturbs_ground_truth() {
    let cfg: SimConfig =
        serde_json::from_str(r#"{"seed": 5, "cluster": null, "generations": 3, "num_identities": 4, "samples_per_identity": 10}"#)
            .unwrap();
    let runs = run_replicates(&cfg).unwrap();
    assert_eq!(runs.len(), 1);
    for r in &runs[0] {
        assert!(r.ari_raw < 1.0);
        assert!(r.m <= 4);
        assert!(r.ce_refined <= r.ce_raw);
    }
}
