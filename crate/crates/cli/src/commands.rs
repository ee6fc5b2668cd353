use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use rlcc::learner::confidence_matrix;
use rlcc::propagation::propagate_all;
use rlcc::refinery::{looks_like_label_matrix, refine_all};
use rlcc::sim::metrics::score;
use rlcc::sim::{mean_records, records_to_csv, run_replicates, RunRecord, SimConfig, SweepParam};
use rlcc::{
    compute_consensus, ConsensusMatrix, EmbeddingSet, LabelMatrix, Partition, PropagationConfig,
    PropagationMode, PrototypeBank,
};
use serde::Serialize;

use crate::{svg, Cli, Command};

pub enum Failure {
    /// Bad arguments, unreadable or inconsistent inputs.
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Simulate { config } => simulate(cli, config),
        Command::Consensus {
            prev,
            curr,
            normalize,
        } => consensus(cli, prev, curr, *normalize),
        Command::Refine {
            prev,
            curr,
            mode,
            alpha,
            tau,
            beta,
            prototypes,
            embeddings,
        } => {
            let propagation = PropagationConfig {
                mode: (*mode).into(),
                beta: *beta,
                temperature: *tau,
            };
            refine(cli, prev, curr, propagation, *alpha, prototypes.as_deref(), embeddings.as_deref())
        }
        Command::Sweep {
            config,
            param,
            values,
        } => sweep(cli, config, *param, values),
        Command::Metrics { pred, truth } => metrics(cli, pred, truth),
    }
}

fn read_input(path: &Path) -> Outcome<String> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)
}

fn parse_input<T>(path: &Path, parse: impl FnOnce(&str) -> rlcc::Result<T>) -> Outcome<T> {
    let text = read_input(path)?;
    parse(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(usage)
}

fn load_config(cli: &Cli, path: &Path) -> Outcome<SimConfig> {
    let text = read_input(path)?;
    let mut cfg: SimConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(usage)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(usage)?;
    Ok(cfg)
}

/// Writes to `--out` when given, stdout otherwise.
fn emit(cli: &Cli, text: &str) -> Outcome {
    if cli.dry_run {
        return Ok(());
    }
    match &cli.out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn output_dir(cli: &Cli) -> Outcome<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(runtime)?;
    Ok(dir)
}

#[derive(Serialize)]
struct RunManifest {
    config_path: String,
    output_dir: String,
    command: String,
    timestamp: String,
    version: String,
}

fn write_manifest(dir: &Path, config: &Path) -> Outcome {
    let manifest = RunManifest {
        config_path: config.display().to_string(),
        output_dir: dir.display().to_string(),
        command: std::env::args().collect::<Vec<_>>().join(" "),
        timestamp: chrono::Utc::now().to_rfc3339(),
        version: concat!("rlcc ", env!("CARGO_PKG_VERSION")).to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    write_file(&dir.join("manifest.json"), &(json + "\n"))
}

fn simulate(cli: &Cli, config: &Path) -> Outcome {
    let cfg = load_config(cli, config)?;
    if cli.dry_run {
        return Ok(());
    }
    let runs = run_replicates(&cfg).map_err(runtime)?;
    let dir = output_dir(cli)?;
    if runs.len() > 1 {
        for (r, run) in runs.iter().enumerate() {
            let seed = cfg.seed.wrapping_add(r as u64);
            write_file(&dir.join(format!("run_seed{seed}.csv")), &records_to_csv(run))?;
        }
    }
    write_file(&dir.join("run.csv"), &records_to_csv(&mean_records(&runs)))?;
    write_manifest(&dir, config)
}

fn consensus(cli: &Cli, prev: &Path, curr: &Path, normalize: bool) -> Outcome {
    let prev = parse_input(prev, Partition::from_text)?;
    let curr = parse_input(curr, Partition::from_text)?;
    let mut c: ConsensusMatrix<f64> = compute_consensus(&prev, &curr).map_err(usage)?;
    if normalize {
        c = c.normalize_rows().map_err(usage)?;
    }
    emit(cli, &c.to_text())
}

fn refine(
    cli: &Cli,
    prev: &Path,
    curr: &Path,
    propagation: PropagationConfig<f64>,
    alpha: f64,
    prototypes: Option<&Path>,
    embeddings: Option<&Path>,
) -> Outcome {
    let prev = parse_input(prev, Partition::from_text)?;
    let curr = parse_input(curr, Partition::from_text)?;
    propagation.validate().map_err(usage)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(anyhow!("--alpha must lie in [0, 1], got {alpha}")));
    }
    let confidences = if propagation.mode == PropagationMode::Hard {
        None
    } else {
        let (Some(prototypes), Some(embeddings)) = (prototypes, embeddings) else {
            return Err(usage(anyhow!(
                "soft and blend modes need --prototypes and --embeddings"
            )));
        };
        let bank = parse_input(prototypes, PrototypeBank::<f64>::from_text)?;
        let e = parse_input(embeddings, EmbeddingSet::<f64>::from_text)?;
        if e.len() != curr.len() {
            return Err(usage(anyhow!(
                "embeddings have {} rows but the current partition has {} samples",
                e.len(),
                curr.len()
            )));
        }
        Some(confidence_matrix(&bank, &e, propagation.temperature).map_err(usage)?)
    };
    let c = compute_consensus(&prev, &curr)
        .and_then(|c| c.normalize_rows())
        .map_err(usage)?;
    let propagated = propagate_all(&c, &prev, confidences.as_deref(), &propagation).map_err(usage)?;
    let labels = refine_all(&curr, &propagated, alpha).map_err(usage)?;
    emit(cli, &labels.to_text(alpha))
}

fn summary_csv(param: SweepParam, rows: &[(f64, RunRecord)]) -> String {
    let mut out = format!(
        "{param},m,ari_raw,ari_refined,nmi_raw,nmi_refined,ce_raw,ce_refined,diag_mass\n"
    );
    for (value, r) in rows {
        let _ = writeln!(
            out,
            "{value},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            r.m, r.ari_raw, r.ari_refined, r.nmi_raw, r.nmi_refined, r.ce_raw, r.ce_refined, r.diag_mass
        );
    }
    out
}

fn sweep(cli: &Cli, config: &Path, param: SweepParam, values: &[f64]) -> Outcome {
    let base = load_config(cli, config)?;
    let configs: Vec<SimConfig> = values.iter().map(|&v| param.apply(&base, v)).collect();
    for (cfg, v) in configs.iter().zip(values) {
        cfg.validate()
            .with_context(|| format!("{param}={v}"))
            .map_err(usage)?;
    }
    if cli.dry_run {
        return Ok(());
    }
    let averaged: Vec<Vec<RunRecord>> = configs
        .par_iter()
        .map(|cfg| run_replicates(cfg).map(|runs| mean_records(&runs)))
        .collect::<rlcc::Result<_>>()
        .map_err(runtime)?;
    let dir = output_dir(cli)?;
    let mut finals = Vec::with_capacity(values.len());
    for (&value, records) in values.iter().zip(&averaged) {
        write_file(&dir.join(format!("{param}_{value}.csv")), &records_to_csv(records))?;
        if let Some(last) = records.last() {
            finals.push((value, *last));
        }
    }
    write_file(&dir.join("summary.csv"), &summary_csv(param, &finals))?;
    let chart = svg::line_chart(
        param.name(),
        "final generation",
        &[
            ("ARI", finals.iter().map(|(v, r)| (*v, r.ari_raw)).collect()),
            ("NMI", finals.iter().map(|(v, r)| (*v, r.nmi_raw)).collect()),
        ],
    );
    write_file(&dir.join("summary.svg"), &chart)?;
    write_manifest(&dir, config)
}

fn metrics(cli: &Cli, pred: &Path, truth: &Path) -> Outcome {
    let pred = parse_input(pred, |text| {
        if looks_like_label_matrix(text) {
            LabelMatrix::<f64>::from_text(text).map(|(m, _)| m.argmax_partition())
        } else {
            Partition::from_text(text)
        }
    })?;
    let truth = parse_input(truth, Partition::from_text)?;
    let s = score(&pred, &truth).map_err(usage)?;
    emit(cli, &format!("{},{},{}\n", s.ari, s.nmi, s.f1))
}
