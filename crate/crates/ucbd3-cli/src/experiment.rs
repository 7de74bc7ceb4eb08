//! Experiment orchestration: seeded Monte-Carlo fan-out over a worker pool
//! with position-derived seeds, so results are identical at any parallelism.

use ucbd3_core::analysis::{bound_report, BoundReport};
use ucbd3_core::market::Instance;
use ucbd3_core::sim::{
    deviation_harness, mix_seed, run_single, AlgorithmKind, GainEstimate, RunRecord, RunSpec,
};

use crate::config::{CliError, ExperimentConfig};

/// All runs of one algorithm profile, ordered by run index.
#[derive(Debug)]
pub struct AlgorithmResult {
    pub kind: AlgorithmKind,
    pub runs: Vec<RunRecord>,
}

/// In-memory result of a whole experiment.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub instance: Instance,
    pub checkpoints: Vec<u64>,
    pub algorithms: Vec<AlgorithmResult>,
    pub bounds: BoundReport,
    /// `(0-based deviant agent, gain estimate)` when a deviation was asked.
    pub deviation: Option<(usize, GainEstimate)>,
}

/// Executes the whole experiment on a pool of `jobs` workers (0 = one per
/// CPU). Every run's seed is a pure function of (master seed, algorithm id,
/// run index), and runs are reassembled by index, so the output is
/// byte-identical for every `jobs` value.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput, CliError> {
    let instance = cfg.resolve_instance()?;
    cfg.validate(&instance)?;
    let checkpoints = cfg.resolve_checkpoints(&instance);
    let kinds: Vec<AlgorithmKind> = cfg
        .algorithms
        .iter()
        .map(|a| a.resolve(&instance))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Validation(format!("cannot build a {jobs}-worker pool: {e}")))?;

    let tasks: Vec<(usize, u64)> = (0..kinds.len())
        .flat_map(|a| (0..cfg.num_runs as u64).map(move |r| (a, r)))
        .collect();

    let mut records: Vec<(usize, u64, RunRecord)> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(algo_idx, run_idx)| {
                let kind = kinds[algo_idx];
                let record = run_single(&RunSpec {
                    instance: &instance,
                    algorithm: kind,
                    horizon: cfg.horizon,
                    seed: mix_seed(cfg.master_seed, kind.id(), run_idx),
                    checkpoints: &checkpoints,
                    deviant: None,
                    record_trace: false,
                });
                (algo_idx, run_idx, record)
            })
            .collect()
    });
    records.sort_by_key(|&(a, r, _)| (a, r));

    let mut algorithms: Vec<AlgorithmResult> = kinds
        .iter()
        .map(|&kind| AlgorithmResult {
            kind,
            runs: Vec::with_capacity(cfg.num_runs),
        })
        .collect();
    for (algo_idx, _, record) in records {
        algorithms[algo_idx].runs.push(record);
    }

    let alpha = kinds
        .iter()
        .find_map(|k| match k {
            AlgorithmKind::UcbD3 { alpha, .. } | AlgorithmKind::CentralizedUcb { alpha } => {
                Some(*alpha)
            }
            _ => None,
        })
        .unwrap_or(2.0);
    let bounds = bound_report(&instance, cfg.horizon, alpha);

    let deviation = match &cfg.deviation {
        Some(dev) => {
            let phased_alpha = kinds
                .iter()
                .find_map(|k| match k {
                    AlgorithmKind::UcbD3 { alpha, .. } => Some(*alpha),
                    _ => None,
                })
                .expect("validated: a deviation study needs a ucb_d3 profile");
            let estimate = pool.install(|| {
                deviation_harness(
                    &instance,
                    phased_alpha,
                    dev.agent - 1,
                    dev.strategy.resolve(),
                    cfg.horizon,
                    cfg.num_runs.max(2),
                    cfg.master_seed,
                )
            });
            Some((dev.agent - 1, estimate))
        }
        None => None,
    };

    Ok(ExperimentOutput {
        instance,
        checkpoints,
        algorithms,
        bounds,
        deviation,
    })
}
