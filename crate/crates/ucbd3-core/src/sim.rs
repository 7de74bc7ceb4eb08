//! Lockstep execution of one simulation run and the paired-run deviation
//! harness.
//!
//! A run is strictly sequential: at every slot all agents act, the
//! environment resolves the round, and all agents observe. Independent runs
//! are safe to execute in parallel; every run derives its randomness from
//! its own seed.

use serde::Serialize;

use crate::analysis::{mean_ci, MetricSeries, RegretAccumulator, Trace};
use crate::baselines::{CentralizedUcb, EtcAgent, GreedyAgent, NaiveUcb, Strategy};
use crate::env::{step, RewardSampler};
use crate::market::{stable_match, Instance};
use crate::phase::completed_phases;
use crate::ucbd3::UcbD3Agent;
use crate::{AgentId, ArmId};

/// Algorithm profile executed by all agents of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AlgorithmKind {
    UcbD3 { alpha: f64, use_comm_samples: bool },
    CentralizedUcb { alpha: f64 },
    Etc { samples_per_arm: u64 },
    NaiveUcb { alpha: f64 },
}

impl AlgorithmKind {
    /// Stable identifier used in output files and seed derivation.
    pub fn id(&self) -> &'static str {
        match self {
            AlgorithmKind::UcbD3 { .. } => "ucb_d3",
            AlgorithmKind::CentralizedUcb { .. } => "centralized_ucb",
            AlgorithmKind::Etc { .. } => "etc",
            AlgorithmKind::NaiveUcb { .. } => "naive_ucb",
        }
    }
}

/// Strategy substituted for one agent in a deviation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeviantKind {
    Greedy,
    NaiveUcb { alpha: f64 },
    UcbD3 { alpha: f64 },
}

/// Everything a single run needs.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub instance: &'a Instance,
    pub algorithm: AlgorithmKind,
    pub horizon: u64,
    pub seed: u64,
    /// Strictly increasing slots at which to snapshot the metrics.
    pub checkpoints: &'a [u64],
    /// Replace one agent's strategy (decentralized profiles only).
    pub deviant: Option<(AgentId, DeviantKind)>,
    /// Record the full per-slot choice/match trace.
    pub record_trace: bool,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub series: MetricSeries,
    /// Realized cumulative reward per agent at the horizon.
    pub total_reward: Vec<f64>,
    pub trace: Option<Trace>,
}

fn build_strategy(kind: AlgorithmKind, n_agents: usize, n_arms: usize) -> Box<dyn Strategy> {
    match kind {
        AlgorithmKind::UcbD3 {
            alpha,
            use_comm_samples,
        } => Box::new(UcbD3Agent::with_config(
            n_agents,
            n_arms,
            alpha,
            use_comm_samples,
        )),
        AlgorithmKind::NaiveUcb { alpha } => Box::new(NaiveUcb::new(n_arms, alpha)),
        AlgorithmKind::Etc { samples_per_arm } => {
            Box::new(EtcAgent::new(n_agents, n_arms, samples_per_arm))
        }
        AlgorithmKind::CentralizedUcb { .. } => {
            unreachable!("the centralized baseline routes through the arbiter loop")
        }
    }
}

fn build_deviant(kind: DeviantKind, n_agents: usize, n_arms: usize) -> Box<dyn Strategy> {
    match kind {
        DeviantKind::Greedy => Box::new(GreedyAgent::new(n_arms)),
        DeviantKind::NaiveUcb { alpha } => Box::new(NaiveUcb::new(n_arms, alpha)),
        DeviantKind::UcbD3 { alpha } => Box::new(UcbD3Agent::new(n_agents, n_arms, alpha)),
    }
}

/// Executes one run to its horizon and returns the checkpointed metrics.
pub fn run_single(spec: &RunSpec) -> RunRecord {
    let inst = spec.instance;
    let n = inst.n_agents();
    let k = inst.n_arms();
    let sm = stable_match(inst);
    let mut sampler = RewardSampler::new(spec.seed, n, k);
    let mut acc = RegretAccumulator::new(inst, &sm, spec.checkpoints);
    let mut trace = spec.record_trace.then(Trace::default);

    if let AlgorithmKind::CentralizedUcb { alpha } = spec.algorithm {
        assert!(
            spec.deviant.is_none(),
            "deviations are defined for decentralized profiles only"
        );
        let mut arbiter = CentralizedUcb::new(n, k, alpha);
        for t in 1..=spec.horizon {
            let assignment = arbiter.assign(t);
            let fb = step(inst, &assignment, &mut sampler);
            for j in 0..n {
                debug_assert!(fb.outcome(j).is_matched(), "the arbiter never collides");
                arbiter.update(j, assignment[j], fb.outcome(j).reward());
            }
            acc.record(t, &assignment, &fb);
            if let Some(trace) = trace.as_mut() {
                trace.choices.push(assignment.clone());
                trace.matched.push(vec![true; n]);
            }
        }
        return RunRecord {
            total_reward: acc.total_reward().to_vec(),
            series: acc.finish(Vec::new()),
            trace,
        };
    }

    let mut agents: Vec<Box<dyn Strategy>> = (0..n)
        .map(|j| match spec.deviant {
            Some((deviant, kind)) if deviant == j => build_deviant(kind, n, k),
            _ => build_strategy(spec.algorithm, n, k),
        })
        .collect();

    let mut choices: Vec<ArmId> = vec![0; n];
    for t in 1..=spec.horizon {
        for (j, agent) in agents.iter_mut().enumerate() {
            choices[j] = agent.act(t).expect("the driver is lockstep");
        }
        let fb = step(inst, &choices, &mut sampler);
        for (j, agent) in agents.iter_mut().enumerate() {
            agent
                .observe(t, choices[j], fb.outcome(j))
                .expect("the driver is lockstep");
        }
        acc.record(t, &choices, &fb);
        if let Some(trace) = trace.as_mut() {
            trace.choices.push(choices.clone());
            trace
                .matched
                .push((0..n).map(|j| fb.outcome(j).is_matched()).collect());
        }
    }

    // Broadcast logs are truncated to fully completed phases so every run of
    // the same shape reports the same number of rows.
    let phases = completed_phases(spec.horizon, n, k) as usize;
    let comm_arms = match agents[0].broadcast_log() {
        Some(_) if spec.deviant.is_none() => (0..phases)
            .map(|i| {
                agents
                    .iter()
                    .map(|a| a.broadcast_log().expect("uniform profile")[i])
                    .collect()
            })
            .collect(),
        _ => Vec::new(),
    };

    RunRecord {
        total_reward: acc.total_reward().to_vec(),
        series: acc.finish(comm_arms),
        trace,
    }
}

/// Stable 64-bit mix of (master seed, algorithm id, run index), used to
/// derive every run's seed. Position-based, so results are independent of
/// scheduling and parallelism.
pub fn mix_seed(master_seed: u64, algorithm_id: &str, run_index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325; // FNV-1a over the id string
    for &b in algorithm_id.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(master_seed ^ h) ^ run_index)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean unilateral gain of a deviant agent with its 95% half-width.
#[derive(Debug, Clone, Serialize)]
pub struct GainEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub per_run: Vec<f64>,
}

/// Estimates how much the agent at `deviant_agent` gains by playing
/// `deviant` while everyone else follows the phased protocol with parameter
/// `alpha`. Each of the `runs` comparisons is a paired pair of runs sharing
/// one seed, so both arms see identical reward tables and the gain of a
/// non-deviation is exactly zero.
pub fn deviation_harness(
    inst: &Instance,
    alpha: f64,
    deviant_agent: AgentId,
    deviant: DeviantKind,
    horizon: u64,
    runs: usize,
    master_seed: u64,
) -> GainEstimate {
    assert!(runs >= 2, "need at least two paired runs for an interval");
    let checkpoints = [horizon];
    let per_run: Vec<f64> = (0..runs)
        .map(|r| {
            let seed = mix_seed(master_seed, "deviation", r as u64);
            let base = RunSpec {
                instance: inst,
                algorithm: AlgorithmKind::UcbD3 {
                    alpha,
                    use_comm_samples: true,
                },
                horizon,
                seed,
                checkpoints: &checkpoints,
                deviant: None,
                record_trace: false,
            };
            let deviated = RunSpec {
                deviant: Some((deviant_agent, deviant)),
                ..base.clone()
            };
            run_single(&deviated).total_reward[deviant_agent]
                - run_single(&base).total_reward[deviant_agent]
        })
        .collect();
    let (mean, half_width) = mean_ci(&per_run, 0.95).expect("runs >= 2");
    GainEstimate {
        mean,
        half_width,
        per_run,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::gen_osb_default;

    fn spec<'a>(
        inst: &'a Instance,
        algorithm: AlgorithmKind,
        horizon: u64,
        checkpoints: &'a [u64],
    ) -> RunSpec<'a> {
        RunSpec {
            instance: inst,
            algorithm,
            horizon,
            seed: 42,
            checkpoints,
            deviant: None,
            record_trace: false,
        }
    }

    #[test]
    fn identical_specs_give_identical_records() {
        let inst = gen_osb_default(3, 4, 9);
        let checkpoints = [10, 100, 500];
        let s = spec(
            &inst,
            AlgorithmKind::UcbD3 {
                alpha: 2.0,
                use_comm_samples: true,
            },
            500,
            &checkpoints,
        );
        let a = run_single(&s);
        let b = run_single(&s);
        assert_eq!(a.series, b.series);
        assert_eq!(a.total_reward, b.total_reward);
    }

    #[test]
    fn centralized_runs_never_block() {
        let inst = gen_osb_default(4, 5, 2);
        let checkpoints = [200];
        let rec = run_single(&spec(
            &inst,
            AlgorithmKind::CentralizedUcb { alpha: 2.0 },
            200,
            &checkpoints,
        ));
        for j in 0..4 {
            assert_eq!(rec.series.blocked_count[j], vec![0]);
            assert_eq!(rec.series.cum_collision_regret[j], vec![0.0]);
        }
    }

    #[test]
    fn self_deviation_gains_exactly_zero() {
        let inst = gen_osb_default(3, 3, 5);
        let est = deviation_harness(&inst, 2.0, 1, DeviantKind::UcbD3 { alpha: 2.0 }, 400, 4, 7);
        assert_eq!(est.per_run, vec![0.0; 4]);
        assert_eq!((est.mean, est.half_width), (0.0, 0.0));
    }

    #[test]
    fn lowest_ranked_deviant_cannot_touch_higher_agents() {
        // Replace the last agent and compare full traces of the others: the
        // pair must agree slot by slot because blocking is one-directional.
        let inst = gen_osb_default(3, 4, 11);
        let checkpoints = [600];
        let base = RunSpec {
            instance: &inst,
            algorithm: AlgorithmKind::UcbD3 {
                alpha: 2.0,
                use_comm_samples: true,
            },
            horizon: 600,
            seed: 123,
            checkpoints: &checkpoints,
            deviant: None,
            record_trace: true,
        };
        let deviated = RunSpec {
            deviant: Some((2, DeviantKind::Greedy)),
            ..base.clone()
        };
        let a = run_single(&base);
        let b = run_single(&deviated);
        let (ta, tb) = (a.trace.unwrap(), b.trace.unwrap());
        for t in 0..600 {
            for j in 0..2 {
                assert_eq!(ta.choices[t][j], tb.choices[t][j], "t = {t}, agent {j}");
                assert_eq!(ta.matched[t][j], tb.matched[t][j], "t = {t}, agent {j}");
            }
        }
        assert_eq!(a.total_reward[0], b.total_reward[0]);
        assert_eq!(a.total_reward[1], b.total_reward[1]);
    }

    #[test]
    fn seed_mix_is_sensitive_to_every_field() {
        let base = mix_seed(1, "ucb_d3", 0);
        assert_ne!(base, mix_seed(2, "ucb_d3", 0));
        assert_ne!(base, mix_seed(1, "etc", 0));
        assert_ne!(base, mix_seed(1, "ucb_d3", 1));
        assert_eq!(base, mix_seed(1, "ucb_d3", 0));
    }

    #[test]
    fn regret_series_from_trace_matches_the_streaming_accumulator() {
        let inst = gen_osb_default(3, 3, 8);
        let checkpoints = [50, 200, 350];
        let s = RunSpec {
            instance: &inst,
            algorithm: AlgorithmKind::NaiveUcb { alpha: 2.0 },
            horizon: 350,
            seed: 3,
            checkpoints: &checkpoints,
            deviant: None,
            record_trace: true,
        };
        let rec = run_single(&s);
        let sm = stable_match(&inst);
        let recomputed =
            crate::analysis::regret_series(rec.trace.as_ref().unwrap(), &inst, &sm, &checkpoints);
        assert_eq!(recomputed.cum_regret, rec.series.cum_regret);
        assert_eq!(recomputed.blocked_count, rec.series.blocked_count);
    }
}
