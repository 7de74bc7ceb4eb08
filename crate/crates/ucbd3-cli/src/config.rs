//! Experiment configuration: instance sources, algorithm profiles,
//! checkpoints, and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use ucbd3_core::baselines::default_etc_h;
use ucbd3_core::market::{classify_osb, gen_hard_lb, gen_osb, gen_spaced, stable_match, Instance};
use ucbd3_core::phase::PhaseLayout;
use ucbd3_core::sim::{AlgorithmKind, DeviantKind};

/// Errors surfaced to the command line; the variant decides the exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// A full experiment: one instance, one or more algorithm profiles, and the
/// Monte-Carlo parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub algorithms: Vec<AlgorithmConfig>,
    /// Optional unilateral-deviation study on top of the phased profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationConfig>,
    /// Slots to simulate; defaults to the reference horizon of 1e5.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    pub num_runs: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstanceSource {
    Osb {
        n_agents: usize,
        n_arms: usize,
        seed: u64,
        #[serde(default = "default_opt_mean")]
        opt_mean: f64,
        #[serde(default = "default_sub_range")]
        sub_range: (f64, f64),
    },
    Spaced {
        n_agents: usize,
        n_arms: usize,
        seed: u64,
    },
    HardLb {
        target_rank: usize,
        n_agents: usize,
        n_arms: usize,
        delta: f64,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
    Inline {
        n_agents: usize,
        n_arms: usize,
        means: Vec<Vec<f64>>,
    },
}

fn default_horizon() -> u64 {
    100_000
}

fn default_opt_mean() -> f64 {
    0.9
}

fn default_sub_range() -> (f64, f64) {
    (0.0, 0.8)
}

fn default_alpha() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AlgorithmConfig {
    UcbD3 {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_true")]
        use_comm_samples: bool,
    },
    CentralizedUcb {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Etc {
        /// Samples per arm during exploration; defaults to the reference
        /// value for the market size.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<u64>,
    },
    NaiveUcb {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

impl AlgorithmConfig {
    /// Resolves to the runnable profile; ETC picks its default `H` from the
    /// instance shape when not set explicitly.
    pub fn resolve(&self, inst: &Instance) -> AlgorithmKind {
        match *self {
            AlgorithmConfig::UcbD3 {
                alpha,
                use_comm_samples,
            } => AlgorithmKind::UcbD3 {
                alpha,
                use_comm_samples,
            },
            AlgorithmConfig::CentralizedUcb { alpha } => AlgorithmKind::CentralizedUcb { alpha },
            AlgorithmConfig::Etc { h } => AlgorithmKind::Etc {
                samples_per_arm: h.unwrap_or_else(|| {
                    let sm = stable_match(inst);
                    default_etc_h(inst.n_agents(), inst.n_arms(), classify_osb(inst, &sm))
                }),
            },
            AlgorithmConfig::NaiveUcb { alpha } => AlgorithmKind::NaiveUcb { alpha },
        }
    }

    fn alpha(&self) -> Option<f64> {
        match *self {
            AlgorithmConfig::UcbD3 { alpha, .. }
            | AlgorithmConfig::CentralizedUcb { alpha }
            | AlgorithmConfig::NaiveUcb { alpha } => Some(alpha),
            AlgorithmConfig::Etc { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationConfig {
    /// 1-based rank of the deviating agent.
    pub agent: usize,
    pub strategy: DeviantConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DeviantConfig {
    Greedy,
    NaiveUcb {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    UcbD3 {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

impl DeviantConfig {
    pub fn resolve(&self) -> DeviantKind {
        match *self {
            DeviantConfig::Greedy => DeviantKind::Greedy,
            DeviantConfig::NaiveUcb { alpha } => DeviantKind::NaiveUcb { alpha },
            DeviantConfig::UcbD3 { alpha } => DeviantKind::UcbD3 { alpha },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckpointSpec {
    /// Log-spaced checkpoints plus every phase boundary within the horizon.
    Count { count: usize },
    /// Explicit checkpoint slots.
    Explicit { times: Vec<u64> },
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        CheckpointSpec::Count { count: 100 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Builds the instance this config refers to.
    pub fn resolve_instance(&self) -> Result<Instance, CliError> {
        resolve_instance(&self.instance)
    }

    /// Checks every cross-field invariant against the resolved instance.
    pub fn validate(&self, inst: &Instance) -> Result<(), CliError> {
        let n = inst.n_agents();
        if self.horizon < n as u64 {
            return Err(CliError::Validation(format!(
                "horizon {} is shorter than the market size {}",
                self.horizon, n
            )));
        }
        if self.num_runs == 0 {
            return Err(CliError::Validation("num_runs must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(CliError::Validation("no algorithms configured".into()));
        }
        for a in &self.algorithms {
            if let Some(alpha) = a.alpha() {
                if alpha < 2.0 {
                    return Err(CliError::Validation(format!(
                        "alpha {alpha} below the minimum of 2"
                    )));
                }
            }
            if let AlgorithmConfig::Etc { h: Some(0) } = a {
                return Err(CliError::Validation("etc needs h >= 1".into()));
            }
        }
        if let Some(dev) = &self.deviation {
            if dev.agent == 0 || dev.agent > n {
                return Err(CliError::Validation(format!(
                    "deviant agent {} outside 1..={}",
                    dev.agent, n
                )));
            }
            if let DeviantConfig::UcbD3 { alpha } = dev.strategy {
                if alpha < 2.0 {
                    return Err(CliError::Validation(format!(
                        "deviant alpha {alpha} below the minimum of 2"
                    )));
                }
            }
            if !self
                .algorithms
                .iter()
                .any(|a| matches!(a, AlgorithmConfig::UcbD3 { .. }))
            {
                return Err(CliError::Validation(
                    "a deviation study needs a ucb_d3 profile to deviate from".into(),
                ));
            }
        }
        if let CheckpointSpec::Explicit { times } = &self.checkpoints {
            if times.is_empty() {
                return Err(CliError::Validation("empty checkpoint list".into()));
            }
            if times.iter().any(|&t| t == 0 || t > self.horizon) {
                return Err(CliError::Validation(format!(
                    "checkpoints must lie in 1..={}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }

    /// The sorted, deduplicated checkpoint slots for the resolved instance.
    pub fn resolve_checkpoints(&self, inst: &Instance) -> Vec<u64> {
        match &self.checkpoints {
            CheckpointSpec::Explicit { times } => {
                let mut times = times.clone();
                times.sort_unstable();
                times.dedup();
                times
            }
            CheckpointSpec::Count { count } => {
                log_spaced_with_phases(*count, self.horizon, inst.n_agents(), inst.n_arms())
            }
        }
    }
}

pub fn resolve_instance(source: &InstanceSource) -> Result<Instance, CliError> {
    match source {
        InstanceSource::Osb {
            n_agents,
            n_arms,
            seed,
            opt_mean,
            sub_range,
        } => {
            if *n_agents == 0 || n_arms < n_agents {
                return Err(CliError::Validation("need K >= N >= 1".into()));
            }
            if !(sub_range.0 >= 0.0 && sub_range.0 < sub_range.1 && sub_range.1 <= *opt_mean)
                || *opt_mean >= 1.0
            {
                return Err(CliError::Validation(
                    "need 0 <= sub_range.0 < sub_range.1 <= opt_mean < 1".into(),
                ));
            }
            Ok(gen_osb(*n_agents, *n_arms, *seed, *opt_mean, *sub_range))
        }
        InstanceSource::Spaced {
            n_agents,
            n_arms,
            seed,
        } => {
            if *n_agents == 0 || n_arms < n_agents || *n_arms < 2 {
                return Err(CliError::Validation("need K >= max(N, 2), N >= 1".into()));
            }
            Ok(gen_spaced(*n_agents, *n_arms, *seed))
        }
        InstanceSource::HardLb {
            target_rank,
            n_agents,
            n_arms,
            delta,
            seed,
        } => {
            if !(2 <= *target_rank && target_rank <= n_agents && n_agents <= n_arms) {
                return Err(CliError::Validation(
                    "need 2 <= target_rank <= N <= K".into(),
                ));
            }
            if !(*delta > 0.0 && *delta < 0.25) {
                return Err(CliError::Validation("need 0 < delta < 1/4".into()));
            }
            Ok(gen_hard_lb(*target_rank, *n_agents, *n_arms, *delta, *seed))
        }
        InstanceSource::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("bad instance file: {e}")))
        }
        InstanceSource::Inline {
            n_agents,
            n_arms,
            means,
        } => {
            let inst =
                Instance::raw(means.clone()).map_err(|e| CliError::Validation(e.to_string()))?;
            if inst.n_agents() != *n_agents || inst.n_arms() != *n_arms {
                return Err(CliError::Validation(format!(
                    "declared {}x{} but means matrix is {}x{}",
                    n_agents,
                    n_arms,
                    inst.n_agents(),
                    inst.n_arms()
                )));
            }
            Ok(inst)
        }
    }
}

/// `count` log-spaced slots over `[1, horizon]` merged with every phase
/// boundary, so regret curves and broadcast heatmaps come out of one pass.
fn log_spaced_with_phases(count: usize, horizon: u64, n_agents: usize, n_arms: usize) -> Vec<u64> {
    let mut times = Vec::with_capacity(count + 64);
    let count = count.max(2);
    let log_t = (horizon as f64).ln();
    for i in 0..count {
        let t = (log_t * i as f64 / (count - 1) as f64).exp().round() as u64;
        times.push(t.clamp(1, horizon));
    }
    let mut phase = 1;
    loop {
        let layout = PhaseLayout::of(phase, n_agents, n_arms);
        if layout.start > horizon {
            break;
        }
        times.push(layout.start);
        if layout.end() <= horizon {
            times.push(layout.end());
        }
        phase += 1;
    }
    times.push(horizon);
    times.sort_unstable();
    times.dedup();
    times
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{
  "instance": {{"type": "osb", "n_agents": 3, "n_arms": 3, "seed": 0}},
  "algorithms": [{{"name": "ucb_d3"}}],
  "horizon": 1000,
  "num_runs": 2,
  "master_seed": 7{extra}
}}"#
        )
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        let inst = cfg.resolve_instance().unwrap();
        cfg.validate(&inst).unwrap();
        assert!(matches!(
            cfg.checkpoints,
            CheckpointSpec::Count { count: 100 }
        ));
        match cfg.algorithms[0].resolve(&inst) {
            AlgorithmKind::UcbD3 {
                alpha,
                use_comm_samples,
            } => {
                assert_eq!(alpha, 2.0);
                assert!(use_comm_samples);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_checkpoints_round_trip() {
        let cfg = ExperimentConfig::from_json(&minimal(
            r#", "checkpoints": {"times": [500, 100, 100, 1000]}"#,
        ))
        .unwrap();
        let inst = cfg.resolve_instance().unwrap();
        cfg.validate(&inst).unwrap();
        assert_eq!(cfg.resolve_checkpoints(&inst), vec![100, 500, 1000]);
    }

    #[test]
    fn checkpoints_past_the_horizon_are_rejected() {
        let cfg =
            ExperimentConfig::from_json(&minimal(r#", "checkpoints": {"times": [500, 2000]}"#))
                .unwrap();
        let inst = cfg.resolve_instance().unwrap();
        assert!(matches!(cfg.validate(&inst), Err(CliError::Validation(_))));
    }

    #[test]
    fn log_spaced_checkpoints_cover_phase_boundaries() {
        let cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        let inst = cfg.resolve_instance().unwrap();
        let times = cfg.resolve_checkpoints(&inst);
        assert_eq!(*times.first().unwrap(), 1);
        assert_eq!(*times.last().unwrap(), 1000);
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        // Phase 1 of a 3x3 market starts at slot 3 and ends at slot 9.
        assert!(times.contains(&3));
        assert!(times.contains(&9));
    }

    #[test]
    fn etc_defaults_come_from_the_reference_table() {
        let json = r#"{
  "instance": {"type": "osb", "n_agents": 10, "n_arms": 10, "seed": 1},
  "algorithms": [{"name": "etc"}],
  "horizon": 100000,
  "num_runs": 1,
  "master_seed": 0
}"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let inst = cfg.resolve_instance().unwrap();
        assert_eq!(
            cfg.algorithms[0].resolve(&inst),
            AlgorithmKind::Etc {
                samples_per_arm: 1117
            }
        );
    }

    #[test]
    fn inline_instances_allow_boundary_means() {
        let json = r#"{
  "instance": {"type": "inline", "n_agents": 2, "n_arms": 2,
               "means": [[1.0, 0.5], [1.0, 0.05]]},
  "algorithms": [{"name": "naive_ucb"}],
  "horizon": 100,
  "num_runs": 1,
  "master_seed": 0
}"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let inst = cfg.resolve_instance().unwrap();
        cfg.validate(&inst).unwrap();
        assert_eq!(inst.mean(0, 0), 1.0);
    }

    #[test]
    fn deviation_requires_the_phased_profile() {
        let cfg = ExperimentConfig::from_json(&minimal(
            r#", "deviation": {"agent": 2, "strategy": {"name": "greedy"}}"#,
        ))
        .unwrap();
        let inst = cfg.resolve_instance().unwrap();
        cfg.validate(&inst).unwrap();

        let json = r#"{
  "instance": {"type": "osb", "n_agents": 3, "n_arms": 3, "seed": 0},
  "algorithms": [{"name": "etc"}],
  "deviation": {"agent": 2, "strategy": {"name": "greedy"}},
  "horizon": 1000,
  "num_runs": 2,
  "master_seed": 7
}"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let inst = cfg.resolve_instance().unwrap();
        assert!(cfg.validate(&inst).is_err());
    }
}
