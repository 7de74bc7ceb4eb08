//! Regret accounting, confidence intervals, Bernoulli KL numerics, and the
//! closed-form regret bound calculators.

use serde::Serialize;
use thiserror::Error;

use crate::env::RoundFeedback;
use crate::market::{classify_osb, gaps, stable_match, GapTable, Instance, StableMatch};
use crate::{AgentId, ArmId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("the instance is not optimally stable; the lower bound only applies to OSB instances")]
    NotOsb,
    #[error("need at least two runs to form a confidence interval")]
    InsufficientRuns,
}

// ---------------------------------------------------------------------------
// Per-run metric series
// ---------------------------------------------------------------------------

/// Checkpointed per-agent metrics of one run.
///
/// Regret is pseudo-regret evaluated against the true means: each round an
/// agent falls short of its stable partner's mean by
/// `mu_star - mu(chosen) * 1{matched}`, so blocked rounds contribute the
/// full `mu_star` (tracked separately as collision regret) and matches with
/// arms better than the stable partner contribute negative increments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub checkpoints: Vec<u64>,
    /// `cum_regret[agent][i]` at `checkpoints[i]`.
    pub cum_regret: Vec<Vec<f64>>,
    /// Portion of the regret accrued while blocked.
    pub cum_collision_regret: Vec<Vec<f64>>,
    pub blocked_count: Vec<Vec<u64>>,
    /// `comm_arms[phase][agent]`: the arm each agent broadcast at the end of
    /// that phase. Empty for algorithms without a broadcast.
    pub comm_arms: Vec<Vec<ArmId>>,
}

/// Full record of who played what, for metric recomputation in tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// `choices[t-1][agent]`.
    pub choices: Vec<Vec<ArmId>>,
    /// `matched[t-1][agent]`.
    pub matched: Vec<Vec<bool>>,
}

/// Streaming accumulator behind [`MetricSeries`]; feed it every round in
/// order and snapshot at each checkpoint.
#[derive(Debug, Clone)]
pub struct RegretAccumulator {
    mu_star: Vec<f64>,
    means: Vec<Vec<f64>>,
    checkpoints: Vec<u64>,
    next_checkpoint: usize,
    regret: Vec<f64>,
    collision_regret: Vec<f64>,
    blocked: Vec<u64>,
    reward: Vec<f64>,
    series: MetricSeries,
}

impl RegretAccumulator {
    pub fn new(inst: &Instance, sm: &StableMatch, checkpoints: &[u64]) -> Self {
        debug_assert!(checkpoints.windows(2).all(|w| w[0] < w[1]));
        let n = inst.n_agents();
        let mu_star = (0..n).map(|j| inst.mean(j, sm.partner(j))).collect();
        RegretAccumulator {
            mu_star,
            means: inst.means().to_vec(),
            checkpoints: checkpoints.to_vec(),
            next_checkpoint: 0,
            regret: vec![0.0; n],
            collision_regret: vec![0.0; n],
            blocked: vec![0; n],
            reward: vec![0.0; n],
            series: MetricSeries {
                checkpoints: checkpoints.to_vec(),
                cum_regret: vec![Vec::new(); n],
                cum_collision_regret: vec![Vec::new(); n],
                blocked_count: vec![Vec::new(); n],
                comm_arms: Vec::new(),
            },
        }
    }

    pub fn record(&mut self, t: u64, choices: &[ArmId], feedback: &RoundFeedback) {
        for (j, &arm) in choices.iter().enumerate() {
            let outcome = feedback.outcome(j);
            if outcome.is_matched() {
                self.regret[j] += self.mu_star[j] - self.means[j][arm];
            } else {
                self.regret[j] += self.mu_star[j];
                self.collision_regret[j] += self.mu_star[j];
                self.blocked[j] += 1;
            }
            self.reward[j] += outcome.reward();
        }
        if self.next_checkpoint < self.checkpoints.len()
            && t == self.checkpoints[self.next_checkpoint]
        {
            for j in 0..self.regret.len() {
                self.series.cum_regret[j].push(self.regret[j]);
                self.series.cum_collision_regret[j].push(self.collision_regret[j]);
                self.series.blocked_count[j].push(self.blocked[j]);
            }
            self.next_checkpoint += 1;
        }
    }

    /// Total realized reward per agent so far.
    pub fn total_reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn finish(mut self, comm_arms: Vec<Vec<ArmId>>) -> MetricSeries {
        self.series.comm_arms = comm_arms;
        self.series
    }
}

/// Recomputes the metric series of a recorded trace. Pseudo-regret depends
/// only on who played what and whether the match succeeded, so the trace
/// carries no rewards.
pub fn regret_series(
    trace: &Trace,
    inst: &Instance,
    sm: &StableMatch,
    checkpoints: &[u64],
) -> MetricSeries {
    let mut acc = RegretAccumulator::new(inst, sm, checkpoints);
    for (i, (choices, matched)) in trace.choices.iter().zip(&trace.matched).enumerate() {
        let feedback = RoundFeedback {
            winners: Vec::new(),
            outcomes: matched
                .iter()
                .map(|&m| {
                    if m {
                        crate::env::AgentOutcome::Matched { reward: 0.0 }
                    } else {
                        crate::env::AgentOutcome::Blocked
                    }
                })
                .collect(),
        };
        acc.record(i as u64 + 1, choices, &feedback);
    }
    acc.finish(Vec::new())
}

// ---------------------------------------------------------------------------
// Bernoulli KL numerics
// ---------------------------------------------------------------------------

/// KL divergence between Bernoulli(`p`) and Bernoulli(`q`), with the
/// `0 ln 0 = 0` convention.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(AnalysisError::DomainError(format!(
            "p = {p} outside [0, 1]"
        )));
    }
    if q <= 0.0 || q >= 1.0 {
        if !(0.0..=1.0).contains(&q) {
            return Err(AnalysisError::DomainError(format!(
                "q = {q} outside [0, 1]"
            )));
        }
        if p == q {
            return Ok(0.0);
        }
        if p > 0.0 && p < 1.0 {
            return Err(AnalysisError::DomainError(format!(
                "q = {q} is degenerate while p = {p} is interior"
            )));
        }
        return Ok(f64::INFINITY);
    }
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    Ok(kl)
}

/// Smallest KL divergence from Bernoulli(`p`) to any bounded-support
/// distribution with mean above `x`: `kl(p, x)` when `p < x`, zero once the
/// mean already exceeds the target.
pub fn kl_inf_bernoulli(p: f64, x: f64) -> Result<f64, AnalysisError> {
    if x <= 0.0 || x >= 1.0 {
        return Err(AnalysisError::DomainError(format!(
            "threshold x = {x} outside (0, 1)"
        )));
    }
    if p >= x {
        return Ok(0.0);
    }
    kl_bernoulli(p, x)
}

// ---------------------------------------------------------------------------
// Closed-form bound calculators
// ---------------------------------------------------------------------------

/// First phase whose regret-minimization block is long enough to absorb the
/// worst-case sub-optimal play and collisions:
/// `min { i : 20 N K alpha i / gap^2 <= 2^(i-1) }`.
pub fn stabilizing_phase(n_agents: usize, n_arms: usize, alpha: f64, gap: f64) -> u32 {
    let c = 20.0 * (n_agents * n_arms) as f64 * alpha / (gap * gap);
    let mut i = 1u32;
    while c * f64::from(i) > 2f64.powi(i as i32 - 1) {
        i += 1;
    }
    i
}

/// Leading term of the closed-form regret upper bound for the agent at
/// 0-based index `agent` (rank `agent + 1`):
/// `9 alpha ln(T) * ((j-1)(K+1-j)/gap^2 + max(K-1-j, 0)/gap)` with the
/// instance's smallest non-dominated gap. The additive remainder, of order
/// `(NK)^2 + NK/gap^2 * ln(NK/gap^2)`, is reported separately by
/// [`upper_bound_remainder_scale`] without its constant.
pub fn regret_upper_bound(inst: &Instance, agent: AgentId, horizon: u64, alpha: f64) -> f64 {
    let sm = stable_match(inst);
    let table = gaps(inst, &sm);
    regret_upper_bound_with(&table, inst.n_arms(), agent, horizon, alpha)
}

/// [`regret_upper_bound`] with a precomputed gap table.
pub fn regret_upper_bound_with(
    table: &GapTable,
    n_arms: usize,
    agent: AgentId,
    horizon: u64,
    alpha: f64,
) -> f64 {
    let j = (agent + 1) as f64;
    let k = n_arms as f64;
    let gap = table.global_min();
    let log_t = (horizon as f64).ln();
    let collision = (j - 1.0) * (k + 1.0 - j) / (gap * gap);
    let suboptimal = (k - 1.0 - j).max(0.0) / gap;
    9.0 * alpha * log_t * (collision + suboptimal)
}

/// Scale of the constant-free additive remainder omitted from
/// [`regret_upper_bound`].
pub fn upper_bound_remainder_scale(n_agents: usize, n_arms: usize, gap: f64) -> f64 {
    let nk = (n_agents * n_arms) as f64;
    let ratio = nk / (gap * gap);
    nk * nk + ratio * ratio.ln().max(0.0)
}

/// Asymptotic KL lower bound on the regret of `agent` under any uniformly
/// consistent decentralized policy, valid on optimally stable instances:
/// `ln(T) * max{ sum over higher-ranked agents of gap_min / kl_inf,
/// sum over own non-dominated arms of gap / kl_inf }`.
pub fn regret_lower_bound(
    inst: &Instance,
    agent: AgentId,
    horizon: u64,
) -> Result<f64, AnalysisError> {
    let sm = stable_match(inst);
    if !classify_osb(inst, &sm) {
        return Err(AnalysisError::NotOsb);
    }
    let table = gaps(inst, &sm);
    let log_t = (horizon as f64).ln();

    // Higher-ranked agents must explore this agent's partner arm; each such
    // exploration costs this agent at least its smallest gap.
    let mut blocked_sum = 0.0;
    let own_partner = sm.partner(agent);
    for upper in 0..agent {
        let p = inst.mean(upper, own_partner);
        let x = inst.mean(upper, sm.partner(upper));
        blocked_sum += table.per_agent_min(agent) / kl_inf_bernoulli(p, x)?;
    }

    // The agent itself must explore every non-dominated sub-optimal arm.
    let mut explore_sum = 0.0;
    for arm in 0..inst.n_arms() {
        if arm == own_partner || !sm.is_non_dominated(agent, arm) {
            continue;
        }
        let p = inst.mean(agent, arm);
        let x = inst.mean(agent, own_partner);
        explore_sum += table.gap(agent, arm) / kl_inf_bernoulli(p, x)?;
    }

    Ok(log_t * blocked_sum.max(explore_sum))
}

/// Conservative closed-form lower bound for the hard instance family built
/// by [`crate::market::gen_hard_lb`]: `(j-1) ln(T) / (16 delta^2)` for the
/// agent at 0-based index `agent`.
pub fn hard_instance_lower_bound(agent: AgentId, horizon: u64, delta: f64) -> f64 {
    agent as f64 * (horizon as f64).ln() / (16.0 * delta * delta)
}

/// Per-agent bound values plus the shared phase/gap diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub per_agent: Vec<AgentBounds>,
    /// Smallest non-dominated gap the bounds are evaluated at.
    pub gap: f64,
    pub stabilizing_phase: u32,
    /// Constant-free scale of the additive term omitted from `upper`.
    pub remainder_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentBounds {
    /// Leading term of the closed-form upper bound.
    pub upper: f64,
    /// KL lower bound; absent when the instance is not optimally stable.
    pub lower: Option<f64>,
    /// Hard-family closed form `(j-1) ln(T) / (16 gap^2)`.
    pub hard_closed_form: f64,
}

/// Evaluates every bound calculator on `inst` at horizon `horizon`.
pub fn bound_report(inst: &Instance, horizon: u64, alpha: f64) -> BoundReport {
    let sm = stable_match(inst);
    let table = gaps(inst, &sm);
    let osb = classify_osb(inst, &sm);
    let gap = table.global_min();
    let per_agent = (0..inst.n_agents())
        .map(|agent| AgentBounds {
            upper: regret_upper_bound_with(&table, inst.n_arms(), agent, horizon, alpha),
            lower: if osb {
                regret_lower_bound(inst, agent, horizon).ok()
            } else {
                None
            },
            hard_closed_form: hard_instance_lower_bound(agent, horizon, gap),
        })
        .collect();
    BoundReport {
        per_agent,
        gap,
        stabilizing_phase: stabilizing_phase(inst.n_agents(), inst.n_arms(), alpha, gap),
        remainder_scale: upper_bound_remainder_scale(inst.n_agents(), inst.n_arms(), gap),
    }
}

/// Unilateral-deviation reward bounds: no agent can gain more than
/// `eps[j]` in expectation by abandoning the protocol, where
/// `eps[j] = sum over higher-ranked l with mu(j, partner(l)) > mu(j,
/// partner(j)) of (mu(j, partner(l)) / min_k mu(l, k)) * regret[l] +
/// regret[j]`. Supply per-agent regrets, either measured or from the upper
/// bound calculator.
pub fn epsilon_nash_bounds(inst: &Instance, sm: &StableMatch, regrets: &[f64]) -> Vec<f64> {
    assert_eq!(regrets.len(), inst.n_agents());
    (0..inst.n_agents())
        .map(|j| {
            let own = inst.mean(j, sm.partner(j));
            let mut eps = regrets[j];
            for l in 0..j {
                let coveted = inst.mean(j, sm.partner(l));
                if coveted > own {
                    let mu_min = (0..inst.n_arms())
                        .map(|k| inst.mean(l, k))
                        .fold(f64::INFINITY, f64::min);
                    eps += coveted / mu_min * regrets[l];
                }
            }
            eps
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Broadcast heatmaps and freeze phases
// ---------------------------------------------------------------------------

/// First phase from which an agent's broadcast equals its stable partner in
/// every later recorded phase; `None` when the final recorded broadcast is
/// still wrong. `comm_arms[phase][agent]` as in [`MetricSeries`].
pub fn freeze_phases(comm_arms: &[Vec<ArmId>], sm: &StableMatch) -> Vec<Option<u32>> {
    let n = sm.partners().len();
    (0..n)
        .map(|j| {
            let mut freeze = None;
            for (i, row) in comm_arms.iter().enumerate() {
                if row[j] == sm.partner(j) {
                    freeze.get_or_insert(i as u32 + 1);
                } else {
                    freeze = None;
                }
            }
            freeze
        })
        .collect()
}

/// Counts, over runs, how often each agent broadcast each arm in each phase:
/// `counts[phase][agent][arm]`.
pub fn heatmap_counts(
    runs: &[&[Vec<ArmId>]],
    n_agents: usize,
    n_arms: usize,
) -> Vec<Vec<Vec<u32>>> {
    let phases = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut counts = vec![vec![vec![0u32; n_arms]; n_agents]; phases];
    for run in runs {
        for (i, row) in run.iter().enumerate() {
            for (j, &arm) in row.iter().enumerate() {
                counts[i][j][arm] += 1;
            }
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Confidence intervals
// ---------------------------------------------------------------------------

/// Sample mean and normal-approximation half-width at confidence `level`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<(f64, f64), AnalysisError> {
    if values.len() < 2 {
        return Err(AnalysisError::InsufficientRuns);
    }
    if !(0.0 < level && level < 1.0) {
        return Err(AnalysisError::DomainError(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let z = inverse_normal_cdf(0.5 + level / 2.0);
    Ok((mean, z * (var / n).sqrt()))
}

/// [`mean_ci`] across runs at every point of aligned per-run series.
pub fn series_ci(per_run: &[&[f64]], level: f64) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if per_run.len() < 2 {
        return Err(AnalysisError::InsufficientRuns);
    }
    let len = per_run[0].len();
    debug_assert!(per_run.iter().all(|r| r.len() == len));
    (0..len)
        .map(|i| {
            let column: Vec<f64> = per_run.iter().map(|r| r[i]).collect();
            mean_ci(&column, level)
        })
        .collect()
}

/// Acklam's rational approximation of the standard normal quantile,
/// accurate to about 1e-9 over (0, 1). Coefficients as published.
#[allow(clippy::excessive_precision)]
fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        return (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    }
    if p > 1.0 - P_LOW {
        return -inverse_normal_cdf(1.0 - p);
    }
    let q = p - 0.5;
    let r = q * q;
    (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
        / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
}
