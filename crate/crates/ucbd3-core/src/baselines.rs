//! Comparison algorithms: naive independent UCB, staggered
//! explore-then-commit, the centralized serial arbiter, and a greedy
//! defector for deviation experiments.

use crate::env::AgentOutcome;
use crate::ucbd3::{comm_action, ucb_index, ProtocolError, RankProtocol, UcbD3Agent};
use crate::ArmId;

/// A decentralized per-agent policy: decisions may depend only on the
/// agent's own past actions and outcomes. Drive with one `act`/`observe`
/// pair per slot, in slot order.
pub trait Strategy {
    fn act(&mut self, t: u64) -> Result<ArmId, ProtocolError>;
    fn observe(&mut self, t: u64, arm: ArmId, outcome: AgentOutcome) -> Result<(), ProtocolError>;

    /// Per-phase broadcast estimates, for policies that have them.
    fn broadcast_log(&self) -> Option<&[ArmId]> {
        None
    }
}

impl Strategy for UcbD3Agent {
    fn act(&mut self, t: u64) -> Result<ArmId, ProtocolError> {
        UcbD3Agent::act(self, t)
    }

    fn observe(&mut self, t: u64, arm: ArmId, outcome: AgentOutcome) -> Result<(), ProtocolError> {
        UcbD3Agent::observe(self, t, arm, outcome)
    }

    fn broadcast_log(&self) -> Option<&[ArmId]> {
        Some(UcbD3Agent::broadcast_log(self))
    }
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> ArmId {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Naive independent UCB
// ---------------------------------------------------------------------------

/// Plain UCB-alpha over all arms with no coordination at all: a blocked
/// round is recorded as an ordinary sample with reward zero, which is
/// exactly what sinks this policy when a better-ranked agent camps on an
/// arm.
#[derive(Debug, Clone)]
pub struct NaiveUcb {
    alpha: f64,
    counts: Vec<u64>,
    sums: Vec<f64>,
}

impl NaiveUcb {
    pub fn new(n_arms: usize, alpha: f64) -> Self {
        NaiveUcb {
            alpha,
            counts: vec![0; n_arms],
            sums: vec![0.0; n_arms],
        }
    }

    /// Recorded sample count per arm; sums to the number of rounds played.
    pub fn sample_counts(&self) -> &[u64] {
        &self.counts
    }

    /// Empirical mean per arm (zero while unsampled), blocked rounds
    /// included as zero-reward samples.
    pub fn empirical_means(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.sums)
            .map(|(&c, &s)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }
}

impl Strategy for NaiveUcb {
    fn act(&mut self, t: u64) -> Result<ArmId, ProtocolError> {
        Ok(argmax_lowest((0..self.counts.len()).map(|k| {
            let mu = if self.counts[k] > 0 {
                self.sums[k] / self.counts[k] as f64
            } else {
                0.0
            };
            ucb_index(mu, self.counts[k], t, self.alpha)
        })))
    }

    fn observe(&mut self, _t: u64, arm: ArmId, outcome: AgentOutcome) -> Result<(), ProtocolError> {
        self.counts[arm] += 1;
        self.sums[arm] += outcome.reward();
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Explore-then-commit
// ---------------------------------------------------------------------------

/// Reference `H` values per market size; 801 otherwise.
pub fn default_etc_h(n_agents: usize, n_arms: usize, osb: bool) -> u64 {
    match (n_agents, n_arms, osb) {
        (10, 10, _) => 1117,
        (10, 15, true) => 805,
        (10, 15, false) => 1610,
        _ => 801,
    }
}

/// Decentralized explore-then-commit. After the shared rank-estimation
/// window, agents explore in a staggered round-robin (agent with rank `j`
/// plays arm `(t + j) mod K`) for `K * H` slots, which is collision-free
/// whenever `K >= N` and gives every agent exactly `H` samples per arm.
/// One broadcast block then communicates each agent's empirical best arm
/// exactly as in the phased protocol, and every agent commits forever to
/// its best empirical arm outside the decoded dominated set.
#[derive(Debug, Clone)]
pub struct EtcAgent {
    n_agents: usize,
    n_arms: usize,
    rank: RankProtocol,
    counts: Vec<u64>,
    sums: Vec<f64>,
    estimate: ArmId,
    detected: Vec<bool>,
    committed: Option<ArmId>,
    explore_end: u64,
    comm_end: u64,
}

impl EtcAgent {
    pub fn new(n_agents: usize, n_arms: usize, samples_per_arm: u64) -> Self {
        assert!(n_agents >= 1 && n_arms >= n_agents);
        assert!(samples_per_arm >= 1);
        let explore_end = n_agents as u64 - 1 + n_arms as u64 * samples_per_arm;
        let comm_end = explore_end + (n_agents as u64 - 1) * n_arms as u64;
        EtcAgent {
            n_agents,
            n_arms,
            rank: RankProtocol::new(n_agents),
            counts: vec![0; n_arms],
            sums: vec![0.0; n_arms],
            estimate: 0,
            detected: vec![false; n_arms],
            committed: None,
            explore_end,
            comm_end,
        }
    }

    pub fn committed(&self) -> Option<ArmId> {
        self.committed
    }

    fn empirical_best(&self, allowed: impl Fn(ArmId) -> bool) -> ArmId {
        argmax_lowest((0..self.n_arms).map(|k| {
            if !allowed(k) || self.counts[k] == 0 {
                f64::NEG_INFINITY
            } else {
                self.sums[k] / self.counts[k] as f64
            }
        }))
    }
}

impl Strategy for EtcAgent {
    fn act(&mut self, t: u64) -> Result<ArmId, ProtocolError> {
        let arm = if t < self.n_agents as u64 {
            self.rank.act(t)
        } else if t <= self.explore_end {
            ((t + self.rank.rank() as u64) % self.n_arms as u64) as usize
        } else if t <= self.comm_end {
            comm_action(
                self.rank.rank(),
                t - self.explore_end - 1,
                self.n_arms,
                self.estimate,
            )
        } else {
            self.committed
                .expect("commit arm is fixed when the last block ends")
        };
        Ok(arm)
    }

    fn observe(&mut self, t: u64, arm: ArmId, outcome: AgentOutcome) -> Result<(), ProtocolError> {
        if t < self.n_agents as u64 {
            self.rank.observe(t, outcome.is_matched());
        }
        if outcome.is_matched() {
            self.counts[arm] += 1;
            self.sums[arm] += outcome.reward();
        } else if t > self.explore_end && t <= self.comm_end {
            let offset = t - self.explore_end - 1;
            let sub_block = (offset / self.n_arms as u64) as usize + 1;
            if self.rank.rank() == sub_block + 1 {
                self.detected[arm] = true;
            }
        }
        if t == self.explore_end {
            self.estimate = self.empirical_best(|_| true);
        }
        if t == self.comm_end {
            let detected = self.detected.clone();
            self.committed = Some(self.empirical_best(|k| !detected[k]));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Greedy defector
// ---------------------------------------------------------------------------

/// The simplest rational defector for deviation experiments: play the
/// lowest-index arm that has never yielded a sample, otherwise the arm with
/// the highest empirical mean (ties to the lowest index). Blocked rounds
/// leave an arm unseen, so the defector keeps trying it.
#[derive(Debug, Clone)]
pub struct GreedyAgent {
    counts: Vec<u64>,
    sums: Vec<f64>,
}

impl GreedyAgent {
    pub fn new(n_arms: usize) -> Self {
        GreedyAgent {
            counts: vec![0; n_arms],
            sums: vec![0.0; n_arms],
        }
    }
}

impl Strategy for GreedyAgent {
    fn act(&mut self, _t: u64) -> Result<ArmId, ProtocolError> {
        if let Some(unseen) = self.counts.iter().position(|&c| c == 0) {
            return Ok(unseen);
        }
        Ok(argmax_lowest(
            (0..self.counts.len()).map(|k| self.sums[k] / self.counts[k] as f64),
        ))
    }

    fn observe(&mut self, _t: u64, arm: ArmId, outcome: AgentOutcome) -> Result<(), ProtocolError> {
        if outcome.is_matched() {
            self.counts[arm] += 1;
            self.sums[arm] += outcome.reward();
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Centralized UCB arbiter
// ---------------------------------------------------------------------------

/// Serially assigns each agent, in rank order, its highest-index arm among
/// the arms not already assigned. Ties break to the lowest arm index.
pub fn serial_assignment(indices: &[Vec<f64>]) -> Vec<ArmId> {
    let n_arms = indices.first().map_or(0, Vec::len);
    let mut taken = vec![false; n_arms];
    indices
        .iter()
        .map(|row| {
            let arm = argmax_lowest(row.iter().enumerate().map(|(k, &v)| {
                if taken[k] {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            }));
            taken[arm] = true;
            arm
        })
        .collect()
}

/// The centralized baseline: every agent truthfully submits its UCB indices
/// to an arbiter each round, the arbiter assigns serially by rank, and no
/// collision ever happens. This is the one policy exempt from the
/// decentralization constraint.
#[derive(Debug, Clone)]
pub struct CentralizedUcb {
    alpha: f64,
    counts: Vec<Vec<u64>>,
    sums: Vec<Vec<f64>>,
}

impl CentralizedUcb {
    pub fn new(n_agents: usize, n_arms: usize, alpha: f64) -> Self {
        CentralizedUcb {
            alpha,
            counts: vec![vec![0; n_arms]; n_agents],
            sums: vec![vec![0.0; n_arms]; n_agents],
        }
    }

    /// The matching for round `t`.
    pub fn assign(&self, t: u64) -> Vec<ArmId> {
        let indices: Vec<Vec<f64>> = self
            .counts
            .iter()
            .zip(&self.sums)
            .map(|(counts, sums)| {
                counts
                    .iter()
                    .zip(sums)
                    .map(|(&c, &s)| {
                        let mu = if c > 0 { s / c as f64 } else { 0.0 };
                        ucb_index(mu, c, t, self.alpha)
                    })
                    .collect()
            })
            .collect();
        serial_assignment(&indices)
    }

    pub fn update(&mut self, agent: usize, arm: ArmId, reward: f64) {
        self.counts[agent][arm] += 1;
        self.sums[agent][arm] += reward;
    }
}
