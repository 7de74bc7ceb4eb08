//! One simultaneous round of the market: every agent proposes to one arm,
//! each arm matches its highest-ranked proposer, and matched agents draw a
//! Bernoulli reward while blocked agents earn a deterministic zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market::Instance;
use crate::{AgentId, ArmId};

/// Per-agent outcome of one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentOutcome {
    Matched { reward: f64 },
    Blocked,
}

impl AgentOutcome {
    pub fn is_matched(&self) -> bool {
        matches!(self, AgentOutcome::Matched { .. })
    }

    /// Realized reward; zero when blocked.
    pub fn reward(&self) -> f64 {
        match self {
            AgentOutcome::Matched { reward } => *reward,
            AgentOutcome::Blocked => 0.0,
        }
    }
}

/// Outcome of one simultaneous round: the winner of every arm (the
/// lowest-index proposer, if any) and each agent's matched/blocked result.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundFeedback {
    pub winners: Vec<Option<AgentId>>,
    pub outcomes: Vec<AgentOutcome>,
}

impl RoundFeedback {
    pub fn outcome(&self, agent: AgentId) -> AgentOutcome {
        self.outcomes[agent]
    }
}

/// Resolves one round of proposals: the winner of arm `k` is the
/// lowest-index (highest-ranked) agent proposing to `k`, or `None` when no
/// agent proposes.
pub fn match_outcome(choices: &[ArmId], n_arms: usize) -> Vec<Option<AgentId>> {
    let mut winners = vec![None; n_arms];
    for (agent, &arm) in choices.iter().enumerate() {
        debug_assert!(arm < n_arms, "arm index out of range");
        if winners[arm].is_none() {
            winners[arm] = Some(agent);
        }
    }
    winners
}

/// Seeded reward source with one independent stream per (agent, arm) pair.
///
/// The n-th matched draw of a given pair is a fixed function of the seed
/// alone, no matter how draws to other pairs interleave. Two runs with the
/// same seed therefore see identical reward tables even when the algorithms
/// under test match in different orders — paired comparisons share their
/// random numbers.
#[derive(Debug, Clone)]
pub struct RewardSampler {
    streams: Vec<ChaCha8Rng>,
    n_arms: usize,
}

impl RewardSampler {
    pub fn new(seed: u64, n_agents: usize, n_arms: usize) -> Self {
        let streams = (0..n_agents * n_arms)
            .map(|pair| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(pair as u64);
                rng
            })
            .collect();
        RewardSampler { streams, n_arms }
    }

    /// Draws one Bernoulli(`mean`) reward from the (agent, arm) stream.
    pub fn draw(&mut self, agent: AgentId, arm: ArmId, mean: f64) -> f64 {
        let u: f64 = self.streams[agent * self.n_arms + arm].random();
        if u < mean {
            1.0
        } else {
            0.0
        }
    }
}

/// Executes one simultaneous round: resolves proposals, samples rewards for
/// matched agents, and reports `Blocked` (reward zero) to the rest.
pub fn step(inst: &Instance, choices: &[ArmId], sampler: &mut RewardSampler) -> RoundFeedback {
    debug_assert_eq!(choices.len(), inst.n_agents());
    let winners = match_outcome(choices, inst.n_arms());
    let outcomes = choices
        .iter()
        .enumerate()
        .map(|(agent, &arm)| {
            if winners[arm] == Some(agent) {
                let reward = sampler.draw(agent, arm, inst.mean(agent, arm));
                AgentOutcome::Matched { reward }
            } else {
                AgentOutcome::Blocked
            }
        })
        .collect();
    RoundFeedback { winners, outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Instance;

    #[test]
    fn contested_arm_goes_to_the_highest_rank() {
        // Agents 0 and 1 both propose to arm 1; agent 2 takes arm 0.
        let winners = match_outcome(&[1, 1, 0], 2);
        assert_eq!(winners, vec![Some(2), Some(0)]);
    }

    #[test]
    fn distinct_choices_all_match() {
        let inst = Instance::from_means(vec![
            vec![0.2, 0.5, 0.8],
            vec![0.3, 0.6, 0.9],
            vec![0.4, 0.7, 0.1],
        ])
        .unwrap();
        let mut sampler = RewardSampler::new(1, 3, 3);
        let fb = step(&inst, &[2, 0, 1], &mut sampler);
        assert!(fb.outcomes.iter().all(|o| o.is_matched()));
    }

    #[test]
    fn full_contention_blocks_everyone_below_the_top() {
        let winners = match_outcome(&[0; 6], 3);
        assert_eq!(winners[0], Some(0));
        let inst = Instance::raw(vec![vec![0.5; 6]; 6]).unwrap();
        let mut sampler = RewardSampler::new(9, 6, 6);
        let fb = step(&inst, &[0; 6], &mut sampler);
        assert!(fb.outcome(0).is_matched());
        for agent in 1..6 {
            assert_eq!(fb.outcome(agent), AgentOutcome::Blocked);
        }
    }

    #[test]
    fn degenerate_means_are_deterministic() {
        let inst = Instance::raw(vec![vec![1.0, 0.0]]).unwrap();
        let mut sampler = RewardSampler::new(1234, 1, 2);
        for _ in 0..50 {
            assert_eq!(step(&inst, &[0], &mut sampler).outcome(0).reward(), 1.0);
            assert_eq!(step(&inst, &[1], &mut sampler).outcome(0).reward(), 0.0);
        }
    }

    #[test]
    fn blocked_agents_earn_zero_regardless_of_the_stream() {
        let inst = Instance::raw(vec![vec![0.9, 0.8], vec![0.9, 0.8]]).unwrap();
        for seed in 0..20 {
            let mut sampler = RewardSampler::new(seed, 2, 2);
            let fb = step(&inst, &[0, 0], &mut sampler);
            assert_eq!(fb.outcome(1), AgentOutcome::Blocked);
            assert_eq!(fb.outcome(1).reward(), 0.0);
        }
    }

    #[test]
    fn streams_are_independent_of_interleaving() {
        // Draw pair (0, 0) five times straight, then interleave with other
        // pairs; the (0, 0) sequence must not change.
        let mut a = RewardSampler::new(77, 2, 2);
        let straight: Vec<f64> = (0..5).map(|_| a.draw(0, 0, 0.5)).collect();

        let mut b = RewardSampler::new(77, 2, 2);
        let mut interleaved = Vec::new();
        for i in 0..5 {
            interleaved.push(b.draw(0, 0, 0.5));
            b.draw(1, 0, 0.5);
            b.draw(0, 1, 0.5);
            if i % 2 == 0 {
                b.draw(1, 1, 0.5);
            }
        }
        assert_eq!(straight, interleaved);
    }
}
