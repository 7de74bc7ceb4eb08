//! The decentralized UCB-D3 agent.
//!
//! Each agent runs the same state machine against the shared clock:
//!
//! 1. **Rank estimation** (slots `1..N-1`): at slot `t` every still-unmatched
//!    agent proposes to arm `t`; the first slot at which an agent is matched
//!    is its rank, and an agent matched at slot `t'` keeps proposing to arm
//!    `t'` for the rest of the window. An agent never matched has rank `N`.
//! 2. **Regret-minimization block** of phase `i` (`2^(i-1)` slots): UCB play
//!    restricted to the phase's active arm set, collisions ignored. At the
//!    block's end the agent fixes its broadcast estimate: the arm it matched
//!    most often within the block.
//! 3. **Communication block** (`N-1` sub-blocks of `K` slots): in sub-block
//!    `l` the agent ranked `l+1` sweeps all `K` arms round-robin while every
//!    other agent sits on its broadcast estimate. The sweeping agent is
//!    blocked exactly on the arms estimated by higher-ranked agents, so the
//!    blocked arms of its own sub-block are the dominated set to delete.
//! 4. The next phase's active set is all arms minus the arms decoded in this
//!    phase. Deletion restarts from the full arm set each phase, so a
//!    wrongly deleted arm returns as soon as higher-ranked agents stop
//!    broadcasting it.
//!
//! Cumulative match statistics feed the UCB index and include matches from
//! every block (rank estimation and communication included, the latter
//! switchable); the broadcast estimate uses only the current block's counts.

use thiserror::Error;

use crate::env::AgentOutcome;
use crate::phase::{classify_slot, PhaseLayout, Slot};
use crate::ArmId;

/// Lockstep violations: the protocol requires one `act` and one `observe`
/// per slot, in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("clock skew: expected slot {expected}, got {got}")]
    ClockSkew { expected: u64, got: u64 },
}

/// The UCB-alpha index: infinite while the arm has never been matched (so
/// every active arm is tried before any comparison), then
/// `mu_hat + sqrt(2 * alpha * ln(t) / n_matches)`.
pub fn ucb_index(mu_hat: f64, n_matches: u64, t: u64, alpha: f64) -> f64 {
    if n_matches == 0 {
        return f64::INFINITY;
    }
    mu_hat + (2.0 * alpha * (t as f64).ln() / n_matches as f64).sqrt()
}

/// Arm played in the communication block by an agent of 1-based `rank` whose
/// broadcast estimate is `own_estimate`, at the 0-based `slot_in_comm` of
/// the block: the agent ranked `l+1` sweeps arms `0..K` round-robin during
/// sub-block `l = slot_in_comm / n_arms + 1`, everyone else (rank 1
/// included) plays its estimate.
pub fn comm_action(rank: usize, slot_in_comm: u64, n_arms: usize, own_estimate: ArmId) -> ArmId {
    let sub_block = (slot_in_comm / n_arms as u64) as usize + 1;
    if rank == sub_block + 1 {
        (slot_in_comm % n_arms as u64) as usize
    } else {
        own_estimate
    }
}

/// The arm matched most often this block among the active arms; ties break
/// to the lowest index, so a fully blocked block yields the lowest active
/// arm.
pub fn most_matched(block_match_count: &[u64], active: &[bool]) -> ArmId {
    let mut best: Option<(ArmId, u64)> = None;
    for (k, &count) in block_match_count.iter().enumerate() {
        if !active[k] {
            continue;
        }
        match best {
            Some((_, c)) if count <= c => {}
            _ => best = Some((k, count)),
        }
    }
    best.expect("active set is never empty").0
}

/// Rank estimation over the first `N-1` slots, shared by every protocol
/// that needs a rank before it starts.
#[derive(Debug, Clone)]
pub struct RankProtocol {
    n_agents: usize,
    rank: usize,
    known: bool,
}

impl RankProtocol {
    pub fn new(n_agents: usize) -> Self {
        RankProtocol {
            n_agents,
            // Until matched, assume the lowest rank; a single agent knows it
            // is ranked 1 outright.
            rank: n_agents,
            known: n_agents == 1,
        }
    }

    /// Arm to play at rank-estimation slot `t` (1-based, `t < N`).
    pub fn act(&self, t: u64) -> ArmId {
        debug_assert!(t >= 1 && t < self.n_agents as u64);
        if self.known {
            self.rank - 1
        } else {
            (t - 1) as usize
        }
    }

    pub fn observe(&mut self, t: u64, matched: bool) {
        if !self.known && matched {
            self.rank = t as usize;
            self.known = true;
        }
    }

    /// 1-based rank; equal to the true rank once the window has elapsed.
    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Full per-agent UCB-D3 state machine. Drive it with exactly one
/// [`UcbD3Agent::act`] / [`UcbD3Agent::observe`] pair per slot.
#[derive(Debug, Clone)]
pub struct UcbD3Agent {
    n_agents: usize,
    n_arms: usize,
    alpha: f64,
    /// Feed matches observed during communication blocks into the UCB
    /// statistics (the cumulative counts are defined over all time).
    use_comm_samples: bool,

    rank: RankProtocol,
    match_count: Vec<u64>,
    reward_sum: Vec<f64>,
    blocked_rounds: u64,
    /// Matches inside the current phase's regret-minimization block.
    phase_match_count: Vec<u64>,
    active: Vec<bool>,
    /// Broadcast estimate of the current phase, fixed at the RM block's end.
    best_estimate: ArmId,
    /// Arms decoded as dominated during this phase's own sub-block.
    detected: Vec<bool>,
    /// Broadcast estimate of every completed phase.
    broadcast_log: Vec<ArmId>,

    layout: PhaseLayout,
    next_slot: u64,
    awaiting_observe: bool,
}

impl UcbD3Agent {
    pub fn new(n_agents: usize, n_arms: usize, alpha: f64) -> Self {
        Self::with_config(n_agents, n_arms, alpha, true)
    }

    pub fn with_config(n_agents: usize, n_arms: usize, alpha: f64, use_comm_samples: bool) -> Self {
        assert!(n_agents >= 1 && n_arms >= n_agents);
        assert!(alpha >= 2.0, "the index needs alpha >= 2");
        UcbD3Agent {
            n_agents,
            n_arms,
            alpha,
            use_comm_samples,
            rank: RankProtocol::new(n_agents),
            match_count: vec![0; n_arms],
            reward_sum: vec![0.0; n_arms],
            blocked_rounds: 0,
            phase_match_count: vec![0; n_arms],
            active: vec![true; n_arms],
            best_estimate: 0,
            detected: vec![false; n_arms],
            broadcast_log: Vec::new(),
            layout: PhaseLayout::of(1, n_agents, n_arms),
            next_slot: 1,
            awaiting_observe: false,
        }
    }

    /// Chooses the arm for slot `t`.
    pub fn act(&mut self, t: u64) -> Result<ArmId, ProtocolError> {
        if self.awaiting_observe || t != self.next_slot {
            return Err(ProtocolError::ClockSkew {
                expected: self.next_slot,
                got: t,
            });
        }
        self.awaiting_observe = true;
        let arm = match self.slot(t) {
            Slot::RankEstimation => self.rank.act(t),
            Slot::RegretMin { .. } => self.rm_select(t),
            Slot::Comm { offset, .. } => {
                comm_action(self.rank.rank(), offset, self.n_arms, self.best_estimate)
            }
        };
        Ok(arm)
    }

    /// Records the outcome of slot `t`, in which the agent played `arm`.
    pub fn observe(
        &mut self,
        t: u64,
        arm: ArmId,
        outcome: AgentOutcome,
    ) -> Result<(), ProtocolError> {
        if !self.awaiting_observe || t != self.next_slot {
            return Err(ProtocolError::ClockSkew {
                expected: self.next_slot,
                got: t,
            });
        }
        self.awaiting_observe = false;
        self.next_slot = t + 1;

        match self.slot(t) {
            Slot::RankEstimation => {
                self.rank.observe(t, outcome.is_matched());
                self.credit(arm, outcome, true);
            }
            Slot::RegretMin { offset, .. } => {
                self.credit(arm, outcome, true);
                if outcome.is_matched() {
                    self.phase_match_count[arm] += 1;
                }
                if offset + 1 == self.layout.rm_len {
                    self.best_estimate = most_matched(&self.phase_match_count, &self.active);
                    if self.layout.comm_len == 0 {
                        self.finish_phase();
                    }
                }
            }
            Slot::Comm { offset, .. } => {
                self.credit(arm, outcome, self.use_comm_samples);
                let sub_block = (offset / self.n_arms as u64) as usize + 1;
                if self.rank.rank() == sub_block + 1 && !outcome.is_matched() {
                    self.detected[arm] = true;
                }
                if offset + 1 == self.layout.comm_len {
                    self.finish_phase();
                }
            }
        }
        Ok(())
    }

    fn slot(&self, t: u64) -> Slot {
        if t < self.n_agents as u64 {
            return Slot::RankEstimation;
        }
        debug_assert!(t >= self.layout.start && t <= self.layout.end());
        if t <= self.layout.rm_end() {
            Slot::RegretMin {
                phase: self.layout.phase,
                offset: t - self.layout.start,
            }
        } else {
            Slot::Comm {
                phase: self.layout.phase,
                offset: t - self.layout.rm_end() - 1,
            }
        }
    }

    fn credit(&mut self, arm: ArmId, outcome: AgentOutcome, count_match: bool) {
        match outcome {
            AgentOutcome::Matched { reward } if count_match => {
                self.match_count[arm] += 1;
                self.reward_sum[arm] += reward;
            }
            AgentOutcome::Matched { .. } => {}
            AgentOutcome::Blocked => self.blocked_rounds += 1,
        }
    }

    /// UCB-alpha over the active set; ties (including several never-matched
    /// arms) break to the lowest arm index.
    fn rm_select(&self, t: u64) -> ArmId {
        let mut best: Option<(ArmId, f64)> = None;
        for k in 0..self.n_arms {
            if !self.active[k] {
                continue;
            }
            let mu_hat = if self.match_count[k] > 0 {
                self.reward_sum[k] / self.match_count[k] as f64
            } else {
                0.0
            };
            let index = ucb_index(mu_hat, self.match_count[k], t, self.alpha);
            match best {
                Some((_, b)) if index <= b => {}
                _ => best = Some((k, index)),
            }
        }
        best.expect("active set is never empty").0
    }

    /// Closes the phase: log the broadcast, delete the decoded arms from the
    /// full arm set, and reset the per-phase counters.
    fn finish_phase(&mut self) {
        self.broadcast_log.push(self.best_estimate);
        for k in 0..self.n_arms {
            self.active[k] = !self.detected[k];
            self.detected[k] = false;
            self.phase_match_count[k] = 0;
        }
        self.layout = self.layout.next(self.n_agents, self.n_arms);
    }

    /// 1-based rank estimate (exact after the rank-estimation window).
    pub fn rank(&self) -> usize {
        self.rank.rank()
    }

    pub fn active_arms(&self) -> Vec<ArmId> {
        (0..self.n_arms).filter(|&k| self.active[k]).collect()
    }

    /// Broadcast estimate of every completed phase.
    pub fn broadcast_log(&self) -> &[ArmId] {
        &self.broadcast_log
    }

    pub fn match_counts(&self) -> &[u64] {
        &self.match_count
    }

    pub fn blocked_rounds(&self) -> u64 {
        self.blocked_rounds
    }

    /// 1-based index of the phase currently in progress.
    pub fn current_phase(&self) -> u32 {
        self.layout.phase
    }

    /// The phase/block classification this agent uses for slot `t`; exposed
    /// so tests can check that all agents agree with the shared schedule.
    pub fn slot_view(&self, t: u64) -> Slot {
        classify_slot(t, self.n_agents, self.n_arms)
    }
}
