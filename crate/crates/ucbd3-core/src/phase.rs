//! The phase and block schedule every agent derives from the global clock.
//!
//! Slots `1..N-1` are reserved for rank estimation. Phase `i >= 1` starts at
//! `S_i = 2^(i-1) + (i-1)(N-1)K + N - 1` and consists of a
//! regret-minimization block of `2^(i-1)` slots followed by a communication
//! block of `(N-1)K` slots, itself split into `N-1` sub-blocks of `K`
//! contiguous slots. Because the layout is a pure function of `(t, N, K)`,
//! all agents agree on the current phase and block at every slot without
//! exchanging any messages.

/// Layout of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseLayout {
    /// 1-based phase index.
    pub phase: u32,
    /// First slot of the phase (start of its regret-minimization block).
    pub start: u64,
    /// Length of the regret-minimization block, `2^(phase-1)`.
    pub rm_len: u64,
    /// Length of the communication block, `(N-1)K`.
    pub comm_len: u64,
}

impl PhaseLayout {
    pub fn of(phase: u32, n_agents: usize, n_arms: usize) -> Self {
        debug_assert!(phase >= 1);
        PhaseLayout {
            phase,
            start: phase_start(phase, n_agents, n_arms),
            rm_len: 1u64 << (phase - 1),
            comm_len: comm_len(n_agents, n_arms),
        }
    }

    /// Last slot of the regret-minimization block.
    pub fn rm_end(&self) -> u64 {
        self.start + self.rm_len - 1
    }

    /// Last slot of the phase.
    pub fn end(&self) -> u64 {
        self.start + self.rm_len + self.comm_len - 1
    }

    pub fn next(&self, n_agents: usize, n_arms: usize) -> Self {
        PhaseLayout::of(self.phase + 1, n_agents, n_arms)
    }
}

fn comm_len(n_agents: usize, n_arms: usize) -> u64 {
    (n_agents as u64 - 1) * n_arms as u64
}

/// First slot of phase `i`: `2^(i-1) + (i-1)(N-1)K + N - 1`.
pub fn phase_start(phase: u32, n_agents: usize, n_arms: usize) -> u64 {
    debug_assert!(phase >= 1);
    (1u64 << (phase - 1)) + (phase as u64 - 1) * comm_len(n_agents, n_arms) + n_agents as u64 - 1
}

/// Classification of one global slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// One of the first `N-1` slots.
    RankEstimation,
    /// Slot `offset` (0-based) of phase `phase`'s regret-minimization block.
    RegretMin { phase: u32, offset: u64 },
    /// Slot `offset` (0-based) of phase `phase`'s communication block.
    Comm { phase: u32, offset: u64 },
}

/// Maps slot `t >= 1` to its block. Pure in `(t, N, K)`, hence identical for
/// all agents.
pub fn classify_slot(t: u64, n_agents: usize, n_arms: usize) -> Slot {
    debug_assert!(t >= 1);
    if t < n_agents as u64 {
        return Slot::RankEstimation;
    }
    let mut layout = PhaseLayout::of(1, n_agents, n_arms);
    while t > layout.end() {
        layout = layout.next(n_agents, n_arms);
    }
    if t <= layout.rm_end() {
        Slot::RegretMin {
            phase: layout.phase,
            offset: t - layout.start,
        }
    } else {
        Slot::Comm {
            phase: layout.phase,
            offset: t - layout.rm_end() - 1,
        }
    }
}

/// Number of phases fully completed (communication block included) within
/// the first `horizon` slots.
pub fn completed_phases(horizon: u64, n_agents: usize, n_arms: usize) -> u32 {
    let mut done = 0;
    let mut layout = PhaseLayout::of(1, n_agents, n_arms);
    while layout.end() <= horizon {
        done += 1;
        layout = layout.next(n_agents, n_arms);
    }
    done
}
