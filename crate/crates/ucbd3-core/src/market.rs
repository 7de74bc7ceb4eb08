//! Market model: reward matrices, the unique stable matching, reward gaps,
//! and the seeded instance generators used by the experiment suite.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{AgentId, ArmId};

/// Validation failures for a market instance.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstanceError {
    #[error("invalid market shape: {0}")]
    ShapeViolation(String),
    #[error("mean for agent {agent}, arm {arm} is {value}; means must lie strictly inside (0, 1)")]
    RangeViolation {
        agent: AgentId,
        arm: ArmId,
        value: f64,
    },
    #[error("agent {agent} has two arms with identical means")]
    DistinctnessViolation { agent: AgentId },
}

/// A market instance: `N` agents, `K >= N` arms, and the mean reward
/// `means[j][k]` agent `j` earns when matched with arm `k`.
///
/// A fully validated instance has all means strictly inside `(0, 1)` and
/// pairwise-distinct means within each row, which guarantees a unique stable
/// matching and strictly positive non-dominated gaps. [`Instance::raw`]
/// skips the range and distinctness checks for boundary-mean experiments
/// (e.g. a deterministic arm with mean exactly 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "InstanceRepr")]
pub struct Instance {
    n_agents: usize,
    n_arms: usize,
    means: Vec<Vec<f64>>,
}

/// On-disk shape of an instance file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceRepr {
    n_agents: usize,
    n_arms: usize,
    means: Vec<Vec<f64>>,
}

impl From<Instance> for InstanceRepr {
    fn from(inst: Instance) -> Self {
        InstanceRepr {
            n_agents: inst.n_agents,
            n_arms: inst.n_arms,
            means: inst.means,
        }
    }
}

impl<'de> Deserialize<'de> for Instance {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let repr = InstanceRepr::deserialize(deserializer)?;
        let inst = Instance::raw(repr.means).map_err(serde::de::Error::custom)?;
        if inst.n_agents != repr.n_agents || inst.n_arms != repr.n_arms {
            return Err(serde::de::Error::custom(format!(
                "declared {}x{} but means matrix is {}x{}",
                repr.n_agents, repr.n_arms, inst.n_agents, inst.n_arms
            )));
        }
        Ok(inst)
    }
}

impl Instance {
    /// Builds a fully validated instance. Fails unless the matrix is
    /// `n_agents x n_arms` with `n_arms >= n_agents >= 1`, every mean lies in
    /// the open interval `(0, 1)`, and each row's means are pairwise
    /// distinct.
    pub fn validated(
        n_agents: usize,
        n_arms: usize,
        means: Vec<Vec<f64>>,
    ) -> Result<Self, InstanceError> {
        let inst = Self::raw(means)?;
        if inst.n_agents != n_agents || inst.n_arms != n_arms {
            return Err(InstanceError::ShapeViolation(format!(
                "declared {}x{} but means matrix is {}x{}",
                n_agents, n_arms, inst.n_agents, inst.n_arms
            )));
        }
        inst.check_strict()?;
        Ok(inst)
    }

    /// Like [`Instance::validated`] with the shape taken from the matrix.
    pub fn from_means(means: Vec<Vec<f64>>) -> Result<Self, InstanceError> {
        let inst = Self::raw(means)?;
        inst.check_strict()?;
        Ok(inst)
    }

    /// Builds an instance with shape and finiteness checks only. Means may
    /// sit on or outside the `(0, 1)` boundary and rows may contain ties;
    /// callers are responsible for any degeneracy that follows.
    pub fn raw(means: Vec<Vec<f64>>) -> Result<Self, InstanceError> {
        let n_agents = means.len();
        if n_agents == 0 {
            return Err(InstanceError::ShapeViolation("no agents".into()));
        }
        let n_arms = means[0].len();
        for (j, row) in means.iter().enumerate() {
            if row.len() != n_arms {
                return Err(InstanceError::ShapeViolation(format!(
                    "row {} has {} entries, expected {}",
                    j,
                    row.len(),
                    n_arms
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(InstanceError::RangeViolation {
                        agent: j,
                        arm: k,
                        value: v,
                    });
                }
            }
        }
        if n_arms < n_agents {
            return Err(InstanceError::ShapeViolation(format!(
                "{} arms for {} agents; need at least as many arms as agents",
                n_arms, n_agents
            )));
        }
        Ok(Instance {
            n_agents,
            n_arms,
            means,
        })
    }

    /// Checks the strict invariants (open-interval means, row distinctness)
    /// on top of the shape checks already guaranteed by construction.
    pub fn check_strict(&self) -> Result<(), InstanceError> {
        for (j, row) in self.means.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if !(v > 0.0 && v < 1.0) {
                    return Err(InstanceError::RangeViolation {
                        agent: j,
                        arm: k,
                        value: v,
                    });
                }
            }
            for a in 0..row.len() {
                for b in (a + 1)..row.len() {
                    if row[a] == row[b] {
                        return Err(InstanceError::DistinctnessViolation { agent: j });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    /// Mean reward of agent `j` on arm `k`.
    pub fn mean(&self, agent: AgentId, arm: ArmId) -> f64 {
        self.means[agent][arm]
    }

    /// One agent's row of arm means.
    pub fn row(&self, agent: AgentId) -> &[f64] {
        &self.means[agent]
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }
}

/// The unique stable matching: `partner(j)` is the arm agent `j` holds in
/// equilibrium. Agent 0 takes its best arm; each later agent takes its best
/// arm among those not already taken by higher-ranked agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StableMatch {
    partner: Vec<ArmId>,
}

impl StableMatch {
    /// Stable partner arm of `agent`.
    pub fn partner(&self, agent: AgentId) -> ArmId {
        self.partner[agent]
    }

    pub fn partners(&self) -> &[ArmId] {
        &self.partner
    }

    /// Arms held by agents ranked strictly above `agent` — the arms that are
    /// dominated from `agent`'s point of view.
    pub fn dominated(&self, agent: AgentId) -> &[ArmId] {
        &self.partner[..agent]
    }

    /// True when `arm` is not the stable partner of any agent ranked above
    /// `agent`.
    pub fn is_non_dominated(&self, agent: AgentId, arm: ArmId) -> bool {
        !self.partner[..agent].contains(&arm)
    }
}

/// Computes the unique stable matching by serial selection in rank order.
/// Ties within a row (possible only on unvalidated instances) resolve to
/// the lowest arm index.
pub fn stable_match(inst: &Instance) -> StableMatch {
    let mut taken = vec![false; inst.n_arms()];
    let mut partner = Vec::with_capacity(inst.n_agents());
    for j in 0..inst.n_agents() {
        let mut best: Option<ArmId> = None;
        for k in 0..inst.n_arms() {
            if taken[k] {
                continue;
            }
            match best {
                Some(b) if inst.mean(j, k) <= inst.mean(j, b) => {}
                _ => best = Some(k),
            }
        }
        let k = best.expect("n_arms >= n_agents leaves an arm for every agent");
        taken[k] = true;
        partner.push(k);
    }
    StableMatch { partner }
}

/// Reward gaps relative to each agent's stable partner.
///
/// `gap(j, k)` is `mean(j, partner(j)) - mean(j, k)`; it is zero exactly on
/// the partner arm and may be negative on dominated arms. `per_agent_min(j)`
/// ranges over all non-partner arms, while `global_min` ranges only over
/// non-dominated non-partner arms (and is therefore strictly positive on
/// every validated instance). Minima over empty sets are `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTable {
    gap: Vec<Vec<f64>>,
    per_agent_min: Vec<f64>,
    global_min: f64,
}

impl GapTable {
    pub fn gap(&self, agent: AgentId, arm: ArmId) -> f64 {
        self.gap[agent][arm]
    }

    /// Smallest gap of `agent` over all arms other than its partner.
    pub fn per_agent_min(&self, agent: AgentId) -> f64 {
        self.per_agent_min[agent]
    }

    /// Smallest non-dominated gap across all agents.
    pub fn global_min(&self) -> f64 {
        self.global_min
    }
}

/// Builds the gap table for `inst` under its stable matching `sm`.
pub fn gaps(inst: &Instance, sm: &StableMatch) -> GapTable {
    let mut gap = Vec::with_capacity(inst.n_agents());
    let mut per_agent_min = Vec::with_capacity(inst.n_agents());
    let mut global_min = f64::INFINITY;
    for j in 0..inst.n_agents() {
        let star = inst.mean(j, sm.partner(j));
        let row: Vec<f64> = (0..inst.n_arms()).map(|k| star - inst.mean(j, k)).collect();
        let mut agent_min = f64::INFINITY;
        for (k, &g) in row.iter().enumerate() {
            if k == sm.partner(j) {
                continue;
            }
            agent_min = agent_min.min(g);
            if sm.is_non_dominated(j, k) {
                global_min = global_min.min(g);
            }
        }
        gap.push(row);
        per_agent_min.push(agent_min);
    }
    GapTable {
        gap,
        per_agent_min,
        global_min,
    }
}

/// True when every agent's stable partner is also its best arm overall, so
/// the stable matching is simultaneously optimal for everyone.
pub fn classify_osb(inst: &Instance, sm: &StableMatch) -> bool {
    (0..inst.n_agents()).all(|j| {
        let star = inst.mean(j, sm.partner(j));
        (0..inst.n_arms()).all(|k| k == sm.partner(j) || inst.mean(j, k) < star)
    })
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws one entry uniformly from `(lo, hi)`, redrawing boundary hits and
/// values already present in `row` so rows stay strictly distinct.
fn draw_distinct(rng: &mut ChaCha8Rng, lo: f64, hi: f64, row: &[f64]) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo && row.iter().all(|&u| u != v) {
            return v;
        }
    }
}

/// Generates an optimally-stable instance: a uniformly random injection
/// plants one arm with mean `opt_mean` per agent, every other mean is drawn
/// i.i.d. uniform from `sub_range`. The planted injection is the stable
/// matching and every agent's planted arm is its overall best.
pub fn gen_osb(
    n_agents: usize,
    n_arms: usize,
    seed: u64,
    opt_mean: f64,
    sub_range: (f64, f64),
) -> Instance {
    assert!(n_agents >= 1 && n_arms >= n_agents, "need K >= N >= 1");
    assert!(
        sub_range.0 >= 0.0 && sub_range.1 <= opt_mean && opt_mean < 1.0,
        "sub-optimal range must sit below the planted mean"
    );
    let mut rng = rng_for(seed);
    let mut arms: Vec<ArmId> = (0..n_arms).collect();
    arms.shuffle(&mut rng);
    let planted = &arms[..n_agents];

    let mut means = vec![vec![0.0; n_arms]; n_agents];
    for j in 0..n_agents {
        means[j][planted[j]] = opt_mean;
        for k in 0..n_arms {
            if k == planted[j] {
                continue;
            }
            let v = draw_distinct(&mut rng, sub_range.0, sub_range.1, &means[j]);
            means[j][k] = v;
        }
    }
    Instance {
        n_agents,
        n_arms,
        means,
    }
}

/// [`gen_osb`] with the reference parameters: planted mean `0.9`,
/// sub-optimal means uniform on `[0, 0.8]`.
pub fn gen_osb_default(n_agents: usize, n_arms: usize, seed: u64) -> Instance {
    gen_osb(n_agents, n_arms, seed, 0.9, (0.0, 0.8))
}

/// Generates a (generally not optimally-stable) instance in which every
/// agent's row is an independent random permutation of the equally spaced
/// grid `0.1, 0.1 + 0.8/(K-1), ..., 0.9`.
pub fn gen_spaced(n_agents: usize, n_arms: usize, seed: u64) -> Instance {
    assert!(n_agents >= 1 && n_arms >= n_agents, "need K >= N >= 1");
    assert!(n_arms >= 2, "the spaced grid needs at least two arms");
    let mut rng = rng_for(seed);
    let step = 0.8 / (n_arms - 1) as f64;
    let mut means = vec![vec![0.0; n_arms]; n_agents];
    for row in means.iter_mut() {
        let mut perm: Vec<ArmId> = (0..n_arms).collect();
        perm.shuffle(&mut rng);
        for (level, &arm) in perm.iter().enumerate() {
            row[arm] = 0.1 + level as f64 * step;
        }
    }
    Instance {
        n_agents,
        n_arms,
        means,
    }
}

/// Generates the hard family instance targeting the agent with 1-based rank
/// `target_rank`: agents ranked above the target have their own arm at mean
/// `1/2` and every other arm at `1/2 - delta`; the target agent has its own
/// arm at `1/2` and every other arm at `1/4`; remaining agents get distinct
/// means below `1/4` with their largest on their own arm, keeping the
/// instance optimally stable.
///
/// Rows of agents above the target intentionally contain tied means, so the
/// result does not pass [`Instance::check_strict`]; the stable matching is
/// still the identity assignment.
pub fn gen_hard_lb(
    target_rank: usize,
    n_agents: usize,
    n_arms: usize,
    delta: f64,
    seed: u64,
) -> Instance {
    assert!(
        2 <= target_rank && target_rank <= n_agents && n_agents <= n_arms,
        "need 2 <= target rank <= N <= K"
    );
    assert!(delta > 0.0 && delta < 0.25, "need 0 < delta < 1/4");
    let mut rng = rng_for(seed);
    let mut means = vec![vec![0.0; n_arms]; n_agents];
    for j in 0..n_agents {
        let rank = j + 1;
        if rank < target_rank {
            for k in 0..n_arms {
                means[j][k] = if k == j { 0.5 } else { 0.5 - delta };
            }
        } else if rank == target_rank {
            for k in 0..n_arms {
                means[j][k] = if k == j { 0.5 } else { 0.25 };
            }
        } else {
            // Filler agent: distinct means in (0.01, 0.24), largest on its
            // own arm so stability stays optimal.
            let mut vals = Vec::with_capacity(n_arms);
            for _ in 0..n_arms {
                vals.push(draw_distinct(&mut rng, 0.01, 0.24, &vals));
            }
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            means[j][j] = vals[0];
            let mut next = 1;
            for k in 0..n_arms {
                if k != j {
                    means[j][k] = vals[next];
                    next += 1;
                }
            }
        }
    }
    Instance {
        n_agents,
        n_arms,
        means,
    }
}
