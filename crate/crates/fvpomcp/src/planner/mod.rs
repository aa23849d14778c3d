//! Online POMCP-style planners over a generative model.
//!
//! All three planners share the same skeleton: run a budget of simulations
//! from the current root belief (root sampling), pick in-tree joint actions by
//! maximizing factored upper confidence bounds through variable elimination,
//! back up the observed return into per-action statistics, and finally act
//! greedily on the mean values. They differ only in how statistics are keyed:
//! per joint action ([`FlatPomcp`]), per component at each joint-history node
//! ([`FactoredStatsPomcp`]), or per component in separate local-history trees
//! ([`FactoredTreesPomcp`]).
//!
//! A planner consumes randomness from two independent streams: one for
//! simulations (root draws, model sampling, rollouts, exploration
//! tie-breaking) and one for belief maintenance (rejection resampling,
//! initial-belief resets). Keeping the streams apart means planners that do
//! different amounts of belief work stay comparable simulation-for-simulation
//! under a shared seed.

mod fs;
mod ft;
mod pomcp;

pub use fs::FactoredStatsPomcp;
pub use ft::FactoredTreesPomcp;
pub use pomcp::FlatPomcp;

use crate::graph::GraphError;
use crate::model::{GenerativeModel, JointAction, JointObservation, ModelError, ProblemSpec};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(
        "root belief is empty; advance the root so the fallback chain \
         (rejection resampling, then initial-belief reset) can rebuild it"
    )]
    EmptyBelief,
    #[error("episode horizon already reached")]
    EpisodeOver,
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Outcome of advancing the root after executing an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvanceStatus {
    /// Moved into an existing child whose particle filter became the belief.
    Advanced,
    /// The child was missing or underfilled; the belief was rebuilt by
    /// rejection resampling against the realized observation.
    Resampled,
    /// Resampling produced nothing; the belief was reset to the initial
    /// distribution. The caller may want to act randomly for the next step.
    ResetToInitial,
    /// The episode horizon has been reached; there is nothing left to plan.
    EpisodeEnd,
}

/// Counters the harness folds into its per-episode CSV rows.
#[derive(Debug, Default, Clone)]
pub struct Diagnostics {
    pub simulations: u64,
    /// Advance steps that engaged the rejection-resampling fallback.
    pub fallback_resamples: u64,
    /// Advance steps that fell all the way back to the initial belief.
    pub belief_resets: u64,
    /// Final selections that found no visited action and acted uniformly.
    pub greedy_fallbacks: u64,
    /// Factored-trees only: local trees reset because their child was missing.
    pub tree_resets: u64,
}

impl Diagnostics {
    /// Total fallback events, the "fallbacks" CSV column.
    pub fn fallbacks(&self) -> u64 {
        self.fallback_resamples + self.belief_resets
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Simulations per decision.
    pub num_simulations: u32,
    /// UCB exploration constant; defaults to the domain's reward range.
    pub exploration_c: Option<f64>,
    /// Planning horizon; defaults to the problem horizon.
    pub horizon: Option<usize>,
    /// Defaults to the problem discount.
    pub discount: Option<f64>,
    /// Simulations also stop once `discount^depth` falls below this.
    pub precision_epsilon: f64,
    /// Initial mean value of unvisited actions.
    pub v_init: f64,
    pub seed: u64,
    /// Particle count targeted by belief resets and resampling; defaults to
    /// `num_simulations`.
    pub target_particles: Option<usize>,
    /// Minimum child particles required to advance without resampling.
    pub min_particles: usize,
    /// Rejection resampling tries at most `factor * target` simulations.
    pub resample_budget_factor: usize,
    /// Additional cap on rollout length, on top of the horizon.
    pub rollout_depth_cap: Option<usize>,
    /// Refuse flat planning when |A| exceeds this.
    pub enumeration_cap: u64,
    /// Cap on intermediate variable-elimination tables.
    pub ve_max_entries: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            num_simulations: 512,
            exploration_c: None,
            horizon: None,
            discount: None,
            precision_epsilon: 1e-3,
            v_init: 0.0,
            seed: 0,
            target_particles: None,
            min_particles: 1,
            resample_budget_factor: 10,
            rollout_depth_cap: None,
            enumeration_cap: crate::model::DEFAULT_ENUMERATION_CAP,
            ve_max_entries: 10_000_000,
        }
    }
}

impl PlannerConfig {
    pub fn with_simulations(mut self, n: u32) -> Self {
        self.num_simulations = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn resolve(&self, spec: &ProblemSpec) -> Result<Resolved, PlanError> {
        if self.num_simulations == 0 {
            return Err(PlanError::InvalidConfig("num_simulations must be >= 1".into()));
        }
        if self.min_particles == 0 || self.resample_budget_factor == 0 {
            return Err(PlanError::InvalidConfig(
                "min_particles and resample_budget_factor must be >= 1".into(),
            ));
        }
        if !(self.precision_epsilon > 0.0) {
            return Err(PlanError::InvalidConfig("precision_epsilon must be positive".into()));
        }
        let c = self.exploration_c.unwrap_or_else(|| {
            let (lo, hi) = spec.reward_bounds();
            hi - lo
        });
        if !(c >= 0.0) {
            return Err(PlanError::InvalidConfig(format!("exploration constant {c} is negative")));
        }
        let discount = self.discount.unwrap_or_else(|| spec.discount());
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(PlanError::InvalidConfig(format!("discount {discount} not in (0, 1]")));
        }
        // smallest depth d with discount^d < epsilon
        let depth_bound = if discount >= 1.0 {
            usize::MAX
        } else {
            let mut d = 0usize;
            let mut g = 1.0f64;
            while g >= self.precision_epsilon && d < 1_000_000 {
                g *= discount;
                d += 1;
            }
            d
        };
        let target = self.target_particles.unwrap_or(self.num_simulations as usize).max(1);
        Ok(Resolved {
            num_simulations: self.num_simulations,
            c,
            horizon: self.horizon.unwrap_or_else(|| spec.horizon()),
            discount,
            depth_bound,
            v_init: self.v_init,
            target_particles: target,
            min_particles: self.min_particles,
            resample_budget: self.resample_budget_factor.saturating_mul(target),
            rollout_depth_cap: self.rollout_depth_cap,
            ve_max_entries: self.ve_max_entries,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Resolved {
    pub num_simulations: u32,
    pub c: f64,
    pub horizon: usize,
    pub discount: f64,
    pub depth_bound: usize,
    pub v_init: f64,
    pub target_particles: usize,
    pub min_particles: usize,
    pub resample_budget: usize,
    pub rollout_depth_cap: Option<usize>,
    pub ve_max_entries: u64,
}

impl Resolved {
    /// Depth cutoff for one decision: whatever fires first of the remaining
    /// horizon and the discount precision bound.
    pub fn cutoff(&self, steps_executed: usize) -> usize {
        self.horizon.saturating_sub(steps_executed).min(self.depth_bound)
    }
}

/// The planner interface the experiment harness drives.
pub trait OnlinePlanner {
    fn plan(&mut self) -> Result<JointAction, PlanError>;

    fn advance_root(
        &mut self,
        action: &JointAction,
        obs: &JointObservation,
    ) -> Result<AdvanceStatus, PlanError>;

    fn diagnostics(&self) -> &Diagnostics;

    fn last_advance(&self) -> Option<AdvanceStatus>;
}

pub(crate) fn split_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let sim = ChaCha8Rng::seed_from_u64(seed);
    let advance = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    (sim, advance)
}

/// Random joint actions until the cutoff, accumulating discounted reward.
/// Touches no tree statistics.
pub(crate) fn rollout<G: GenerativeModel>(
    model: &G,
    rng: &mut ChaCha8Rng,
    mut state: G::State,
    depth: usize,
    cutoff: usize,
    discount: f64,
    depth_cap: Option<usize>,
) -> Result<f64, ModelError> {
    let num_actions = model.spec().num_joint_actions();
    let mut ret = 0.0;
    let mut weight = 1.0;
    let mut d = depth;
    while d < cutoff && depth_cap.map_or(true, |cap| d - depth < cap) {
        let flat = crate::graph::pick_uniform(rng, num_actions as usize) as u64;
        let action = model.spec().joint_action_from_flat(flat);
        let step = model.step(&state, &action, rng)?;
        ret += weight * step.reward;
        if step.terminal {
            break;
        }
        state = step.next_state;
        weight *= discount;
        d += 1;
    }
    Ok(ret)
}

/// Simulate one step forward from states of `source`, keeping successors
/// whose sampled observation matches the realized one. Tries at most
/// `budget` simulations or until `target` particles are collected.
pub(crate) fn rejection_resample<G: GenerativeModel>(
    model: &G,
    rng: &mut ChaCha8Rng,
    source: &[G::State],
    action: &JointAction,
    obs_flat: u64,
    target: usize,
    budget: usize,
) -> Result<Vec<G::State>, ModelError> {
    let mut kept = Vec::new();
    if source.is_empty() {
        return Ok(kept);
    }
    for _ in 0..budget {
        if kept.len() >= target {
            break;
        }
        let state = &source[crate::graph::pick_uniform(rng, source.len())];
        let step = model.step(state, action, rng)?;
        if step.observation.flat() == obs_flat {
            kept.push(step.next_state);
        }
    }
    Ok(kept)
}

pub(crate) fn draw_initial_belief<G: GenerativeModel>(
    model: &G,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Vec<G::State> {
    (0..count).map(|_| model.sample_initial_state(rng)).collect()
}

pub(crate) fn uniform_action(spec: &ProblemSpec, rng: &mut dyn RngCore) -> JointAction {
    let flat = crate::graph::pick_uniform(rng, spec.num_joint_actions() as usize) as u64;
    spec.joint_action_from_flat(flat)
}

/// Uniform random action selection; the baseline "planner".
pub struct RandomPlanner {
    spec: ProblemSpec,
    rng: ChaCha8Rng,
    horizon: usize,
    steps_executed: usize,
    diag: Diagnostics,
    last_advance: Option<AdvanceStatus>,
}

impl RandomPlanner {
    pub fn new(spec: ProblemSpec, seed: u64) -> Self {
        let horizon = spec.horizon();
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            horizon,
            steps_executed: 0,
            diag: Diagnostics::default(),
            last_advance: None,
        }
    }
}

impl OnlinePlanner for RandomPlanner {
    fn plan(&mut self) -> Result<JointAction, PlanError> {
        if self.steps_executed >= self.horizon {
            return Err(PlanError::EpisodeOver);
        }
        Ok(uniform_action(&self.spec, &mut self.rng))
    }

    fn advance_root(
        &mut self,
        _action: &JointAction,
        _obs: &JointObservation,
    ) -> Result<AdvanceStatus, PlanError> {
        self.steps_executed += 1;
        let status = if self.steps_executed >= self.horizon {
            AdvanceStatus::EpisodeEnd
        } else {
            AdvanceStatus::Advanced
        };
        self.last_advance = Some(status);
        Ok(status)
    }

    fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    fn last_advance(&self) -> Option<AdvanceStatus> {
        self.last_advance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::toy::TabularChain;

    #[test]
    fn rollout_examples() {
        let chain = TabularChain::degenerate(3);
        let (mut rng, _) = split_streams(1);
        // depth already at the cutoff: no reward collected
        let v = rollout(&chain, &mut rng, 0, 3, 3, 1.0, None).unwrap();
        assert_eq!(v, 0.0);
        // the only policy collects reward 1 per step for 3 steps
        let v = rollout(&chain, &mut rng, 0, 0, 3, 1.0, None).unwrap();
        assert_eq!(v, 3.0);

        let zero = TabularChain::zero_reward(vec![2, 2], 4);
        for seed in 0..5 {
            let (mut rng, _) = split_streams(seed);
            let v = rollout(&zero, &mut rng, 0, 0, 4, 1.0, None).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn rollout_respects_depth_cap() {
        let chain = TabularChain::degenerate(10);
        let (mut rng, _) = split_streams(2);
        let v = rollout(&chain, &mut rng, 0, 0, 10, 1.0, Some(4)).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn rollout_discounts_rewards() {
        let chain = TabularChain::degenerate(3);
        let (mut rng, _) = split_streams(3);
        let v = rollout(&chain, &mut rng, 0, 0, 3, 0.5, None).unwrap();
        assert_eq!(v, 1.0 + 0.5 + 0.25);
    }

    #[test]
    fn config_resolution() {
        let chain = TabularChain::degenerate(5);
        let cfg = PlannerConfig::default();
        let res = cfg.resolve(chain.spec()).unwrap();
        assert_eq!(res.horizon, 5);
        assert_eq!(res.discount, 1.0);
        assert_eq!(res.c, 1.0 - 1.0); // reward range of the degenerate chain
        assert_eq!(res.depth_bound, usize::MAX);
        assert_eq!(res.cutoff(2), 3);

        let cfg = PlannerConfig {
            discount: Some(0.5),
            precision_epsilon: 0.1,
            ..PlannerConfig::default()
        };
        let res = cfg.resolve(chain.spec()).unwrap();
        // 0.5^4 = 0.0625 < 0.1: simulations stop four steps out
        assert_eq!(res.depth_bound, 4);
        assert_eq!(res.cutoff(0), 4);

        let bad = PlannerConfig { num_simulations: 0, ..PlannerConfig::default() };
        assert!(bad.resolve(chain.spec()).is_err());
        let bad = PlannerConfig { exploration_c: Some(-1.0), ..PlannerConfig::default() };
        assert!(bad.resolve(chain.spec()).is_err());
    }

    #[test]
    fn random_planner_is_seeded_and_legal() {
        let chain = TabularChain::zero_reward(vec![3, 3], 4);
        let mut a = RandomPlanner::new(chain.spec().clone(), 9);
        let mut b = RandomPlanner::new(chain.spec().clone(), 9);
        for _ in 0..4 {
            let x = a.plan().unwrap();
            let y = b.plan().unwrap();
            assert_eq!(x, y);
            assert!(x.flat() < 9);
            let z = crate::model::JointObservation::from_flat(0, chain.spec().obs_counts());
            a.advance_root(&x, &z).unwrap();
            b.advance_root(&y, &z).unwrap();
        }
        assert!(a.plan().is_err(), "past the horizon");
    }
}
