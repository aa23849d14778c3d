//! Problem description, joint action/observation indexing, histories,
//! coordination-graph structure and the generative-model contract.
//!
//! Joint actions and observations use mixed-radix flat indices with agent 0
//! most significant; this convention is fixed so that stored tables and CSV
//! outputs are reproducible across runs.

use rand::RngCore;
use thiserror::Error;

/// Default cap on joint-action enumeration (guards against accidentally
/// enumerating e.g. a 3^20 action space in the flat planner).
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("agent {agent}: index {index} out of range for radix {radix}")]
    IndexOutOfRange { agent: usize, index: u32, radix: u32 },
    #[error("index vector has {got} entries, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("joint space size {size} exceeds enumeration cap {cap}")]
    EnumerationCap { size: u64, cap: u64 },
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
    #[error("invalid coordination graph: {0}")]
    InvalidGraph(String),
    #[error("generative model failure: {0}")]
    Generative(String),
}

/// Static description of a multiagent POMDP: agent count, per-agent action
/// and observation set sizes, horizon, discount and reward bounds.
///
/// The state space, dynamics and initial belief live behind
/// [`GenerativeModel`]; planners only ever see this spec plus the simulator.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProblemSpec {
    num_agents: usize,
    action_counts: Vec<u32>,
    obs_counts: Vec<u32>,
    horizon: usize,
    discount: f64,
    reward_bounds: (f64, f64),
}

impl ProblemSpec {
    pub fn new(
        action_counts: Vec<u32>,
        obs_counts: Vec<u32>,
        horizon: usize,
        discount: f64,
        reward_bounds: (f64, f64),
    ) -> Result<Self, ModelError> {
        let n = action_counts.len();
        if n == 0 {
            return Err(ModelError::InvalidSpec("no agents".into()));
        }
        if obs_counts.len() != n {
            return Err(ModelError::InvalidSpec(format!(
                "{} action counts but {} observation counts",
                n,
                obs_counts.len()
            )));
        }
        if action_counts.iter().any(|&c| c == 0) || obs_counts.iter().any(|&c| c == 0) {
            return Err(ModelError::InvalidSpec("per-agent counts must be >= 1".into()));
        }
        if horizon == 0 {
            return Err(ModelError::InvalidSpec("horizon must be >= 1".into()));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(ModelError::InvalidSpec(format!("discount {discount} not in (0, 1]")));
        }
        if reward_bounds.0 > reward_bounds.1 {
            return Err(ModelError::InvalidSpec("reward lower bound exceeds upper bound".into()));
        }
        Ok(Self { num_agents: n, action_counts, obs_counts, horizon, discount, reward_bounds })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn action_counts(&self) -> &[u32] {
        &self.action_counts
    }

    pub fn obs_counts(&self) -> &[u32] {
        &self.obs_counts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    /// |A|, the product of per-agent action counts. Never stored, always computed.
    pub fn num_joint_actions(&self) -> u64 {
        joint_space_size(&self.action_counts)
    }

    /// |Z|, the product of per-agent observation counts.
    pub fn num_joint_observations(&self) -> u64 {
        joint_space_size(&self.obs_counts)
    }

    pub fn joint_action_from_flat(&self, flat: u64) -> JointAction {
        JointAction::from_flat(flat, &self.action_counts)
    }

    pub fn joint_obs_from_flat(&self, flat: u64) -> JointObservation {
        JointObservation::from_flat(flat, &self.obs_counts)
    }
}

fn joint_space_size(radices: &[u32]) -> u64 {
    radices
        .iter()
        .map(|&r| r as u64)
        .try_fold(1u64, u64::checked_mul)
        .expect("joint space size overflows u64")
}

/// Mixed-radix encoding, agent 0 most significant.
pub fn encode_joint(indices: &[u32], radices: &[u32]) -> Result<u64, ModelError> {
    if indices.len() != radices.len() {
        return Err(ModelError::LengthMismatch { got: indices.len(), expected: radices.len() });
    }
    let mut flat = 0u64;
    for (agent, (&ix, &radix)) in indices.iter().zip(radices).enumerate() {
        if ix >= radix {
            return Err(ModelError::IndexOutOfRange { agent, index: ix, radix });
        }
        flat = flat * radix as u64 + ix as u64;
    }
    Ok(flat)
}

/// Inverse of [`encode_joint`]; `flat` must be in range.
pub fn decode_joint(flat: u64, radices: &[u32]) -> Vec<u32> {
    debug_assert!(flat < joint_space_size(radices));
    let mut rest = flat;
    let mut out = vec![0u32; radices.len()];
    for (slot, &radix) in out.iter_mut().zip(radices).rev() {
        *slot = (rest % radix as u64) as u32;
        rest /= radix as u64;
    }
    out
}

/// One joint action: per-agent indices plus the mixed-radix flat index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction {
    indices: Vec<u32>,
    flat: u64,
}

impl JointAction {
    pub fn new(indices: Vec<u32>, radices: &[u32]) -> Result<Self, ModelError> {
        let flat = encode_joint(&indices, radices)?;
        Ok(Self { indices, flat })
    }

    pub fn from_flat(flat: u64, radices: &[u32]) -> Self {
        Self { indices: decode_joint(flat, radices), flat }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn flat(&self) -> u64 {
        self.flat
    }

    /// Restriction to the agents of `component` (ascending agent order),
    /// re-encoded over the component's local radices.
    pub fn project(&self, component: &[usize], radices: &[u32]) -> JointAction {
        project_indices(&self.indices, component, radices)
    }
}

/// One joint observation; same indexing scheme as [`JointAction`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointObservation {
    indices: Vec<u32>,
    flat: u64,
}

impl JointObservation {
    pub fn new(indices: Vec<u32>, radices: &[u32]) -> Result<Self, ModelError> {
        let flat = encode_joint(&indices, radices)?;
        Ok(Self { indices, flat })
    }

    pub fn from_flat(flat: u64, radices: &[u32]) -> Self {
        Self { indices: decode_joint(flat, radices), flat }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn flat(&self) -> u64 {
        self.flat
    }

    pub fn project(&self, component: &[usize], radices: &[u32]) -> JointObservation {
        let a = project_indices(&self.indices, component, radices);
        JointObservation { indices: a.indices, flat: a.flat }
    }
}

fn project_indices(indices: &[u32], component: &[usize], radices: &[u32]) -> JointAction {
    let local: Vec<u32> = component.iter().map(|&i| indices[i]).collect();
    let local_radices: Vec<u32> = component.iter().map(|&i| radices[i]).collect();
    let flat = encode_joint(&local, &local_radices).expect("projection of a valid joint index");
    JointAction { indices: local, flat }
}

/// Project a full flat index directly onto a component. Equivalent to
/// decoding, selecting the component's agents and re-encoding.
pub fn project_flat(flat: u64, component: &[usize], radices: &[u32]) -> u64 {
    let indices = decode_joint(flat, radices);
    project_indices(&indices, component, radices).flat
}

/// An alternating action/observation sequence; the empty history is the root.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JointHistory {
    steps: Vec<(JointAction, JointObservation)>,
}

impl JointHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, action: JointAction, obs: JointObservation) {
        self.steps.push((action, obs));
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[(JointAction, JointObservation)] {
        &self.steps
    }

    /// Replace every action and observation by its projection onto
    /// `component`; the step length is preserved. Distinct joint histories
    /// that differ only outside the component project to the same local
    /// history, which is what lets factored trees pool statistics.
    pub fn project(
        &self,
        component: &[usize],
        action_radices: &[u32],
        obs_radices: &[u32],
    ) -> JointHistory {
        JointHistory {
            steps: self
                .steps
                .iter()
                .map(|(a, z)| {
                    (a.project(component, action_radices), z.project(component, obs_radices))
                })
                .collect(),
        }
    }
}

/// Iterate all joint actions in flat-index order. Refuses joint spaces larger
/// than `cap`.
pub fn enumerate_joint_actions(
    radices: &[u32],
    cap: u64,
) -> Result<impl Iterator<Item = JointAction> + '_, ModelError> {
    let size = joint_space_size(radices);
    if size > cap {
        return Err(ModelError::EnumerationCap { size, cap });
    }
    Ok((0..size).map(move |flat| JointAction::from_flat(flat, radices)))
}

/// A coordination (hyper)graph: agent subsets ("components") whose local
/// payoffs sum to the joint payoff, plus the agent elimination order used by
/// variable elimination.
///
/// Components are normalized to ascending agent order.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CoordinationGraph {
    components: Vec<Vec<usize>>,
    elimination_order: Vec<usize>,
}

impl CoordinationGraph {
    /// Build a graph with the default (ascending agent index) elimination order.
    pub fn new(components: Vec<Vec<usize>>, num_agents: usize) -> Result<Self, ModelError> {
        Self::with_order(components, (0..num_agents).collect())
    }

    pub fn with_order(
        components: Vec<Vec<usize>>,
        elimination_order: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let n = elimination_order.len();
        let mut seen = vec![false; n];
        for &agent in &elimination_order {
            if agent >= n || seen[agent] {
                return Err(ModelError::InvalidGraph(
                    "elimination order is not a permutation of the agents".into(),
                ));
            }
            seen[agent] = true;
        }
        if components.is_empty() {
            return Err(ModelError::InvalidGraph("no components".into()));
        }
        let mut covered = vec![false; n];
        let mut normalized = Vec::with_capacity(components.len());
        for mut component in components {
            component.sort_unstable();
            if component.is_empty() {
                return Err(ModelError::InvalidGraph("empty component".into()));
            }
            if component.windows(2).any(|w| w[0] == w[1]) {
                return Err(ModelError::InvalidGraph(format!(
                    "duplicate agent in component {component:?}"
                )));
            }
            if *component.last().unwrap() >= n {
                return Err(ModelError::InvalidGraph(format!(
                    "component {component:?} references agent outside 0..{n}"
                )));
            }
            for &agent in &component {
                covered[agent] = true;
            }
            normalized.push(component);
        }
        if let Some(agent) = covered.iter().position(|&c| !c) {
            return Err(ModelError::InvalidGraph(format!("agent {agent} not in any component")));
        }
        Ok(Self { components: normalized, elimination_order })
    }

    /// The trivial factorization: a single component spanning all agents.
    pub fn full(num_agents: usize) -> Self {
        Self::new(vec![(0..num_agents).collect()], num_agents).expect("full graph is valid")
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_agents(&self) -> usize {
        self.elimination_order.len()
    }

    pub fn elimination_order(&self) -> &[usize] {
        &self.elimination_order
    }

    /// Indices of the components sharing at least one agent with component `e`.
    pub fn neighborhood(&self, e: usize) -> Vec<usize> {
        let scope = &self.components[e];
        self.components
            .iter()
            .enumerate()
            .filter(|&(other, s)| other != e && s.iter().any(|a| scope.contains(a)))
            .map(|(other, _)| other)
            .collect()
    }

    /// Local action radices of component `e` under the given per-agent counts.
    pub fn local_radices(&self, e: usize, radices: &[u32]) -> Vec<u32> {
        self.components[e].iter().map(|&i| radices[i]).collect()
    }
}

/// Result of one generative-model step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub next_state: S,
    pub observation: JointObservation,
    pub reward: f64,
    pub terminal: bool,
}

/// Black-box simulator access: sample a transition, observation and reward.
///
/// This is the only model access planners get. States are opaque values owned
/// by the domain, so a wrapper is free to hide extra hidden structure (the
/// Bayes-adaptive wrapper hides Dirichlet count vectors this way). `step` must
/// be a pure function of `(state, action, rng stream)`: identical seeds give
/// bit-identical trajectories. Implementations must be usable from multiple
/// threads concurrently provided each thread supplies its own rng.
pub trait GenerativeModel: Send + Sync {
    type State: Clone + Send + Sync;

    fn spec(&self) -> &ProblemSpec;

    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> Self::State;

    fn step(
        &self,
        state: &Self::State,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<Step<Self::State>, ModelError>;
}
