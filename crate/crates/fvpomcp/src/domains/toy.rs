//! Tiny fully-specified domains used by tests and cross-validation: a
//! deterministic reward-table chain (bandits are the one-step case) and a
//! noisy two-observation variant for exercising particle-filter fallbacks.

use crate::model::{GenerativeModel, JointAction, JointObservation, ModelError, ProblemSpec, Step};
use rand::{Rng, RngCore};

/// Deterministic chain: the state is the step counter, transitions always
/// advance it, every agent observes the single dummy observation, and the
/// reward is `rewards[t][joint_action]`. With one row this is a bandit.
#[derive(Debug, Clone)]
pub struct TabularChain {
    spec: ProblemSpec,
    rewards: Vec<Vec<f64>>,
}

impl TabularChain {
    pub fn new(action_counts: Vec<u32>, rewards: Vec<Vec<f64>>) -> Self {
        let horizon = rewards.len();
        let num_actions: u64 = action_counts.iter().map(|&c| c as u64).product();
        assert!(rewards.iter().all(|row| row.len() as u64 == num_actions));
        let (lo, hi) = rewards
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let obs_counts = vec![1; action_counts.len()];
        let spec = ProblemSpec::new(action_counts, obs_counts, horizon, 1.0, (lo, hi))
            .expect("valid chain spec");
        Self { spec, rewards }
    }

    /// Single-step bandit over one agent's arms.
    pub fn bandit(arm_rewards: Vec<f64>) -> Self {
        Self::new(vec![arm_rewards.len() as u32], vec![arm_rewards])
    }

    /// One agent, one action, one observation, reward 1 per step.
    pub fn degenerate(horizon: usize) -> Self {
        Self::new(vec![1], vec![vec![1.0]; horizon])
    }

    pub fn zero_reward(action_counts: Vec<u32>, horizon: usize) -> Self {
        let num_actions: u64 = action_counts.iter().map(|&c| c as u64).product();
        Self::new(action_counts, vec![vec![0.0; num_actions as usize]; horizon])
    }
}

impl GenerativeModel for TabularChain {
    type State = u32;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn sample_initial_state(&self, _rng: &mut dyn RngCore) -> u32 {
        0
    }

    fn step(
        &self,
        state: &u32,
        action: &JointAction,
        _rng: &mut dyn RngCore,
    ) -> Result<Step<u32>, ModelError> {
        let t = *state as usize;
        if t >= self.rewards.len() {
            return Err(ModelError::Generative(format!("step {t} beyond chain horizon")));
        }
        Ok(Step {
            next_state: *state + 1,
            observation: JointObservation::from_flat(0, self.spec.obs_counts()),
            reward: self.rewards[t][action.flat() as usize],
            terminal: t + 1 >= self.rewards.len(),
        })
    }
}

/// Two-state domain whose observation reveals the state only with probability
/// `obs_accuracy`; useful for driving the rejection-resampling fallback.
#[derive(Debug, Clone)]
pub struct NoisyTwoState {
    spec: ProblemSpec,
    pub flip_prob: f64,
    pub obs_accuracy: f64,
}

impl NoisyTwoState {
    pub fn new(horizon: usize, flip_prob: f64, obs_accuracy: f64) -> Self {
        let spec = ProblemSpec::new(vec![2], vec![2], horizon, 1.0, (0.0, 1.0))
            .expect("valid two-state spec");
        Self { spec, flip_prob, obs_accuracy }
    }
}

impl GenerativeModel for NoisyTwoState {
    type State = u8;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> u8 {
        rng.gen_range(0..2u8)
    }

    fn step(
        &self,
        state: &u8,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<Step<u8>, ModelError> {
        let next = if rng.gen::<f64>() < self.flip_prob { 1 - *state } else { *state };
        let z = if rng.gen::<f64>() < self.obs_accuracy { next } else { 1 - next };
        let reward = if action.indices()[0] as u8 == *state { 1.0 } else { 0.0 };
        Ok(Step {
            next_state: next,
            observation: JointObservation::from_flat(z as u64, self.spec.obs_counts()),
            reward,
            terminal: false,
        })
    }
}
