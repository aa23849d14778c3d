//! Sensor grid: a target random-walks on an (n/2)×(n/2) grid watched by `n`
//! sensors, one per column (the x-axis agents) and one per row (the y-axis
//! agents). Each sensor can idle, sense weakly or sense strongly; sensing
//! costs energy, and a bonus is paid when the target's column sensor and row
//! sensor both sense at the same time.

use super::{product_distribution, ExplicitModel};
use crate::model::{
    CoordinationGraph, GenerativeModel, JointAction, JointObservation, ModelError, ProblemSpec,
    Step,
};
use rand::{Rng, RngCore};

pub const ACTION_NOOP: u32 = 0;
pub const ACTION_WEAK: u32 = 1;
pub const ACTION_STRONG: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SensorGridParams {
    pub weak_cost: f64,
    pub strong_cost: f64,
    /// Detection probability when the target is in the sensor's line.
    pub weak_true_positive: f64,
    pub strong_true_positive: f64,
    /// Detection probability when it is not.
    pub weak_false_positive: f64,
    pub strong_false_positive: f64,
    /// Paid when the target's column agent and row agent both sense.
    pub joint_bonus: f64,
    /// Test knob: freeze the target in place (makes T the identity).
    pub stationary_target: bool,
}

impl Default for SensorGridParams {
    fn default() -> Self {
        Self {
            weak_cost: -0.2,
            strong_cost: -1.0,
            weak_true_positive: 0.6,
            strong_true_positive: 0.9,
            weak_false_positive: 0.3,
            strong_false_positive: 0.1,
            joint_bonus: 10.0,
            stationary_target: false,
        }
    }
}

/// The sensor-grid domain. The state is the target position index
/// `row * side + col`; agents `0..n/2` watch columns, agents `n/2..n` rows.
#[derive(Debug, Clone)]
pub struct SensorGrid {
    params: SensorGridParams,
    spec: ProblemSpec,
    num_agents: usize,
    side: usize,
}

impl SensorGrid {
    pub fn new(num_agents: usize, horizon: usize, params: SensorGridParams) -> Result<Self, ModelError> {
        if num_agents < 4 || num_agents % 2 != 0 {
            return Err(ModelError::InvalidSpec(format!(
                "sensor grid needs an even agent count >= 4, got {num_agents}"
            )));
        }
        let side = num_agents / 2;
        let r_lo = num_agents as f64 * params.strong_cost.min(params.weak_cost).min(0.0);
        let r_hi = params.joint_bonus.max(0.0);
        let spec = ProblemSpec::new(
            vec![3; num_agents],
            vec![2; num_agents],
            horizon,
            1.0,
            (r_lo, r_hi),
        )?;
        Ok(Self { params, spec, num_agents, side })
    }

    pub fn params(&self) -> &SensorGridParams {
        &self.params
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_states(&self) -> u64 {
        (self.side * self.side) as u64
    }

    /// One component per x-axis agent: that agent plus every y-axis agent,
    /// giving n/2 components of n/2 + 1 agents each.
    pub fn factorization(num_agents: usize) -> Result<CoordinationGraph, ModelError> {
        if num_agents < 4 || num_agents % 2 != 0 {
            return Err(ModelError::InvalidGraph(format!(
                "sensor grid factorization needs an even agent count >= 4, got {num_agents}"
            )));
        }
        let half = num_agents / 2;
        let components = (0..half)
            .map(|j| {
                let mut c = vec![j];
                c.extend(half..num_agents);
                c
            })
            .collect();
        CoordinationGraph::new(components, num_agents)
    }

    fn col(&self, state: u32) -> usize {
        state as usize % self.side
    }

    fn row(&self, state: u32) -> usize {
        state as usize / self.side
    }

    fn reward(&self, state: u32, action: &JointAction) -> f64 {
        let p = &self.params;
        let mut r = 0.0;
        for &a in action.indices() {
            r += match a {
                ACTION_WEAK => p.weak_cost,
                ACTION_STRONG => p.strong_cost,
                _ => 0.0,
            };
        }
        let col_agent = self.col(state);
        let row_agent = self.side + self.row(state);
        if action.indices()[col_agent] != ACTION_NOOP && action.indices()[row_agent] != ACTION_NOOP
        {
            r += p.joint_bonus;
        }
        r
    }

    /// Uniform over {stay, N, S, E, W}; moves off the grid are clipped to stay.
    fn move_outcomes(&self, state: u32) -> Vec<(u32, f64)> {
        if self.params.stationary_target {
            return vec![(state, 1.0)];
        }
        let (col, row) = (self.col(state) as i64, self.row(state) as i64);
        let side = self.side as i64;
        let mut outcomes: Vec<(u32, f64)> = Vec::with_capacity(5);
        for (dc, dr) in [(0i64, 0i64), (0, -1), (0, 1), (1, 0), (-1, 0)] {
            let (nc, nr) = (col + dc, row + dr);
            let dest = if nc < 0 || nc >= side || nr < 0 || nr >= side {
                state
            } else {
                (nr * side + nc) as u32
            };
            match outcomes.iter_mut().find(|(s, _)| *s == dest) {
                Some((_, p)) => *p += 0.2,
                None => outcomes.push((dest, 0.2)),
            }
        }
        outcomes
    }

    /// Detection probability for one agent given the next target position.
    fn detection_prob(&self, agent: usize, individual_action: u32, next_state: u32) -> f64 {
        let p = &self.params;
        let in_line = if agent < self.side {
            self.col(next_state) == agent
        } else {
            self.row(next_state) == agent - self.side
        };
        match (individual_action, in_line) {
            (ACTION_WEAK, true) => p.weak_true_positive,
            (ACTION_WEAK, false) => p.weak_false_positive,
            (ACTION_STRONG, true) => p.strong_true_positive,
            (ACTION_STRONG, false) => p.strong_false_positive,
            _ => 0.0,
        }
    }

    pub fn explicit_model(&self, cap: u64) -> Result<ExplicitModel, ModelError> {
        let ns = self.num_states();
        let na = self.spec.num_joint_actions();
        let footprint = ns.saturating_mul(na).saturating_mul(ns);
        if footprint > cap {
            return Err(ModelError::InvalidSpec(format!(
                "explicit sensor grid model needs |S||A||S| = {footprint} > cap {cap}"
            )));
        }
        let ns = ns as u32;
        let mut transitions = Vec::with_capacity((ns as u64 * na) as usize);
        let mut rewards = Vec::with_capacity((ns as u64 * na) as usize);
        for s in 0..ns {
            let moves = self.move_outcomes(s);
            for a_flat in 0..na {
                let action = self.spec.joint_action_from_flat(a_flat);
                transitions.push(moves.clone());
                rewards.push(self.reward(s, &action));
            }
        }
        let obs_radices = vec![2u32; self.num_agents];
        let mut observations = Vec::with_capacity((na * ns as u64) as usize);
        for a_flat in 0..na {
            let action = self.spec.joint_action_from_flat(a_flat);
            for s_next in 0..ns {
                let per_agent: Vec<Vec<(u32, f64)>> = (0..self.num_agents)
                    .map(|agent| {
                        let p = self.detection_prob(agent, action.indices()[agent], s_next);
                        if p <= 0.0 {
                            vec![(0, 1.0)]
                        } else if p >= 1.0 {
                            vec![(1, 1.0)]
                        } else {
                            vec![(0, 1.0 - p), (1, p)]
                        }
                    })
                    .collect();
                observations.push(product_distribution(&per_agent, &obs_radices));
            }
        }
        let w = 1.0 / ns as f64;
        let initial_belief = (0..ns).map(|s| (s, w)).collect();
        ExplicitModel::new(self.spec.clone(), ns, transitions, observations, rewards, initial_belief)
    }
}

impl GenerativeModel for SensorGrid {
    type State = u32;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> u32 {
        rng.gen_range(0..self.num_states() as u32)
    }

    fn step(
        &self,
        state: &u32,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<Step<u32>, ModelError> {
        let reward = self.reward(*state, action);

        let next = if self.params.stationary_target {
            *state
        } else {
            let side = self.side as i64;
            let (col, row) = (self.col(*state) as i64, self.row(*state) as i64);
            let (dc, dr) = [(0i64, 0i64), (0, -1), (0, 1), (1, 0), (-1, 0)][rng.gen_range(0..5)];
            let (nc, nr) = (col + dc, row + dr);
            if nc < 0 || nc >= side || nr < 0 || nr >= side {
                *state
            } else {
                (nr * side + nc) as u32
            }
        };

        let mut obs = Vec::with_capacity(self.num_agents);
        for (agent, &a) in action.indices().iter().enumerate() {
            let p = self.detection_prob(agent, a, next);
            let detected = p > 0.0 && rng.gen::<f64>() < p;
            obs.push(detected as u32);
        }

        Ok(Step {
            next_state: next,
            observation: JointObservation::new(obs, self.spec.obs_counts())?,
            reward,
            terminal: false,
        })
    }
}

pub fn sensorgrid_default(num_agents: usize, horizon: usize) -> SensorGrid {
    SensorGrid::new(num_agents, horizon, SensorGridParams::default()).expect("valid sensor grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::DEFAULT_EXPLICIT_CAP;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn benchmark_sizes() {
        let sg4 = sensorgrid_default(4, 10);
        assert_eq!(sg4.num_states(), 4);
        assert_eq!(sg4.spec().num_joint_actions(), 81);
        assert_eq!(sg4.spec().num_joint_observations(), 16);

        let sg8 = sensorgrid_default(8, 10);
        assert_eq!(sg8.num_states(), 16);
        assert_eq!(sg8.spec().num_joint_actions(), 6561);
        assert_eq!(sg8.spec().num_joint_observations(), 256);
    }

    #[test]
    fn factorization_shapes() {
        let g = SensorGrid::factorization(4).unwrap();
        assert_eq!(g.components(), &[vec![0, 2, 3], vec![1, 2, 3]]);
        let g8 = SensorGrid::factorization(8).unwrap();
        assert_eq!(g8.num_components(), 4);
        for c in g8.components() {
            assert_eq!(c.len(), 5);
        }
        // every agent covered by construction (validated by the graph), and
        // odd counts are rejected
        assert!(SensorGrid::factorization(5).is_err());
        assert!(SensorGrid::factorization(2).is_err());
    }

    #[test]
    fn all_noop_is_free_and_silent() {
        let sg = sensorgrid_default(4, 10);
        let noop = JointAction::new(vec![0; 4], sg.spec().action_counts()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in 0..sg.num_states() as u32 {
            let step = sg.step(&s, &noop, &mut rng).unwrap();
            assert_eq!(step.reward, 0.0);
            assert_eq!(step.observation.flat(), 0);
        }
    }

    #[test]
    fn joint_detection_reward_example() {
        // target at (col 0, row 0); x-agent 0 and y-agent 2 sense strongly:
        // bonus 10 plus two strong costs of -1
        let sg = sensorgrid_default(4, 10);
        let action = JointAction::new(vec![2, 0, 2, 0], sg.spec().action_counts()).unwrap();
        assert_eq!(sg.reward(0, &action), 8.0);

        // same sensing but the target sits in column 1: costs only
        let action2 = JointAction::new(vec![0, 2, 2, 0], sg.spec().action_counts()).unwrap();
        assert_eq!(sg.reward(0, &action2), -2.0);
    }

    #[test]
    fn reward_bounds_hold() {
        let sg = sensorgrid_default(4, 10);
        let n = 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = sg.sample_initial_state(&mut rng);
        for i in 0..500 {
            let a = sg.spec().joint_action_from_flat(i % sg.spec().num_joint_actions());
            let step = sg.step(&s, &a, &mut rng).unwrap();
            assert!(step.reward >= n * sg.params().strong_cost);
            assert!(step.reward <= sg.params().joint_bonus * (n / 2.0) * (n / 2.0));
            s = step.next_state;
        }
    }

    #[test]
    fn stationary_variant_has_identity_transitions() {
        let mut params = SensorGridParams::default();
        params.stationary_target = true;
        let sg = SensorGrid::new(4, 10, params).unwrap();
        let explicit = sg.explicit_model(DEFAULT_EXPLICIT_CAP).unwrap();
        for s in 0..explicit.num_states() {
            for a in 0..sg.spec().num_joint_actions() {
                assert_eq!(explicit.transition_row(s, a), &[(s, 1.0)]);
            }
        }
    }

    #[test]
    fn generative_matches_explicit_frequencies() {
        let sg = sensorgrid_default(4, 10);
        let explicit = sg.explicit_model(DEFAULT_EXPLICIT_CAP).unwrap();
        let state = 0u32; // corner: stay probability 3/5
        let action = JointAction::new(vec![1, 0, 2, 0], sg.spec().action_counts()).unwrap();
        let trials = 200_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut state_counts = vec![0usize; sg.num_states() as usize];
        let mut obs_counts = vec![0usize; sg.spec().num_joint_observations() as usize];
        for _ in 0..trials {
            let step = sg.step(&state, &action, &mut rng).unwrap();
            state_counts[step.next_state as usize] += 1;
            obs_counts[step.observation.flat() as usize] += 1;
        }
        for &(s_next, p) in explicit.transition_row(state, action.flat()) {
            let observed = state_counts[s_next as usize] as f64;
            let expected = p * trials as f64;
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!((observed - expected).abs() <= 4.0 * sigma);
        }
        // joint observation frequencies against the explicit O marginalized
        // over the sampled next state
        let mut expected_obs = vec![0.0f64; obs_counts.len()];
        for &(s_next, pt) in explicit.transition_row(state, action.flat()) {
            for &(z, po) in explicit.observation_row(action.flat(), s_next) {
                expected_obs[z as usize] += pt * po;
            }
        }
        for (z, &p) in expected_obs.iter().enumerate() {
            let observed = obs_counts[z] as f64;
            let expected = p * trials as f64;
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!(
                (observed - expected).abs() <= 4.5 * sigma,
                "obs {z}: observed {observed}, expected {expected}"
            );
        }
    }

    #[test]
    fn determinism_under_equal_seeds() {
        let sg = sensorgrid_default(4, 10);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = sg.sample_initial_state(&mut rng);
            let mut trace = Vec::new();
            for i in 0..200 {
                let a = sg.spec().joint_action_from_flat((i * 11) % 81);
                let step = sg.step(&s, &a, &mut rng).unwrap();
                trace.push((s, step.observation.flat(), step.reward.to_bits()));
                s = step.next_state;
            }
            trace
        };
        assert_eq!(run(9), run(9));
    }
}
