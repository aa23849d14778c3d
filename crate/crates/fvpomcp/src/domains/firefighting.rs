//! Line firefighting: `n` agents stand between `n + 1` houses whose fire
//! levels range over 0..=2. Each agent fights the house on its left or right
//! or does nothing; fires are put out faster when more agents attend, spread
//! from burning neighbors, and ignite spontaneously. The reward is the
//! negated sum of fire levels, so returns are never positive.

use super::{product_distribution, ExplicitModel};
use crate::model::{
    CoordinationGraph, GenerativeModel, JointAction, JointObservation, ModelError, ProblemSpec,
    Step,
};
use rand::{Rng, RngCore};

pub const FIRE_LEVELS: u32 = 3;
const MAX_LEVEL: u8 = 2;
const MAX_HOUSES: usize = 32;

/// Dynamics and observation parameters. The defaults reproduce the benchmark
/// configuration; everything is overridable through the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FireFightingParams {
    /// P(level → 0) when two or more agents fight a burning house.
    pub extinguish_two: f64,
    /// P(level decreases by one) when exactly one agent fights it.
    pub extinguish_one: f64,
    /// P(level increases, capped at 2) for an unattended burning house.
    pub increase_base: f64,
    /// Added to `increase_base` when a neighboring house burns.
    pub increase_spread: f64,
    /// P(an unburning house ignites).
    pub ignite_base: f64,
    /// Added to `ignite_base` when a neighboring house burns.
    pub ignite_spread: f64,
    /// P(flames observed) per fire level of the attended house.
    pub obs_flames: [f64; 3],
    /// Per-house probability of starting at level 1 (otherwise 0).
    pub init_burn: f64,
}

impl Default for FireFightingParams {
    fn default() -> Self {
        Self {
            extinguish_two: 1.0,
            extinguish_one: 0.6,
            increase_base: 0.4,
            increase_spread: 0.4,
            ignite_base: 0.05,
            ignite_spread: 0.3,
            obs_flames: [0.2, 0.5, 0.8],
            init_burn: 0.5,
        }
    }
}

/// The firefighting domain. States are base-3 packed house levels (house 0
/// most significant); planners treat them as opaque.
#[derive(Debug, Clone)]
pub struct FireFighting {
    params: FireFightingParams,
    spec: ProblemSpec,
    num_agents: usize,
    num_houses: usize,
}

impl FireFighting {
    pub fn new(num_agents: usize, horizon: usize, params: FireFightingParams) -> Self {
        assert!(num_agents >= 1 && num_agents + 1 <= MAX_HOUSES);
        let num_houses = num_agents + 1;
        let r_lo = -((MAX_LEVEL as usize * num_houses) as f64);
        let spec = ProblemSpec::new(
            vec![3; num_agents],
            vec![2; num_agents],
            horizon,
            1.0,
            (r_lo, 0.0),
        )
        .expect("valid firefighting spec");
        Self { params, spec, num_agents, num_houses }
    }

    pub fn params(&self) -> &FireFightingParams {
        &self.params
    }

    pub fn num_houses(&self) -> usize {
        self.num_houses
    }

    pub fn num_states(&self) -> u64 {
        (FIRE_LEVELS as u64).pow(self.num_houses as u32)
    }

    /// Chain factorization: one component per house interior, pairing the
    /// agents on its two sides.
    pub fn factorization(num_agents: usize) -> CoordinationGraph {
        assert!(num_agents >= 2);
        let components = (0..num_agents - 1).map(|i| vec![i, i + 1]).collect();
        CoordinationGraph::new(components, num_agents).expect("chain factorization is valid")
    }

    pub fn decode_levels(&self, state: u32) -> Vec<u8> {
        let mut levels = vec![0u8; self.num_houses];
        self.decode_into(state, &mut levels);
        levels
    }

    fn decode_into(&self, state: u32, levels: &mut [u8]) {
        let mut rest = state;
        for slot in levels.iter_mut().rev() {
            *slot = (rest % FIRE_LEVELS) as u8;
            rest /= FIRE_LEVELS;
        }
    }

    pub fn encode_levels(&self, levels: &[u8]) -> u32 {
        levels.iter().fold(0u32, |acc, &l| acc * FIRE_LEVELS + l as u32)
    }

    fn attendance(&self, action: &JointAction, counts: &mut [u8]) {
        counts.fill(0);
        for (agent, &a) in action.indices().iter().enumerate() {
            match a {
                0 => counts[agent] += 1,     // fight the house on the left
                1 => counts[agent + 1] += 1, // fight the house on the right
                _ => {}
            }
        }
    }

    /// House the agent attends under its individual action, if any.
    fn attended_house(agent: usize, individual_action: u32) -> Option<usize> {
        match individual_action {
            0 => Some(agent),
            1 => Some(agent + 1),
            _ => None,
        }
    }

    /// Outcome distribution for one house given its level, the number of
    /// attending agents and whether a neighbor burns. Used by the explicit
    /// model; the generative step samples the same cases independently.
    fn house_outcomes(&self, level: u8, attending: u8, neighbor_burning: bool) -> Vec<(u32, f64)> {
        let p = &self.params;
        if level == 0 {
            let ignite =
                (p.ignite_base + if neighbor_burning { p.ignite_spread } else { 0.0 }).min(1.0);
            return sparse_binary(1, ignite, 0);
        }
        if attending >= 2 {
            return sparse_binary(0, p.extinguish_two, level as u32);
        }
        if attending == 1 {
            return sparse_binary(level as u32 - 1, p.extinguish_one, level as u32);
        }
        let increase =
            (p.increase_base + if neighbor_burning { p.increase_spread } else { 0.0 }).min(1.0);
        let capped = (level + 1).min(MAX_LEVEL) as u32;
        sparse_binary(capped, increase, level as u32)
    }

    pub fn reward_of_levels(levels: &[u8]) -> f64 {
        -(levels.iter().map(|&l| l as u32).sum::<u32>() as f64)
    }

    /// Build the explicit tabular model. Refuses instances whose
    /// |S|·|A|·|S| footprint exceeds `cap` (the 10-agent benchmark only
    /// exists in generative form).
    pub fn explicit_model(&self, cap: u64) -> Result<ExplicitModel, ModelError> {
        let ns = self.num_states();
        let na = self.spec.num_joint_actions();
        let footprint = ns.saturating_mul(na).saturating_mul(ns);
        if footprint > cap {
            return Err(ModelError::InvalidSpec(format!(
                "explicit firefighting model needs |S||A||S| = {footprint} > cap {cap}; \
                 use the generative form"
            )));
        }
        let ns = ns as u32;
        let mut transitions = Vec::with_capacity((ns as u64 * na) as usize);
        let mut rewards = Vec::with_capacity((ns as u64 * na) as usize);
        let mut levels = vec![0u8; self.num_houses];
        let mut counts = vec![0u8; self.num_houses];
        let house_radices = vec![FIRE_LEVELS; self.num_houses];
        for s in 0..ns {
            self.decode_into(s, &mut levels);
            let r = Self::reward_of_levels(&levels);
            for a_flat in 0..na {
                let action = self.spec.joint_action_from_flat(a_flat);
                self.attendance(&action, &mut counts);
                let per_house: Vec<Vec<(u32, f64)>> = (0..self.num_houses)
                    .map(|h| {
                        self.house_outcomes(levels[h], counts[h], self.neighbor_burning(&levels, h))
                    })
                    .collect();
                transitions.push(product_distribution(&per_house, &house_radices));
                rewards.push(r);
            }
        }

        let mut observations = Vec::with_capacity((na * ns as u64) as usize);
        let obs_radices = vec![2u32; self.num_agents];
        for a_flat in 0..na {
            let action = self.spec.joint_action_from_flat(a_flat);
            for s_next in 0..ns {
                self.decode_into(s_next, &mut levels);
                let per_agent: Vec<Vec<(u32, f64)>> = (0..self.num_agents)
                    .map(|agent| match Self::attended_house(agent, action.indices()[agent]) {
                        Some(h) => {
                            let p = self.params.obs_flames[levels[h] as usize];
                            sparse_binary(1, p, 0)
                        }
                        None => vec![(0, 1.0)],
                    })
                    .collect();
                observations.push(product_distribution(&per_agent, &obs_radices));
            }
        }

        let per_house_init: Vec<Vec<(u32, f64)>> = (0..self.num_houses)
            .map(|_| sparse_binary(1, self.params.init_burn, 0))
            .collect();
        let initial_belief = product_distribution(&per_house_init, &house_radices);

        ExplicitModel::new(self.spec.clone(), ns, transitions, observations, rewards, initial_belief)
    }

    fn neighbor_burning(&self, levels: &[u8], house: usize) -> bool {
        (house > 0 && levels[house - 1] > 0)
            || (house + 1 < self.num_houses && levels[house + 1] > 0)
    }
}

fn sparse_binary(hit: u32, p_hit: f64, miss: u32) -> Vec<(u32, f64)> {
    if p_hit >= 1.0 {
        vec![(hit, 1.0)]
    } else if p_hit <= 0.0 {
        vec![(miss, 1.0)]
    } else if hit == miss {
        vec![(hit, 1.0)]
    } else if hit < miss {
        vec![(hit, p_hit), (miss, 1.0 - p_hit)]
    } else {
        vec![(miss, 1.0 - p_hit), (hit, p_hit)]
    }
}

impl GenerativeModel for FireFighting {
    type State = u32;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> u32 {
        let mut state = 0u32;
        for _ in 0..self.num_houses {
            let burning = rng.gen::<f64>() < self.params.init_burn;
            state = state * FIRE_LEVELS + burning as u32;
        }
        state
    }

    fn step(
        &self,
        state: &u32,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<Step<u32>, ModelError> {
        let p = &self.params;
        let mut levels = [0u8; MAX_HOUSES];
        let levels = &mut levels[..self.num_houses];
        self.decode_into(*state, levels);
        let mut counts = [0u8; MAX_HOUSES];
        let counts = &mut counts[..self.num_houses];
        self.attendance(action, counts);

        let reward = Self::reward_of_levels(levels);

        let mut next = [0u8; MAX_HOUSES];
        let next = &mut next[..self.num_houses];
        for h in 0..self.num_houses {
            let level = levels[h];
            let neighbor = self.neighbor_burning(levels, h);
            next[h] = if level == 0 {
                let ignite =
                    (p.ignite_base + if neighbor { p.ignite_spread } else { 0.0 }).min(1.0);
                (rng.gen::<f64>() < ignite) as u8
            } else if counts[h] >= 2 {
                if rng.gen::<f64>() < p.extinguish_two {
                    0
                } else {
                    level
                }
            } else if counts[h] == 1 {
                if rng.gen::<f64>() < p.extinguish_one {
                    level - 1
                } else {
                    level
                }
            } else {
                let increase =
                    (p.increase_base + if neighbor { p.increase_spread } else { 0.0 }).min(1.0);
                if rng.gen::<f64>() < increase {
                    (level + 1).min(MAX_LEVEL)
                } else {
                    level
                }
            };
        }

        let mut obs = Vec::with_capacity(self.num_agents);
        for (agent, &a) in action.indices().iter().enumerate() {
            let flames = match Self::attended_house(agent, a) {
                Some(h) => rng.gen::<f64>() < p.obs_flames[next[h] as usize],
                None => false,
            };
            obs.push(flames as u32);
        }

        Ok(Step {
            next_state: self.encode_levels(next),
            observation: JointObservation::new(obs, self.spec.obs_counts())?,
            reward,
            terminal: false,
        })
    }
}

/// Convenience constructor used by the harness and tests.
pub fn firefighting_default(num_agents: usize, horizon: usize) -> FireFighting {
    FireFighting::new(num_agents, horizon, FireFightingParams::default())
}
