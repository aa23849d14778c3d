//! Benchmark MPOMDPs: each domain is available both as a black-box
//! [`GenerativeModel`] (what planners consume) and, on small instances, as an
//! explicit tabular model (what Bayes-adaptive priors and oracle checks
//! consume). The two forms are implemented independently so that frequency
//! tests can cross-validate them.

mod firefighting;
mod sensorgrid;
pub mod toy;

pub use firefighting::{firefighting_default, FireFighting, FireFightingParams};
pub use sensorgrid::{sensorgrid_default, SensorGrid, SensorGridParams};

use crate::model::{GenerativeModel, JointAction, JointObservation, ModelError, ProblemSpec, Step};
use rand::{Rng, RngCore};

/// Default cap on |S|·|A|·|S'| for explicit model construction.
pub const DEFAULT_EXPLICIT_CAP: u64 = 50_000_000;

/// Tabular MPOMDP: sparse row-stochastic transition and observation tables
/// plus a reward table and initial belief, all over state indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitModel {
    spec: ProblemSpec,
    num_states: u32,
    /// row `s * |A| + a` → sparse distribution over next states
    transitions: Vec<Vec<(u32, f64)>>,
    /// row `a * |S| + s'` → sparse distribution over flat joint observations
    observations: Vec<Vec<(u32, f64)>>,
    /// `s * |A| + a` → immediate reward
    rewards: Vec<f64>,
    initial_belief: Vec<(u32, f64)>,
}

impl ExplicitModel {
    pub fn new(
        spec: ProblemSpec,
        num_states: u32,
        transitions: Vec<Vec<(u32, f64)>>,
        observations: Vec<Vec<(u32, f64)>>,
        rewards: Vec<f64>,
        initial_belief: Vec<(u32, f64)>,
    ) -> Result<Self, ModelError> {
        let num_actions = spec.num_joint_actions();
        let expected_t_rows = num_states as u64 * num_actions;
        let expected_o_rows = num_actions * num_states as u64;
        if transitions.len() as u64 != expected_t_rows
            || observations.len() as u64 != expected_o_rows
            || rewards.len() as u64 != expected_t_rows
        {
            return Err(ModelError::InvalidSpec("explicit model table shape mismatch".into()));
        }
        let check_rows = |rows: &[Vec<(u32, f64)>], what: &str| -> Result<(), ModelError> {
            for row in rows {
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-9 || row.iter().any(|&(_, p)| p < 0.0) {
                    return Err(ModelError::InvalidSpec(format!(
                        "{what} row is not a probability distribution (total {total})"
                    )));
                }
            }
            Ok(())
        };
        check_rows(&transitions, "transition")?;
        check_rows(&observations, "observation")?;
        check_rows(std::slice::from_ref(&initial_belief), "initial belief")?;
        Ok(Self { spec, num_states, transitions, observations, rewards, initial_belief })
    }

    pub fn num_states(&self) -> u32 {
        self.num_states
    }

    pub fn transition_row(&self, s: u32, a_flat: u64) -> &[(u32, f64)] {
        &self.transitions[s as usize * self.spec.num_joint_actions() as usize + a_flat as usize]
    }

    pub fn observation_row(&self, a_flat: u64, s_next: u32) -> &[(u32, f64)] {
        &self.observations[a_flat as usize * self.num_states as usize + s_next as usize]
    }

    pub fn reward(&self, s: u32, a_flat: u64) -> f64 {
        self.rewards[s as usize * self.spec.num_joint_actions() as usize + a_flat as usize]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn initial_belief(&self) -> &[(u32, f64)] {
        &self.initial_belief
    }
}

pub(crate) fn sample_sparse(row: &[(u32, f64)], rng: &mut dyn RngCore) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(idx, p) in row {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    row.last().expect("nonempty distribution row").0
}

impl GenerativeModel for ExplicitModel {
    type State = u32;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> u32 {
        sample_sparse(&self.initial_belief, rng)
    }

    fn step(
        &self,
        state: &u32,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<Step<u32>, ModelError> {
        let next = sample_sparse(self.transition_row(*state, action.flat()), rng);
        let z = sample_sparse(self.observation_row(action.flat(), next), rng);
        Ok(Step {
            next_state: next,
            observation: JointObservation::from_flat(z as u64, self.spec.obs_counts()),
            reward: self.reward(*state, action.flat()),
            terminal: false,
        })
    }
}

/// Expand a list of per-unit sparse outcome distributions into the joint
/// product distribution (unit 0 most significant).
pub(crate) fn product_distribution(
    per_unit: &[Vec<(u32, f64)>],
    radices: &[u32],
) -> Vec<(u32, f64)> {
    let mut acc: Vec<(u64, f64)> = vec![(0, 1.0)];
    for (unit, outcomes) in per_unit.iter().enumerate() {
        let radix = radices[unit] as u64;
        let mut next = Vec::with_capacity(acc.len() * outcomes.len());
        for &(prefix, p) in &acc {
            for &(outcome, q) in outcomes {
                if q > 0.0 {
                    next.push((prefix * radix + outcome as u64, p * q));
                }
            }
        }
        acc = next;
    }
    acc.into_iter().map(|(idx, p)| (idx as u32, p)).collect()
}
