//! Bayes-adaptive wrapper: turns a known-reward, unknown-dynamics MPOMDP into
//! an ordinary [`GenerativeModel`] by folding Dirichlet transition and
//! observation counts into the hidden state. Planning in the wrapped model is
//! learning in the original one; planners cannot tell the difference.
//!
//! Counts are stored as a shared immutable prior plus a small per-particle
//! delta of increments, so copying a particle is cheap and mutating one can
//! never leak into another.

use crate::domains::ExplicitModel;
use crate::model::{GenerativeModel, JointAction, JointObservation, ModelError, ProblemSpec, Step};
use rand::{Rng, RngCore};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaError {
    #[error("count vector has zero total mass; the prior must cover the reachable support")]
    ZeroMass,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
}

/// Dirichlet expectation: normalize counts into a probability vector.
pub fn expected_prob(counts: &[f64]) -> Result<Vec<f64>, BaError> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(BaError::ZeroMass);
    }
    Ok(counts.iter().map(|&c| c / total).collect())
}

/// Configuration of the count prior built from a true model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Pseudo-count mass per transition row (scaled true probabilities).
    pub transition_strength: f64,
    /// Pseudo-count mass per observation row.
    pub observation_strength: f64,
    /// Fraction of the observation prior mixed with the uniform distribution;
    /// 0 reproduces the true observation model, 1 forgets it entirely.
    pub observation_flatness: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { transition_strength: 1000.0, observation_strength: 4.0, observation_flatness: 0.5 }
    }
}

/// Immutable prior counts shared by all particles.
#[derive(Debug, PartialEq)]
pub struct PriorCounts {
    num_states: u32,
    num_actions: u64,
    num_obs: u64,
    /// row `s * |A| + a` → (s', count)
    phi: Vec<Vec<(u32, f64)>>,
    phi_totals: Vec<f64>,
    /// row `a * |S| + s'` → (z, count)
    psi: Vec<Vec<(u32, f64)>>,
    psi_totals: Vec<f64>,
}

impl PriorCounts {
    /// Scale the true transition model into transition pseudo-counts and mix
    /// the true observation model with uniform noise for observation
    /// pseudo-counts.
    pub fn from_model(model: &ExplicitModel, cfg: &PriorConfig) -> Result<Self, BaError> {
        if !(cfg.transition_strength > 0.0) || !(cfg.observation_strength > 0.0) {
            return Err(BaError::InvalidPrior("prior strengths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.observation_flatness) {
            return Err(BaError::InvalidPrior(format!(
                "observation flatness {} not in [0, 1]",
                cfg.observation_flatness
            )));
        }
        let spec = model.spec();
        let ns = model.num_states();
        let na = spec.num_joint_actions();
        let nz = spec.num_joint_observations();

        let mut phi = Vec::with_capacity((ns as u64 * na) as usize);
        let mut phi_totals = Vec::with_capacity(phi.capacity());
        for s in 0..ns {
            for a in 0..na {
                let row: Vec<(u32, f64)> = model
                    .transition_row(s, a)
                    .iter()
                    .map(|&(s_next, p)| (s_next, cfg.transition_strength * p))
                    .collect();
                let total: f64 = row.iter().map(|&(_, c)| c).sum();
                if !(total > 0.0) {
                    return Err(BaError::ZeroMass);
                }
                phi_totals.push(total);
                phi.push(row);
            }
        }

        let flat_mass = cfg.observation_strength * cfg.observation_flatness / nz as f64;
        let mut psi = Vec::with_capacity((na * ns as u64) as usize);
        let mut psi_totals = Vec::with_capacity(psi.capacity());
        for a in 0..na {
            for s_next in 0..ns {
                let truth = model.observation_row(a, s_next);
                let row: Vec<(u32, f64)> = if cfg.observation_flatness > 0.0 {
                    (0..nz as u32)
                        .map(|z| {
                            let p = truth
                                .iter()
                                .find(|&&(tz, _)| tz == z)
                                .map_or(0.0, |&(_, p)| p);
                            let c = cfg.observation_strength * (1.0 - cfg.observation_flatness) * p
                                + flat_mass;
                            (z, c)
                        })
                        .collect()
                } else {
                    truth.iter().map(|&(z, p)| (z, cfg.observation_strength * p)).collect()
                };
                let total: f64 = row.iter().map(|&(_, c)| c).sum();
                if !(total > 0.0) {
                    return Err(BaError::ZeroMass);
                }
                psi_totals.push(total);
                psi.push(row);
            }
        }

        Ok(Self { num_states: ns, num_actions: na, num_obs: nz, phi, phi_totals, psi, psi_totals })
    }

    fn phi_row(&self, s: u32, a: u64) -> (&[(u32, f64)], f64) {
        let idx = s as usize * self.num_actions as usize + a as usize;
        (&self.phi[idx], self.phi_totals[idx])
    }

    fn psi_row(&self, a: u64, s_next: u32) -> (&[(u32, f64)], f64) {
        let idx = a as usize * self.num_states as usize + s_next as usize;
        (&self.psi[idx], self.psi_totals[idx])
    }

    /// Expected transition distribution under the prior alone.
    pub fn expected_transition(&self, s: u32, a: u64) -> Vec<(u32, f64)> {
        let (row, total) = self.phi_row(s, a);
        row.iter().map(|&(s_next, c)| (s_next, c / total)).collect()
    }

    pub fn expected_observation(&self, a: u64, s_next: u32) -> Vec<(u32, f64)> {
        let (row, total) = self.psi_row(a, s_next);
        row.iter().map(|&(z, c)| (z, c / total)).collect()
    }

    pub fn total_phi_mass(&self) -> f64 {
        self.phi_totals.iter().sum()
    }

    pub fn total_psi_mass(&self) -> f64 {
        self.psi_totals.iter().sum()
    }
}

/// Count vectors of one particle: the shared prior plus this particle's own
/// increments, kept sorted by flattened key.
#[derive(Debug, Clone)]
pub struct CountVectors {
    prior: Arc<PriorCounts>,
    phi_delta: Vec<(u64, f64)>,
    psi_delta: Vec<(u64, f64)>,
}

impl PartialEq for CountVectors {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.prior, &other.prior)
            && self.phi_delta == other.phi_delta
            && self.psi_delta == other.psi_delta
    }
}

impl CountVectors {
    pub fn fresh(prior: Arc<PriorCounts>) -> Self {
        Self { prior, phi_delta: Vec::new(), psi_delta: Vec::new() }
    }

    fn phi_key(&self, s: u32, a: u64, s_next: u32) -> u64 {
        (s as u64 * self.prior.num_actions + a) * self.prior.num_states as u64 + s_next as u64
    }

    fn psi_key(&self, a: u64, s_next: u32, z: u64) -> u64 {
        (a * self.prior.num_states as u64 + s_next as u64) * self.prior.num_obs + z
    }

    fn delta_of(delta: &[(u64, f64)], key: u64) -> f64 {
        match delta.binary_search_by_key(&key, |&(k, _)| k) {
            Ok(i) => delta[i].1,
            Err(_) => 0.0,
        }
    }

    fn bump(delta: &mut Vec<(u64, f64)>, key: u64, by: f64) {
        match delta.binary_search_by_key(&key, |&(k, _)| k) {
            Ok(i) => delta[i].1 += by,
            Err(i) => delta.insert(i, (key, by)),
        }
    }

    /// Effective transition count for `(s, a, s')`.
    pub fn phi(&self, s: u32, a: u64, s_next: u32) -> f64 {
        let (row, _) = self.prior.phi_row(s, a);
        let base = row.iter().find(|&&(sn, _)| sn == s_next).map_or(0.0, |&(_, c)| c);
        base + Self::delta_of(&self.phi_delta, self.phi_key(s, a, s_next))
    }

    /// Effective observation count for `(a, s', z)`.
    pub fn psi(&self, a: u64, s_next: u32, z: u64) -> f64 {
        let (row, _) = self.prior.psi_row(a, s_next);
        let base = row.iter().find(|&&(tz, _)| tz as u64 == z).map_or(0.0, |&(_, c)| c);
        base + Self::delta_of(&self.psi_delta, self.psi_key(a, s_next, z))
    }

    fn row_delta(delta: &[(u64, f64)], base_key: u64, span: u64) -> &[(u64, f64)] {
        let start = delta.partition_point(|&(k, _)| k < base_key);
        let end = delta.partition_point(|&(k, _)| k < base_key + span);
        &delta[start..end]
    }

    /// Expected transition distribution for `(s, a)` under these counts.
    pub fn expected_transition(&self, s: u32, a: u64) -> Result<Vec<(u32, f64)>, BaError> {
        let (row, prior_total) = self.prior.phi_row(s, a);
        let base_key = self.phi_key(s, a, 0);
        let deltas = Self::row_delta(&self.phi_delta, base_key, self.prior.num_states as u64);
        let total = prior_total + deltas.iter().map(|&(_, d)| d).sum::<f64>();
        if !(total > 0.0) {
            return Err(BaError::ZeroMass);
        }
        Ok(row
            .iter()
            .map(|&(s_next, c)| {
                let d = deltas
                    .iter()
                    .find(|&&(k, _)| k == base_key + s_next as u64)
                    .map_or(0.0, |&(_, d)| d);
                (s_next, (c + d) / total)
            })
            .collect())
    }

    /// Increments applied on top of the prior (for tests).
    pub fn phi_delta(&self) -> &[(u64, f64)] {
        &self.phi_delta
    }

    pub fn psi_delta(&self) -> &[(u64, f64)] {
        &self.psi_delta
    }

    pub fn delta_mass(&self) -> (f64, f64) {
        (
            self.phi_delta.iter().map(|&(_, d)| d).sum(),
            self.psi_delta.iter().map(|&(_, d)| d).sum(),
        )
    }

    fn sample_next_state(&self, s: u32, a: u64, rng: &mut dyn RngCore) -> Result<u32, BaError> {
        let (row, prior_total) = self.prior.phi_row(s, a);
        let base_key = self.phi_key(s, a, 0);
        let deltas = Self::row_delta(&self.phi_delta, base_key, self.prior.num_states as u64);
        let total = prior_total + deltas.iter().map(|&(_, d)| d).sum::<f64>();
        if !(total > 0.0) {
            return Err(BaError::ZeroMass);
        }
        let mut u = rng.gen::<f64>() * total;
        for &(s_next, c) in row {
            let w = c + Self::delta_of(deltas, base_key + s_next as u64);
            u -= w;
            if u < 0.0 {
                return Ok(s_next);
            }
        }
        Ok(row.last().expect("nonempty prior row").0)
    }

    fn sample_observation(&self, a: u64, s_next: u32, rng: &mut dyn RngCore) -> Result<u64, BaError> {
        let (row, prior_total) = self.prior.psi_row(a, s_next);
        let base_key = self.psi_key(a, s_next, 0);
        let deltas = Self::row_delta(&self.psi_delta, base_key, self.prior.num_obs);
        let total = prior_total + deltas.iter().map(|&(_, d)| d).sum::<f64>();
        if !(total > 0.0) {
            return Err(BaError::ZeroMass);
        }
        let mut u = rng.gen::<f64>() * total;
        for &(z, c) in row {
            let w = c + Self::delta_of(deltas, base_key + z as u64);
            u -= w;
            if u < 0.0 {
                return Ok(z as u64);
            }
        }
        Ok(row.last().expect("nonempty prior row").0 as u64)
    }
}

/// Hidden state of the Bayes-adaptive problem: the domain state plus this
/// particle's count vectors. Stepping returns a new value; particles never
/// alias each other's counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BAState {
    pub s: u32,
    pub counts: CountVectors,
}

/// The Bayes-adaptive MPOMDP as a generative model over [`BAState`].
pub struct BayesAdaptiveModel {
    spec: ProblemSpec,
    rewards: Vec<f64>,
    initial_belief: Vec<(u32, f64)>,
    prior: Arc<PriorCounts>,
}

impl BayesAdaptiveModel {
    /// Wrap a true model: its reward function stays known, its dynamics are
    /// replaced by the count prior built per `cfg`.
    pub fn new(model: &ExplicitModel, cfg: &PriorConfig) -> Result<Self, BaError> {
        let prior = Arc::new(PriorCounts::from_model(model, cfg)?);
        Ok(Self {
            spec: model.spec().clone(),
            rewards: model.rewards().to_vec(),
            initial_belief: model.initial_belief().to_vec(),
            prior,
        })
    }

    pub fn prior(&self) -> &Arc<PriorCounts> {
        &self.prior
    }

    /// A fresh episode state: domain state sampled from the initial belief,
    /// counts reset to the prior.
    pub fn reset_episode(&self, rng: &mut dyn RngCore) -> BAState {
        self.sample_initial_state(rng)
    }

    fn reward(&self, s: u32, a: u64) -> f64 {
        self.rewards[s as usize * self.spec.num_joint_actions() as usize + a as usize]
    }

    /// One Bayes-adaptive transition: sample `s'` and `z` from the expected
    /// models induced by the particle's counts, then record both outcomes as
    /// new counts in the successor.
    pub fn ba_step(
        &self,
        state: &BAState,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<(BAState, JointObservation, f64), BaError> {
        let a = action.flat();
        let s_next = state.counts.sample_next_state(state.s, a, rng)?;
        let z = state.counts.sample_observation(a, s_next, rng)?;
        let mut counts = state.counts.clone();
        let phi_key = counts.phi_key(state.s, a, s_next);
        let psi_key = counts.psi_key(a, s_next, z);
        CountVectors::bump(&mut counts.phi_delta, phi_key, 1.0);
        CountVectors::bump(&mut counts.psi_delta, psi_key, 1.0);
        let reward = self.reward(state.s, a);
        Ok((
            BAState { s: s_next, counts },
            JointObservation::from_flat(z, self.spec.obs_counts()),
            reward,
        ))
    }
}

impl GenerativeModel for BayesAdaptiveModel {
    type State = BAState;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> BAState {
        let s = crate::domains::sample_sparse(&self.initial_belief, rng);
        BAState { s, counts: CountVectors::fresh(Arc::clone(&self.prior)) }
    }

    fn step(
        &self,
        state: &BAState,
        action: &JointAction,
        rng: &mut dyn RngCore,
    ) -> Result<Step<BAState>, ModelError> {
        let (next, obs, reward) = self
            .ba_step(state, action, rng)
            .map_err(|e| ModelError::Generative(e.to_string()))?;
        Ok(Step { next_state: next, observation: obs, reward, terminal: false })
    }
}
