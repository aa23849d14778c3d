//! One-shot verification bench for mixture-of-experts optimization.
//!
//! The object under study: a true payoff that is exactly factored over
//! coordination-graph components plus zero-mean noise. Each component keeps
//! one expert per local action estimating the *total* payoff observed when
//! that local action was played. The bench estimates experts by sampling,
//! evaluates the analytic sampling-policy-dependent bias of the estimates by
//! exact enumeration, and checks the recovery guarantees for disjoint and
//! for sufficiently-local overlapping payoffs.

use crate::graph::{brute_force_argmax, ve_argmax, LocalTable, TieBreak};
use crate::model::decode_joint;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoeError {
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("component {component} local action {local} has zero marginal probability")]
    ZeroMarginal { component: usize, local: u64 },
}

/// A factored-plus-noise payoff: `Q(a) = Σ_e Q_e(a_e)`, samples are corrupted
/// by zero-mean Gaussian noise of deviation `noise_sigma`.
#[derive(Debug, Clone)]
pub struct FactoredPayoff {
    components: Vec<Vec<usize>>,
    radices: Vec<u32>,
    tables: Vec<Vec<f64>>,
    pub noise_sigma: f64,
}

impl FactoredPayoff {
    pub fn new(
        components: Vec<Vec<usize>>,
        radices: Vec<u32>,
        tables: Vec<Vec<f64>>,
        noise_sigma: f64,
    ) -> Result<Self, MoeError> {
        if components.len() != tables.len() {
            return Err(MoeError::InvalidPayoff("one table per component required".into()));
        }
        let mut covered = vec![false; radices.len()];
        for (scope, table) in components.iter().zip(&tables) {
            if scope.is_empty() || scope.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MoeError::InvalidPayoff(format!(
                    "scope {scope:?} must be nonempty and strictly ascending"
                )));
            }
            if *scope.last().unwrap() >= radices.len() {
                return Err(MoeError::InvalidPayoff(format!("scope {scope:?} out of range")));
            }
            let len: usize = scope.iter().map(|&a| radices[a] as usize).product();
            if table.len() != len {
                return Err(MoeError::InvalidPayoff(format!(
                    "table over {scope:?} has {} entries, expected {len}",
                    table.len()
                )));
            }
            for &a in scope {
                covered[a] = true;
            }
        }
        if let Some(agent) = covered.iter().position(|&c| !c) {
            return Err(MoeError::InvalidPayoff(format!("agent {agent} in no component")));
        }
        Ok(Self { components, radices, tables, noise_sigma })
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn radices(&self) -> &[u32] {
        &self.radices
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_agents(&self) -> usize {
        self.radices.len()
    }

    pub fn num_joint_actions(&self) -> u64 {
        self.radices.iter().map(|&r| r as u64).product()
    }

    pub fn local_size(&self, e: usize) -> u64 {
        self.components[e].iter().map(|&a| self.radices[a] as u64).product()
    }

    pub fn local_flat(&self, e: usize, assignment: &[u32]) -> u64 {
        let mut idx = 0u64;
        for &agent in &self.components[e] {
            idx = idx * self.radices[agent] as u64 + assignment[agent] as u64;
        }
        idx
    }

    /// Noise-free factored value at a full assignment.
    pub fn value(&self, assignment: &[u32]) -> f64 {
        (0..self.components.len())
            .map(|e| self.tables[e][self.local_flat(e, assignment) as usize])
            .sum()
    }

    pub fn sample(&self, assignment: &[u32], rng: &mut dyn RngCore) -> f64 {
        let noise = if self.noise_sigma > 0.0 {
            Normal::new(0.0, self.noise_sigma).expect("valid sigma").sample(rng)
        } else {
            0.0
        };
        self.value(assignment) + noise
    }

    /// The true component tables in VE form.
    pub fn local_tables(&self) -> Vec<LocalTable> {
        self.components
            .iter()
            .zip(&self.tables)
            .map(|(scope, values)| {
                LocalTable::new(
                    scope.clone(),
                    scope.iter().map(|&a| self.radices[a]).collect(),
                    values.clone(),
                )
            })
            .collect()
    }

    /// Components sharing at least one agent with `e`.
    pub fn neighborhood(&self, e: usize) -> Vec<usize> {
        let scope = &self.components[e];
        self.components
            .iter()
            .enumerate()
            .filter(|&(other, s)| other != e && s.iter().any(|a| scope.contains(a)))
            .map(|(other, _)| other)
            .collect()
    }

    /// True argmax by exhaustive enumeration.
    pub fn optimal(&self) -> (Vec<u32>, f64) {
        brute_force_argmax(&self.local_tables(), &self.radices, u64::MAX)
            .expect("payoff tables are valid")
    }
}

/// A joint-action sampling distribution given as an explicit table.
#[derive(Debug, Clone)]
pub struct SamplingPolicy {
    radices: Vec<u32>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl SamplingPolicy {
    pub fn from_table(radices: Vec<u32>, probs: Vec<f64>) -> Result<Self, MoeError> {
        let size: u64 = radices.iter().map(|&r| r as u64).product();
        if probs.len() as u64 != size {
            return Err(MoeError::InvalidPolicy(format!(
                "{} probabilities for {size} joint actions",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(MoeError::InvalidPolicy("negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MoeError::InvalidPolicy(format!("probabilities sum to {total}")));
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cdf.push(acc);
        }
        Ok(Self { radices, probs, cdf })
    }

    pub fn uniform(radices: Vec<u32>) -> Self {
        let size: u64 = radices.iter().map(|&r| r as u64).product();
        let p = 1.0 / size as f64;
        Self::from_table(radices, vec![p; size as usize]).expect("uniform policy is valid")
    }

    /// Product of independent per-agent action distributions; component-wise
    /// for every coordination graph by construction.
    pub fn per_agent(per_agent: Vec<Vec<f64>>) -> Result<Self, MoeError> {
        let radices: Vec<u32> = per_agent.iter().map(|p| p.len() as u32).collect();
        let size: u64 = radices.iter().map(|&r| r as u64).product();
        let mut probs = Vec::with_capacity(size as usize);
        for flat in 0..size {
            let digits = decode_joint(flat, &radices);
            let p: f64 = digits.iter().zip(&per_agent).map(|(&d, dist)| dist[d as usize]).product();
            probs.push(p);
        }
        Self::from_table(radices, probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn radices(&self) -> &[u32] {
        &self.radices
    }

    pub fn sample_flat(&self, rng: &mut dyn RngCore) -> u64 {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1) as u64
    }

    /// Marginal probability of a partial assignment over `scope`.
    pub fn marginal(&self, scope: &[usize], values: &[u32]) -> f64 {
        let mut total = 0.0;
        for (flat, &p) in self.probs.iter().enumerate() {
            let digits = decode_joint(flat as u64, &self.radices);
            if scope.iter().zip(values).all(|(&a, &v)| digits[a] == v) {
                total += p;
            }
        }
        total
    }

    /// Componentwise test: for every pair of overlapping components, the
    /// conditional distribution over one component's exterior actions must
    /// not depend on the other's actions. Verified by enumeration.
    pub fn is_component_wise(&self, components: &[Vec<usize>], tol: f64) -> bool {
        for (e, scope_e) in components.iter().enumerate() {
            for (e2, scope_e2) in components.iter().enumerate() {
                if e == e2 || !scope_e2.iter().any(|a| scope_e.contains(a)) {
                    continue;
                }
                let exterior: Vec<usize> =
                    scope_e2.iter().copied().filter(|a| !scope_e.contains(a)).collect();
                if exterior.is_empty() {
                    continue;
                }
                let e_size: u64 = scope_e.iter().map(|&a| self.radices[a] as u64).product();
                let ext_radices: Vec<u32> = exterior.iter().map(|&a| self.radices[a]).collect();
                let ext_size: u64 = ext_radices.iter().map(|&r| r as u64).product();
                for ae in 0..e_size {
                    let ae_digits = decode_joint(
                        ae,
                        &scope_e.iter().map(|&a| self.radices[a]).collect::<Vec<_>>(),
                    );
                    let p_ae = self.marginal(scope_e, &ae_digits);
                    if p_ae <= 0.0 {
                        continue;
                    }
                    for x in 0..ext_size {
                        let x_digits = decode_joint(x, &ext_radices);
                        let joint = self.marginal(
                            &[scope_e.clone(), exterior.clone()].concat(),
                            &[ae_digits.clone(), x_digits.clone()].concat(),
                        );
                        let conditional = joint / p_ae;
                        let unconditional = self.marginal(&exterior, &x_digits);
                        if (conditional - unconditional).abs() > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

/// Sample accumulator for one expert: count, running mean and variance
/// (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct MoeExpert {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl MoeExpert {
    pub fn update(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }

    pub fn std_err(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.n as f64).sqrt())
    }
}

/// Per-component expert estimates produced by a sampling run.
#[derive(Debug, Clone)]
pub struct MoeEstimate {
    pub experts: Vec<Vec<MoeExpert>>,
}

impl MoeEstimate {
    fn empty(payoff: &FactoredPayoff) -> Self {
        Self {
            experts: (0..payoff.num_components())
                .map(|e| vec![MoeExpert::default(); payoff.local_size(e) as usize])
                .collect(),
        }
    }

    fn absorb(&mut self, payoff: &FactoredPayoff, assignment: &[u32], sample: f64) {
        for e in 0..payoff.num_components() {
            let local = payoff.local_flat(e, assignment) as usize;
            self.experts[e][local].update(sample);
        }
    }

    /// Σ_e mean of the active expert, and the conservative combined standard
    /// error Σ_e SE_e. `None` if any active expert has fewer than two samples.
    pub fn total(&self, payoff: &FactoredPayoff, assignment: &[u32]) -> Option<(f64, f64)> {
        let mut q = 0.0;
        let mut se = 0.0;
        for e in 0..payoff.num_components() {
            let expert = self.experts[e][payoff.local_flat(e, assignment) as usize];
            if expert.n == 0 {
                return None;
            }
            q += expert.mean;
            se += expert.std_err().unwrap_or(0.0);
        }
        Some((q, se))
    }

    pub fn has_unvisited(&self, payoff: &FactoredPayoff, assignment: &[u32]) -> bool {
        (0..payoff.num_components())
            .any(|e| self.experts[e][payoff.local_flat(e, assignment) as usize].n == 0)
    }

    /// Expert means as VE tables; unvisited experts are masked with `-inf`.
    pub fn mean_tables(&self, payoff: &FactoredPayoff) -> Vec<LocalTable> {
        payoff
            .components
            .iter()
            .enumerate()
            .map(|(e, scope)| {
                LocalTable::new(
                    scope.clone(),
                    scope.iter().map(|&a| payoff.radices[a]).collect(),
                    self.experts[e]
                        .iter()
                        .map(|x| if x.n > 0 { x.mean } else { f64::NEG_INFINITY })
                        .collect(),
                )
            })
            .collect()
    }
}

/// Draw `k` joint actions from the policy, observe the noisy total payoff and
/// update every component's active expert with the same sample.
pub fn moe_estimate(
    payoff: &FactoredPayoff,
    policy: &SamplingPolicy,
    k: u64,
    rng: &mut dyn RngCore,
) -> MoeEstimate {
    let mut est = MoeEstimate::empty(payoff);
    for _ in 0..k {
        let flat = policy.sample_flat(rng);
        let assignment = decode_joint(flat, &payoff.radices);
        let sample = payoff.sample(&assignment, rng);
        est.absorb(payoff, &assignment, sample);
    }
    est
}

/// Exhaustive stratified sampling: visit every joint action exactly
/// `ceil(k / |A|)` times. With zero noise the expert means are exact uniform
/// conditional expectations.
pub fn moe_estimate_stratified(
    payoff: &FactoredPayoff,
    k: u64,
    rng: &mut dyn RngCore,
) -> MoeEstimate {
    let mut est = MoeEstimate::empty(payoff);
    let size = payoff.num_joint_actions();
    let reps = k.div_ceil(size);
    for _ in 0..reps {
        for flat in 0..size {
            let assignment = decode_joint(flat, &payoff.radices);
            let sample = payoff.sample(&assignment, rng);
            est.absorb(payoff, &assignment, sample);
        }
    }
    est
}

/// The infinite-sample limit of the experts: exact conditional expectations
/// `E_π[Q(a) | a_e]` computed by enumeration.
pub fn moe_exact(payoff: &FactoredPayoff, policy: &SamplingPolicy) -> Result<MoeEstimate, MoeError> {
    let mut weight: Vec<Vec<f64>> = (0..payoff.num_components())
        .map(|e| vec![0.0; payoff.local_size(e) as usize])
        .collect();
    let mut value: Vec<Vec<f64>> = weight.clone();
    for flat in 0..payoff.num_joint_actions() {
        let assignment = decode_joint(flat, &payoff.radices);
        let p = policy.probs[flat as usize];
        let q = payoff.value(&assignment);
        for e in 0..payoff.num_components() {
            let local = payoff.local_flat(e, &assignment) as usize;
            weight[e][local] += p;
            value[e][local] += p * q;
        }
    }
    let mut est = MoeEstimate::empty(payoff);
    for e in 0..payoff.num_components() {
        for local in 0..weight[e].len() {
            if weight[e][local] <= 0.0 {
                return Err(MoeError::ZeroMarginal { component: e, local: local as u64 });
            }
            est.experts[e][local] =
                MoeExpert { n: u64::MAX, mean: value[e][local] / weight[e][local], m2: 0.0 };
        }
    }
    Ok(est)
}

/// The sampling-policy-dependent bias of the summed experts at one joint
/// action, evaluated exactly:
/// `B(a) = Σ_e Σ_{e'≠e} Σ_x π(x | a_e) · Q_{e'}(x, a_{e'∩e})` where `x`
/// ranges over actions of the agents of `e'` outside `e`.
pub fn analytic_bias(
    payoff: &FactoredPayoff,
    policy: &SamplingPolicy,
    assignment: &[u32],
) -> Result<f64, MoeError> {
    let mut bias = 0.0;
    for (e, scope_e) in payoff.components.iter().enumerate() {
        // weights of joint actions consistent with a_e
        let mut cond_total = 0.0;
        let consistent = |digits: &[u32]| scope_e.iter().all(|&a| digits[a] == assignment[a]);
        let mut per_action_weight = vec![0.0f64; payoff.num_joint_actions() as usize];
        for flat in 0..payoff.num_joint_actions() {
            let digits = decode_joint(flat, &payoff.radices);
            if consistent(&digits) {
                let p = policy.probs[flat as usize];
                per_action_weight[flat as usize] = p;
                cond_total += p;
            }
        }
        if cond_total <= 0.0 {
            return Err(MoeError::ZeroMarginal {
                component: e,
                local: payoff.local_flat(e, assignment),
            });
        }
        for e2 in 0..payoff.num_components() {
            if e2 == e {
                continue;
            }
            // Σ_x π(x | a_e) Q_{e2}(x, a_{e2∩e}): agents of e2 inside e take
            // their values from `assignment`, the rest are summed over the
            // conditional. Enumerate joint actions once and weight the
            // e2-local value accordingly.
            for flat in 0..payoff.num_joint_actions() {
                let w = per_action_weight[flat as usize];
                if w == 0.0 {
                    continue;
                }
                let digits = decode_joint(flat, &payoff.radices);
                // under the conditional, digits agree with `assignment` on
                // scope_e, so a_{e2∩e} is already correct in `digits`
                let local = payoff.local_flat(e2, &digits) as usize;
                bias += w / cond_total * payoff.tables[e2][local];
            }
        }
    }
    Ok(bias)
}

/// Definition-level oracle for the bias: `Σ_e (E_π[Q | a_e] − Q_e(a_e))`.
pub fn bias_oracle(
    payoff: &FactoredPayoff,
    policy: &SamplingPolicy,
    assignment: &[u32],
) -> Result<f64, MoeError> {
    let mut bias = 0.0;
    for (e, scope_e) in payoff.components.iter().enumerate() {
        let mut total = 0.0;
        let mut weighted = 0.0;
        for flat in 0..payoff.num_joint_actions() {
            let digits = decode_joint(flat, &payoff.radices);
            if scope_e.iter().all(|&a| digits[a] == assignment[a]) {
                let p = policy.probs[flat as usize];
                total += p;
                weighted += p * payoff.value(&digits);
            }
        }
        if total <= 0.0 {
            return Err(MoeError::ZeroMarginal {
                component: e,
                local: payoff.local_flat(e, assignment),
            });
        }
        bias += weighted / total - payoff.tables[e][payoff.local_flat(e, assignment) as usize];
    }
    Ok(bias)
}

#[derive(Debug, Clone)]
pub struct Theorem1Row {
    pub action_flat: u64,
    pub estimate: f64,
    pub target: f64,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct Theorem1Report {
    pub rows: Vec<Theorem1Row>,
    /// Joint actions excluded because some active expert was unvisited.
    pub skipped: Vec<u64>,
    pub all_pass: bool,
    pub max_residual: f64,
}

/// Residual bound mode for [`verify_theorem1`].
#[derive(Debug, Clone, Copy)]
pub enum ResidualBound {
    /// `sigmas` times the conservative combined standard error.
    StandardErrors { sigmas: f64 },
    /// Absolute tolerance (for exact stratified runs).
    Absolute { tol: f64 },
}

/// Check `Σ_e Q̂(a_e) → Q(a) + B_π(a)` on every joint action: per-action
/// residuals must stay within the bound.
pub fn verify_theorem1(
    payoff: &FactoredPayoff,
    policy: &SamplingPolicy,
    estimate: &MoeEstimate,
    bound: ResidualBound,
) -> Result<Theorem1Report, MoeError> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut all_pass = true;
    let mut max_residual = 0.0f64;
    for flat in 0..payoff.num_joint_actions() {
        let assignment = decode_joint(flat, &payoff.radices);
        let Some((qhat, se)) = estimate.total(payoff, &assignment) else {
            skipped.push(flat);
            continue;
        };
        let target = payoff.value(&assignment) + analytic_bias(payoff, policy, &assignment)?;
        let residual = (qhat - target).abs();
        let limit = match bound {
            ResidualBound::StandardErrors { sigmas } => sigmas * se,
            ResidualBound::Absolute { tol } => tol,
        };
        let pass = residual <= limit;
        all_pass &= pass;
        max_residual = max_residual.max(residual);
        rows.push(Theorem1Row { action_flat: flat, estimate: qhat, target, residual, bound: limit, pass });
    }
    Ok(Theorem1Report { rows, skipped, all_pass, max_residual })
}

#[derive(Debug, Clone)]
pub struct Theorem2Outcome {
    pub recovered: bool,
    pub moe_action: Vec<u32>,
    pub optimal_action: Vec<u32>,
    pub value_gap: f64,
}

/// Maximize the summed expert means by VE and compare against the true
/// argmax; recovery means reaching the same true value (tie-class
/// comparison).
pub fn verify_theorem2(
    payoff: &FactoredPayoff,
    estimate: &MoeEstimate,
) -> Result<Theorem2Outcome, MoeError> {
    let order: Vec<usize> = (0..payoff.num_agents()).collect();
    let (moe_action, _) = ve_argmax(estimate.mean_tables(payoff), &order, u64::MAX, TieBreak::Lowest)
        .map_err(|e| MoeError::InvalidPayoff(e.to_string()))?;
    let (optimal_action, best) = payoff.optimal();
    let value_gap = best - payoff.value(&moe_action);
    Ok(Theorem2Outcome { recovered: value_gap == 0.0, moe_action, optimal_action, value_gap })
}

#[derive(Debug, Clone)]
pub struct Theorem3Report {
    pub condition_holds: bool,
    pub epsilon: f64,
    pub moe_action: Vec<u32>,
    pub optimal_action: Vec<u32>,
    pub realized_suboptimality: f64,
}

/// Evaluate the locality premise by full enumeration, then measure the
/// suboptimality of the expert argmax in the exhaustive-sampling limit.
/// When the premise holds the suboptimality is guaranteed to stay within
/// `epsilon`; when it does not, the report is informational only.
pub fn check_theorem3(
    payoff: &FactoredPayoff,
    policy: &SamplingPolicy,
    epsilon: f64,
) -> Result<Theorem3Report, MoeError> {
    let num_components = payoff.num_components() as f64;
    let mut condition_holds = true;

    'pairs: for e in 0..payoff.num_components() {
        let neighbors = payoff.neighborhood(e);
        if neighbors.is_empty() {
            continue;
        }
        let neigh_size = neighbors.len() as f64;
        for &e2 in &neighbors {
            let scope_e = &payoff.components[e];
            let scope_e2 = payoff.components[e2].clone();
            let exterior: Vec<usize> =
                scope_e2.iter().copied().filter(|a| !scope_e.contains(a)).collect();
            let inter: Vec<usize> =
                scope_e2.iter().copied().filter(|a| scope_e.contains(a)).collect();
            let ext_radices: Vec<u32> = exterior.iter().map(|&a| payoff.radices[a]).collect();
            let inter_radices: Vec<u32> = inter.iter().map(|&a| payoff.radices[a]).collect();
            let ext_size: u64 = ext_radices.iter().map(|&r| r as u64).product();
            let inter_size: u64 = inter_radices.iter().map(|&r| r as u64).product();

            let value_of = |ext: &[u32], int: &[u32]| -> f64 {
                let mut assignment = vec![0u32; payoff.num_agents()];
                for (&a, &v) in exterior.iter().zip(ext) {
                    assignment[a] = v;
                }
                for (&a, &v) in inter.iter().zip(int) {
                    assignment[a] = v;
                }
                payoff.tables[e2][payoff.local_flat(e2, &assignment) as usize]
            };

            for x in 0..ext_size {
                let ext = decode_joint(x, &ext_radices);
                let pi_ext =
                    if exterior.is_empty() { 1.0 } else { policy.marginal(&exterior, &ext) };
                if pi_ext <= 0.0 {
                    continue;
                }
                let limit =
                    epsilon / (num_components * neigh_size * ext_size as f64 * pi_ext);
                for i1 in 0..inter_size {
                    for i2 in 0..inter_size {
                        if i1 == i2 {
                            continue;
                        }
                        let v1 = value_of(&ext, &decode_joint(i1, &inter_radices));
                        let v2 = value_of(&ext, &decode_joint(i2, &inter_radices));
                        if v1 - v2 > limit + 1e-12 {
                            condition_holds = false;
                            break 'pairs;
                        }
                    }
                }
            }
        }
    }

    let exact = moe_exact(payoff, policy)?;
    let order: Vec<usize> = (0..payoff.num_agents()).collect();
    let (moe_action, _) = ve_argmax(exact.mean_tables(payoff), &order, u64::MAX, TieBreak::Lowest)
        .map_err(|e| MoeError::InvalidPayoff(e.to_string()))?;
    let (optimal_action, best) = payoff.optimal();
    Ok(Theorem3Report {
        condition_holds,
        epsilon,
        moe_action: moe_action.clone(),
        optimal_action,
        realized_suboptimality: best - payoff.value(&moe_action),
    })
}

// ---------------------------------------------------------------------------
// Instance generators for the verification bench.

/// Random payoff with guaranteed component overlap: 3..=6 agents with 2 or 3
/// actions each, 2..=4 components of size 2 or 3.
pub fn random_overlap_instance(rng: &mut impl Rng, sigma: f64) -> FactoredPayoff {
    loop {
        let n = rng.gen_range(3..=6usize);
        let radices: Vec<u32> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
        let num_components = rng.gen_range(2..=4usize);
        let mut components = Vec::new();
        for _ in 0..num_components {
            let k = rng.gen_range(2..=3usize.min(n));
            let mut agents: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                agents.swap(i, rng.gen_range(0..=i));
            }
            let mut scope = agents[..k].to_vec();
            scope.sort_unstable();
            components.push(scope);
        }
        // cover stragglers with singleton-extended scopes
        let mut covered = vec![false; n];
        for scope in &components {
            for &a in scope {
                covered[a] = true;
            }
        }
        for (a, c) in covered.iter().enumerate() {
            if !c {
                components.push(vec![a]);
            }
        }
        let has_overlap = components.iter().enumerate().any(|(i, s)| {
            components
                .iter()
                .enumerate()
                .any(|(j, s2)| i != j && s2.iter().any(|a| s.contains(a)))
        });
        if !has_overlap {
            continue;
        }
        let tables: Vec<Vec<f64>> = components
            .iter()
            .map(|scope| {
                let len: usize = scope.iter().map(|&a| radices[a] as usize).product();
                (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect()
            })
            .collect();
        return FactoredPayoff::new(components, radices, tables, sigma).expect("valid instance");
    }
}

/// Random payoff whose components partition the agents (no overlap).
pub fn random_disjoint_instance(rng: &mut impl Rng, sigma: f64) -> FactoredPayoff {
    let num_components = rng.gen_range(2..=4usize);
    let mut components = Vec::new();
    let mut agent = 0usize;
    for _ in 0..num_components {
        let k = rng.gen_range(1..=2usize);
        components.push((agent..agent + k).collect::<Vec<usize>>());
        agent += k;
    }
    let n = agent;
    let radices: Vec<u32> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
    let tables: Vec<Vec<f64>> = components
        .iter()
        .map(|scope| {
            let len: usize = scope.iter().map(|&a| radices[a] as usize).product();
            (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect()
        })
        .collect();
    FactoredPayoff::new(components, radices, tables, sigma).expect("valid instance")
}

/// Optimality gap and a conservative prediction of the combined standard
/// error of the summed experts after `k` policy samples. Instances whose gap
/// is too small relative to the noise floor cannot be expected to recover the
/// argmax and should be regenerated.
pub fn gap_and_expected_se(payoff: &FactoredPayoff, policy: &SamplingPolicy, k: u64) -> (f64, f64) {
    let (_, best) = payoff.optimal();
    let mut runner_up = f64::NEG_INFINITY;
    for flat in 0..payoff.num_joint_actions() {
        let v = payoff.value(&decode_joint(flat, &payoff.radices));
        if v < best && v > runner_up {
            runner_up = v;
        }
    }
    let gap = if runner_up.is_finite() { best - runner_up } else { 0.0 };

    // per-expert sampling variance: Var(Q | a_e) + sigma^2, by enumeration
    let mut max_se = 0.0f64;
    for flat in 0..payoff.num_joint_actions() {
        let assignment = decode_joint(flat, &payoff.radices);
        let mut se_sum = 0.0;
        for e in 0..payoff.num_components() {
            let scope = &payoff.components[e];
            let mut w = 0.0;
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for other in 0..payoff.num_joint_actions() {
                let digits = decode_joint(other, &payoff.radices);
                if scope.iter().all(|&a| digits[a] == assignment[a]) {
                    let p = policy.probs[other as usize];
                    let q = payoff.value(&digits);
                    w += p;
                    m1 += p * q;
                    m2 += p * q * q;
                }
            }
            if w <= 0.0 {
                return (0.0, f64::INFINITY);
            }
            let mean = m1 / w;
            let var = (m2 / w - mean * mean).max(0.0) + payoff.noise_sigma.powi(2);
            let expected_n = (k as f64 * w).max(1.0);
            se_sum += (var / expected_n).sqrt();
        }
        max_se = max_se.max(se_sum);
    }
    (gap, max_se)
}

/// Construct an overlapping instance that provably satisfies the locality
/// premise at `epsilon` under the uniform policy: each component's table is
/// driven by its private agents plus a variation across shared agents clipped
/// well inside the allowed bound.
pub fn theorem3_instance(rng: &mut impl Rng, epsilon: f64) -> (FactoredPayoff, SamplingPolicy) {
    let n = rng.gen_range(3..=5usize);
    let radices: Vec<u32> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
    // overlapping chain: {0,1}, {1,2}, ..., {n-2, n-1}
    let components: Vec<Vec<usize>> = (0..n - 1).map(|i| vec![i, i + 1]).collect();
    let num_components = components.len() as f64;

    // neighborhood sizes under the chain structure
    let neigh_of = |e: usize| -> f64 {
        let mut count = 0usize;
        for e2 in 0..components.len() {
            if e2 != e && components[e2].iter().any(|a| components[e].contains(a)) {
                count += 1;
            }
        }
        count as f64
    };

    let tables: Vec<Vec<f64>> = components
        .iter()
        .enumerate()
        .map(|(e, scope)| {
            // tightest bound over partners whose tables this one perturbs;
            // under the uniform policy |A_ext| * pi(ext) = 1
            let mut allowed = f64::INFINITY;
            for e2 in 0..components.len() {
                if e2 != e && components[e2].iter().any(|a| scope.contains(a)) {
                    allowed = allowed.min(epsilon / (num_components * neigh_of(e2)));
                }
            }
            let len: usize = scope.iter().map(|&a| radices[a] as usize).product();
            // shared agents may shift the value only within 45% of the bound
            // in each direction, keeping every pairwise difference under 90%
            let amp = if allowed.is_finite() { 0.45 * allowed } else { 1.0 };
            let scope_radices: Vec<u32> = scope.iter().map(|&a| radices[a]).collect();
            (0..len)
                .map(|local| {
                    let digits = decode_joint(local as u64, &scope_radices);
                    // private contribution: driven by the first agent only if
                    // that agent appears in no other component
                    let private: f64 = scope
                        .iter()
                        .zip(&digits)
                        .filter(|(&a, _)| {
                            components
                                .iter()
                                .enumerate()
                                .all(|(e2, s2)| e2 == e || !s2.contains(&a))
                        })
                        .map(|(_, &d)| (d as f64 + 1.0) * rngless_hash(e, d))
                        .sum();
                    let wobble = amp * (2.0 * rngless_hash(local, e as u32) - 1.0);
                    private + wobble
                })
                .collect()
        })
        .collect();
    let payoff = FactoredPayoff::new(components, radices.clone(), tables, 0.0)
        .expect("valid theorem-3 instance");
    (payoff, SamplingPolicy::uniform(radices))
}

// deterministic pseudo-values in [0, 1) so constructed instances are stable
fn rngless_hash(a: usize, b: u32) -> f64 {
    let mut x = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 31;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 29;
    (x >> 11) as f64 / (1u64 << 53) as f64
}
