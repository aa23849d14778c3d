//! Reproduction harness: configure (domain, algorithm, budget, horizon,
//! episodes, seeds), run planning and learning experiments with episode-level
//! parallelism, aggregate statistics and emit CSV plus a machine-readable run
//! manifest.
//!
//! Determinism contract: per-episode seeds are `base_seed + episode_index`,
//! and planner/environment/substitution streams are derived from the episode
//! seed alone, so results are byte-identical across reruns and independent of
//! the worker count (timing columns aside).

use crate::bapomdp::{BayesAdaptiveModel, PriorConfig};
use crate::domains::{
    FireFighting, FireFightingParams, SensorGrid, SensorGridParams, DEFAULT_EXPLICIT_CAP,
};
use crate::model::{CoordinationGraph, GenerativeModel, ModelError};
use crate::moe::{
    check_theorem3, gap_and_expected_se, moe_estimate, moe_estimate_stratified,
    random_disjoint_instance, random_overlap_instance, theorem3_instance, verify_theorem1,
    verify_theorem2, MoeError, ResidualBound, SamplingPolicy,
};
use crate::planner::{
    uniform_action, AdvanceStatus, FactoredStatsPomcp, FactoredTreesPomcp, FlatPomcp,
    OnlinePlanner, PlanError, PlannerConfig, RandomPlanner,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("bayes-adaptive setup failed: {0}")]
    Ba(#[from] crate::bapomdp::BaError),
    #[error(transparent)]
    Moe(#[from] MoeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Random,
    Pomcp,
    Fs,
    Ft,
    BaPomcp,
    BaFs,
    BaFt,
    PomcpTrueProxy,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Random => "random",
            Algorithm::Pomcp => "pomcp",
            Algorithm::Fs => "fs",
            Algorithm::Ft => "ft",
            Algorithm::BaPomcp => "ba-pomcp",
            Algorithm::BaFs => "ba-fs",
            Algorithm::BaFt => "ba-ft",
            Algorithm::PomcpTrueProxy => "pomcp-true-proxy",
        }
    }

    pub fn is_bayes_adaptive(&self) -> bool {
        matches!(self, Algorithm::BaPomcp | Algorithm::BaFs | Algorithm::BaFt)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub id: String,
    pub base_seed: u64,
    pub episodes: u32,
    /// 0 means "one worker per core".
    pub workers: usize,
    pub out_dir: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            id: "experiment".into(),
            base_seed: 1,
            episodes: 1000,
            workers: 0,
            out_dir: "results".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DomainSection {
    /// "firefighting" or "sensorgrid".
    pub name: String,
    pub agents: usize,
    pub horizon: usize,
    pub firefighting: FireFightingParams,
    pub sensorgrid: SensorGridParams,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            name: "firefighting".into(),
            agents: 4,
            horizon: 10,
            firefighting: FireFightingParams::default(),
            sensorgrid: SensorGridParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PlannerSection {
    pub algorithms: Vec<Algorithm>,
    /// Simulation budgets swept per algorithm.
    pub budgets: Vec<u32>,
    pub exploration_c: Option<f64>,
    pub min_particles: usize,
    pub target_particles: Option<usize>,
    pub resample_budget_factor: usize,
    /// Budget used by the true-model proxy regardless of the sweep.
    pub proxy_simulations: u32,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::Random, Algorithm::Pomcp, Algorithm::Fs, Algorithm::Ft],
            budgets: (0..13).map(|i| 16u32 << i).collect(),
            exploration_c: None,
            min_particles: 1,
            target_particles: None,
            resample_budget_factor: 10,
            proxy_simulations: 100_000,
        }
    }
}

/// Parameters of the mixture-of-experts verification bench.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MoeSection {
    pub seed: u64,
    pub instances: usize,
    pub samples: u64,
    pub sigmas: Vec<f64>,
    pub tolerance_sigmas: f64,
    pub stratified_tolerance: f64,
    pub theorem2_instances: usize,
    pub theorem2_samples: u64,
    pub theorem2_sigma: f64,
    pub theorem3_instances: usize,
    pub theorem3_epsilon: f64,
}

impl Default for MoeSection {
    fn default() -> Self {
        Self {
            seed: 7,
            instances: 50,
            samples: 1_000_000,
            sigmas: vec![0.0, 0.5, 2.0],
            tolerance_sigmas: 4.0,
            stratified_tolerance: 1e-10,
            theorem2_instances: 100,
            theorem2_samples: 100_000,
            theorem2_sigma: 1.0,
            theorem3_instances: 20,
            theorem3_epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub domain: DomainSection,
    pub planner: PlannerSection,
    pub bayes_adaptive: PriorConfig,
    pub moe: MoeSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiment.episodes == 0 {
            return Err(HarnessError::Config("episodes must be >= 1".into()));
        }
        if self.planner.budgets.is_empty() || self.planner.budgets.iter().any(|&b| b == 0) {
            return Err(HarnessError::Config("budgets must be nonempty and positive".into()));
        }
        if self.planner.algorithms.is_empty() {
            return Err(HarnessError::Config("no algorithms selected".into()));
        }
        match self.domain.name.as_str() {
            "firefighting" | "sensorgrid" => Ok(()),
            other => Err(HarnessError::Config(format!(
                "unknown domain {other:?}; registered domains: firefighting, sensorgrid"
            ))),
        }
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

pub enum DomainModel {
    FireFighting(FireFighting),
    SensorGrid(SensorGrid),
}

impl DomainModel {
    pub fn from_config(cfg: &DomainSection) -> Result<Self, HarnessError> {
        match cfg.name.as_str() {
            "firefighting" => {
                Ok(Self::FireFighting(FireFighting::new(cfg.agents, cfg.horizon, cfg.firefighting)))
            }
            "sensorgrid" => {
                Ok(Self::SensorGrid(SensorGrid::new(cfg.agents, cfg.horizon, cfg.sensorgrid)?))
            }
            other => Err(HarnessError::Config(format!("unknown domain {other:?}"))),
        }
    }

    pub fn graph(&self) -> Result<CoordinationGraph, HarnessError> {
        match self {
            Self::FireFighting(ff) => Ok(FireFighting::factorization(ff.spec().num_agents())),
            Self::SensorGrid(sg) => Ok(SensorGrid::factorization(sg.spec().num_agents())?),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Self::FireFighting(ff) => ff.spec().horizon(),
            Self::SensorGrid(sg) => sg.spec().horizon(),
        }
    }

    fn bayes_adaptive(&self, prior: &PriorConfig) -> Result<BayesAdaptiveModel, HarnessError> {
        let explicit = match self {
            Self::FireFighting(ff) => ff.explicit_model(DEFAULT_EXPLICIT_CAP)?,
            Self::SensorGrid(sg) => sg.explicit_model(DEFAULT_EXPLICIT_CAP)?,
        };
        Ok(BayesAdaptiveModel::new(&explicit, prior)?)
    }
}

/// One row of the per-episode CSV.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub algorithm: Algorithm,
    pub budget: u32,
    pub episode: u32,
    pub seed: u64,
    pub ret: f64,
    pub wallclock_ms: f64,
    pub fallbacks: u64,
    pub random_substitutions: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub budget: u32,
    pub episodes: u32,
    pub mean_return: f64,
    pub std_error: Option<f64>,
    pub mean_wallclock_ms: f64,
    pub fallbacks: u64,
    pub random_substitutions: u64,
    pub failures: u32,
}

/// Sample mean and standard error (unbiased sample deviation over sqrt n).
pub fn stats(returns: &[f64]) -> (f64, Option<f64>) {
    let n = returns.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

fn splitmix(seed: u64, stream: u64) -> u64 {
    let mut x = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-episode rng streams, all derived from the episode seed.
pub fn episode_streams(episode_seed: u64) -> (u64, u64, u64) {
    (splitmix(episode_seed, 1), splitmix(episode_seed, 2), splitmix(episode_seed, 3))
}

pub struct EpisodeOutcome {
    pub ret: f64,
    pub fallbacks: u64,
    pub random_substitutions: u64,
}

/// Plan-act-observe loop: the planner plans on its own model while actions
/// are executed in the separate environment instance. When the planner's
/// belief collapsed all the way to an initial-state reset, the next action is
/// substituted with a uniform random one and recorded.
pub fn drive_episode<E: GenerativeModel>(
    env: &E,
    planner: &mut dyn OnlinePlanner,
    env_seed: u64,
    substitution_seed: u64,
) -> Result<EpisodeOutcome, HarnessError> {
    let mut env_rng = ChaCha8Rng::seed_from_u64(env_seed);
    let mut subst_rng = ChaCha8Rng::seed_from_u64(substitution_seed);
    let mut state = env.sample_initial_state(&mut env_rng);
    let mut ret = 0.0;
    let mut substitutions = 0u64;
    for _ in 0..env.spec().horizon() {
        let action = if planner.last_advance() == Some(AdvanceStatus::ResetToInitial) {
            substitutions += 1;
            uniform_action(env.spec(), &mut subst_rng)
        } else {
            planner.plan()?
        };
        let step = env.step(&state, &action, &mut env_rng)?;
        ret += step.reward;
        planner.advance_root(&action, &step.observation)?;
        state = step.next_state;
        if step.terminal {
            break;
        }
    }
    Ok(EpisodeOutcome {
        ret,
        fallbacks: planner.diagnostics().fallbacks(),
        random_substitutions: substitutions,
    })
}

struct SweepContext {
    domain: DomainModel,
    graph: CoordinationGraph,
    ba: Option<BayesAdaptiveModel>,
    planner_base: PlannerConfig,
    proxy_simulations: u32,
}

impl SweepContext {
    fn build(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let domain = DomainModel::from_config(&config.domain)?;
        let graph = domain.graph()?;
        let ba = if config.planner.algorithms.iter().any(Algorithm::is_bayes_adaptive) {
            Some(domain.bayes_adaptive(&config.bayes_adaptive)?)
        } else {
            None
        };
        let planner_base = PlannerConfig {
            exploration_c: config.planner.exploration_c,
            min_particles: config.planner.min_particles,
            target_particles: config.planner.target_particles,
            resample_budget_factor: config.planner.resample_budget_factor,
            ..PlannerConfig::default()
        };
        Ok(Self {
            domain,
            graph,
            ba,
            planner_base,
            proxy_simulations: config.planner.proxy_simulations,
        })
    }

    fn run_one(
        &self,
        algorithm: Algorithm,
        budget: u32,
        episode_seed: u64,
    ) -> Result<EpisodeOutcome, HarnessError> {
        let (planner_seed, env_seed, subst_seed) = episode_streams(episode_seed);
        let mut pc = self.planner_base.clone();
        pc.seed = planner_seed;
        pc.num_simulations =
            if algorithm == Algorithm::PomcpTrueProxy { self.proxy_simulations } else { budget };
        match &self.domain {
            DomainModel::FireFighting(env) => {
                self.run_with_env(env, algorithm, pc, env_seed, subst_seed)
            }
            DomainModel::SensorGrid(env) => {
                self.run_with_env(env, algorithm, pc, env_seed, subst_seed)
            }
        }
    }

    fn run_with_env<E: GenerativeModel>(
        &self,
        env: &E,
        algorithm: Algorithm,
        pc: PlannerConfig,
        env_seed: u64,
        subst_seed: u64,
    ) -> Result<EpisodeOutcome, HarnessError> {
        match algorithm {
            Algorithm::Random => {
                let mut p = RandomPlanner::new(env.spec().clone(), pc.seed);
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
            Algorithm::Pomcp | Algorithm::PomcpTrueProxy => {
                let mut p = FlatPomcp::new(env, &pc)?;
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
            Algorithm::Fs => {
                let mut p = FactoredStatsPomcp::new(env, self.graph.clone(), &pc)?;
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
            Algorithm::Ft => {
                let mut p = FactoredTreesPomcp::new(env, self.graph.clone(), &pc)?;
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
            Algorithm::BaPomcp => {
                let ba = self.ba.as_ref().expect("bayes-adaptive model built");
                let mut p = FlatPomcp::new(ba, &pc)?;
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
            Algorithm::BaFs => {
                let ba = self.ba.as_ref().expect("bayes-adaptive model built");
                let mut p = FactoredStatsPomcp::new(ba, self.graph.clone(), &pc)?;
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
            Algorithm::BaFt => {
                let ba = self.ba.as_ref().expect("bayes-adaptive model built");
                let mut p = FactoredTreesPomcp::new(ba, self.graph.clone(), &pc)?;
                drive_episode(env, &mut p, env_seed, subst_seed)
            }
        }
    }
}

#[derive(Debug)]
pub struct SweepResult {
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn episodes_csv(&self, experiment_id: &str) -> String {
        let mut out = String::from(
            "experiment_id,algorithm,budget,episode,seed,return,wallclock_ms,fallbacks,random_substitutions\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                experiment_id,
                r.algorithm.name(),
                r.budget,
                r.episode,
                r.seed,
                if r.error.is_some() { "error".to_string() } else { r.ret.to_string() },
                r.wallclock_ms,
                r.fallbacks,
                r.random_substitutions
            );
        }
        out
    }

    pub fn aggregate_csv(&self, experiment_id: &str) -> String {
        let mut out = String::from(
            "experiment_id,algorithm,budget,episodes,mean_return,std_error,mean_wallclock_ms,fallbacks,random_substitutions,failures\n",
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                experiment_id,
                a.algorithm.name(),
                a.budget,
                a.episodes,
                a.mean_return,
                a.std_error.map_or(String::new(), |s| s.to_string()),
                a.mean_wallclock_ms,
                a.fallbacks,
                a.random_substitutions,
                a.failures
            );
        }
        out
    }

    pub fn aggregate_for(&self, algorithm: Algorithm, budget: u32) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.algorithm == algorithm && a.budget == budget)
    }
}

/// Strip the wallclock column so deterministic outputs can be compared.
pub fn csv_without_timing(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            fields
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != 6)
                .map(|(_, f)| *f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Run the full cross product of algorithms and budgets. Episode seeds are
/// `base_seed + episode_index`; failures are recorded per row and the sweep
/// continues.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    config.validate()?;
    let ctx = SweepContext::build(config)?;
    let mut tasks: Vec<(Algorithm, u32, u32)> = Vec::new();
    for &algorithm in &config.planner.algorithms {
        for &budget in &config.planner.budgets {
            for episode in 0..config.experiment.episodes {
                tasks.push((algorithm, budget, episode));
            }
        }
    }

    let run_task = |&(algorithm, budget, episode): &(Algorithm, u32, u32)| -> EpisodeRow {
        let seed = config.experiment.base_seed + episode as u64;
        let started = Instant::now();
        let outcome = ctx.run_one(algorithm, budget, seed);
        let wallclock_ms = started.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(o) => EpisodeRow {
                algorithm,
                budget,
                episode,
                seed,
                ret: o.ret,
                wallclock_ms,
                fallbacks: o.fallbacks,
                random_substitutions: o.random_substitutions,
                error: None,
            },
            Err(e) => EpisodeRow {
                algorithm,
                budget,
                episode,
                seed,
                ret: f64::NAN,
                wallclock_ms,
                fallbacks: 0,
                random_substitutions: 0,
                error: Some(e.to_string()),
            },
        }
    };

    let rows: Vec<EpisodeRow> = if config.experiment.workers == 1 {
        tasks.iter().map(run_task).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.experiment.workers)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| tasks.par_iter().map(run_task).collect())
    };

    let mut aggregates = Vec::new();
    for &algorithm in &config.planner.algorithms {
        for &budget in &config.planner.budgets {
            let group: Vec<&EpisodeRow> = rows
                .iter()
                .filter(|r| r.algorithm == algorithm && r.budget == budget)
                .collect();
            let ok: Vec<f64> =
                group.iter().filter(|r| r.error.is_none()).map(|r| r.ret).collect();
            let (mean, se) = stats(&ok);
            aggregates.push(AggregateRow {
                algorithm,
                budget,
                episodes: ok.len() as u32,
                mean_return: mean,
                std_error: se,
                mean_wallclock_ms: group.iter().map(|r| r.wallclock_ms).sum::<f64>()
                    / group.len().max(1) as f64,
                fallbacks: group.iter().map(|r| r.fallbacks).sum(),
                random_substitutions: group.iter().map(|r| r.random_substitutions).sum(),
                failures: group.iter().filter(|r| r.error.is_some()).count() as u32,
            });
        }
    }
    Ok(SweepResult { rows, aggregates })
}

/// Run a sweep and write episode CSV, aggregate CSV and the manifest into the
/// configured output directory.
pub fn run_sweep_to_dir(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<SweepResult, HarnessError> {
    let result = run_sweep(config)?;
    std::fs::create_dir_all(out_dir)?;
    let id = &config.experiment.id;
    std::fs::write(out_dir.join(format!("{id}_episodes.csv")), result.episodes_csv(id))?;
    std::fs::write(out_dir.join(format!("{id}_aggregate.csv")), result.aggregate_csv(id))?;
    let manifest = serde_json::json!({
        "experiment_id": id,
        "config_sha256": config.content_hash(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "episodes": config.experiment.episodes,
        "rows": result.rows.len(),
        "config": config,
    });
    std::fs::write(
        out_dir.join(format!("{id}_manifest.json")),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Mixture-of-experts verification bench.

#[derive(Debug, Clone)]
pub struct MoeResidualRow {
    pub instance: usize,
    pub sigma: f64,
    pub mode: &'static str,
    pub action_flat: u64,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug)]
pub struct MoeVerifyOutcome {
    pub theorem1_pass: bool,
    pub theorem1_rows: usize,
    pub theorem1_max_residual: f64,
    pub theorem1_stratified_pass: bool,
    pub theorem1_stratified_max_residual: f64,
    pub theorem2_recovered: usize,
    pub theorem2_total: usize,
    pub theorem2_noise_free_recovered: usize,
    pub theorem3_pass: bool,
    pub theorem3_max_suboptimality: f64,
    pub theorem3_instances: usize,
    pub residuals: Vec<MoeResidualRow>,
}

impl MoeVerifyOutcome {
    pub fn all_pass(&self, theorem2_threshold: usize) -> bool {
        self.theorem1_pass
            && self.theorem1_stratified_pass
            && self.theorem2_recovered >= theorem2_threshold
            && self.theorem2_noise_free_recovered == self.theorem2_total
            && self.theorem3_pass
    }

    pub fn residual_csv(&self) -> String {
        let mut out = String::from("instance,sigma,mode,action,residual,bound,pass\n");
        for r in &self.residuals {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.instance, r.sigma, r.mode, r.action_flat, r.residual, r.bound, r.pass
            );
        }
        out
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "theorem 1 (sampled, 4 SE): {} over {} residuals, max residual {:.3e}",
            if self.theorem1_pass { "PASS" } else { "FAIL" },
            self.theorem1_rows,
            self.theorem1_max_residual,
        );
        let _ = writeln!(
            out,
            "theorem 1 (stratified, exact): {} max residual {:.3e}",
            if self.theorem1_stratified_pass { "PASS" } else { "FAIL" },
            self.theorem1_stratified_max_residual,
        );
        let _ = writeln!(
            out,
            "theorem 2 (disjoint recovery): {}/{} recovered with noise, {}/{} noise-free",
            self.theorem2_recovered,
            self.theorem2_total,
            self.theorem2_noise_free_recovered,
            self.theorem2_total,
        );
        let _ = writeln!(
            out,
            "theorem 3 (epsilon-local payoffs): {} over {} instances, max suboptimality {:.3e}",
            if self.theorem3_pass { "PASS" } else { "FAIL" },
            self.theorem3_instances,
            self.theorem3_max_suboptimality,
        );
        out
    }
}

/// Run the whole verification bench per the `[moe]` config section.
pub fn run_moe_verify(moe: &MoeSection) -> Result<MoeVerifyOutcome, HarnessError> {
    // Theorem 1 on random overlapping instances, every sigma, sampled mode;
    // plus the exact stratified mode at sigma = 0.
    let mut residuals = Vec::new();
    let mut theorem1_pass = true;
    let mut theorem1_rows = 0usize;
    let mut theorem1_max = 0.0f64;
    let mut strat_pass = true;
    let mut strat_max = 0.0f64;

    struct InstanceOutcome {
        rows: Vec<MoeResidualRow>,
        pass: bool,
        max_residual: f64,
        strat_pass: bool,
        strat_max: f64,
        checked: usize,
    }

    let sigmas = moe.sigmas.clone();
    let instance_results: Vec<InstanceOutcome> = (0..moe.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(moe.seed, 100 + i as u64));
            let mut out = InstanceOutcome {
                rows: Vec::new(),
                pass: true,
                max_residual: 0.0,
                strat_pass: true,
                strat_max: 0.0,
                checked: 0,
            };
            for &sigma in &sigmas {
                let payoff = random_overlap_instance(&mut rng, sigma);
                let policy = SamplingPolicy::uniform(payoff.radices().to_vec());
                let est = moe_estimate(&payoff, &policy, moe.samples, &mut rng);
                let report = verify_theorem1(
                    &payoff,
                    &policy,
                    &est,
                    ResidualBound::StandardErrors { sigmas: moe.tolerance_sigmas },
                )
                .expect("uniform policy has full support");
                out.pass &= report.all_pass;
                out.max_residual = out.max_residual.max(report.max_residual);
                out.checked += report.rows.len();
                for row in &report.rows {
                    out.rows.push(MoeResidualRow {
                        instance: i,
                        sigma,
                        mode: "sampled",
                        action_flat: row.action_flat,
                        residual: row.residual,
                        bound: row.bound,
                        pass: row.pass,
                    });
                }
                if sigma == 0.0 {
                    let est = moe_estimate_stratified(&payoff, moe.samples, &mut rng);
                    let report = verify_theorem1(
                        &payoff,
                        &policy,
                        &est,
                        ResidualBound::Absolute { tol: moe.stratified_tolerance },
                    )
                    .expect("uniform policy has full support");
                    out.strat_pass &= report.all_pass;
                    out.strat_max = out.strat_max.max(report.max_residual);
                    for row in &report.rows {
                        out.rows.push(MoeResidualRow {
                            instance: i,
                            sigma,
                            mode: "stratified",
                            action_flat: row.action_flat,
                            residual: row.residual,
                            bound: row.bound,
                            pass: row.pass,
                        });
                    }
                }
            }
            out
        })
        .collect();
    for out in instance_results {
        theorem1_pass &= out.pass;
        theorem1_rows += out.checked;
        theorem1_max = theorem1_max.max(out.max_residual);
        strat_pass &= out.strat_pass;
        strat_max = strat_max.max(out.strat_max);
        residuals.extend(out.rows);
    }

    // Theorem 2: disjoint instances under the gap condition.
    let theorem2: Vec<(bool, bool)> = (0..moe.theorem2_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(moe.seed, 2_000 + i as u64));
            let payoff = loop {
                let candidate = random_disjoint_instance(&mut rng, moe.theorem2_sigma);
                let policy = SamplingPolicy::uniform(candidate.radices().to_vec());
                let (gap, se) = gap_and_expected_se(&candidate, &policy, moe.theorem2_samples);
                if gap > 6.0 * se {
                    break candidate;
                }
            };
            let policy = SamplingPolicy::uniform(payoff.radices().to_vec());
            let est = moe_estimate(&payoff, &policy, moe.theorem2_samples, &mut rng);
            let noisy = verify_theorem2(&payoff, &est).expect("valid instance").recovered;
            let mut noise_free = payoff.clone();
            noise_free.noise_sigma = 0.0;
            let est0 = moe_estimate(&noise_free, &policy, moe.theorem2_samples, &mut rng);
            let clean = verify_theorem2(&noise_free, &est0).expect("valid instance").recovered;
            (noisy, clean)
        })
        .collect();
    let theorem2_recovered = theorem2.iter().filter(|&&(noisy, _)| noisy).count();
    let theorem2_noise_free = theorem2.iter().filter(|&&(_, clean)| clean).count();

    // Theorem 3: constructed epsilon-local instances, exhaustive limit.
    let theorem3: Vec<(bool, f64)> = (0..moe.theorem3_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(moe.seed, 3_000 + i as u64));
            let (payoff, policy) = theorem3_instance(&mut rng, moe.theorem3_epsilon);
            let report = check_theorem3(&payoff, &policy, moe.theorem3_epsilon)
                .expect("constructed instance is valid");
            (
                report.condition_holds
                    && report.realized_suboptimality <= moe.theorem3_epsilon + 1e-9,
                report.realized_suboptimality,
            )
        })
        .collect();
    let theorem3_pass = theorem3.iter().all(|&(ok, _)| ok);
    let theorem3_max = theorem3.iter().fold(0.0f64, |m, &(_, s)| m.max(s));

    Ok(MoeVerifyOutcome {
        theorem1_pass,
        theorem1_rows,
        theorem1_max_residual: theorem1_max,
        theorem1_stratified_pass: strat_pass,
        theorem1_stratified_max_residual: strat_max,
        theorem2_recovered,
        theorem2_total: moe.theorem2_instances,
        theorem2_noise_free_recovered: theorem2_noise_free,
        theorem3_pass,
        theorem3_max_suboptimality: theorem3_max,
        theorem3_instances: moe.theorem3_instances,
        residuals,
    })
}
