//! Acceptance suite: one test per criterion, each ending with a single
//! `ACCEPTANCE <n> PASS` line. Criteria 7–9 replay the benchmark experiments
//! and take the bulk of the runtime.

use fvpomcp::bapomdp::{BayesAdaptiveModel, PriorConfig};
use fvpomcp::domains::toy::TabularChain;
use fvpomcp::domains::{firefighting_default, FireFighting, DEFAULT_EXPLICIT_CAP};
use fvpomcp::graph::{brute_force_argmax, evaluate_tables, ve_argmax, LocalTable, TieBreak};
use fvpomcp::harness::{
    csv_without_timing, run_moe_verify, run_sweep, AggregateRow, Algorithm, ExperimentConfig,
    MoeSection, MoeVerifyOutcome,
};
use fvpomcp::model::{CoordinationGraph, GenerativeModel, JointObservation};
use fvpomcp::planner::{
    FactoredStatsPomcp, FactoredTreesPomcp, FlatPomcp, OnlinePlanner, PlannerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn planner_cfg(sims: u32, seed: u64) -> PlannerConfig {
    PlannerConfig { num_simulations: sims, seed, ..PlannerConfig::default() }
}

/// 95% confidence interval of `hi` lies strictly above that of `lo`.
fn ci_above(hi: &AggregateRow, lo: &AggregateRow) -> bool {
    let (hm, hs) = (hi.mean_return, hi.std_error.expect("needs >= 2 episodes"));
    let (lm, ls) = (lo.mean_return, lo.std_error.expect("needs >= 2 episodes"));
    hm - 1.96 * hs > lm + 1.96 * ls
}

fn base_config(agents: usize, horizon: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.domain.name = "firefighting".into();
    cfg.domain.agents = agents;
    cfg.domain.horizon = horizon;
    cfg.experiment.workers = 0;
    cfg
}

#[test]
fn criterion_01_variable_elimination_matches_brute_force() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for instance in 0..200 {
        let n = rng.gen_range(3..=6usize);
        let radices: Vec<u32> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
        let mut tables = Vec::new();
        let mut covered = vec![false; n];
        for _ in 0..rng.gen_range(2..=4usize) {
            let k = rng.gen_range(2..=3usize.min(n));
            let mut agents: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                agents.swap(i, rng.gen_range(0..=i));
            }
            let mut scope = agents[..k].to_vec();
            scope.sort_unstable();
            for &a in &scope {
                covered[a] = true;
            }
            let r: Vec<u32> = scope.iter().map(|&a| radices[a]).collect();
            let len: usize = r.iter().map(|&x| x as usize).product();
            // integer-valued tables: sums of table entries compare exactly
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-50..=50) as f64).collect();
            tables.push(LocalTable::new(scope, r, values));
        }
        for (a, c) in covered.iter().enumerate() {
            if !c {
                tables.push(LocalTable::new(
                    vec![a],
                    vec![radices[a]],
                    (0..radices[a]).map(|_| rng.gen_range(-50..=50) as f64).collect(),
                ));
            }
        }
        let order: Vec<usize> = (0..n).collect();
        let (ve_action, ve_value) =
            ve_argmax(tables.clone(), &order, 1 << 30, TieBreak::Lowest).unwrap();
        let (bf_action, bf_value) = brute_force_argmax(&tables, &radices, 1 << 30).unwrap();
        assert_eq!(ve_value, bf_value, "instance {instance}: max value must match exactly");
        // action agreement up to tie-class: both achieve the maximum exactly
        assert_eq!(evaluate_tables(&tables, &ve_action), bf_value, "instance {instance}");
        assert_eq!(evaluate_tables(&tables, &bf_action), bf_value, "instance {instance}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}, budget 10 s");
    println!(
        "ACCEPTANCE 1 PASS: variable elimination matched brute force on 200 instances in {elapsed:.2?}"
    );
}

#[test]
fn criterion_02_reduction_law_exact_equality() {
    // single full-scope component on a deterministic two-agent toy domain:
    // factored statistics, factored trees and flat POMCP must produce
    // identical action sequences and root statistics under a shared seed
    let horizon = 4;
    let rewards: Vec<Vec<f64>> = (0..horizon)
        .map(|t| (0..4).map(|a| ((t * 4 + a) % 7) as f64 - 3.0).collect())
        .collect();
    let chain = TabularChain::new(vec![2, 2], rewards);
    let graph = CoordinationGraph::full(2);
    let obs = JointObservation::from_flat(0, chain.spec().obs_counts());

    for episode in 0..10u64 {
        let seed = 0xC2_00 + episode;
        let mut flat = FlatPomcp::new(&chain, &planner_cfg(64, seed)).unwrap();
        let mut fs = FactoredStatsPomcp::new(&chain, graph.clone(), &planner_cfg(64, seed)).unwrap();
        let mut ft = FactoredTreesPomcp::new(&chain, graph.clone(), &planner_cfg(64, seed)).unwrap();
        for step in 0..horizon {
            let a_flat = flat.plan().unwrap();
            let a_fs = fs.plan().unwrap();
            let a_ft = ft.plan().unwrap();
            assert_eq!(a_flat, a_fs, "episode {episode}: factored statistics diverged");
            assert_eq!(a_flat, a_ft, "episode {episode}: factored trees diverged");

            let flat_stats = flat.root_stats();
            if step == 0 {
                // fresh root: every simulation passes through it exactly once
                assert_eq!(flat.root_visit_count(), 64);
            }
            assert_eq!(&flat_stats, &fs.root_component_stats()[0], "episode {episode}");
            assert_eq!(&flat_stats, &ft.root_component_stats()[0], "episode {episode}");
            assert_eq!(ft.root_visit_counts(), vec![flat.root_visit_count()]);

            flat.advance_root(&a_flat, &obs).unwrap();
            fs.advance_root(&a_flat, &obs).unwrap();
            ft.advance_root(&a_flat, &obs).unwrap();
        }
    }
    println!(
        "ACCEPTANCE 2 PASS: flat, factored-statistics and factored-trees planners were \
         bit-identical over 10 episodes with a single full-scope component"
    );
}

static MOE_OUTCOME: OnceLock<(MoeVerifyOutcome, Duration)> = OnceLock::new();

fn moe_outcome() -> &'static (MoeVerifyOutcome, Duration) {
    MOE_OUTCOME.get_or_init(|| {
        let section = MoeSection::default();
        assert_eq!(section.instances, 50);
        assert_eq!(section.samples, 1_000_000);
        assert_eq!(section.sigmas, vec![0.0, 0.5, 2.0]);
        assert_eq!(section.theorem2_instances, 100);
        assert_eq!(section.theorem3_instances, 20);
        let started = Instant::now();
        let outcome = run_moe_verify(&section).expect("moe bench runs");
        (outcome, started.elapsed())
    })
}

#[test]
fn criterion_03_theorem1_residuals() {
    let (outcome, elapsed) = moe_outcome();
    assert!(
        outcome.theorem1_pass,
        "sampled residuals exceeded 4 combined standard errors (max {})",
        outcome.theorem1_max_residual
    );
    assert!(
        outcome.theorem1_stratified_pass,
        "stratified noise-free residuals exceeded 1e-10 (max {})",
        outcome.theorem1_stratified_max_residual
    );
    assert!(*elapsed < Duration::from_secs(300), "took {elapsed:?}, budget 5 min");
    println!(
        "ACCEPTANCE 3 PASS: {} residuals within 4 SE (max {:.2e}), stratified max {:.2e}, in {:.2?}",
        outcome.theorem1_rows,
        outcome.theorem1_max_residual,
        outcome.theorem1_stratified_max_residual,
        elapsed
    );
}

#[test]
fn criterion_04_theorem2_recovery() {
    let (outcome, _) = moe_outcome();
    assert!(
        outcome.theorem2_recovered >= 99,
        "only {}/100 noisy instances recovered the argmax",
        outcome.theorem2_recovered
    );
    assert_eq!(
        outcome.theorem2_noise_free_recovered, outcome.theorem2_total,
        "noise-free recovery must be exact"
    );
    println!(
        "ACCEPTANCE 4 PASS: argmax recovered on {}/100 noisy and {}/100 noise-free disjoint instances",
        outcome.theorem2_recovered, outcome.theorem2_noise_free_recovered
    );
}

#[test]
fn criterion_05_theorem3_epsilon_bound() {
    let (outcome, _) = moe_outcome();
    assert!(
        outcome.theorem3_pass,
        "suboptimality exceeded epsilon (max {})",
        outcome.theorem3_max_suboptimality
    );
    println!(
        "ACCEPTANCE 5 PASS: {} constructed instances stayed within epsilon (max suboptimality {:.2e})",
        outcome.theorem3_instances, outcome.theorem3_max_suboptimality
    );
}

#[test]
fn criterion_06_bayes_adaptive_consistency() {
    // strength 1e6 and flatness 0: the one-step return distribution of a
    // fixed policy under the wrapper must match the true model within total
    // variation 0.01 over 1e5 draws
    let ff = firefighting_default(4, 1);
    let explicit = ff.explicit_model(DEFAULT_EXPLICIT_CAP).unwrap();
    let prior = PriorConfig {
        transition_strength: 1e6,
        observation_strength: 1e6,
        observation_flatness: 0.0,
    };
    let ba = BayesAdaptiveModel::new(&explicit, &prior).unwrap();
    let action = ff.spec().joint_action_from_flat(40);
    let draws = 100_000usize;

    let mut true_rewards = std::collections::HashMap::new();
    let mut true_obs = vec![0usize; ff.spec().num_joint_observations() as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    for _ in 0..draws {
        let s = ff.sample_initial_state(&mut rng);
        let step = ff.step(&s, &action, &mut rng).unwrap();
        *true_rewards.entry(step.reward.to_bits()).or_insert(0usize) += 1;
        true_obs[step.observation.flat() as usize] += 1;
    }

    let mut ba_rewards = std::collections::HashMap::new();
    let mut ba_obs = vec![0usize; ff.spec().num_joint_observations() as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6_0001);
    for _ in 0..draws {
        let s = ba.sample_initial_state(&mut rng);
        let step = ba.step(&s, &action, &mut rng).unwrap();
        *ba_rewards.entry(step.reward.to_bits()).or_insert(0usize) += 1;
        ba_obs[step.observation.flat() as usize] += 1;
    }

    let keys: std::collections::HashSet<u64> =
        true_rewards.keys().chain(ba_rewards.keys()).copied().collect();
    let tv_rewards: f64 = keys
        .iter()
        .map(|k| {
            let p = *true_rewards.get(k).unwrap_or(&0) as f64 / draws as f64;
            let q = *ba_rewards.get(k).unwrap_or(&0) as f64 / draws as f64;
            (p - q).abs()
        })
        .sum::<f64>()
        / 2.0;
    assert!(tv_rewards <= 0.01, "return distribution TV {tv_rewards}");

    // supporting check: the sampled observation distribution agrees as well
    let tv_obs: f64 = true_obs
        .iter()
        .zip(&ba_obs)
        .map(|(&a, &b)| (a as f64 - b as f64).abs() / draws as f64)
        .sum::<f64>()
        / 2.0;
    assert!(tv_obs <= 0.01, "observation distribution TV {tv_obs}");
    println!(
        "ACCEPTANCE 6 PASS: one-step return TV {tv_rewards:.4} and observation TV {tv_obs:.4} \
         within 0.01 at prior strength 1e6"
    );
}

#[test]
fn criterion_07_four_agent_firefighting_orderings() {
    let started = Instant::now();
    // 256 simulations, >= 1000 episodes: FT > POMCP, FS > POMCP, POMCP > random
    let mut cfg = base_config(4, 10);
    cfg.experiment.id = "accept7-small".into();
    cfg.experiment.base_seed = 41_000;
    cfg.experiment.episodes = 1000;
    cfg.planner.algorithms =
        vec![Algorithm::Random, Algorithm::Pomcp, Algorithm::Fs, Algorithm::Ft];
    cfg.planner.budgets = vec![256];
    let small = run_sweep(&cfg).unwrap();
    let random = small.aggregate_for(Algorithm::Random, 256).unwrap();
    let pomcp = small.aggregate_for(Algorithm::Pomcp, 256).unwrap();
    let fs = small.aggregate_for(Algorithm::Fs, 256).unwrap();
    let ft = small.aggregate_for(Algorithm::Ft, 256).unwrap();
    let fmt = |a: &AggregateRow| format!("{:.3} ± {:.3}", a.mean_return, a.std_error.unwrap());
    let detail = format!(
        "random {}, pomcp {}, fs {}, ft {}",
        fmt(random),
        fmt(pomcp),
        fmt(fs),
        fmt(ft)
    );
    assert!(ci_above(ft, pomcp), "FT must beat POMCP at 256 simulations: {detail}");
    assert!(ci_above(fs, pomcp), "FS must beat POMCP at 256 simulations: {detail}");
    assert!(ci_above(pomcp, random), "POMCP must beat random at 256 simulations: {detail}");

    // 65536 simulations: POMCP has caught up with the plateaued FT
    let mut cfg = base_config(4, 10);
    cfg.experiment.id = "accept7-large".into();
    cfg.experiment.base_seed = 42_000;
    cfg.experiment.episodes = 200;
    cfg.planner.algorithms = vec![Algorithm::Pomcp, Algorithm::Ft];
    cfg.planner.budgets = vec![65_536];
    let large = run_sweep(&cfg).unwrap();
    let pomcp_l = large.aggregate_for(Algorithm::Pomcp, 65_536).unwrap();
    let ft_l = large.aggregate_for(Algorithm::Ft, 65_536).unwrap();
    assert!(
        pomcp_l.mean_return >= ft_l.mean_return - ft_l.std_error.unwrap(),
        "POMCP at 65536 sims must be within one SE of FT: pomcp {}, ft {}",
        fmt(pomcp_l),
        fmt(ft_l)
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(7200), "took {elapsed:?}, budget 2 h");
    println!(
        "ACCEPTANCE 7 PASS: at 256 sims {detail}; at 65536 sims pomcp {} vs ft {}; in {:.0?}",
        fmt(pomcp_l),
        fmt(ft_l),
        elapsed
    );
}

#[test]
fn criterion_08_ten_agent_firefighting_orderings() {
    let started = Instant::now();
    let mut cfg = base_config(10, 10);
    cfg.experiment.id = "accept8".into();
    cfg.experiment.base_seed = 48_000;
    cfg.experiment.episodes = 200;
    cfg.planner.algorithms =
        vec![Algorithm::Random, Algorithm::Pomcp, Algorithm::Fs, Algorithm::Ft];
    cfg.planner.budgets = vec![4096];
    let sweep = run_sweep(&cfg).unwrap();
    let random = sweep.aggregate_for(Algorithm::Random, 4096).unwrap();
    let pomcp = sweep.aggregate_for(Algorithm::Pomcp, 4096).unwrap();
    let fs = sweep.aggregate_for(Algorithm::Fs, 4096).unwrap();
    let ft = sweep.aggregate_for(Algorithm::Ft, 4096).unwrap();
    let fmt = |a: &AggregateRow| format!("{:.3} ± {:.3}", a.mean_return, a.std_error.unwrap());
    let detail = format!(
        "random {}, pomcp {}, fs {}, ft {}",
        fmt(random),
        fmt(pomcp),
        fmt(fs),
        fmt(ft)
    );
    assert!(ci_above(fs, pomcp), "FS must beat flat POMCP on 10 agents: {detail}");
    assert!(ci_above(ft, pomcp), "FT must beat flat POMCP on 10 agents: {detail}");
    let combined =
        (pomcp.std_error.unwrap().powi(2) + random.std_error.unwrap().powi(2)).sqrt();
    assert!(
        (pomcp.mean_return - random.mean_return).abs() <= 2.0 * combined,
        "flat POMCP must stay within 2 SE of random: {detail}"
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(4 * 3600), "took {elapsed:?}, budget 4 h");
    println!("ACCEPTANCE 8 PASS: {detail}; in {:.0?}", elapsed);
}

#[test]
fn criterion_09_bayes_adaptive_reproduction() {
    let started = Instant::now();
    // learning experiments: plan on the wrapped model, act in the true one
    let mut cfg = base_config(4, 10);
    cfg.experiment.id = "accept9-ba".into();
    cfg.experiment.base_seed = 49_000;
    cfg.experiment.episodes = 500;
    cfg.planner.algorithms = vec![Algorithm::BaPomcp, Algorithm::BaFs, Algorithm::BaFt];
    cfg.planner.budgets = vec![4096];
    let ba = run_sweep(&cfg).unwrap();
    let ba_pomcp = ba.aggregate_for(Algorithm::BaPomcp, 4096).unwrap();
    let ba_fs = ba.aggregate_for(Algorithm::BaFs, 4096).unwrap();
    let ba_ft = ba.aggregate_for(Algorithm::BaFt, 4096).unwrap();

    let mut cfg = base_config(4, 10);
    cfg.experiment.id = "accept9-proxy".into();
    cfg.experiment.base_seed = 49_500;
    cfg.experiment.episodes = 200;
    cfg.planner.algorithms = vec![Algorithm::PomcpTrueProxy];
    cfg.planner.budgets = vec![4096];
    let proxy_sweep = run_sweep(&cfg).unwrap();
    let proxy = proxy_sweep.aggregate_for(Algorithm::PomcpTrueProxy, 4096).unwrap();

    let mut cfg = base_config(4, 10);
    cfg.experiment.id = "accept9-random".into();
    cfg.experiment.base_seed = 49_900;
    cfg.experiment.episodes = 1000;
    cfg.planner.algorithms = vec![Algorithm::Random];
    cfg.planner.budgets = vec![4096];
    let random_sweep = run_sweep(&cfg).unwrap();
    let random = random_sweep.aggregate_for(Algorithm::Random, 4096).unwrap();

    let fmt = |a: &AggregateRow| format!("{:.3} ± {:.3}", a.mean_return, a.std_error.unwrap());
    let detail = format!(
        "random {}, ba-pomcp {}, ba-fs {}, ba-ft {}, true-model proxy {}",
        fmt(random),
        fmt(ba_pomcp),
        fmt(ba_fs),
        fmt(ba_ft),
        fmt(proxy)
    );
    assert!(ci_above(ba_fs, ba_pomcp), "BA-FS must beat BA-POMCP: {detail}");
    assert!(ci_above(ba_ft, ba_pomcp), "BA-FT must beat BA-POMCP: {detail}");

    let gap = proxy.mean_return - random.mean_return;
    assert!(gap > 0.0, "the true-model proxy must beat random: {detail}");
    let threshold = random.mean_return + 0.7 * gap;
    assert!(
        ba_fs.mean_return >= threshold,
        "BA-FS must close 70% of the random-to-proxy gap (needs {threshold:.3}): {detail}"
    );
    assert!(
        ba_ft.mean_return >= threshold,
        "BA-FT must close 70% of the random-to-proxy gap (needs {threshold:.3}): {detail}"
    );
    let elapsed = started.elapsed();
    println!("ACCEPTANCE 9 PASS: {detail}; 70% threshold {threshold:.3}; in {:.0?}", elapsed);
}

#[test]
fn criterion_10_per_simulation_cost() {
    // ten agents: flat POMCP enumerates 59049 joint actions per selection,
    // factored statistics runs width-1 variable elimination
    let ff = firefighting_default(10, 10);
    let graph = FireFighting::factorization(10);
    let sims = 2048u32;

    // warm up allocators and caches with a small budget
    FlatPomcp::new(&ff, &planner_cfg(64, 1)).unwrap().plan().unwrap();
    FactoredStatsPomcp::new(&ff, graph.clone(), &planner_cfg(64, 1)).unwrap().plan().unwrap();

    let mut flat = FlatPomcp::new(&ff, &planner_cfg(sims, 0xC10)).unwrap();
    let started = Instant::now();
    flat.plan().unwrap();
    let flat_per_sim = started.elapsed().as_secs_f64() / sims as f64;

    let mut fs = FactoredStatsPomcp::new(&ff, graph, &planner_cfg(sims, 0xC10)).unwrap();
    let started = Instant::now();
    fs.plan().unwrap();
    let fs_per_sim = started.elapsed().as_secs_f64() / sims as f64;

    assert!(
        fs_per_sim < 0.25 * flat_per_sim,
        "factored statistics must be at least 4x faster per simulation: \
         fs {:.1} us vs flat {:.1} us",
        fs_per_sim * 1e6,
        flat_per_sim * 1e6
    );
    println!(
        "ACCEPTANCE 10 PASS: mean time per simulation fs {:.1} us vs flat {:.1} us (ratio {:.3})",
        fs_per_sim * 1e6,
        flat_per_sim * 1e6,
        fs_per_sim / flat_per_sim
    );
}

#[test]
fn criterion_11_csv_determinism() {
    let mut cfg = base_config(4, 10);
    cfg.experiment.id = "accept11".into();
    cfg.experiment.base_seed = 51_000;
    cfg.experiment.episodes = 25;
    cfg.planner.algorithms =
        vec![Algorithm::Random, Algorithm::Pomcp, Algorithm::Fs, Algorithm::Ft];
    cfg.planner.budgets = vec![64];
    let first = run_sweep(&cfg).unwrap();
    let second = run_sweep(&cfg).unwrap();
    let a = csv_without_timing(&first.episodes_csv(&cfg.experiment.id));
    let b = csv_without_timing(&second.episodes_csv(&cfg.experiment.id));
    assert_eq!(a, b, "episode CSV must be byte-identical apart from timing");

    // and independent of the worker count
    cfg.experiment.workers = 3;
    let third = run_sweep(&cfg).unwrap();
    let c = csv_without_timing(&third.episodes_csv(&cfg.experiment.id));
    assert_eq!(a, c, "episode CSV must not depend on the worker count");
    println!("ACCEPTANCE 11 PASS: rerun and worker-count CSVs byte-identical modulo timing");
}
