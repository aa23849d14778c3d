//! Baseline POMCP: one lookahead tree over joint histories with per-joint-
//! action statistics, root sampling from a particle belief, UCB action
//! selection by enumeration over all joint actions, and random rollouts at
//! the frontier.

use super::{
    draw_initial_belief, rejection_resample, rollout, split_streams, uniform_action,
    AdvanceStatus, Diagnostics, OnlinePlanner, PlanError, PlannerConfig, Resolved,
};
use crate::graph::{ComponentTable, ExpertStats, TieBreak};
use crate::model::{GenerativeModel, JointAction, JointObservation, ModelError};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

struct Node<S> {
    expanded: bool,
    n_visits: u64,
    /// Full-scope statistics table: one `(n, q)` entry per joint action.
    stats: ComponentTable,
    children: HashMap<(u64, u64), usize>,
    particles: Vec<S>,
}

impl<S> Node<S> {
    fn shell(scope: &[usize], radices: &[u32], v_init: f64) -> Self {
        Self {
            expanded: false,
            n_visits: 0,
            stats: ComponentTable::new(scope.to_vec(), radices.to_vec(), v_init),
            children: HashMap::new(),
            particles: Vec::new(),
        }
    }
}

/// Flat POMCP over joint actions and joint observations.
pub struct FlatPomcp<'m, G: GenerativeModel> {
    model: &'m G,
    res: Resolved,
    full_scope: Vec<usize>,
    elimination_order: Vec<usize>,
    sim_rng: ChaCha8Rng,
    advance_rng: ChaCha8Rng,
    nodes: Vec<Node<G::State>>,
    root: usize,
    root_belief: Vec<G::State>,
    steps_executed: usize,
    diag: Diagnostics,
    last_advance: Option<AdvanceStatus>,
    record_root_returns: bool,
    root_returns: Vec<(u64, f64)>,
}

impl<'m, G: GenerativeModel> FlatPomcp<'m, G> {
    pub fn new(model: &'m G, config: &PlannerConfig) -> Result<Self, PlanError> {
        let spec = model.spec();
        let res = config.resolve(spec)?;
        let num_actions = spec.num_joint_actions();
        if num_actions > config.enumeration_cap {
            return Err(PlanError::Model(ModelError::EnumerationCap {
                size: num_actions,
                cap: config.enumeration_cap,
            }));
        }
        let (sim_rng, mut advance_rng) = split_streams(config.seed);
        let root_belief = draw_initial_belief(model, &mut advance_rng, res.target_particles);
        let full_scope: Vec<usize> = (0..spec.num_agents()).collect();
        let mut planner = Self {
            model,
            res,
            elimination_order: full_scope.clone(),
            full_scope,
            sim_rng,
            advance_rng,
            nodes: Vec::new(),
            root: 0,
            root_belief,
            steps_executed: 0,
            diag: Diagnostics::default(),
            last_advance: None,
            record_root_returns: false,
            root_returns: Vec::new(),
        };
        planner.reset_tree();
        Ok(planner)
    }

    fn shell(&self) -> Node<G::State> {
        Node::shell(&self.full_scope, self.model.spec().action_counts(), self.res.v_init)
    }

    fn reset_tree(&mut self) {
        self.nodes = vec![self.shell()];
        self.root = 0;
    }

    fn child_or_create(&mut self, node: usize, a_flat: u64, z_flat: u64) -> usize {
        if let Some(&c) = self.nodes[node].children.get(&(a_flat, z_flat)) {
            return c;
        }
        let child = self.shell();
        self.nodes.push(child);
        let id = self.nodes.len() - 1;
        self.nodes[node].children.insert((a_flat, z_flat), id);
        id
    }

    fn select_action(&mut self, node: usize) -> Result<JointAction, PlanError> {
        let (c, cap) = (self.res.c, self.res.ve_max_entries);
        let n = &mut self.nodes[node];
        let n_visits = n.n_visits;
        let view = n.stats.ucb_view(n_visits, c);
        let (assignment, _) = crate::graph::ve_argmax_views(
            vec![view],
            &self.elimination_order,
            cap,
            TieBreak::UniformAmongInfinite(&mut self.sim_rng),
        )?;
        Ok(JointAction::new(assignment, self.model.spec().action_counts())
            .expect("elimination yields in-range indices"))
    }

    fn simulate(
        &mut self,
        state: G::State,
        node: usize,
        depth: usize,
        cutoff: usize,
    ) -> Result<f64, PlanError> {
        if depth >= cutoff {
            return Ok(0.0);
        }
        if !self.nodes[node].expanded {
            self.nodes[node].expanded = true;
            let value = rollout(
                self.model,
                &mut self.sim_rng,
                state,
                depth,
                cutoff,
                self.res.discount,
                self.res.rollout_depth_cap,
            )?;
            return Ok(value);
        }
        let action = self.select_action(node)?;
        let step = self.model.step(&state, &action, &mut self.sim_rng)?;
        let child_value = if depth + 1 >= cutoff || step.terminal {
            0.0
        } else {
            let child = self.child_or_create(node, action.flat(), step.observation.flat());
            self.simulate(step.next_state, child, depth + 1, cutoff)?
        };
        let ret = step.reward + self.res.discount * child_value;
        let n = &mut self.nodes[node];
        n.particles.push(state);
        n.n_visits += 1;
        n.stats.update(action.flat(), ret);
        if depth == 0 && self.record_root_returns {
            self.root_returns.push((action.flat(), ret));
        }
        Ok(ret)
    }

    /// Keep only the subtree under `new_root`, which becomes the root.
    fn prune_to(&mut self, new_root: usize) {
        let mut order = vec![new_root];
        let mut remap = HashMap::new();
        remap.insert(new_root, 0usize);
        let mut i = 0;
        while i < order.len() {
            let old = order[i];
            i += 1;
            for &child in self.nodes[old].children.values() {
                if !remap.contains_key(&child) {
                    remap.insert(child, order.len());
                    order.push(child);
                }
            }
        }
        let mut new_nodes = Vec::with_capacity(order.len());
        for &old in &order {
            let mut node = std::mem::replace(&mut self.nodes[old], Node::shell(&[], &[], 0.0));
            node.children = node.children.iter().map(|(&k, &v)| (k, remap[&v])).collect();
            new_nodes.push(node);
        }
        self.nodes = new_nodes;
        self.root = 0;
    }

    pub fn root_belief(&self) -> &[G::State] {
        &self.root_belief
    }

    pub fn root_visit_count(&self) -> u64 {
        self.nodes[self.root].n_visits
    }

    /// `(n, q)` per joint action at the root, in flat-index order.
    pub fn root_stats(&self) -> Vec<ExpertStats> {
        self.nodes[self.root].stats.entries()
    }

    /// Logical statistics entries stored per expanded node.
    pub fn stat_entries_per_node(&self) -> usize {
        self.nodes[self.root].stats.len()
    }

    pub fn expanded_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.expanded).count()
    }

    /// Record `(root action, credited return)` pairs during `plan`, so tests
    /// can check that Q(root, a) is the arithmetic mean of credited returns.
    pub fn set_record_root_returns(&mut self, on: bool) {
        self.record_root_returns = on;
    }

    pub fn root_returns(&self) -> &[(u64, f64)] {
        &self.root_returns
    }

    pub fn steps_executed(&self) -> usize {
        self.steps_executed
    }

    pub fn steps_executed(&self) -> usize {
        self.steps_executed
    }

    #[doc(hidden)]
    pub fn debug_rng_pos(&self) -> (u128, u128) {
        (self.sim_rng.get_word_pos(), self.advance_rng.get_word_pos())
    }

    #[doc(hidden)]
    pub fn debug_set_budget(&mut self, n: u32) {
        self.res.num_simulations = n;
    }

    #[doc(hidden)]
    pub fn debug_tree_dump(&self) -> Vec<(usize, u64, u64, usize, Vec<(u64, u64)>)> {
        // (depth, key-path-hash, n_visits, particle count, per-action (n, q bits)) in DFS order
        let mut out = Vec::new();
        let mut stack = vec![(self.root, 0usize, 0u64)];
        while let Some((id, depth, path)) = stack.pop() {
            let n = &self.nodes[id];
            let stats = n
                .stats
                .entries()
                .iter()
                .map(|e| (e.n, e.q.to_bits()))
                .collect();
            out.push((depth, path, n.n_visits, n.particles.len() + if n.expanded { 1000000 } else { 0 }, stats));
            let mut kids: Vec<((u64, u64), usize)> =
                n.children.iter().map(|(&k, &v)| (k, v)).collect();
            kids.sort();
            for (k, v) in kids.into_iter().rev() {
                stack.push((v, depth + 1, path.wrapping_mul(31).wrapping_add(k.0 * 7 + k.1)));
            }
        }
        out
    }
}

impl<G: GenerativeModel> OnlinePlanner for FlatPomcp<'_, G> {
    fn plan(&mut self) -> Result<JointAction, PlanError> {
        if self.steps_executed >= self.res.horizon {
            return Err(PlanError::EpisodeOver);
        }
        if self.root_belief.is_empty() {
            return Err(PlanError::EmptyBelief);
        }
        let cutoff = self.res.cutoff(self.steps_executed);
        self.nodes[self.root].expanded = true;
        self.root_returns.clear();
        for _ in 0..self.res.num_simulations {
            let state = {
                let idx = crate::graph::pick_uniform(&mut self.sim_rng, self.root_belief.len());
                self.root_belief[idx].clone()
            };
            self.simulate(state, self.root, 0, cutoff)?;
            self.diag.simulations += 1;
        }
        // Final selection: greedy over visited actions only.
        let table = self.nodes[self.root].stats.greedy_table();
        let (assignment, value) = crate::graph::ve_argmax(
            vec![table],
            &self.elimination_order,
            self.res.ve_max_entries,
            TieBreak::Lowest,
        )?;
        if value == f64::NEG_INFINITY {
            self.diag.greedy_fallbacks += 1;
            return Ok(uniform_action(self.model.spec(), &mut self.sim_rng));
        }
        Ok(JointAction::new(assignment, self.model.spec().action_counts())
            .expect("elimination yields in-range indices"))
    }

    fn advance_root(
        &mut self,
        action: &JointAction,
        obs: &JointObservation,
    ) -> Result<AdvanceStatus, PlanError> {
        self.steps_executed += 1;
        if self.steps_executed >= self.res.horizon {
            self.last_advance = Some(AdvanceStatus::EpisodeEnd);
            return Ok(AdvanceStatus::EpisodeEnd);
        }
        let child = self.nodes[self.root]
            .children
            .get(&(action.flat(), obs.flat()))
            .copied()
            .filter(|&c| {
                self.nodes[c].expanded && self.nodes[c].particles.len() >= self.res.min_particles
            });
        let status = match child {
            Some(c) => {
                self.root_belief = self.nodes[c].particles.clone();
                self.prune_to(c);
                AdvanceStatus::Advanced
            }
            None => {
                self.diag.fallback_resamples += 1;
                let kept = rejection_resample(
                    self.model,
                    &mut self.advance_rng,
                    &self.root_belief,
                    action,
                    obs.flat(),
                    self.res.target_particles,
                    self.res.resample_budget,
                )?;
                self.reset_tree();
                if kept.is_empty() {
                    self.diag.belief_resets += 1;
                    self.root_belief = draw_initial_belief(
                        self.model,
                        &mut self.advance_rng,
                        self.res.target_particles,
                    );
                    AdvanceStatus::ResetToInitial
                } else {
                    self.root_belief = kept;
                    AdvanceStatus::Resampled
                }
            }
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
