//! Factored-statistics planner: the lookahead tree still branches on joint
//! actions and joint observations, but each node stores one statistics table
//! per coordination-graph component instead of one entry per joint action.
//! Joint actions are selected by variable elimination over the summed
//! per-component upper confidence bounds, and every component's active expert
//! is updated with the same global return.

use super::{
    draw_initial_belief, rejection_resample, rollout, split_streams, uniform_action,
    AdvanceStatus, Diagnostics, OnlinePlanner, PlanError, PlannerConfig, Resolved,
};
use crate::graph::{ComponentTable, ExpertStats, LocalTable, TableView, TieBreak};
use crate::model::{CoordinationGraph, GenerativeModel, JointAction, JointObservation};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

struct Node<S> {
    expanded: bool,
    n_visits: u64,
    tables: Vec<ComponentTable>,
    children: HashMap<(u64, u64), usize>,
    particles: Vec<S>,
}

/// FV-POMCP with factored statistics over a joint-history tree.
pub struct FactoredStatsPomcp<'m, G: GenerativeModel> {
    model: &'m G,
    graph: CoordinationGraph,
    res: Resolved,
    sim_rng: ChaCha8Rng,
    advance_rng: ChaCha8Rng,
    nodes: Vec<Node<G::State>>,
    root: usize,
    root_belief: Vec<G::State>,
    steps_executed: usize,
    diag: Diagnostics,
    last_advance: Option<AdvanceStatus>,
}

impl<'m, G: GenerativeModel> FactoredStatsPomcp<'m, G> {
    pub fn new(
        model: &'m G,
        graph: CoordinationGraph,
        config: &PlannerConfig,
    ) -> Result<Self, PlanError> {
        let spec = model.spec();
        if graph.num_agents() != spec.num_agents() {
            return Err(PlanError::InvalidConfig(format!(
                "coordination graph covers {} agents but the problem has {}",
                graph.num_agents(),
                spec.num_agents()
            )));
        }
        let res = config.resolve(spec)?;
        let (sim_rng, mut advance_rng) = split_streams(config.seed);
        let root_belief = draw_initial_belief(model, &mut advance_rng, res.target_particles);
        let mut planner = Self {
            model,
            graph,
            res,
            sim_rng,
            advance_rng,
            nodes: Vec::new(),
            root: 0,
            root_belief,
            steps_executed: 0,
            diag: Diagnostics::default(),
            last_advance: None,
        };
        planner.reset_tree();
        Ok(planner)
    }

    fn shell(&self) -> Node<G::State> {
        let radices = self.model.spec().action_counts();
        let tables = self
            .graph
            .components()
            .iter()
            .enumerate()
            .map(|(e, scope)| {
                ComponentTable::new(
                    scope.clone(),
                    self.graph.local_radices(e, radices),
                    self.res.v_init,
                )
            })
            .collect();
        Node {
            expanded: false,
            n_visits: 0,
            tables,
            children: HashMap::new(),
            particles: Vec::new(),
        }
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

    fn local_action_flats(&self, action: &JointAction) -> Vec<u64> {
        let radices = self.model.spec().action_counts();
        self.graph
            .components()
            .iter()
            .map(|scope| action.project(scope, radices).flat())
            .collect()
    }

    fn select_action(&mut self, node: usize) -> Result<JointAction, PlanError> {
        let (c, cap) = (self.res.c, self.res.ve_max_entries);
        let n = &mut self.nodes[node];
        let n_visits = n.n_visits;
        let views: Vec<TableView> =
            n.tables.iter_mut().map(|t| ComponentTable::ucb_view(t, n_visits, c)).collect();
        let (assignment, _) = crate::graph::ve_argmax_views(
            views,
            self.graph.elimination_order(),
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
        let locals = self.local_action_flats(&action);
        let n = &mut self.nodes[node];
        n.particles.push(state);
        n.n_visits += 1;
        for (table, local) in n.tables.iter_mut().zip(locals) {
            table.update(local, ret);
        }
        Ok(ret)
    }

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
            let mut node = std::mem::replace(
                &mut self.nodes[old],
                Node {
                    expanded: false,
                    n_visits: 0,
                    tables: Vec::new(),
                    children: HashMap::new(),
                    particles: Vec::new(),
                },
            );
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

    /// Per-component `(n, q)` entries at the root.
    pub fn root_component_stats(&self) -> Vec<Vec<ExpertStats>> {
        self.nodes[self.root].tables.iter().map(|t| t.entries()).collect()
    }

    /// Logical statistics entries stored per node: `Σ_e Π_{i∈e} |A_i|`.
    pub fn stat_entries_per_node(&self) -> usize {
        self.nodes[self.root].tables.iter().map(|t| t.len()).sum()
    }

    pub fn expanded_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.expanded).count()
    }

    pub fn graph(&self) -> &CoordinationGraph {
        &self.graph
    }
}

impl<G: GenerativeModel> OnlinePlanner for FactoredStatsPomcp<'_, G> {
    fn plan(&mut self) -> Result<JointAction, PlanError> {
        if self.steps_executed >= self.res.horizon {
            return Err(PlanError::EpisodeOver);
        }
        if self.root_belief.is_empty() {
            return Err(PlanError::EmptyBelief);
        }
        let cutoff = self.res.cutoff(self.steps_executed);
        self.nodes[self.root].expanded = true;
        for _ in 0..self.res.num_simulations {
            let state = {
                let idx = crate::graph::pick_uniform(&mut self.sim_rng, self.root_belief.len());
                self.root_belief[idx].clone()
            };
            self.simulate(state, self.root, 0, cutoff)?;
            self.diag.simulations += 1;
        }
        let tables: Vec<LocalTable> =
            self.nodes[self.root].tables.iter().map(|t| t.greedy_table()).collect();
        let (assignment, value) = crate::graph::ve_argmax(
            tables,
            self.graph.elimination_order(),
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
