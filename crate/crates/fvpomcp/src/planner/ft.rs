//! Factored-trees planner: one lookahead tree per coordination-graph
//! component, keyed by projected local histories and traversed in lockstep by
//! each simulation. Two joint histories that agree on a component's agents
//! reach the same node in that component's tree, pooling statistics and
//! particles across joint histories.
//!
//! Execution-time beliefs come from a designated global particle filter over
//! the realized joint history, updated by rejection resampling. The per-tree
//! filters hold full states conditioned on local histories; they seed
//! simulations only when the global filter collapses.

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
    table: ComponentTable,
    children: HashMap<(u64, u64), usize>,
    particles: Vec<S>,
}

struct Tree<S> {
    nodes: Vec<Node<S>>,
    root: usize,
}

impl<S> Tree<S> {
    fn child_or_create(&mut self, node: usize, key: (u64, u64), shell: impl FnOnce() -> Node<S>) -> usize {
        if let Some(&c) = self.nodes[node].children.get(&key) {
            return c;
        }
        self.nodes.push(shell());
        let id = self.nodes.len() - 1;
        self.nodes[node].children.insert(key, id);
        id
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
                    table: ComponentTable::new(Vec::new(), Vec::new(), 0.0),
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
}

/// FV-POMCP with factored trees.
pub struct FactoredTreesPomcp<'m, G: GenerativeModel> {
    model: &'m G,
    graph: CoordinationGraph,
    res: Resolved,
    sim_rng: ChaCha8Rng,
    advance_rng: ChaCha8Rng,
    trees: Vec<Tree<G::State>>,
    /// The designated global particle filter at the realized joint history.
    root_belief: Vec<G::State>,
    steps_executed: usize,
    diag: Diagnostics,
    last_advance: Option<AdvanceStatus>,
}

impl<'m, G: GenerativeModel> FactoredTreesPomcp<'m, G> {
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
            trees: Vec::new(),
            root_belief,
            steps_executed: 0,
            diag: Diagnostics::default(),
            last_advance: None,
        };
        planner.reset_trees();
        Ok(planner)
    }

    fn shell(&self, component: usize) -> Node<G::State> {
        Node {
            expanded: false,
            n_visits: 0,
            table: ComponentTable::new(
                self.graph.components()[component].clone(),
                self.graph.local_radices(component, self.model.spec().action_counts()),
                self.res.v_init,
            ),
            children: HashMap::new(),
            particles: Vec::new(),
        }
    }

    fn reset_trees(&mut self) {
        self.trees = (0..self.graph.num_components())
            .map(|e| Tree { nodes: vec![self.shell(e)], root: 0 })
            .collect();
    }

    fn local_keys(&self, action: &JointAction, obs: &JointObservation) -> Vec<(u64, u64)> {
        let spec = self.model.spec();
        self.graph
            .components()
            .iter()
            .map(|scope| {
                (
                    action.project(scope, spec.action_counts()).flat(),
                    obs.project(scope, spec.obs_counts()).flat(),
                )
            })
            .collect()
    }

    fn select_action(&mut self, nodes: &[usize]) -> Result<JointAction, PlanError> {
        let (c, cap) = (self.res.c, self.res.ve_max_entries);
        let views: Vec<TableView> = self
            .trees
            .iter_mut()
            .zip(nodes)
            .map(|(tree, &nid)| {
                let n = &mut tree.nodes[nid];
                let n_visits = n.n_visits;
                ComponentTable::ucb_view(&mut n.table, n_visits, c)
            })
            .collect();
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
        nodes: &[usize],
        depth: usize,
        cutoff: usize,
    ) -> Result<f64, PlanError> {
        if depth >= cutoff {
            return Ok(0.0);
        }
        // A rollout is triggered if any component's node is new.
        let mut fresh = false;
        for (tree, &nid) in self.trees.iter_mut().zip(nodes) {
            if !tree.nodes[nid].expanded {
                tree.nodes[nid].expanded = true;
                fresh = true;
            }
        }
        if fresh {
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
        let action = self.select_action(nodes)?;
        let step = self.model.step(&state, &action, &mut self.sim_rng)?;
        let keys = self.local_keys(&action, &step.observation);
        let child_value = if depth + 1 >= cutoff || step.terminal {
            0.0
        } else {
            let mut children = Vec::with_capacity(self.trees.len());
            for (e, &key) in keys.iter().enumerate() {
                let shell = {
                    let scope = self.graph.components()[e].clone();
                    let radices =
                        self.graph.local_radices(e, self.model.spec().action_counts());
                    let v_init = self.res.v_init;
                    move || Node {
                        expanded: false,
                        n_visits: 0,
                        table: ComponentTable::new(scope, radices, v_init),
                        children: HashMap::new(),
                        particles: Vec::new(),
                    }
                };
                children.push(self.trees[e].child_or_create(nodes[e], key, shell));
            }
            self.simulate(step.next_state, &children, depth + 1, cutoff)?
        };
        let ret = step.reward + self.res.discount * child_value;
        // Every tree's node at the visited local history receives the same
        // sampled state and the same global return.
        for (e, (tree, &nid)) in self.trees.iter_mut().zip(nodes).enumerate() {
            let node = &mut tree.nodes[nid];
            node.particles.push(state.clone());
            node.n_visits += 1;
            node.table.update(keys[e].0, ret);
        }
        Ok(ret)
    }

    pub fn root_belief(&self) -> &[G::State] {
        &self.root_belief
    }

    pub fn root_visit_counts(&self) -> Vec<u64> {
        self.trees.iter().map(|t| t.nodes[t.root].n_visits).collect()
    }

    pub fn root_component_stats(&self) -> Vec<Vec<ExpertStats>> {
        self.trees.iter().map(|t| t.nodes[t.root].table.entries()).collect()
    }

    /// Nodes currently held by each component tree.
    pub fn tree_node_counts(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.nodes.iter().filter(|n| n.expanded).count()).collect()
    }

    /// Total visit count per tree; lockstep traversal keeps these equal.
    pub fn tree_visit_totals(&self) -> Vec<u64> {
        self.trees.iter().map(|t| t.nodes.iter().map(|n| n.n_visits).sum()).collect()
    }

    pub fn graph(&self) -> &CoordinationGraph {
        &self.graph
    }

}

impl<G: GenerativeModel> OnlinePlanner for FactoredTreesPomcp<'_, G> {
    fn plan(&mut self) -> Result<JointAction, PlanError> {
        if self.steps_executed >= self.res.horizon {
            return Err(PlanError::EpisodeOver);
        }
        if self.root_belief.is_empty() {
            return Err(PlanError::EmptyBelief);
        }
        let cutoff = self.res.cutoff(self.steps_executed);
        let roots: Vec<usize> = self
            .trees
            .iter_mut()
            .map(|t| {
                t.nodes[t.root].expanded = true;
                t.root
            })
            .collect();
        for _ in 0..self.res.num_simulations {
            let state = {
                let idx = crate::graph::pick_uniform(&mut self.sim_rng, self.root_belief.len());
                self.root_belief[idx].clone()
            };
            self.simulate(state, &roots, 0, cutoff)?;
            self.diag.simulations += 1;
        }
        let tables: Vec<LocalTable> = self
            .trees
            .iter()
            .map(|t| t.nodes[t.root].table.greedy_table())
            .collect();
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
        // Each tree advances independently; a tree whose child is missing is
        // reset while the others keep their statistics.
        let keys = self.local_keys(action, obs);
        let mut advanced = vec![false; self.trees.len()];
        for (e, &key) in keys.iter().enumerate() {
            let tree = &mut self.trees[e];
            let child = tree.nodes[tree.root]
                .children
                .get(&key)
                .copied()
                .filter(|&c| tree.nodes[c].expanded);
            match child {
                Some(c) => {
                    tree.prune_to(c);
                    advanced[e] = true;
                }
                None => {
                    let shell = self.shell(e);
                    self.trees[e] = Tree { nodes: vec![shell], root: 0 };
                    self.diag.tree_resets += 1;
                }
            }
        }

        let kept = rejection_resample(
            self.model,
            &mut self.advance_rng,
            &self.root_belief,
            action,
            obs.flat(),
            self.res.target_particles,
            self.res.resample_budget,
        )?;
        let status = if !kept.is_empty() {
            self.root_belief = kept;
            AdvanceStatus::Advanced
        } else {
            self.diag.fallback_resamples += 1;
            let pooled: Vec<G::State> = self
                .trees
                .iter()
                .zip(&advanced)
                .filter(|&(_, &adv)| adv)
                .flat_map(|(t, _)| t.nodes[t.root].particles.iter().cloned())
                .collect();
            if !pooled.is_empty() {
                self.root_belief = pooled;
                AdvanceStatus::Resampled
            } else {
                self.diag.belief_resets += 1;
                self.root_belief = draw_initial_belief(
                    self.model,
                    &mut self.advance_rng,
                    self.res.target_particles,
                );
                AdvanceStatus::ResetToInitial
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
