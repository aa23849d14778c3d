//! Factored value statistics and exact argmax over sums of restricted-scope
//! tables via variable elimination.
//!
//! Each coordination-graph component keeps one expert per local joint action:
//! a running mean of the *global* returns observed when that local action was
//! played, plus its visit count. Selection maximizes the sum of per-component
//! upper confidence bounds, which is a sum of restricted-scope functions and
//! therefore amenable to variable elimination — cost exponential only in the
//! induced width of the graph, not in the number of agents.

use crate::model::encode_joint;
use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(
        "variable elimination memory cap exceeded: intermediate scope {scope:?} \
         needs {entries} entries (cap {cap})"
    )]
    MemoryCap { scope: Vec<usize>, entries: u64, cap: u64 },
    #[error("agent {0} appears in no table")]
    AgentNotCovered(usize),
    #[error("joint enumeration cap exceeded: {size} actions (cap {cap})")]
    EnumerationCap { size: u64, cap: u64 },
    #[error("no value tables given")]
    NoTables,
}

/// Visit count and running mean of returns for one local joint action.
///
/// Before the first update the mean reads as the configured initial value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertStats {
    pub n: u64,
    pub q: f64,
}

impl ExpertStats {
    pub fn new(init_q: f64) -> Self {
        Self { n: 0, q: init_q }
    }

    /// Incremental mean update: after k updates the mean equals the
    /// arithmetic mean of the k returns fed in.
    pub fn update(&mut self, ret: f64) {
        self.n += 1;
        self.q += (ret - self.q) / self.n as f64;
    }
}

/// Upper confidence bound `q + c * sqrt(ln(N + 1) / n)`.
///
/// Unvisited entries (`n == 0`) are forced to `+inf` when `c > 0` so every
/// local action is tried at least once per node before exploitation; with
/// `c == 0` the bound degenerates to the mean.
pub fn ucb_value(stats: &ExpertStats, n_context: u64, c: f64) -> f64 {
    if c == 0.0 {
        return stats.q;
    }
    if stats.n == 0 {
        return f64::INFINITY;
    }
    stats.q + c * (((n_context + 1) as f64).ln() / stats.n as f64).sqrt()
}

/// Dense table of expert statistics for one component, indexed by local joint
/// action (mixed-radix over the component's agents, first agent most
/// significant).
///
/// Storage is allocated lazily on the first update; logically every entry
/// starts at `(n = 0, q = init_q)`.
#[derive(Debug, Clone)]
pub struct ComponentTable {
    scope: Vec<usize>,
    radices: Vec<u32>,
    init_q: f64,
    len: usize,
    stats: Option<Box<[ExpertStats]>>,
    /// Local actions visited at least once, in first-visit order.
    visited: Vec<u32>,
    // cached UCB values: unvisited entries never change, visited entries are
    // rewritten on each call, so selections avoid rebuilding the full table
    ucb_cache: Vec<f64>,
    cache_c: f64,
}

impl ComponentTable {
    pub fn new(scope: Vec<usize>, radices: Vec<u32>, init_q: f64) -> Self {
        debug_assert_eq!(scope.len(), radices.len());
        let len = radices.iter().map(|&r| r as usize).product();
        Self {
            scope,
            radices,
            init_q,
            len,
            stats: None,
            visited: Vec::new(),
            ucb_cache: Vec::new(),
            cache_c: f64::NAN,
        }
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn radices(&self) -> &[u32] {
        &self.radices
    }

    /// Number of expert entries (the local joint action space size).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stats(&self, local_flat: u64) -> ExpertStats {
        match &self.stats {
            Some(s) => s[local_flat as usize],
            None => ExpertStats::new(self.init_q),
        }
    }

    pub fn update(&mut self, local_flat: u64, ret: f64) {
        let init = ExpertStats::new(self.init_q);
        let stats = self.stats.get_or_insert_with(|| vec![init; self.len].into_boxed_slice());
        let entry = &mut stats[local_flat as usize];
        if entry.n == 0 {
            self.visited.push(local_flat as u32);
        }
        entry.update(ret);
    }

    /// Sum of visit counts over all local actions.
    pub fn total_visits(&self) -> u64 {
        self.stats.as_deref().map_or(0, |s| s.iter().map(|e| e.n).sum())
    }

    /// Borrowed UCB table over every local action, maintained incrementally:
    /// unvisited entries keep their forced-exploration value, visited entries
    /// are recomputed against the current context count.
    pub fn ucb_view(&mut self, n_context: u64, c: f64) -> TableView<'_> {
        let prefill =
            if c > 0.0 { f64::INFINITY } else { self.init_q };
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if self.ucb_cache.len() != self.len || !(self.cache_c == c) {
            self.ucb_cache.clear();
            self.ucb_cache.resize(self.len, prefill);
            self.cache_c = c;
        }
        let log_term = ((n_context + 1) as f64).ln();
        if let Some(stats) = &self.stats {
            for &i in &self.visited {
                let e = stats[i as usize];
                self.ucb_cache[i as usize] =
                    if c == 0.0 { e.q } else { e.q + c * (log_term / e.n as f64).sqrt() };
            }
        }
        TableView { scope: &self.scope, radices: &self.radices, values: &self.ucb_cache }
    }

    /// The UCB values of every local action as an owned value table.
    pub fn ucb_table(&mut self, n_context: u64, c: f64) -> LocalTable {
        let view = self.ucb_view(n_context, c);
        LocalTable {
            scope: view.scope.to_vec(),
            radices: view.radices.to_vec(),
            values: view.values.to_vec(),
        }
    }

    /// Mean-return table restricted to visited entries; unvisited local
    /// actions are `-inf` so the final greedy argmax never picks an action it
    /// has no information about.
    pub fn greedy_table(&self) -> LocalTable {
        let values = match &self.stats {
            Some(stats) => {
                stats.iter().map(|e| if e.n > 0 { e.q } else { f64::NEG_INFINITY }).collect()
            }
            None => vec![f64::NEG_INFINITY; self.len],
        };
        LocalTable { scope: self.scope.clone(), radices: self.radices.clone(), values }
    }

    /// Snapshot of all entries, for tests and diagnostics.
    pub fn entries(&self) -> Vec<ExpertStats> {
        match &self.stats {
            Some(s) => s.to_vec(),
            None => vec![ExpertStats::new(self.init_q); self.len],
        }
    }
}

/// One restricted-scope real-valued table: the building block of the factored
/// value function `Q(a) ≈ Σ_e Q_e(a_e)`. Entries may be `±inf` (forced
/// exploration / masked entries) but never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTable {
    pub scope: Vec<usize>,
    pub radices: Vec<u32>,
    pub values: Vec<f64>,
}

impl LocalTable {
    pub fn new(scope: Vec<usize>, radices: Vec<u32>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), radices.iter().map(|&r| r as usize).product::<usize>());
        debug_assert!(values.iter().all(|v| !v.is_nan()));
        Self { scope, radices, values }
    }
}

/// Tie handling for [`ve_argmax`].
///
/// Finite ties always resolve to the lowest local index at every elimination
/// step (deterministic, reproducible). Ties among `+inf` entries — actions
/// forced by exploration — are broken uniformly at random when an rng is
/// supplied, so exploration is not biased by index order. At a node where
/// everything is unvisited this makes the selected joint action uniform over
/// the whole joint action space.
pub enum TieBreak<'a> {
    Lowest,
    UniformAmongInfinite(&'a mut dyn RngCore),
}

struct BestResponse {
    agent: usize,
    context_scope: Vec<usize>,
    context_radices: Vec<u32>,
    choices: Vec<u32>,
}

/// A borrowed restricted-scope value table, the input form of
/// [`ve_argmax_views`].
#[derive(Debug, Clone, Copy)]
pub struct TableView<'a> {
    pub scope: &'a [usize],
    pub radices: &'a [u32],
    pub values: &'a [f64],
}

impl<'a> TableView<'a> {
    pub fn of(table: &'a LocalTable) -> Self {
        Self { scope: &table.scope, radices: &table.radices, values: &table.values }
    }
}

enum Values<'a> {
    Borrowed(&'a [f64]),
    Owned(Vec<f64>),
}

impl Values<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Values::Borrowed(v) => v,
            Values::Owned(v) => v,
        }
    }
}

struct WorkTable<'a> {
    scope: Vec<usize>,
    radices: Vec<u32>,
    values: Values<'a>,
}

/// Reusable buffers for [`ve_argmax_views`]; selections run every few
/// microseconds inside the planners, so per-call allocation is avoided.
#[derive(Default)]
struct VePool {
    f64s: Vec<Vec<f64>>,
    u32s: Vec<Vec<u32>>,
    usizes: Vec<Vec<usize>>,
    pairs: Vec<Vec<(usize, usize)>>,
}

impl VePool {
    fn f64s(&mut self) -> Vec<f64> {
        self.f64s.pop().unwrap_or_default()
    }
    fn u32s(&mut self) -> Vec<u32> {
        self.u32s.pop().unwrap_or_default()
    }
    fn usizes(&mut self) -> Vec<usize> {
        self.usizes.pop().unwrap_or_default()
    }
    fn pairs(&mut self) -> Vec<(usize, usize)> {
        self.pairs.pop().unwrap_or_default()
    }
    fn put_f64s(&mut self, mut v: Vec<f64>) {
        v.clear();
        self.f64s.push(v);
    }
    fn put_u32s(&mut self, mut v: Vec<u32>) {
        v.clear();
        self.u32s.push(v);
    }
    fn put_usizes(&mut self, mut v: Vec<usize>) {
        v.clear();
        self.usizes.push(v);
    }
    fn put_pairs(&mut self, mut v: Vec<(usize, usize)>) {
        v.clear();
        self.pairs.push(v);
    }
}

thread_local! {
    static VE_POOL: std::cell::RefCell<VePool> = std::cell::RefCell::new(VePool::default());
}

/// Exactly uniform draw from `0..n` (Lemire's multiply-shift with rejection).
///
/// Consumes one 64-bit draw except with probability ~n/2^64, independent of
/// `n`; planners rely on that so that planners holding beliefs of different
/// sizes stay aligned on a shared stream.
#[inline]
pub(crate) fn pick_uniform(rng: &mut dyn RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as u64;
    let mut m = rng.next_u64() as u128 * n as u128;
    let mut lo = m as u64;
    if lo < n {
        let threshold = n.wrapping_neg() % n;
        while lo < threshold {
            m = rng.next_u64() as u128 * n as u128;
            lo = m as u64;
        }
    }
    (m >> 64) as usize
}

/// Exact `argmax_a Σ_e f_e(a_e)` by variable elimination.
///
/// Every agent named in `order` must appear in at least one table scope.
/// Returns the maximizing per-agent assignment and the maximum value.
/// Intermediate tables larger than `max_entries` abort with
/// [`GraphError::MemoryCap`] naming the offending scope.
pub fn ve_argmax(
    tables: Vec<LocalTable>,
    order: &[usize],
    max_entries: u64,
    tie: TieBreak,
) -> Result<(Vec<u32>, f64), GraphError> {
    ve_argmax_views(tables.iter().map(TableView::of).collect(), order, max_entries, tie)
}

/// [`ve_argmax`] over borrowed tables; the hot path used by the planners.
pub fn ve_argmax_views(
    tables: Vec<TableView<'_>>,
    order: &[usize],
    max_entries: u64,
    tie: TieBreak,
) -> Result<(Vec<u32>, f64), GraphError> {
    VE_POOL.with(|pool| ve_argmax_pooled(&mut pool.borrow_mut(), tables, order, max_entries, tie))
}

fn ve_argmax_pooled(
    pool: &mut VePool,
    tables: Vec<TableView<'_>>,
    order: &[usize],
    max_entries: u64,
    mut tie: TieBreak,
) -> Result<(Vec<u32>, f64), GraphError> {
    if tables.is_empty() {
        return Err(GraphError::NoTables);
    }
    let num_agents = order.len();
    let mut work: Vec<WorkTable> = tables
        .into_iter()
        .map(|t| {
            let mut scope = pool.usizes();
            scope.extend_from_slice(t.scope);
            let mut radices = pool.u32s();
            radices.extend_from_slice(t.radices);
            WorkTable { scope, radices, values: Values::Borrowed(t.values) }
        })
        .collect();
    let mut responses: Vec<BestResponse> = Vec::with_capacity(num_agents);
    let mut tied = pool.u32s();

    let release = |pool: &mut VePool,
                       work: Vec<WorkTable>,
                       responses: Vec<BestResponse>,
                       tied: Vec<u32>| {
        pool.put_u32s(tied);
        for t in work {
            pool.put_usizes(t.scope);
            pool.put_u32s(t.radices);
            if let Values::Owned(v) = t.values {
                pool.put_f64s(v);
            }
        }
        for r in responses {
            pool.put_usizes(r.context_scope);
            pool.put_u32s(r.context_radices);
            pool.put_u32s(r.choices);
        }
    };

    for &agent in order {
        let (involved, rest): (Vec<_>, Vec<_>) =
            work.into_iter().partition(|t| t.scope.contains(&agent));
        work = rest;
        if involved.is_empty() {
            release(pool, involved.into_iter().chain(work).collect(), responses, tied);
            return Err(GraphError::AgentNotCovered(agent));
        }

        // Union of the involved scopes minus the eliminated agent.
        let mut context_scope = pool.usizes();
        for t in &involved {
            for &a in &t.scope {
                if a != agent && !context_scope.contains(&a) {
                    context_scope.push(a);
                }
            }
        }
        context_scope.sort_unstable();
        let mut context_radices = pool.u32s();
        for &a in &context_scope {
            let r = involved
                .iter()
                .find_map(|t| t.scope.iter().position(|&s| s == a).map(|pos| t.radices[pos]))
                .expect("context agent comes from an involved scope");
            context_radices.push(r);
        }
        let entries: u64 = context_radices.iter().map(|&r| r as u64).product();
        if entries > max_entries {
            let scope = context_scope.clone();
            pool.put_usizes(context_scope);
            pool.put_u32s(context_radices);
            release(pool, involved.into_iter().chain(work).collect(), responses, tied);
            return Err(GraphError::MemoryCap { scope, entries, cap: max_entries });
        }
        let agent_radix = involved
            .iter()
            .find_map(|t| t.scope.iter().position(|&s| s == agent).map(|pos| t.radices[pos]))
            .unwrap();

        // Per-table cursors: a running base index updated incrementally as
        // the context odometer advances, plus the eliminated agent's stride.
        struct Cursor<'t> {
            values: &'t [f64],
            agent_stride: usize,
            base: usize,
        }
        let mut cursors: Vec<Cursor> = Vec::with_capacity(involved.len());
        // (cursor, stride) pairs to bump per context position, flattened into
        // one buffer with per-position ranges
        let mut bump_entries = pool.pairs(); // (cursor index, stride)
        let mut bump_starts = pool.usizes(); // position -> range start
        {
            let mut by_pos: Vec<Vec<(usize, usize)>> =
                context_scope.iter().map(|_| Vec::new()).collect();
            for (ti, t) in involved.iter().enumerate() {
                let mut stride = 1usize;
                let mut per_agent = vec![0usize; t.scope.len()];
                for (i, &r) in t.radices.iter().enumerate().rev() {
                    per_agent[i] = stride;
                    stride *= r as usize;
                }
                let mut agent_stride = 0;
                for (i, &a) in t.scope.iter().enumerate() {
                    if a == agent {
                        agent_stride = per_agent[i];
                    } else {
                        let pos = context_scope.iter().position(|&c| c == a).unwrap();
                        by_pos[pos].push((ti, per_agent[i]));
                    }
                }
                cursors.push(Cursor {
                    values: t.values.as_slice(),
                    agent_stride,
                    base: 0,
                });
            }
            for entries in by_pos {
                bump_starts.push(bump_entries.len());
                bump_entries.extend(entries);
            }
            bump_starts.push(bump_entries.len());
        }

        let mut values = pool.f64s();
        values.resize(entries as usize, 0.0);
        let mut choices = pool.u32s();
        choices.resize(entries as usize, 0);
        let mut digits = pool.u32s();
        digits.resize(context_scope.len(), 0);
        let single = cursors.len() == 1;
        for ctx in 0..entries as usize {
            let mut best = f64::NEG_INFINITY;
            tied.clear();
            for ax in 0..agent_radix {
                let v = if single {
                    let c = &cursors[0];
                    c.values[c.base + c.agent_stride * ax as usize]
                } else {
                    cursors
                        .iter()
                        .map(|c| c.values[c.base + c.agent_stride * ax as usize])
                        .sum()
                };
                debug_assert!(!v.is_nan(), "NaN in variable elimination");
                if tied.is_empty() || v > best {
                    best = v;
                    tied.clear();
                    tied.push(ax);
                } else if v == best {
                    tied.push(ax);
                }
            }
            let choice = match &mut tie {
                TieBreak::UniformAmongInfinite(rng)
                    if best == f64::INFINITY && tied.len() > 1 =>
                {
                    tied[pick_uniform(*rng, tied.len())]
                }
                _ => tied[0],
            };
            values[ctx] = best;
            choices[ctx] = choice;

            // odometer over the context digits, last digit fastest; cursor
            // bases track the digit changes
            for p in (0..digits.len()).rev() {
                let bumps = &bump_entries[bump_starts[p]..bump_starts[p + 1]];
                digits[p] += 1;
                if digits[p] < context_radices[p] {
                    for &(ti, stride) in bumps {
                        cursors[ti].base += stride;
                    }
                    break;
                }
                digits[p] = 0;
                for &(ti, stride) in bumps {
                    cursors[ti].base -= stride * (context_radices[p] - 1) as usize;
                }
            }
        }
        pool.put_u32s(digits);
        pool.put_pairs(bump_entries);
        pool.put_usizes(bump_starts);
        drop(cursors);
        for t in involved {
            pool.put_usizes(t.scope);
            pool.put_u32s(t.radices);
            if let Values::Owned(v) = t.values {
                pool.put_f64s(v);
            }
        }

        let mut new_scope = pool.usizes();
        new_scope.extend_from_slice(&context_scope);
        let mut new_radices = pool.u32s();
        new_radices.extend_from_slice(&context_radices);
        work.push(WorkTable {
            scope: new_scope,
            radices: new_radices,
            values: Values::Owned(values),
        });
        responses.push(BestResponse { agent, context_scope, context_radices, choices });
    }

    // All agents eliminated: the remaining tables are scalars.
    let max_value: f64 = work.iter().map(|t| t.values.as_slice()[0]).sum();

    // Back-substitute in reverse elimination order.
    let mut assignment = vec![0u32; num_agents];
    let mut ctx_digits = pool.u32s();
    for br in responses.iter().rev() {
        ctx_digits.clear();
        ctx_digits.extend(br.context_scope.iter().map(|&a| assignment[a]));
        let idx =
            encode_joint(&ctx_digits, &br.context_radices).expect("valid context digits");
        assignment[br.agent] = br.choices[idx as usize];
    }
    pool.put_u32s(ctx_digits);
    release(pool, work, responses, tied);
    Ok((assignment, max_value))
}

/// Exhaustive argmax over all joint actions: the independent oracle for
/// [`ve_argmax`]. Ties resolve to the lowest flat joint index.
pub fn brute_force_argmax(
    tables: &[LocalTable],
    radices: &[u32],
    cap: u64,
) -> Result<(Vec<u32>, f64), GraphError> {
    if tables.is_empty() {
        return Err(GraphError::NoTables);
    }
    let size: u64 = radices.iter().map(|&r| r as u64).product();
    if size > cap {
        return Err(GraphError::EnumerationCap { size, cap });
    }
    let mut best_value = f64::NEG_INFINITY;
    let mut best: Vec<u32> = vec![0; radices.len()];
    let mut digits = vec![0u32; radices.len()];
    let mut first = true;
    for _ in 0..size {
        let v: f64 = tables.iter().map(|t| t.values[flat_index_of(t, &digits)]).sum();
        if first || v > best_value {
            best_value = v;
            best.copy_from_slice(&digits);
            first = false;
        }
        for (d, &r) in digits.iter_mut().zip(radices).rev() {
            *d += 1;
            if *d < r {
                break;
            }
            *d = 0;
        }
    }
    Ok((best, best_value))
}

/// Value of a factored function at a full assignment.
pub fn evaluate_tables(tables: &[LocalTable], assignment: &[u32]) -> f64 {
    tables.iter().map(|t| t.values[flat_index_of(t, assignment)]).sum()
}

fn flat_index_of(table: &LocalTable, assignment: &[u32]) -> usize {
    let mut idx = 0usize;
    for (&a, &r) in table.scope.iter().zip(&table.radices) {
        idx = idx * r as usize + assignment[a] as usize;
    }
    idx
}

/// Largest intermediate cluster size minus one when eliminating `order` over
/// the given scopes — the exponent governing VE cost.
pub fn induced_width(scopes: &[Vec<usize>], order: &[usize]) -> usize {
    let mut work: Vec<Vec<usize>> = scopes.to_vec();
    let mut width = 0usize;
    for &agent in order {
        let (involved, rest): (Vec<_>, Vec<_>) =
            work.into_iter().partition(|s| s.contains(&agent));
        work = rest;
        if involved.is_empty() {
            continue;
        }
        let mut cluster: Vec<usize> = Vec::new();
        for s in involved {
            for a in s {
                if !cluster.contains(&a) {
                    cluster.push(a);
                }
            }
        }
        width = width.max(cluster.len() - 1);
        cluster.retain(|&a| a != agent);
        cluster.sort_unstable();
        work.push(cluster);
    }
    width
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_table(scope: Vec<usize>, radices: Vec<u32>, values: Vec<f64>) -> Vec<LocalTable> {
        vec![LocalTable::new(scope, radices, values)]
    }

    #[test]
    fn expert_update_examples() {
        let mut e = ExpertStats::new(0.0);
        e.update(4.0);
        assert_eq!((e.n, e.q), (1, 4.0));
        e.update(2.0);
        assert_eq!((e.n, e.q), (2, 3.0));
    }

    #[test]
    fn expert_update_law_of_large_numbers() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(7.0, 1.0).unwrap();
        let mut e = ExpertStats::new(0.0);
        for _ in 0..10_000 {
            e.update(normal.sample(&mut rng));
        }
        assert!((e.q - 7.0).abs() < 3.0 / (10_000f64).sqrt());
    }

    #[test]
    fn expert_update_permutation_invariant() {
        let returns: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64) / 8.0 - 5.0).collect();
        let mut forward = ExpertStats::new(0.0);
        for &r in &returns {
            forward.update(r);
        }
        let mut reversed = ExpertStats::new(0.0);
        for &r in returns.iter().rev() {
            reversed.update(r);
        }
        let mut shuffled_order: Vec<usize> = (0..returns.len()).collect();
        shuffled_order.sort_by_key(|&i| (i * 7919) % 200);
        let mut shuffled = ExpertStats::new(0.0);
        for &i in &shuffled_order {
            shuffled.update(returns[i]);
        }
        assert_eq!(forward.n, reversed.n);
        assert!((forward.q - reversed.q).abs() < 1e-12);
        assert!((forward.q - shuffled.q).abs() < 1e-12);
    }

    #[test]
    fn ucb_examples() {
        let visited = ExpertStats { n: 2, q: 1.0 };
        let expected = 1.0 + (8.0f64.ln() / 2.0).sqrt();
        assert!((ucb_value(&visited, 7, 1.0) - expected).abs() < 1e-12);
        assert!((expected - 2.0197).abs() < 1e-4);

        assert_eq!(ucb_value(&ExpertStats::new(0.0), 10, 1.0), f64::INFINITY);
        assert_eq!(ucb_value(&ExpertStats { n: 3, q: 5.0 }, 100, 0.0), 5.0);
    }

    #[test]
    fn ucb_monotonicity() {
        let c = 0.7;
        let mut prev = f64::INFINITY;
        for n in 1..50u64 {
            let v = ucb_value(&ExpertStats { n, q: 2.0 }, 64, c);
            assert!(v < prev, "ucb must decrease in n");
            prev = v;
        }
        let mut prev = 0.0;
        for n_ctx in 0..50u64 {
            let v = ucb_value(&ExpertStats { n: 4, q: 2.0 }, n_ctx, c);
            assert!(v > prev, "ucb must increase in the context count");
            prev = v;
        }
    }

    #[test]
    fn ve_single_component_argmax() {
        let mut values = vec![0.0; 9];
        values[3] = 9.0; // local action [1, 0] over radices [3, 3]
        let (assignment, v) = ve_argmax(
            single_table(vec![0, 1], vec![3, 3], values),
            &[0, 1],
            1 << 20,
            TieBreak::Lowest,
        )
        .unwrap();
        assert_eq!(assignment, vec![1, 0]);
        assert_eq!(v, 9.0);
    }

    #[test]
    fn ve_chain_of_identical_tables() {
        // n-1 identical pairwise tables maximized at [0, 0]
        let n = 5;
        let t_max = 4.0;
        let mut values = vec![1.0; 4];
        values[0] = t_max;
        let tables: Vec<LocalTable> = (0..n - 1)
            .map(|i| LocalTable::new(vec![i, i + 1], vec![2, 2], values.clone()))
            .collect();
        let order: Vec<usize> = (0..n).collect();
        let (assignment, v) = ve_argmax(tables, &order, 1 << 20, TieBreak::Lowest).unwrap();
        assert_eq!(assignment, vec![0; n]);
        assert_eq!(v, (n - 1) as f64 * t_max);
    }

    #[test]
    fn ve_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(20240917);
        for _ in 0..100 {
            let n = rng.gen_range(3..=6usize);
            let radices: Vec<u32> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
            let num_tables = rng.gen_range(2..=4usize);
            let mut tables = Vec::new();
            let mut covered = vec![false; n];
            for _ in 0..num_tables {
                let k = rng.gen_range(1..=3usize.min(n));
                let mut scope: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    scope.swap(i, rng.gen_range(0..=i));
                }
                let mut scope: Vec<usize> = scope[..k].to_vec();
                scope.sort_unstable();
                for &a in &scope {
                    covered[a] = true;
                }
                let r: Vec<u32> = scope.iter().map(|&a| radices[a]).collect();
                let len: usize = r.iter().map(|&x| x as usize).product();
                // integer-valued tables so sums compare exactly
                let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-20..=20) as f64).collect();
                tables.push(LocalTable::new(scope, r, values));
            }
            for (a, c) in covered.iter().enumerate() {
                if !c {
                    tables.push(LocalTable::new(
                        vec![a],
                        vec![radices[a]],
                        vec![0.0; radices[a] as usize],
                    ));
                }
            }
            let order: Vec<usize> = (0..n).collect();
            let (ve_a, ve_v) =
                ve_argmax(tables.clone(), &order, 1 << 24, TieBreak::Lowest).unwrap();
            let (bf_a, bf_v) = brute_force_argmax(&tables, &radices, 1 << 24).unwrap();
            assert_eq!(ve_v, bf_v, "value must match exactly");
            // agreement up to tie-class: both assignments achieve the same value
            assert_eq!(evaluate_tables(&tables, &ve_a), bf_v);
            assert_eq!(evaluate_tables(&tables, &bf_a), bf_v);
        }
    }

    #[test]
    fn brute_force_tie_break_and_conflict() {
        // all-zero tables: lowest flat index wins
        let tables = vec![
            LocalTable::new(vec![0, 1], vec![2, 2], vec![0.0; 4]),
            LocalTable::new(vec![1, 2], vec![2, 2], vec![0.0; 4]),
        ];
        let (a, v) = brute_force_argmax(&tables, &[2, 2, 2], 1 << 10).unwrap();
        assert_eq!(a, vec![0, 0, 0]);
        assert_eq!(v, 0.0);

        // two components with conflicting preferences on shared agent 1:
        // e0 = {0,1} wants a1 = 0, e1 = {1,2} wants a1 = 1, but e1's stake is higher.
        let t0 = LocalTable::new(vec![0, 1], vec![2, 2], vec![2.0, 0.0, 1.0, 0.0]);
        let t1 = LocalTable::new(vec![1, 2], vec![2, 2], vec![0.0, 0.0, 5.0, 4.0]);
        let tables = vec![t0, t1];
        // enumerating the 8 joint actions by hand: best is a=[0,1,0] with 0 + 5 = 5
        let (a, v) = brute_force_argmax(&tables, &[2, 2, 2], 1 << 10).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(a, vec![0, 1, 0]);
        let order = [0, 1, 2];
        let (ve_a, ve_v) = ve_argmax(tables.clone(), &order, 1 << 10, TieBreak::Lowest).unwrap();
        assert_eq!(ve_v, 5.0);
        assert_eq!(evaluate_tables(&tables, &ve_a), 5.0);
    }

    #[test]
    fn constant_shift_moves_value_not_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let radices = [3u32, 2, 3];
            let mk = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
                (0..len).map(|_| rng.gen_range(-8..=8) as f64).collect()
            };
            let t0 = LocalTable::new(vec![0, 1], vec![3, 2], mk(&mut rng, 6));
            let mut t1 = LocalTable::new(vec![1, 2], vec![2, 3], mk(&mut rng, 6));
            let order = [0, 1, 2];
            let (_, v) =
                ve_argmax(vec![t0.clone(), t1.clone()], &order, 1 << 10, TieBreak::Lowest)
                    .unwrap();
            let k = 7.0;
            for val in &mut t1.values {
                *val += k;
            }
            let (a_shifted, v_shifted) =
                ve_argmax(vec![t0.clone(), t1.clone()], &order, 1 << 10, TieBreak::Lowest)
                    .unwrap();
            assert_eq!(v_shifted, v + k);
            assert_eq!(evaluate_tables(&[t0, t1], &a_shifted), v_shifted);
        }
    }

    #[test]
    fn fresh_node_tie_break_is_uniform_over_joint_actions() {
        // all entries +inf: the tie-broken argmax must be uniform over all
        // four joint actions of a 2x2 problem
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            let tables = single_table(vec![0, 1], vec![2, 2], vec![f64::INFINITY; 4]);
            let (a, v) = ve_argmax(
                tables,
                &[0, 1],
                1 << 10,
                TieBreak::UniformAmongInfinite(&mut rng),
            )
            .unwrap();
            assert_eq!(v, f64::INFINITY);
            counts[(a[0] * 2 + a[1]) as usize] += 1;
        }
        for &c in &counts {
            // 4000 draws, p = 1/4: mean 1000, sd ~ 27; allow 6 sd
            assert!((c as i64 - 1000).abs() < 165, "counts {counts:?} not uniform");
        }
    }

    #[test]
    fn ve_memory_cap_names_offending_scope() {
        // one big component: eliminating agent 0 needs a table over {1,..,9}
        let scope: Vec<usize> = (0..10).collect();
        let radices = vec![3u32; 10];
        let len: usize = radices.iter().map(|&r| r as usize).product();
        let tables = single_table(scope, radices, vec![0.0; len]);
        let order: Vec<usize> = (0..10).collect();
        match ve_argmax(tables, &order, 100, TieBreak::Lowest) {
            Err(GraphError::MemoryCap { scope, entries, cap }) => {
                assert_eq!(scope, (1..10).collect::<Vec<_>>());
                assert_eq!(entries, 3u64.pow(9));
                assert_eq!(cap, 100);
            }
            other => panic!("expected memory cap error, got {other:?}"),
        }
    }

    #[test]
    fn ve_rejects_uncovered_agent() {
        let tables = single_table(vec![0], vec![2], vec![0.0, 1.0]);
        assert_eq!(
            ve_argmax(tables, &[0, 1], 1 << 10, TieBreak::Lowest),
            Err(GraphError::AgentNotCovered(1))
        );
    }

    #[test]
    fn induced_width_examples() {
        // chain of pairwise scopes eliminated end-to-end: width 1
        let chain: Vec<Vec<usize>> = (0..9).map(|i| vec![i, i + 1]).collect();
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(induced_width(&chain, &order), 1);

        // single component of k agents: width k-1
        assert_eq!(induced_width(&[vec![0, 1, 2, 3, 4]], &[0, 1, 2, 3, 4]), 4);

        // the 4-agent sensor-grid factorization {0,2,3}, {1,2,3} under the
        // default ascending order: eliminating agent 0 or 1 forms a cluster of
        // three agents, so the width is 2
        let grid = vec![vec![0, 2, 3], vec![1, 2, 3]];
        assert_eq!(induced_width(&grid, &[0, 1, 2, 3]), 2);
    }

    #[test]
    fn component_table_lazy_allocation() {
        let mut t = ComponentTable::new(vec![0, 1], vec![3, 3], 0.0);
        assert_eq!(t.len(), 9);
        assert_eq!(t.stats(4), ExpertStats::new(0.0));
        assert_eq!(t.total_visits(), 0);
        t.update(4, 2.5);
        assert_eq!(t.stats(4), ExpertStats { n: 1, q: 2.5 });
        assert_eq!(t.stats(0), ExpertStats::new(0.0));
        assert_eq!(t.total_visits(), 1);

        let ucb = t.ucb_table(10, 1.0);
        assert_eq!(ucb.values[0], f64::INFINITY);
        assert!((ucb.values[4] - (2.5 + (11f64.ln()).sqrt())).abs() < 1e-12);

        let greedy = t.greedy_table();
        assert_eq!(greedy.values[0], f64::NEG_INFINITY);
        assert_eq!(greedy.values[4], 2.5);
    }
}
