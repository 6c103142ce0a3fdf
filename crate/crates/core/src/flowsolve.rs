//! Exact solver for the balanced transportation problem: a primal network
//! simplex on the implicit complete bipartite graph, returning an optimal
//! basic flow together with a verified dual certificate.
//!
//! Nodes `0..ns` are supplies, `ns..ns+nd` demands and `ns+nd` the artificial
//! root. Real arc `e` runs from supply `e / nd` to demand `e % nd`. Arcs are
//! uncapacitated, so non-tree arcs always carry zero flow and the flow of the
//! basis is stored per tree node (the flow on the arc to its parent).

use serde::{Deserialize, Serialize};

use crate::error::{EmdError, Result};
use crate::geometry::Metric;

/// Imbalance absorbed silently into the largest demand.
pub const ABSORB_TOL: f64 = 1e-9;
/// Relative slack allowed in the dual certificate.
pub const CERT_TOL: f64 = 1e-7;
/// Largest cost matrix stored explicitly (entries).
pub const MATERIALIZE_LIMIT: usize = 16_000_000;

const UP: i8 = 1;
const DOWN: i8 = -1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTransportProblem {
    pub supplies: Vec<(Vec<f64>, f64)>,
    pub demands: Vec<(Vec<f64>, f64)>,
    pub metric: Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFlow {
    pub entries: Vec<FlowEntry>,
    pub cost: f64,
    /// Supply potentials π and demand potentials σ with π_i + σ_j ≤ c_ij.
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub pivots: usize,
}

/// Solves a transportation problem whose costs are distances between the
/// representative points.
pub fn solve_transportation(p: &DiscreteTransportProblem) -> Result<DiscreteFlow> {
    let supply: Vec<f64> = p.supplies.iter().map(|s| s.1).collect();
    let demand: Vec<f64> = p.demands.iter().map(|s| s.1).collect();
    let metric = p.metric;
    if let Some(d) = p.supplies.first().map(|s| s.0.len()) {
        for (x, _) in p.supplies.iter().chain(&p.demands) {
            if x.len() != d {
                return Err(EmdError::DimensionMismatch { expected: d, got: x.len() });
            }
        }
    }
    solve_with_costs(&supply, &demand, |i, j| metric.dist(&p.supplies[i].0, &p.demands[j].0))
}

/// Solves a transportation problem with an arbitrary non-negative cost
/// function. Costs are tabulated when the instance is small enough.
pub fn solve_with_costs<F>(supply: &[f64], demand: &[f64], cost: F) -> Result<DiscreteFlow>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let (ns, nd) = (supply.len(), demand.len());
    if ns * nd <= MATERIALIZE_LIMIT {
        let table: Vec<f64> = {
            use rayon::prelude::*;
            (0..ns * nd).into_par_iter().map(|e| cost(e / nd, e % nd)).collect()
        };
        solve_oriented(supply, demand, |i: usize, j: usize| table[i * nd + j])
    } else {
        solve_oriented(supply, demand, cost)
    }
}

/// Solves with an explicit row-major cost matrix.
pub fn solve_with_matrix(supply: &[f64], demand: &[f64], costs: &[f64]) -> Result<DiscreteFlow> {
    let nd = demand.len();
    solve_oriented(supply, demand, |i: usize, j: usize| costs[i * nd + j])
}

/// Runs the simplex with the smaller side as the sources.
fn solve_oriented<F: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost: F) -> Result<DiscreteFlow> {
    if supply.len() <= demand.len() {
        return Solver::new(supply, demand, cost)?.run();
    }
    let t = Solver::new(demand, supply, |j: usize, i: usize| cost(i, j))?.run()?;
    let mut entries: Vec<FlowEntry> = t.entries.iter().map(|x| FlowEntry { i: x.j, j: x.i, mass: x.mass }).collect();
    entries.sort_by_key(|x| (x.i, x.j));
    Ok(DiscreteFlow { entries, cost: t.cost, pi: t.sigma, sigma: t.pi, pivots: t.pivots })
}

fn balance(supply: &[f64], demand: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if supply.is_empty() || demand.is_empty() {
        return Err(EmdError::UnbalancedInstance { supply: supply.iter().sum(), demand: demand.iter().sum() });
    }
    for &m in supply.iter().chain(demand) {
        if !(m.is_finite() && m >= 0.0) {
            return Err(EmdError::NonFinite(format!("node mass {m}")));
        }
    }
    let ts: f64 = supply.iter().sum();
    let td: f64 = demand.iter().sum();
    if (ts - td).abs() > ABSORB_TOL {
        return Err(EmdError::UnbalancedInstance { supply: ts, demand: td });
    }
    let mut demand = demand.to_vec();
    let big = (0..demand.len()).max_by(|&a, &b| demand[a].total_cmp(&demand[b])).unwrap();
    demand[big] += ts - td;
    Ok((supply.to_vec(), demand))
}

struct Solver<F> {
    ns: usize,
    nd: usize,
    cost: F,
    art: f64,
    eps: f64,
    supply: Vec<f64>,
    // tree, indexed by node (root = ns + nd)
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<f64>,
    flow: Vec<f64>,
    // pivot state
    next_arc: usize,
    block: usize,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    dirty: Vec<usize>,
    /// Cost of each source's artificial arc to the root.
    src_art: Vec<f64>,
}

const NONE: usize = usize::MAX;
/// Dual warm start is used up to this many sources.
const DUAL_WARM_SOURCES: usize = 32;
const DUAL_WARM_SWEEPS: usize = 40;

impl<F: Fn(usize, usize) -> f64> Solver<F> {
    fn new(supply: &[f64], demand: &[f64], cost: F) -> Result<Self> {
        let (supply, demand) = balance(supply, demand)?;
        let (ns, nd) = (supply.len(), demand.len());
        let n = ns + nd;
        let arcs = ns * nd;
        let mut max_cost: f64 = 0.0;
        for e in 0..arcs {
            let c = cost(e / nd, e % nd);
            if !c.is_finite() || c < 0.0 {
                return Err(EmdError::NonFinite(format!("arc cost {c}")));
            }
            max_cost = max_cost.max(c);
        }
        let art = (max_cost + 1.0) * (n as f64 + 1.0);
        let root = n;
        let mut s = Solver {
            ns,
            nd,
            cost,
            art,
            eps: 1e-12 * (max_cost + 1.0),
            supply: supply.iter().copied().chain(demand.iter().map(|d| -d)).collect(),
            parent: vec![root; n + 1],
            pred: vec![NONE; n + 1],
            pred_dir: vec![UP; n + 1],
            thread: vec![0; n + 1],
            rev_thread: vec![0; n + 1],
            succ_num: vec![1; n + 1],
            last_succ: vec![0; n + 1],
            pi: vec![0.0; n + 1],
            flow: vec![0.0; n + 1],
            next_arc: 0,
            block: ((arcs as f64).sqrt() as usize).max(10),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            dirty: Vec::new(),
            src_art: vec![0.0; ns],
        };
        for u in 0..n {
            s.pred[u] = arcs + u;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.last_succ[u] = u;
            if u < ns {
                s.pred_dir[u] = UP;
                s.pi[u] = 0.0;
                s.flow[u] = s.supply[u];
            } else {
                s.pred_dir[u] = DOWN;
                s.pi[u] = art;
                s.flow[u] = -s.supply[u];
            }
        }
        s.parent[root] = NONE;
        s.pred[root] = NONE;
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = n + 1;
        s.last_succ[root] = root - 1;
        s.warm_start();
        Ok(s)
    }

    /// Source potentials from exact coordinate ascent on the dual
    /// `Σ a_i u_i + Σ_j b_j min_i (c_ij − u_i)`; each step moves one `u_i` to
    /// the weighted quantile where its served mass reaches its supply.
    fn dual_ascent(&self) -> Vec<f64> {
        let (ns, nd) = (self.ns, self.nd);
        let mut u = vec![0.0; ns];
        if !(2..=DUAL_WARM_SOURCES).contains(&ns) {
            return u;
        }
        let mut keyed: Vec<(f64, f64)> = Vec::with_capacity(nd);
        for _ in 0..DUAL_WARM_SWEEPS {
            let mut moved = 0.0f64;
            for i in 0..ns {
                keyed.clear();
                for j in 0..nd {
                    let m = (0..ns).filter(|&l| l != i).map(|l| (self.cost)(l, j) - u[l]).fold(f64::INFINITY, f64::min);
                    keyed.push(((self.cost)(i, j) - m, -self.supply[ns + j]));
                }
                keyed.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut acc = 0.0;
                let mut t = keyed[nd - 1].0;
                for &(k, b) in &keyed {
                    acc += b;
                    if acc >= self.supply[i] {
                        t = k;
                        break;
                    }
                }
                moved = moved.max((t - u[i]).abs());
                u[i] = t;
            }
            if moved <= self.eps {
                break;
            }
        }
        u
    }

    /// Replaces the all-artificial start by a strongly feasible tree built
    /// from approximate duals `u`: each demand hangs below its best source by
    /// `c_ij − u_i` that keeps a positive remainder, demands that fit nowhere
    /// stay on the root, and source arcs to the root are priced so that the
    /// tree potentials are `u`.
    fn warm_start(&mut self) {
        let (ns, nd) = (self.ns, self.nd);
        let (n, root, arcs) = (ns + nd, ns + nd, self.arcs());
        let u = self.dual_ascent();
        let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return;
        }
        self.src_art = u.iter().map(|x| x - lo).collect();
        self.art += (hi - lo) * (n as f64 + 1.0);
        for j in 0..nd {
            self.pi[ns + j] = self.art;
        }

        // most decided demands first
        let mut regret: Vec<(f64, usize)> = (0..nd)
            .map(|j| {
                let (mut b1, mut b2) = (f64::INFINITY, f64::INFINITY);
                for (i, ui) in u.iter().enumerate() {
                    let r = (self.cost)(i, j) - ui;
                    if r < b1 {
                        b2 = b1;
                        b1 = r;
                    } else if r < b2 {
                        b2 = r;
                    }
                }
                (b2 - b1, j)
            })
            .collect();
        regret.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

        let total: f64 = self.supply[..ns].iter().sum();
        let margin = 1e-12 * total.max(1e-300);
        let mut rem = self.supply[..ns].to_vec();
        let mut owner = vec![NONE; nd];
        for &(_, j) in &regret {
            let d = -self.supply[ns + j];
            let mut best = (f64::INFINITY, NONE);
            for (i, r) in rem.iter().enumerate() {
                let c = (self.cost)(i, j) - u[i];
                if r - d > margin && c < best.0 {
                    best = (c, i);
                }
            }
            if best.1 != NONE {
                rem[best.1] -= d;
                owner[j] = best.1;
            }
        }
        let mut children = vec![Vec::new(); ns];
        let mut loose = Vec::new();
        for (j, &i) in owner.iter().enumerate() {
            if i == NONE {
                loose.push(ns + j);
            } else {
                children[i].push(ns + j);
            }
        }
        let mut order = Vec::with_capacity(n);
        for i in 0..ns {
            order.push(i);
            self.parent[i] = root;
            self.pred[i] = arcs + i;
            self.pred_dir[i] = UP;
            self.flow[i] = rem[i];
            self.pi[i] = -self.src_art[i];
            self.succ_num[i] = 1 + children[i].len();
            for &v in &children[i] {
                let j = v - ns;
                order.push(v);
                self.parent[v] = i;
                self.pred[v] = i * nd + j;
                self.pred_dir[v] = DOWN;
                self.flow[v] = -self.supply[v];
                self.pi[v] = (self.cost)(i, j) + self.pi[i];
                self.succ_num[v] = 1;
                self.last_succ[v] = v;
            }
            self.last_succ[i] = children[i].last().copied().unwrap_or(i);
        }
        order.extend(loose);
        let mut prev = root;
        for &v in &order {
            self.thread[prev] = v;
            self.rev_thread[v] = prev;
            prev = v;
        }
        self.thread[prev] = root;
        self.rev_thread[root] = prev;
        self.last_succ[root] = prev;
    }

    #[inline]
    fn arcs(&self) -> usize {
        self.ns * self.nd
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        let a = self.arcs();
        if e < a {
            e / self.nd
        } else {
            let u = e - a;
            if u < self.ns {
                u
            } else {
                self.ns + self.nd
            }
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        let a = self.arcs();
        if e < a {
            self.ns + e % self.nd
        } else {
            let u = e - a;
            if u < self.ns {
                self.ns + self.nd
            } else {
                u
            }
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        let a = self.arcs();
        if e < a {
            (self.cost)(e / self.nd, e % self.nd)
        } else if e - a < self.ns {
            self.src_art[e - a]
        } else {
            self.art
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        (self.cost)(e / self.nd, e % self.nd) + self.pi[e / self.nd] - self.pi[self.ns + e % self.nd]
    }

    /// Block search for an entering arc with negative reduced cost.
    fn find_entering(&mut self) -> bool {
        let m = self.arcs();
        let mut min = -self.eps;
        let mut cnt = self.block;
        let mut found = false;
        let start = self.next_arc;
        let mut e = start;
        loop {
            let c = self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block;
            }
            if e == start {
                break;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving(&mut self) {
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == UP && self.flow[u] < delta {
                delta = self.flow[u];
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            if self.pred_dir[u] == DOWN && self.flow[u] <= delta {
                delta = self.flow[u];
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        debug_assert!(result != 0, "unbounded pivot");
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta.max(0.0);
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            let mut u = self.source(self.in_arc);
            while u != self.join {
                self.flow[u] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            u = self.target(self.in_arc);
            while u != self.join {
                self.flow[u] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
    }

    fn update_tree(&mut self) {
        let (u_in, v_in, u_out, join, in_arc) = (self.u_in, self.v_in, self.u_out, self.join, self.in_arc);
        let in_flow = self.delta;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];
        let in_dir = if u_in == self.source(in_arc) { UP } else { DOWN };

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.flow[u_in] = in_flow;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty.clear();
            self.dirty.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty.len() {
                let u = self.dirty[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                self.flow[u] = self.flow[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.flow[u_in] = in_flow;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as f64 * self.arc_cost(self.pred[u_in]);
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(mut self) -> Result<DiscreteFlow> {
        let n = self.ns + self.nd;
        let limit = 20_000usize.saturating_mul(n + 10);
        let mut pivots = 0usize;
        while self.find_entering() {
            self.find_join();
            self.find_leaving();
            self.change_flow();
            self.update_tree();
            self.update_potential();
            pivots += 1;
            if pivots > limit {
                return Err(EmdError::Certificate(format!("pivot limit {limit} exceeded")));
            }
        }
        self.extract(pivots)
    }

    fn extract(&self, pivots: usize) -> Result<DiscreteFlow> {
        let (ns, nd) = (self.ns, self.nd);
        let arcs = self.arcs();
        let total: f64 = self.supply[..ns].iter().sum();
        let scale = total.max(1e-300);
        let mut entries = Vec::new();
        for u in 0..ns + nd {
            let e = self.pred[u];
            let f = self.flow[u];
            if e >= arcs {
                if f > ABSORB_TOL.max(1e-9 * scale) {
                    return Err(EmdError::Certificate(format!("artificial arc keeps flow {f}")));
                }
                continue;
            }
            if f < -1e-9 * scale {
                return Err(EmdError::Certificate(format!("negative flow {f} on basic arc")));
            }
            if f > 0.0 {
                entries.push(FlowEntry { i: e / nd, j: e % nd, mass: f });
            }
        }
        entries.sort_by_key(|x| (x.i, x.j));

        // dual certificate
        let max_cost = (0..arcs).map(|e| (self.cost)(e / nd, e % nd)).fold(0.0, f64::max);
        let tol = CERT_TOL * (1.0 + max_cost);
        for e in 0..arcs {
            let r = self.reduced(e);
            if r < -tol {
                return Err(EmdError::Certificate(format!("dual infeasible arc ({}, {}): reduced cost {r}", e / nd, e % nd)));
            }
        }
        for x in &entries {
            let r = self.reduced(x.i * nd + x.j);
            if r.abs() > tol {
                return Err(EmdError::Certificate(format!(
                    "complementary slackness violated on ({}, {}): reduced cost {r}",
                    x.i, x.j
                )));
            }
        }
        let cost = entries.iter().map(|x| x.mass * (self.cost)(x.i, x.j)).sum();
        Ok(DiscreteFlow {
            entries,
            cost,
            pi: self.pi[..ns].iter().map(|p| -p).collect(),
            sigma: self.pi[ns..ns + nd].to_vec(),
            pivots,
        })
    }
}

/// Independent check of a flow: marginals, dual feasibility and
/// complementary slackness. Returns the largest violation found (dual terms
/// relative to the largest cost).
pub fn verify_flow<F: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost: F, flow: &DiscreteFlow) -> f64 {
    let mut row = vec![0.0; supply.len()];
    let mut col = vec![0.0; demand.len()];
    for x in &flow.entries {
        row[x.i] += x.mass;
        col[x.j] += x.mass;
    }
    let mut worst: f64 = 0.0;
    for (a, b) in row.iter().zip(supply) {
        worst = worst.max((a - b).abs());
    }
    for (a, b) in col.iter().zip(demand) {
        worst = worst.max((a - b).abs());
    }
    let mut max_cost: f64 = 0.0;
    for i in 0..supply.len() {
        for j in 0..demand.len() {
            let c = cost(i, j);
            max_cost = max_cost.max(c);
            worst = worst.max(flow.pi[i] + flow.sigma[j] - c);
        }
    }
    for x in &flow.entries {
        worst = worst.max((flow.pi[x.i] + flow.sigma[x.j] - cost(x.i, x.j)).abs());
    }
    worst / (1.0 + max_cost).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(s: &[(&[f64], f64)], d: &[(&[f64], f64)]) -> DiscreteTransportProblem {
        DiscreteTransportProblem {
            supplies: s.iter().map(|(x, m)| (x.to_vec(), *m)).collect(),
            demands: d.iter().map(|(x, m)| (x.to_vec(), *m)).collect(),
            metric: Metric::L2,
        }
    }

    #[test]
    fn identity_matching() {
        let p = problem(&[(&[0., 0.], 0.5), (&[1., 0.], 0.5)], &[(&[0., 0.], 0.5), (&[1., 0.], 0.5)]);
        let f = solve_transportation(&p).unwrap();
        assert_abs_diff_eq!(f.cost, 0.0);
        assert_eq!(f.entries.len(), 2);
        for x in &f.entries {
            assert_eq!(x.i, x.j);
        }
    }

    #[test]
    fn forced_single_arc() {
        let p = problem(&[(&[0., 0.], 1.0)], &[(&[3., 4.], 1.0)]);
        let f = solve_transportation(&p).unwrap();
        assert_abs_diff_eq!(f.cost, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_vertex_enumeration() {
        // supplies [0.3, 0.7], demands [0.5, 0.5]; the basic solutions are
        // parametrized by x = flow(0,0) ∈ {0, 0.3} at the vertices
        let p = problem(&[(&[0., 0.], 0.3), (&[2., 1.], 0.7)], &[(&[1., 0.], 0.5), (&[0., 3.], 0.5)]);
        let c = |i: usize, j: usize| Metric::L2.dist(&p.supplies[i].0, &p.demands[j].0);
        let at = |x: f64| x * c(0, 0) + (0.3 - x) * c(0, 1) + (0.5 - x) * c(1, 0) + (0.2 + x) * c(1, 1);
        let best = at(0.0).min(at(0.3));
        let f = solve_transportation(&p).unwrap();
        assert_abs_diff_eq!(f.cost, best, epsilon = 1e-12);
    }

    #[test]
    fn absorbs_tiny_imbalance_and_rejects_large() {
        let f = solve_with_matrix(&[0.5, 0.5], &[0.5, 0.5 + 5e-10], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(f.cost.abs() < 1e-12);
        assert!(matches!(
            solve_with_matrix(&[0.5, 0.5], &[0.5, 0.6], &[0.0, 1.0, 1.0, 0.0]),
            Err(EmdError::UnbalancedInstance { .. })
        ));
    }

    #[test]
    fn random_instances_certify_and_conserve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let ns = rng.gen_range(1..60);
            let nd = rng.gen_range(1..60);
            let mut sup: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.01..1.0)).collect();
            let mut dem: Vec<f64> = (0..nd).map(|_| rng.gen_range(0.01..1.0)).collect();
            let ts: f64 = sup.iter().sum();
            let td: f64 = dem.iter().sum();
            sup.iter_mut().for_each(|x| *x /= ts);
            dem.iter_mut().for_each(|x| *x /= td);
            let xs: Vec<[f64; 2]> = (0..ns).map(|_| [rng.gen(), rng.gen()]).collect();
            let ys: Vec<[f64; 2]> = (0..nd).map(|_| [rng.gen(), rng.gen()]).collect();
            let c = |i: usize, j: usize| Metric::L2.dist(&xs[i], &ys[j]);
            let f = solve_with_costs(&sup, &dem, c).unwrap();
            assert!(f.entries.len() < ns + nd, "trial {trial}");
            assert!(verify_flow(&sup, &dem, c, &f) < 1e-9, "trial {trial}");
            // weak duality equals primal cost at optimum
            let dual: f64 = sup.iter().zip(&f.pi).map(|(a, b)| a * b).sum::<f64>()
                + dem.iter().zip(&f.sigma).map(|(a, b)| a * b).sum::<f64>();
            assert_abs_diff_eq!(dual, f.cost, epsilon = 1e-9);
        }
    }

    #[test]
    fn scale_equivariance() {
        let p = problem(
            &[(&[0., 0.], 0.2), (&[1., 2.], 0.5), (&[3., 1.], 0.3)],
            &[(&[1., 1.], 0.6), (&[2., 0.], 0.4)],
        );
        let mut q = p.clone();
        for (x, _) in q.supplies.iter_mut().chain(q.demands.iter_mut()) {
            x.iter_mut().for_each(|c| *c *= 3.5);
        }
        let (a, b) = (solve_transportation(&p).unwrap(), solve_transportation(&q).unwrap());
        assert_abs_diff_eq!(b.cost, 3.5 * a.cost, epsilon = 1e-12);
        assert_eq!(a.entries.len(), b.entries.len());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!((x.i, x.j), (y.i, y.j));
            assert_abs_diff_eq!(x.mass, y.mass, epsilon = 1e-12);
        }
    }
}
