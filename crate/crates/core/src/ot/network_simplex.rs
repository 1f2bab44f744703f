//! Primal network simplex for the dense transportation problem.
//!
//! The graph has `m` source nodes, `n` sink nodes and an artificial root. The
//! starting basis connects every node to the root (sources with cost 0, sinks
//! with a big-M cost), after which entering arcs are chosen by block search
//! and the leaving arc by the strongly-feasible rule, which excludes cycling
//! on degenerate pivots. The tree is stored as parent pointers; potentials and
//! tree flows are recomputed from scratch after each pivot, which is cheap at
//! the sizes this crate targets and keeps rounding from accumulating.
//!
//! Artificial arcs that remain in the final basis carry zero flow but split
//! the real-arc forest into components whose potentials differ by multiples
//! of the big-M cost. Those components are re-joined with degenerate pivots
//! onto the cheapest crossing real arc, so the reported duals always come from
//! a spanning tree of real arcs.

use ndarray::{Array2, ArrayView2};

use super::{OtError, SolveMethod, TransportSolution};

const NONE: usize = usize::MAX;

struct Simplex<'a> {
    cost: ArrayView2<'a, f64>,
    m: usize,
    n: usize,
    root: usize,
    art_cost: f64,
    supply: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// `true` when the predecessor arc points from the node to its parent.
    up: Vec<bool>,
    pi: Vec<f64>,
    depth: Vec<usize>,
    order: Vec<usize>,
    first_child: Vec<usize>,
    next_sibling: Vec<usize>,
    next_arc: usize,
    block_size: usize,
    eps: f64,
}

impl<'a> Simplex<'a> {
    fn new(cost: ArrayView2<'a, f64>, a: &[f64], b: &[f64]) -> Self {
        let (m, n) = cost.dim();
        let nodes = m + n;
        let root = nodes;
        let max_cost = cost.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
        let art_cost = (max_cost + 1.0) * (nodes as f64 + 1.0);
        let real_arcs = m * n;
        let arcs = real_arcs + nodes;

        // exact balance: rescale the target side onto the source total
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let scale = if sb > 0.0 { sa / sb } else { 1.0 };
        let mut supply = Vec::with_capacity(nodes);
        supply.extend_from_slice(a);
        supply.extend(b.iter().map(|x| -x * scale));

        let mut s = Simplex {
            cost,
            m,
            n,
            root,
            art_cost,
            supply,
            flow: vec![0.0; arcs],
            in_tree: vec![false; arcs],
            parent: vec![NONE; nodes + 1],
            pred: vec![NONE; nodes + 1],
            up: vec![false; nodes + 1],
            pi: vec![0.0; nodes + 1],
            depth: vec![0; nodes + 1],
            order: Vec::with_capacity(nodes + 1),
            first_child: vec![NONE; nodes + 1],
            next_sibling: vec![NONE; nodes + 1],
            next_arc: 0,
            block_size: ((arcs as f64).sqrt().ceil() as usize).max(10),
            eps: 1e-11 * (1.0 + max_cost),
        };
        for u in 0..nodes {
            let e = real_arcs + u;
            s.parent[u] = root;
            s.pred[u] = e;
            s.in_tree[e] = true;
            s.up[u] = u < m;
        }
        s.refresh();
        s
    }

    fn arc_count(&self) -> usize {
        self.m * self.n + self.m + self.n
    }

    fn ends(&self, e: usize) -> (usize, usize) {
        let real = self.m * self.n;
        if e < real {
            (e / self.n, self.m + e % self.n)
        } else {
            let u = e - real;
            if u < self.m {
                (u, self.root)
            } else {
                (self.root, u)
            }
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        let real = self.m * self.n;
        if e < real {
            self.cost[[e / self.n, e % self.n]]
        } else if e - real < self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let (s, t) = self.ends(e);
        self.arc_cost(e) + self.pi[s] - self.pi[t]
    }

    /// Rebuild traversal order, depths, potentials and tree flows.
    fn refresh(&mut self) {
        let total = self.root + 1;
        self.first_child.iter_mut().for_each(|x| *x = NONE);
        for u in (0..self.root).rev() {
            let p = self.parent[u];
            self.next_sibling[u] = self.first_child[p];
            self.first_child[p] = u;
        }
        self.order.clear();
        self.order.push(self.root);
        self.pi[self.root] = 0.0;
        self.depth[self.root] = 0;
        let mut head = 0;
        while head < self.order.len() {
            let u = self.order[head];
            head += 1;
            let mut c = self.first_child[u];
            while c != NONE {
                let c_cost = self.arc_cost(self.pred[c]);
                self.pi[c] = if self.up[c] {
                    self.pi[u] - c_cost
                } else {
                    self.pi[u] + c_cost
                };
                self.depth[c] = self.depth[u] + 1;
                self.order.push(c);
                c = self.next_sibling[c];
            }
        }
        debug_assert_eq!(self.order.len(), total);

        let mut subtotal = vec![0.0; total];
        for &u in self.order.iter().rev() {
            if u == self.root {
                continue;
            }
            subtotal[u] += self.supply[u];
            let e = self.pred[u];
            let f = if self.up[u] { subtotal[u] } else { -subtotal[u] };
            // exact zeros stay exact; clamp rounding residue below zero
            self.flow[e] = if f < 0.0 && f > -1e-14 { 0.0 } else { f };
            let p = self.parent[u];
            subtotal[p] += subtotal[u];
        }
    }

    fn find_entering(&mut self) -> Option<usize> {
        let total = self.arc_count();
        let mut best = None;
        let mut min = -self.eps;
        let mut cnt = self.block_size;
        let mut e = self.next_arc;
        for _ in 0..total {
            if !self.in_tree[e] {
                let rc = self.reduced_cost(e);
                if rc < min {
                    min = rc;
                    best = Some(e);
                }
            }
            e += 1;
            if e == total {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if best.is_some() {
                    break;
                }
                cnt = self.block_size;
            }
        }
        self.next_arc = e;
        best
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    fn pivot(&mut self, e_in: usize) -> Result<(), OtError> {
        let (first, second) = self.ends(e_in);
        let join = self.find_join(first, second);

        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    side = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    side = 2;
                }
            }
            u = self.parent[u];
        }
        if side == 0 {
            return Err(OtError::Simplex("unbounded cycle".into()));
        }

        let e_out = self.pred[u_out];
        self.in_tree[e_out] = false;
        self.flow[e_out] = 0.0;
        self.in_tree[e_in] = true;
        if side == 1 {
            self.rehang(first, second, e_in, true, u_out);
        } else {
            self.rehang(second, first, e_in, false, u_out);
        }
        self.refresh();
        Ok(())
    }

    /// Reverse the tree path `start .. stop` and attach `start` under
    /// `new_parent` through `arc`.
    fn rehang(&mut self, start: usize, new_parent: usize, arc: usize, up: bool, stop: usize) {
        let mut node = start;
        let mut par = new_parent;
        let mut arc = arc;
        let mut dir = up;
        loop {
            let old_parent = self.parent[node];
            let old_arc = self.pred[node];
            let old_up = self.up[node];
            self.parent[node] = par;
            self.pred[node] = arc;
            self.up[node] = dir;
            if node == stop {
                break;
            }
            par = node;
            arc = old_arc;
            dir = !old_up;
            node = old_parent;
        }
    }

    fn run(&mut self) -> Result<(), OtError> {
        let limit = 50 * self.arc_count() + 1000;
        for _ in 0..limit {
            match self.find_entering() {
                Some(e) => self.pivot(e)?,
                None => return Ok(()),
            }
        }
        Err(OtError::Simplex(format!("no convergence after {limit} pivots")))
    }

    /// Real tree arcs plus degenerate joins; returns a spanning tree of the
    /// bipartite graph as a list of real arc ids.
    fn spanning_real_tree(&mut self) -> Result<Vec<usize>, OtError> {
        let (m, n) = (self.m, self.n);
        let real = m * n;
        let nodes = m + n;
        let art_flow = (real..real + nodes)
            .filter(|&e| self.in_tree[e])
            .map(|e| self.flow[e].abs())
            .fold(0.0, f64::max);
        let total_mass: f64 = self.supply[..m].iter().sum();
        if art_flow > 1e-9 * total_mass.max(1.0) {
            return Err(OtError::Simplex(format!(
                "artificial arcs carry flow {art_flow:e} at optimum"
            )));
        }

        let mut tree: Vec<usize> = (0..real).filter(|&e| self.in_tree[e]).collect();
        let mut uf = UnionFind::new(nodes);
        for &e in &tree {
            let (s, t) = self.ends(e);
            uf.union(s, t);
        }
        let mut in_main = vec![false; nodes];
        let anchor = uf.find(m);
        for u in 0..nodes {
            in_main[u] = uf.find(u) == anchor;
        }
        let pi = &mut self.pi;
        let cost = &self.cost;
        while in_main.iter().any(|x| !x) {
            // cheapest crossing arc in either direction
            let mut r1 = (f64::INFINITY, NONE);
            let mut r2 = (f64::INFINITY, NONE);
            for i in 0..m {
                for j in 0..n {
                    let (mi, mj) = (in_main[i], in_main[m + j]);
                    if mi == mj {
                        continue;
                    }
                    let rc = cost[[i, j]] + pi[i] - pi[m + j];
                    if mi && rc < r1.0 {
                        r1 = (rc, i * n + j);
                    } else if mj && rc < r2.0 {
                        r2 = (rc, i * n + j);
                    }
                }
            }
            let (shift, e) = if r1.0 <= r2.0 { (r1.0, r1.1) } else { (-r2.0, r2.1) };
            if e == NONE {
                return Err(OtError::Simplex("disconnected basis".into()));
            }
            for u in 0..nodes {
                if !in_main[u] {
                    pi[u] += shift;
                }
            }
            let (s, t) = (e / n, m + e % n);
            let joined = if in_main[s] { uf.find(t) } else { uf.find(s) };
            for u in 0..nodes {
                if !in_main[u] && uf.find(u) == joined {
                    in_main[u] = true;
                }
            }
            tree.push(e);
        }
        Ok(tree)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

pub(super) fn solve(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
) -> Result<TransportSolution, OtError> {
    let (m, n) = cost.dim();
    let mut simplex = Simplex::new(cost, a, b);
    simplex.run()?;
    let tree = simplex.spanning_real_tree()?;

    let mut plan = Array2::zeros((m, n));
    let mut objective = 0.0;
    for e in 0..m * n {
        if simplex.in_tree[e] {
            let f = simplex.flow[e].max(0.0);
            plan[[e / n, e % n]] = f;
            objective += f * cost[[e / n, e % n]];
        }
    }

    // potentials straight from the costs of the real spanning tree, g_0 = 0
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for &e in &tree {
        adj[e / n].push(e);
        adj[m + e % n].push(e);
    }
    let mut pot = vec![f64::NAN; nodes];
    pot[m] = 0.0;
    let mut stack = vec![m];
    while let Some(u) = stack.pop() {
        for &e in &adj[u] {
            let (i, j) = (e / n, m + e % n);
            let c = cost[[e / n, e % n]];
            if u == i && pot[j].is_nan() {
                pot[j] = c - pot[i];
                stack.push(j);
            } else if u == j && pot[i].is_nan() {
                pot[i] = c - pot[j];
                stack.push(i);
            }
        }
    }
    if pot.iter().any(|p| p.is_nan()) {
        return Err(OtError::Simplex("dual tree does not span".into()));
    }
    let dual_f = pot[..m].to_vec();
    let dual_g = pot[m..].to_vec();
    Ok(TransportSolution {
        plan,
        objective,
        dual_f,
        dual_g,
        method: SolveMethod::Exact,
        duality_gap: 0.0,
    })
}
