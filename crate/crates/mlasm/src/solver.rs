//! The convex flow relaxation and its solver.
//!
//! The program: maximize sum_v w_v ln y_v + sum_e m_e ln x_e over
//! circulations x >= 0 with sum_e l_e x_e = 1, where y_v is the
//! probability-weighted outflow of v and m_e counts vertices compressed
//! into edge e. Each compressed interior vertex contributes the log of its
//! edge's flow, since its outflow equals that flow.
//!
//! The solver is a log-barrier Newton method. The Hessian of the barrier
//! objective is diagonal plus one rank-one term per source vertex (the
//! out-edge groups partition the edges), so Newton steps reduce to a dense
//! Cholesky solve on the flow-conservation Schur complement. Optimality is
//! certified by an explicitly constructed dual point: any (eta, pi, lambda)
//! with eta_v > 0 and nonpositive reduced costs bounds the optimum from
//! above, and the reported gap is that bound minus the achieved objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PrefixGraph;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Target certified optimality gap, in nats.
    pub tol: f64,
    /// Cap on total Newton iterations.
    pub max_iters: u64,
    /// Recorded in the output; the method itself is deterministic.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-7,
            max_iters: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct ProgEdge {
    tail: usize,
    head: usize,
    len: f64,
    mult: f64,
    /// Probability weight in the tail's adjusted outflow.
    coef: f64,
}

/// The assembled program, plus the mapping back to graph edges.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    edges: Vec<ProgEdge>,
    weights: Vec<f64>,
    out: Vec<Vec<usize>>,
    /// slot -> graph vertex id.
    vertex_ids: Vec<usize>,
    /// kept edge -> graph edge index.
    edge_map: Vec<usize>,
    n_graph_edges: usize,
    /// Additive objective constant from compressed interior probabilities.
    const_term: f64,
    hub_slot: Option<usize>,
}

/// Kosaraju strongly connected components; returns a component id per node.
fn scc_ids(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for &(u, v) in edges {
        fwd[u].push(v);
        rev[v].push(u);
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        // Iterative post-order.
        let mut stack = vec![(s, 0usize)];
        seen[s] = true;
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < fwd[v].len() {
                let w = fwd[v][*i];
                *i += 1;
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut c = 0;
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = c;
        while let Some(v) = stack.pop() {
            for &w in &rev[v] {
                if comp[w] == usize::MAX {
                    comp[w] = c;
                    stack.push(w);
                }
            }
        }
        c += 1;
    }
    comp
}

/// Assembles the program from a graph. Edges whose endpoints are not in a
/// common strongly connected component carry no circulation and are fixed
/// to zero; a weighted vertex left without usable out-edges is infeasible.
pub fn build_program(g: &PrefixGraph) -> Result<ConvexProgram> {
    g.validate()?;
    let n = g.n_vertices();
    if g.edges.is_empty() {
        return Err(Error::Infeasible("graph has no edges".into()));
    }
    let support: Vec<(usize, usize)> = g
        .edges
        .iter()
        .map(|e| {
            (
                g.vertex_index(e.src).unwrap(),
                g.vertex_index(e.dst).unwrap(),
            )
        })
        .collect();
    let comp = scc_ids(n, &support);

    let mut edges = Vec::new();
    let mut edge_map = Vec::new();
    let mut out = vec![Vec::new(); n];
    for (gi, e) in g.edges.iter().enumerate() {
        let (t, h) = support[gi];
        if comp[t] != comp[h] {
            if e.multiplicity > 0 {
                return Err(Error::Infeasible(format!(
                    "compressed edge {} -> {} lies on no cycle",
                    e.src, e.dst
                )));
            }
            continue;
        }
        out[t].push(edges.len());
        edges.push(ProgEdge {
            tail: t,
            head: h,
            len: e.length as f64,
            mult: e.multiplicity as f64,
            coef: e.p_src,
        });
        edge_map.push(gi);
    }
    if edges.is_empty() {
        return Err(Error::Infeasible(
            "no directed cycle of positive length".into(),
        ));
    }
    let weights: Vec<f64> = g.vertices.iter().map(|v| v.weight as f64).collect();
    for v in 0..n {
        if weights[v] > 0.0 && out[v].is_empty() {
            return Err(Error::Infeasible(format!(
                "vertex {} lies on no cycle; its probability would be zero",
                g.vertices[v].id
            )));
        }
    }
    let const_term: f64 = edge_map.iter().map(|&gi| g.edges[gi].interior_logp).sum();

    Ok(ConvexProgram {
        edges,
        weights,
        out,
        vertex_ids: g.vertices.iter().map(|v| v.id).collect(),
        edge_map,
        n_graph_edges: g.edges.len(),
        const_term,
        hub_slot: g.hub.and_then(|h| g.vertex_index(h)),
    })
}

impl ConvexProgram {
    pub fn n_kept_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.edges.iter().map(|e| e.mult).sum::<f64>()
    }

    fn outflow(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.weights.len()];
        for (ei, e) in self.edges.iter().enumerate() {
            y[e.tail] += e.coef * x[ei];
        }
        y
    }

    /// Full objective, including the compression constant.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let y = self.outflow(x);
        let mut obj = self.const_term;
        for (v, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                obj += w * y[v].ln();
            }
        }
        for (ei, e) in self.edges.iter().enumerate() {
            if e.mult > 0.0 {
                obj += e.mult * x[ei].ln();
            }
        }
        obj
    }

    /// (max flow-conservation violation, normalization violation).
    pub fn residuals(&self, x: &[f64]) -> (f64, f64) {
        let mut net = vec![0.0f64; self.weights.len()];
        let mut norm = 0.0f64;
        for (ei, e) in self.edges.iter().enumerate() {
            net[e.head] += x[ei];
            net[e.tail] -= x[ei];
            norm += e.len * x[ei];
        }
        let flow = net.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (flow, (norm - 1.0).abs())
    }

    /// A strictly positive feasible circulation: every kept edge completed
    /// into a cycle by a hop-shortest path, then normalized.
    fn cycle_cover(&self) -> Result<Vec<f64>> {
        let n = self.weights.len();
        let mut x = vec![0.0f64; self.edges.len()];
        for (ei, e) in self.edges.iter().enumerate() {
            x[ei] += 1.0;
            if e.head == e.tail {
                continue;
            }
            // BFS from head back to tail over kept edges.
            let mut prev: Vec<Option<usize>> = vec![None; n];
            let mut seen = vec![false; n];
            let mut queue = std::collections::VecDeque::new();
            seen[e.head] = true;
            queue.push_back(e.head);
            'bfs: while let Some(v) = queue.pop_front() {
                for &fi in &self.out[v] {
                    let w = self.edges[fi].head;
                    if !seen[w] {
                        seen[w] = true;
                        prev[w] = Some(fi);
                        if w == e.tail {
                            break 'bfs;
                        }
                        queue.push_back(w);
                    }
                }
            }
            if !seen[e.tail] {
                return Err(Error::Infeasible(format!(
                    "no cycle through edge {} -> {}",
                    self.vertex_ids[e.tail], self.vertex_ids[e.head]
                )));
            }
            let mut v = e.tail;
            while v != e.head {
                let fi = prev[v].unwrap();
                x[fi] += 1.0;
                v = self.edges[fi].tail;
            }
        }
        let total: f64 = self
            .edges
            .iter()
            .enumerate()
            .map(|(ei, e)| e.len * x[ei])
            .sum();
        if total <= 0.0 {
            return Err(Error::Infeasible("only zero-length circulation".into()));
        }
        for v in x.iter_mut() {
            *v /= total;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VertexY {
    pub id: usize,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VertexPi {
    pub id: usize,
    pub pi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DualCertificate {
    pub pi: Vec<VertexPi>,
    pub lambda: f64,
}

/// A feasible point with its certificate. `x` is indexed like the graph's
/// edge list; edges fixed to zero stay zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FractionalSolution {
    pub x: Vec<f64>,
    pub y: Vec<VertexY>,
    pub objective: f64,
    pub gap: f64,
    pub feas_residual: f64,
    pub iters: u64,
    pub seed: u64,
    pub converged: bool,
    pub duals: DualCertificate,
}

impl FractionalSolution {
    pub fn y_of(&self, id: usize) -> Option<f64> {
        self.y
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| self.y[i].y)
    }
}

/// Builds a valid dual point from (x, pi) and returns (gap, lambda).
/// `pi` is repaired in place along zero-length edges; lambda is set to the
/// smallest value dominating every positive-length reduced cost. The result
/// is a rigorous bound: any (eta, pi, lambda) passing the sign conditions
/// bounds the optimum from above.
fn certificate(p: &ConvexProgram, x: &[f64], pi: &mut [f64]) -> (f64, f64) {
    let y = p.outflow(x);
    let n = p.weights.len();
    // eta_v = w_v / y_v maximizes the y-part of the Lagrangian exactly.
    let eta: Vec<f64> = (0..n)
        .map(|v| {
            if p.weights[v] > 0.0 {
                p.weights[v] / y[v]
            } else {
                0.0
            }
        })
        .collect();

    // Zero-length edges ignore lambda, so their dual feasibility is repaired
    // first by lowering pi along the (acyclic) zero-length subgraph.
    let zero_edges: Vec<usize> = (0..p.edges.len()).filter(|&e| p.edges[e].len == 0.0).collect();
    if !zero_edges.is_empty() {
        let mut indeg = vec![0usize; n];
        for &ei in &zero_edges {
            indeg[p.edges[ei].head] += 1;
        }
        let mut zero_out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &ei in &zero_edges {
            zero_out[p.edges[ei].tail].push(ei);
        }
        let mut delta = vec![0.0f64; n];
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        while let Some(v) = queue.pop() {
            for &ei in &zero_out[v] {
                let e = &p.edges[ei];
                let viol = e.coef * eta[e.tail] + (pi[e.head] - delta[e.head])
                    - (pi[e.tail] - delta[e.tail]);
                if viol > 0.0 {
                    delta[e.head] += viol;
                }
                indeg[e.head] -= 1;
                if indeg[e.head] == 0 {
                    queue.push(e.head);
                }
            }
        }
        for v in 0..n {
            pi[v] -= delta[v];
        }
    }

    // lambda must dominate the reduced cost of every positive-length edge.
    let ratio = |e: &ProgEdge| (e.coef * eta[e.tail] + pi[e.head] - pi[e.tail]) / e.len;
    let mut lambda = f64::NEG_INFINITY;
    for e in &p.edges {
        if e.len > 0.0 {
            lambda = lambda.max(ratio(e));
        }
    }
    // Multiplicity edges need strictly negative reduced cost.
    for _ in 0..4 {
        let bad = p.edges.iter().any(|e| {
            e.mult > 0.0 && e.coef * eta[e.tail] + pi[e.head] - pi[e.tail] - lambda * e.len >= 0.0
        });
        if !bad {
            break;
        }
        lambda += 1e-12 * (1.0 + lambda.abs());
    }

    let mut ub = lambda;
    for v in 0..n {
        if p.weights[v] > 0.0 {
            ub += p.weights[v] * ((p.weights[v] / eta[v]).ln() - 1.0);
        }
    }
    let mut obj = 0.0;
    for v in 0..n {
        if p.weights[v] > 0.0 {
            obj += p.weights[v] * y[v].ln();
        }
    }
    for (ei, e) in p.edges.iter().enumerate() {
        if e.mult > 0.0 {
            let rho = e.coef * eta[e.tail] + pi[e.head] - pi[e.tail] - lambda * e.len;
            if rho >= 0.0 {
                return (f64::MAX, lambda);
            }
            ub += e.mult * ((e.mult / -rho).ln() - 1.0);
            obj += e.mult * x[ei].ln();
        }
    }
    (ub - obj, lambda)
}

/// The best dual point for a given primal x, up to the compressed-edge
/// terms: with eta fixed at w / y(x), minimizing the bound over (pi,
/// lambda) is a maximum-ratio-cycle problem. Bisection on lambda with
/// Bellman-Ford feasibility finds it to machine precision, and the
/// extracted potentials go through the usual rigorous repair. By the
/// envelope theorem the remaining slack is second order in the primal
/// error, so this turns a merely-good iterate into a tight certificate.
fn polish_certificate(p: &ConvexProgram, x: &[f64]) -> (f64, Vec<f64>, f64) {
    let n = p.weights.len();
    let y = p.outflow(x);
    let num: Vec<f64> = p
        .edges
        .iter()
        .map(|e| {
            if p.weights[e.tail] > 0.0 && y[e.tail] > 0.0 {
                e.coef * p.weights[e.tail] / y[e.tail]
            } else {
                0.0
            }
        })
        .collect();

    // Difference constraints pi_head - pi_tail <= lambda l_e - num_e are
    // satisfiable iff the arc weights admit no negative cycle.
    let feasible_potentials = |lambda: f64| -> Option<Vec<f64>> {
        let mut d = vec![0.0f64; n];
        for round in 0..=n {
            let mut improved = false;
            for (ei, e) in p.edges.iter().enumerate() {
                let w = lambda * e.len - num[ei];
                let cand = d[e.tail] + w;
                if cand < d[e.head] - 1e-15 * (1.0 + cand.abs()) {
                    d[e.head] = cand;
                    improved = true;
                }
            }
            if !improved {
                return Some(d);
            }
            if round == n {
                return None;
            }
        }
        None
    };

    let mut hi = p
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.len > 0.0)
        .map(|(ei, e)| num[ei] / e.len)
        .fold(0.0f64, f64::max)
        + 1.0;
    let mut lo = 0.0f64;
    let mut best_pot = feasible_potentials(hi);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        match feasible_potentials(mid) {
            Some(pot) => {
                hi = mid;
                best_pot = Some(pot);
            }
            None => lo = mid,
        }
    }
    let mut pi = best_pot.unwrap_or_else(|| vec![0.0; n]);
    let (gap, lambda) = certificate(p, x, &mut pi);
    (gap, pi, lambda)
}

/// The hub circulation: flow c through every v -> hub -> v pair with
/// c = 1 / sum of read lengths. Exactly feasible; all weighted outflows
/// equal c. Falls back to a cycle cover when the graph has no hub.
pub fn initial_point(g: &PrefixGraph) -> Result<FractionalSolution> {
    let p = build_program(g)?;
    let x_kept = match p.hub_slot {
        Some(hub) => {
            let total: f64 = p
                .edges
                .iter()
                .filter(|e| e.head == hub)
                .map(|e| e.len)
                .sum();
            if total <= 0.0 {
                return Err(Error::Infeasible("hub has no incoming length".into()));
            }
            let c = 1.0 / total;
            let mut x = vec![0.0; p.edges.len()];
            for (ei, e) in p.edges.iter().enumerate() {
                if e.head == hub || e.tail == hub {
                    x[ei] = c;
                }
            }
            x
        }
        None => p.cycle_cover()?,
    };
    let mut pi = vec![0.0; p.weights.len()];
    let (gap, lambda) = certificate(&p, &x_kept, &mut pi);
    Ok(package(&p, &x_kept, &pi, lambda, gap, 0, 0, false))
}

#[allow(clippy::too_many_arguments)]
fn package(
    p: &ConvexProgram,
    x_kept: &[f64],
    pi: &[f64],
    lambda: f64,
    gap: f64,
    iters: u64,
    seed: u64,
    converged: bool,
) -> FractionalSolution {
    let (flow_r, norm_r) = p.residuals(x_kept);
    let y = p.outflow(x_kept);
    let mut x = vec![0.0; p.n_graph_edges];
    for (ei, &gi) in p.edge_map.iter().enumerate() {
        x[gi] = x_kept[ei];
    }
    let mut ys: Vec<VertexY> = (0..p.weights.len())
        .filter(|&v| p.weights[v] > 0.0)
        .map(|v| VertexY {
            id: p.vertex_ids[v],
            y: y[v],
        })
        .collect();
    ys.sort_by_key(|v| v.id);
    FractionalSolution {
        x,
        y: ys,
        objective: p.objective(x_kept),
        gap: gap.min(f64::MAX),
        feas_residual: flow_r.max(norm_r),
        iters,
        seed,
        converged,
        duals: DualCertificate {
            pi: (0..p.weights.len())
                .map(|v| VertexPi {
                    id: p.vertex_ids[v],
                    pi: pi[v],
                })
                .collect(),
            lambda,
        },
    }
}

/// Dense symmetric solver with Jacobi scaling and iterative refinement.
/// The Schur matrix spans many orders of magnitude near the end of the
/// barrier path; scaling keeps the Cholesky factor usable there.
struct ScaledCholesky {
    factor: Vec<f64>,
    original: Vec<f64>,
    scale: Vec<f64>,
    n: usize,
}

impl ScaledCholesky {
    fn new(m: Vec<f64>, n: usize) -> Option<Self> {
        let original = m.clone();
        let mut scale = vec![1.0f64; n];
        for i in 0..n {
            let d = m[i * n + i];
            if d > 0.0 && d.is_finite() {
                scale[i] = 1.0 / d.sqrt();
            }
        }
        let mut factor = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                factor[i * n + j] = m[i * n + j] * scale[i] * scale[j];
            }
        }
        for attempt in 0..3 {
            if attempt > 0 {
                let ridge = 10f64.powi(attempt - 13);
                let mut f = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        f[i * n + j] = m[i * n + j] * scale[i] * scale[j];
                    }
                    f[i * n + i] += ridge;
                }
                factor = f;
            }
            if Self::factorize(&mut factor, n) {
                return Some(ScaledCholesky {
                    factor,
                    original,
                    scale,
                    n,
                });
            }
        }
        None
    }

    fn factorize(m: &mut [f64], n: usize) -> bool {
        for j in 0..n {
            let mut d = m[j * n + j];
            for k in 0..j {
                d -= m[j * n + k] * m[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            m[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = m[i * n + j];
                for k in 0..j {
                    s -= m[i * n + k] * m[j * n + k];
                }
                m[i * n + j] = s / d;
            }
        }
        true
    }

    fn solve_scaled(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            b[i] *= self.scale[i];
        }
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.factor[i * n + k] * b[k];
            }
            b[i] = s / self.factor[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.factor[k * n + i] * b[k];
            }
            b[i] = s / self.factor[i * n + i];
        }
        for i in 0..n {
            b[i] *= self.scale[i];
        }
    }

    /// Solve with two rounds of iterative refinement against the unscaled
    /// matrix.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = rhs.to_vec();
        self.solve_scaled(&mut x);
        for _ in 0..2 {
            let mut r = rhs.to_vec();
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += self.original[i * n + j] * x[j];
                }
                r[i] -= acc;
            }
            self.solve_scaled(&mut r);
            for i in 0..n {
                x[i] += r[i];
            }
        }
        x
    }
}

/// Disjoint-set forest for the weakly-connected components of the active
/// subgraph.
struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, v: usize) -> usize {
        let mut r = v;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = v;
        while self.0[c] != c {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

struct BestCert {
    gap: f64,
    x: Vec<f64>,
    pi: Vec<f64>,
    lambda: f64,
}

impl BestCert {
    /// A certificate only means something at a (near-)feasible point: the
    /// dual value bounds the feasible optimum, so comparing it against the
    /// objective of an infeasible iterate would be fiction.
    fn consider(&mut self, p: &ConvexProgram, x: &[f64], pi_src: &[f64]) {
        let (fr, nr) = p.residuals(x);
        if fr.max(nr) > 1e-11 * (1.0 + p.total_weight()) {
            return;
        }
        let mut pi = pi_src.to_vec();
        let (gap, lambda) = certificate(p, x, &mut pi);
        if gap < self.gap {
            self.gap = gap;
            self.x = x.to_vec();
            self.pi = pi;
            self.lambda = lambda;
        }
    }

    /// Dual-optimal certification of a feasible point.
    fn consider_polished(&mut self, p: &ConvexProgram, x: &[f64]) {
        let (fr, nr) = p.residuals(x);
        if fr.max(nr) > 1e-11 * (1.0 + p.total_weight()) {
            return;
        }
        let (gap, pi, lambda) = polish_certificate(p, x);
        if gap < self.gap {
            self.gap = gap;
            self.x = x.to_vec();
            self.pi = pi;
            self.lambda = lambda;
        }
    }

    /// Dual-optimal certification of the already-stored point.
    fn polish(&mut self, p: &ConvexProgram) {
        let x = self.x.clone();
        let (gap, pi, lambda) = polish_certificate(p, &x);
        if gap < self.gap {
            self.gap = gap;
            self.x = x;
            self.pi = pi;
            self.lambda = lambda;
        }
    }
}

/// One barrier descent over a subset of edges (`act`), certifying against
/// the full program each iteration. Edges outside `act` stay frozen at
/// their current (usually zero) flow; the residual-correcting steps repair
/// any feasibility error that freezing introduced.
struct BarrierRun<'a> {
    p: &'a ConvexProgram,
    act: Vec<usize>,
    mu0: f64,
    mu_floor: f64,
    tol: f64,
    max_iters: u64,
}

impl BarrierRun<'_> {
    fn run(&self, x: &mut Vec<f64>, best: &mut BestCert, total_iters: &mut u64) {
        let p = self.p;
        let n = p.weights.len();
        let m_act = self.act.len();
        if m_act == 0 {
            return;
        }

        // Flow rows over the active subgraph only: one per touched vertex,
        // minus one per weakly connected component (their rows sum to zero,
        // so keeping them all would make the Schur complement singular).
        let mut uf = UnionFind::new(n);
        let mut touched = vec![false; n];
        for &ei in &self.act {
            let e = &p.edges[ei];
            touched[e.tail] = true;
            touched[e.head] = true;
            uf.union(e.tail, e.head);
        }
        let mut row_of: Vec<Option<usize>> = vec![None; n];
        let mut seen_comp: Vec<bool> = vec![false; n];
        let mut next_row = 0usize;
        for v in 0..n {
            if !touched[v] {
                continue;
            }
            let root = uf.find(v);
            if !seen_comp[root] {
                seen_comp[root] = true; // component anchor: row dropped
            } else {
                row_of[v] = Some(next_row);
                next_row += 1;
            }
        }
        let n_flow_rows = next_row;

        // Outflow-definition rows and y variables per weighted vertex with
        // at least one active out-edge.
        let mut has_act_out = vec![false; n];
        for &ei in &self.act {
            has_act_out[p.edges[ei].tail] = true;
        }
        let ydef_row_of: Vec<Option<usize>> = {
            let mut next = n_flow_rows;
            (0..n)
                .map(|v| {
                    if p.weights[v] > 0.0 && has_act_out[v] {
                        let r = next;
                        next += 1;
                        Some(r)
                    } else {
                        None
                    }
                })
                .collect()
        };
        let n_weighted = ydef_row_of.iter().filter(|r| r.is_some()).count();
        let norm_row = n_flow_rows + n_weighted;
        let n_rows = norm_row + 1;
        let yvar_of: Vec<Option<usize>> = {
            let mut next = 0usize;
            (0..n)
                .map(|v| {
                    if ydef_row_of[v].is_some() {
                        let r = next;
                        next += 1;
                        Some(r)
                    } else {
                        None
                    }
                })
                .collect()
        };

        let mut yv = vec![0.0f64; n_weighted];
        {
            let y = p.outflow(x);
            for v in 0..n {
                if let Some(sl) = yvar_of[v] {
                    yv[sl] = y[v].max(f64::MIN_POSITIVE);
                }
            }
        }

        let barrier = |x: &[f64], yv: &[f64], mu: f64| -> f64 {
            let mut phi = 0.0;
            for v in 0..n {
                if let Some(sl) = yvar_of[v] {
                    phi += p.weights[v] * yv[sl].ln();
                }
            }
            for &ei in &self.act {
                phi += (p.edges[ei].mult + mu) * x[ei].ln();
            }
            phi
        };

        // Sparse column of A per active edge (at most 4 rows).
        let col_of = |ei: usize, cols: &mut Vec<(usize, f64)>| {
            let e = &p.edges[ei];
            cols.clear();
            if e.head != e.tail {
                if let Some(r) = row_of[e.head] {
                    cols.push((r, 1.0));
                }
                if let Some(r) = row_of[e.tail] {
                    cols.push((r, -1.0));
                }
            }
            if let Some(r) = ydef_row_of[e.tail] {
                cols.push((r, e.coef));
            }
            if e.len != 0.0 {
                cols.push((norm_row, e.len));
            }
        };

        let feas_scale = 1.0 + p.total_weight();
        // Distance of the iterate from the constraint manifold, including
        // the outflow-definition rows.
        let iter_feas = |x: &[f64], yv: &[f64]| -> f64 {
            let (fr, nr) = p.residuals(x);
            let y = p.outflow(x);
            let mut yd = 0.0f64;
            for v in 0..n {
                if let Some(sl) = yvar_of[v] {
                    yd = yd.max((y[v] - yv[sl]).abs());
                }
            }
            fr.max(nr).max(yd)
        };

        let mut pi_scratch = vec![0.0f64; n];
        let mut last_feasible: Option<Vec<f64>> = None;
        let mut mu = self.mu0;
        let mut floor_stages = 0u32;
        'outer: loop {
            let stage_target = (1.05 * mu * m_act as f64 + 0.25 * self.tol).max(0.5 * self.tol);
            // The dual estimate's error scales with the Newton decrement
            // delta, so centering must push delta well below the gap this
            // stage is expected to certify.
            let inner_tol = (1e-4 * (mu * m_act as f64) * (mu * m_act as f64))
                .max(1e-22 * feas_scale * feas_scale);
            let gap_at_stage_start = best.gap;
            for _inner in 0..15 {
                if *total_iters >= self.max_iters {
                    break;
                }
                // A stage may be skipped only from a feasible iterate;
                // otherwise Newton must run to repair the residual first.
                if best.gap <= stage_target && iter_feas(x, &yv) <= 1e-11 * feas_scale {
                    break;
                }
                *total_iters += 1;

                let mut dinv_x = vec![0.0f64; m_act];
                let mut grad_x = vec![0.0f64; m_act];
                for (k, &ei) in self.act.iter().enumerate() {
                    let e = &p.edges[ei];
                    grad_x[k] = (e.mult + mu) / x[ei];
                    dinv_x[k] = x[ei] * x[ei] / (e.mult + mu);
                }
                let mut dinv_y = vec![0.0f64; n_weighted];
                let mut grad_y = vec![0.0f64; n_weighted];
                for v in 0..n {
                    if let Some(sl) = yvar_of[v] {
                        grad_y[sl] = p.weights[v] / yv[sl];
                        dinv_y[sl] = yv[sl] * yv[sl] / p.weights[v];
                    }
                }

                // Schur complement M = A H^-1 A^T over active columns.
                let mut mmat = vec![0.0f64; n_rows * n_rows];
                let mut cols: Vec<(usize, f64)> = Vec::with_capacity(4);
                for (k, &ei) in self.act.iter().enumerate() {
                    col_of(ei, &mut cols);
                    for &(r1, v1) in &cols {
                        for &(r2, v2) in &cols {
                            if r2 <= r1 {
                                mmat[r1 * n_rows + r2] += dinv_x[k] * v1 * v2;
                            }
                        }
                    }
                }
                for v in 0..n {
                    if let (Some(sl), Some(r)) = (yvar_of[v], ydef_row_of[v]) {
                        mmat[r * n_rows + r] += dinv_y[sl];
                    }
                }
                for r1 in 0..n_rows {
                    for r2 in (r1 + 1)..n_rows {
                        mmat[r1 * n_rows + r2] = mmat[r2 * n_rows + r1];
                    }
                }

                // rhs = A H^-1 g + (A z - b); the residual term steers every
                // step back onto the constraint manifold. Frozen edges still
                // contribute their constant flow to the residual.
                let mut rhs = vec![0.0f64; n_rows];
                rhs[norm_row] = -1.0;
                for (ei, e) in p.edges.iter().enumerate() {
                    if x[ei] == 0.0 {
                        continue;
                    }
                    if e.head != e.tail {
                        if let Some(r) = row_of[e.head] {
                            rhs[r] += x[ei];
                        }
                        if let Some(r) = row_of[e.tail] {
                            rhs[r] -= x[ei];
                        }
                    }
                    if let Some(r) = ydef_row_of[e.tail] {
                        rhs[r] += e.coef * x[ei];
                    }
                    if e.len != 0.0 {
                        rhs[norm_row] += e.len * x[ei];
                    }
                }
                for (k, &ei) in self.act.iter().enumerate() {
                    col_of(ei, &mut cols);
                    let hg = dinv_x[k] * grad_x[k];
                    for &(r, vc) in &cols {
                        rhs[r] += vc * hg;
                    }
                }
                for v in 0..n {
                    if let (Some(sl), Some(r)) = (yvar_of[v], ydef_row_of[v]) {
                        rhs[r] -= dinv_y[sl] * grad_y[sl] + yv[sl];
                    }
                }
                let feas_err = iter_feas(x, &yv);

                let Some(chol) = ScaledCholesky::new(mmat, n_rows) else {
                    break; // numerically stuck; keep what is certified
                };
                let nu = chol.solve(&rhs);

                // dz = H^-1 (g - A^T nu); delta^2 = dz . (g - A^T nu).
                let mut dx = vec![0.0f64; m_act];
                let mut delta2 = 0.0f64;
                for (k, &ei) in self.act.iter().enumerate() {
                    col_of(ei, &mut cols);
                    let mut at = 0.0;
                    for &(r, vc) in &cols {
                        at += vc * nu[r];
                    }
                    let res = grad_x[k] - at;
                    dx[k] = dinv_x[k] * res;
                    delta2 += dx[k] * res;
                }
                let mut dy = vec![0.0f64; n_weighted];
                for v in 0..n {
                    if let (Some(sl), Some(r)) = (yvar_of[v], ydef_row_of[v]) {
                        let res = grad_y[sl] + nu[r];
                        dy[sl] = dinv_y[sl] * res;
                        delta2 += dy[sl] * res;
                    }
                }

                for v in 0..n {
                    pi_scratch[v] = match row_of[v] {
                        Some(r) => -nu[r],
                        None => 0.0,
                    };
                }
                // Certify a feasibility-corrected copy of the iterate: the
                // H-weighted least-squares correction reuses the factored
                // Schur matrix and scales per-edge moves by x^2, so small
                // flows stay positive where an orthogonal projection would
                // overshoot them.
                {
                    let mut xf = x.clone();
                    let mut ok = true;
                    for _pass in 0..2 {
                        let mut r = vec![0.0f64; n_rows];
                        r[norm_row] = -1.0;
                        for (ei, e) in p.edges.iter().enumerate() {
                            if xf[ei] == 0.0 {
                                continue;
                            }
                            if e.head != e.tail {
                                if let Some(rw) = row_of[e.head] {
                                    r[rw] += xf[ei];
                                }
                                if let Some(rw) = row_of[e.tail] {
                                    r[rw] -= xf[ei];
                                }
                            }
                            if let Some(rw) = ydef_row_of[e.tail] {
                                r[rw] += e.coef * xf[ei];
                            }
                            if e.len != 0.0 {
                                r[norm_row] += e.len * xf[ei];
                            }
                        }
                        for v in 0..n {
                            if let (Some(sl), Some(rw)) = (yvar_of[v], ydef_row_of[v]) {
                                r[rw] -= yv[sl];
                            }
                        }
                        let cnu = chol.solve(&r);
                        for (k, &ei) in self.act.iter().enumerate() {
                            col_of(ei, &mut cols);
                            let mut at = 0.0;
                            for &(rw, vc) in &cols {
                                at += vc * cnu[rw];
                            }
                            xf[ei] -= dinv_x[k] * at;
                            if xf[ei] <= 0.0 {
                                ok = false;
                                break;
                            }
                        }
                        if !ok {
                            break;
                        }
                    }
                    if ok {
                        best.consider(p, &xf, &pi_scratch);
                        last_feasible = Some(xf);
                    }
                }
                if std::env::var("MLASM_INNER").is_ok() {
                    eprintln!("    inner mu={mu:.2e} d2={delta2:.3e} tol={inner_tol:.2e} feas={feas_err:.2e}");
                }
                if best.gap <= self.tol {
                    break 'outer;
                }
                if !(delta2 > inner_tol) && feas_err <= 1e-12 * feas_scale {
                    break;
                }

                let mut t = 1.0f64;
                for (k, &ei) in self.act.iter().enumerate() {
                    if dx[k] < 0.0 {
                        t = t.min(-0.99 * x[ei] / dx[k]);
                    }
                }
                for sl in 0..n_weighted {
                    if dy[sl] < 0.0 {
                        t = t.min(-0.99 * yv[sl] / dy[sl]);
                    }
                }
                let phi = barrier(x, &yv, mu);
                let g_dot: f64 = grad_x
                    .iter()
                    .zip(dx.iter())
                    .chain(grad_y.iter().zip(dy.iter()))
                    .map(|(a, b)| a * b)
                    .sum();
                let mut accepted = false;
                for _ in 0..60 {
                    let mut xt = x.clone();
                    for (k, &ei) in self.act.iter().enumerate() {
                        xt[ei] += t * dx[k];
                    }
                    let mut yt = yv.clone();
                    for sl in 0..n_weighted {
                        yt[sl] += t * dy[sl];
                    }
                    let pos =
                        self.act.iter().all(|&ei| xt[ei] > 0.0) && yt.iter().all(|&v| v > 0.0);
                    if pos {
                        let phit = barrier(&xt, &yt, mu);
                        // Accept on objective ascent, or on any step that
                        // shrinks a non-negligible feasibility residual.
                        let feas2 = iter_feas(&xt, &yt);
                        if phit >= phi + 0.25 * t * g_dot
                            || (feas_err > 1e-12 * feas_scale && feas2 < 0.9 * feas_err)
                        {
                            *x = xt;
                            yv = yt;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }

            // Deep stages deserve the dual-optimal certificate; its slack
            // is second order in the primal error, so it credits iterates
            // the fast per-iteration certificate undervalues.
            if mu <= 1e-6 && best.gap > self.tol {
                if let Some(xf) = &last_feasible {
                    best.consider_polished(p, xf);
                }
            }
            if std::env::var("MLASM_TRACE").is_ok() {
                let (fr, nr) = p.residuals(x);
                eprintln!(
                    "stage act={m_act} mu={mu:.3e} best_gap={:.6e} iters={total_iters} feas={fr:.2e}/{nr:.2e}",
                    best.gap
                );
            }
            if best.gap <= self.tol || *total_iters >= self.max_iters {
                break 'outer;
            }
            if mu <= self.mu_floor {
                floor_stages += 1;
                if floor_stages >= 3 || best.gap >= gap_at_stage_start {
                    break 'outer; // the floor stage made no progress
                }
            }
            mu = (mu * 0.08).max(self.mu_floor);
        }
    }
}

/// Solves the program to the requested certified gap, or returns the best
/// point found with `converged = false` rather than pretending success.
///
/// Two phases of Newton log-barrier descent. The first runs over all edges
/// down to a moderate barrier weight; its limiting factor is the certified
/// gap of roughly mu times the edge count, and going deeper is numerically
/// fruitless because near-zero flows make the Newton system singular in
/// f64. The second phase freezes those near-zero flows at zero and follows
/// the barrier deep on the remaining well-scaled edges. Certificates are
/// always evaluated against the full program, so a wrong freeze can only
/// slow convergence (and triggers a retry with a smaller threshold), never
/// corrupt the answer.
pub fn solve(p: &ConvexProgram, opts: SolveOptions) -> Result<FractionalSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::BadParameter("tol must be positive".into()));
    }
    let m = p.edges.len();
    let w_total = p.total_weight();

    let mut x = p.cycle_cover()?;
    let mut best = BestCert {
        gap: f64::MAX,
        x: x.clone(),
        pi: vec![0.0; p.weights.len()],
        lambda: 0.0,
    };
    let mut total_iters = 0u64;

    // Phase 1: all edges, moderate depth.
    let phase1 = BarrierRun {
        p,
        act: (0..m).collect(),
        mu0: 1.0f64.max(w_total / m as f64),
        mu_floor: 1e-8,
        tol: opts.tol,
        max_iters: opts.max_iters,
    };
    phase1.run(&mut x, &mut best, &mut total_iters);
    best.polish(p);

    // Phase 2: freeze near-zero flows and polish deep on the well-scaled
    // remainder. Between rounds the active set is re-priced: flows that
    // decayed toward zero are frozen, and frozen edges whose reduced cost
    // under the best duals turned non-negative are released. A wrong guess
    // only costs another round; certificates always cover the full program.
    let nv = p.weights.len();
    let drop_tol = 1e-4 / (1.0 + w_total);
    let mut prev_act: Vec<usize> = Vec::new();
    for round in 0..6 {
        if best.gap <= opts.tol || total_iters >= opts.max_iters {
            break;
        }
        let mut keep = vec![false; m];
        for ei in 0..m {
            keep[ei] = best.x[ei] > drop_tol || p.edges[ei].mult > 0.0;
        }
        // Every weighted vertex keeps its largest in- and out-flow edge so
        // outflows stay positive and a circulation remains possible.
        let mut best_out = vec![usize::MAX; nv];
        let mut best_in = vec![usize::MAX; nv];
        for (ei, e) in p.edges.iter().enumerate() {
            if best_out[e.tail] == usize::MAX || best.x[ei] > best.x[best_out[e.tail]] {
                best_out[e.tail] = ei;
            }
            if best_in[e.head] == usize::MAX || best.x[ei] > best.x[best_in[e.head]] {
                best_in[e.head] = ei;
            }
        }
        for v in 0..nv {
            if p.weights[v] > 0.0 {
                if best_out[v] != usize::MAX {
                    keep[best_out[v]] = true;
                }
                if best_in[v] != usize::MAX {
                    keep[best_in[v]] = true;
                }
            }
        }
        // Pricing: release frozen edges that look binding under the best
        // duals (largest reduced costs first, bounded count). The first
        // round prunes only; pricing waits for the sharpened duals of a
        // deep run, otherwise crude duals release half the graph.
        if round > 0 {
            let y = p.outflow(&best.x);
            let lambda = best.lambda;
            let theta = 1e-7 * (1.0 + lambda.abs());
            let mut candidates: Vec<(f64, usize)> = Vec::new();
            for (ei, e) in p.edges.iter().enumerate() {
                if keep[ei] {
                    continue;
                }
                let eta = if p.weights[e.tail] > 0.0 && y[e.tail] > 0.0 {
                    p.weights[e.tail] / y[e.tail]
                } else {
                    0.0
                };
                let rho = e.coef * eta + best.pi[e.head] - best.pi[e.tail] - lambda * e.len;
                if rho >= -theta {
                    candidates.push((rho, ei));
                }
            }
            candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let cap = 4 * p.weights.iter().filter(|&&w| w > 0.0).count() + 16;
            for &(_, ei) in candidates.iter().take(cap) {
                keep[ei] = true;
            }
        }
        let act: Vec<usize> = (0..m).filter(|&ei| keep[ei]).collect();
        if act.is_empty() {
            break;
        }
        if act == prev_act {
            break; // the active set is stable and the run still stalled
        }
        prev_act = act.clone();
        let mut x2 = best.x.clone();
        for ei in 0..m {
            if !keep[ei] {
                x2[ei] = 0.0;
            } else if x2[ei] <= 0.0 {
                x2[ei] = drop_tol; // released edge re-enters with a nudge
            }
        }
        let phase2 = BarrierRun {
            p,
            act,
            mu0: 1e-4,
            mu_floor: (opts.tol / (20.0 * m as f64)).max(1e-14),
            tol: opts.tol,
            max_iters: opts.max_iters,
        };
        phase2.run(&mut x2, &mut best, &mut total_iters);
        best.polish(p);
    }

    let converged = best.gap <= opts.tol;
    let sol = package(
        p,
        &best.x,
        &best.pi,
        best.lambda,
        best.gap,
        total_iters,
        opts.seed,
        converged,
    );
    Ok(sol)
}

/// Independent re-verification of a solution against its graph: recomputes
/// feasibility residuals, the objective, and the dual bound from the stored
/// certificate, without running the solver.
#[derive(Debug, Clone)]
pub struct Verification {
    pub feas_residual: f64,
    pub gap: f64,
    pub objective: f64,
    pub dual_feasible: bool,
}

pub fn verify_solution(g: &PrefixGraph, sol: &FractionalSolution) -> Result<Verification> {
    let p = build_program(g)?;
    if sol.x.len() != p.n_graph_edges {
        return Err(Error::BadParameter(
            "solution does not match graph edge count".into(),
        ));
    }
    let x_kept: Vec<f64> = p.edge_map.iter().map(|&gi| sol.x[gi]).collect();
    if x_kept.iter().any(|&v| v < 0.0) {
        return Err(Error::BadParameter("negative flow".into()));
    }
    let (flow_r, norm_r) = p.residuals(&x_kept);
    let objective = p.objective(&x_kept);

    let y = p.outflow(&x_kept);
    let n = p.weights.len();
    let mut pi = vec![0.0f64; n];
    for vp in &sol.duals.pi {
        if let Some(slot) = p.vertex_ids.iter().position(|&id| id == vp.id) {
            pi[slot] = vp.pi;
        }
    }
    let lambda = sol.duals.lambda;
    let scale = 1.0 + lambda.abs() + p.total_weight();
    let mut dual_feasible = true;
    let mut ub = lambda;
    for v in 0..n {
        if p.weights[v] > 0.0 {
            let eta = p.weights[v] / y[v];
            ub += p.weights[v] * ((p.weights[v] / eta).ln() - 1.0);
        }
    }
    ub += p.const_term;
    for e in &p.edges {
        let eta = if p.weights[e.tail] > 0.0 {
            p.weights[e.tail] / y[e.tail]
        } else {
            0.0
        };
        let rho = e.coef * eta + pi[e.head] - pi[e.tail] - lambda * e.len;
        if rho > 1e-9 * scale {
            dual_feasible = false;
        }
        if e.mult > 0.0 {
            if rho >= 0.0 {
                dual_feasible = false;
            } else {
                ub += e.mult * ((e.mult / -rho).ln() - 1.0);
            }
        }
    }
    Ok(Verification {
        feas_residual: flow_r.max(norm_r),
        gap: ub - objective,
        objective,
        dual_feasible,
    })
}

/// Normative solution file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionEdge {
    pub src: usize,
    pub dst: usize,
    pub x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub edges: Vec<SolutionEdge>,
    pub vertices: Vec<VertexY>,
    pub objective: f64,
    pub gap: f64,
    pub iters: u64,
    pub seed: u64,
    pub feas_residual: f64,
    pub status: String,
    pub duals: DualCertificate,
}

pub fn solution_to_file(g: &PrefixGraph, sol: &FractionalSolution) -> SolutionFile {
    SolutionFile {
        edges: g
            .edges
            .iter()
            .zip(sol.x.iter())
            .map(|(e, &x)| SolutionEdge {
                src: e.src,
                dst: e.dst,
                x,
            })
            .collect(),
        vertices: sol.y.clone(),
        objective: sol.objective,
        gap: sol.gap,
        iters: sol.iters,
        seed: sol.seed,
        feas_residual: sol.feas_residual,
        status: if sol.converged {
            "converged".into()
        } else {
            "unconverged".into()
        },
        duals: sol.duals.clone(),
    }
}

pub fn solution_from_file(g: &PrefixGraph, file: &SolutionFile) -> Result<FractionalSolution> {
    if file.edges.len() != g.edges.len() {
        return Err(Error::BadParameter(format!(
            "solution has {} edges, graph has {}",
            file.edges.len(),
            g.edges.len()
        )));
    }
    for (fe, ge) in file.edges.iter().zip(g.edges.iter()) {
        if fe.src != ge.src || fe.dst != ge.dst {
            return Err(Error::BadParameter(
                "solution edge order does not match graph".into(),
            ));
        }
    }
    Ok(FractionalSolution {
        x: file.edges.iter().map(|e| e.x).collect(),
        y: file.vertices.clone(),
        objective: file.objective,
        gap: file.gap,
        feas_residual: file.feas_residual,
        iters: file.iters,
        seed: file.seed,
        converged: file.status == "converged",
        duals: file.duals.clone(),
    })
}
