//! Exact minimization of binary labeling energies with a Potts pairwise term,
//! via max-flow / min-cut (Dinic).

use std::collections::VecDeque;

/// Symmetric 4-neighborhood (or any) adjacency as an edge list; each
/// unordered pair appears once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Adjacency {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn new(nodes: usize) -> Self {
        Adjacency {
            nodes,
            edges: Vec::new(),
        }
    }

    /// Adds the unordered pair `{a, b}`; self-loops and out-of-range nodes
    /// are ignored.
    pub fn connect(&mut self, a: usize, b: usize) {
        if a != b && a < self.nodes && b < self.nodes {
            self.edges.push((a.min(b), a.max(b)));
        }
    }

    /// 4-neighborhood of a `cols × rows` lattice, row-major.
    pub fn lattice(cols: usize, rows: usize) -> Self {
        let mut adj = Adjacency::new(cols * rows);
        for y in 0..rows {
            for x in 0..cols {
                let k = y * cols + x;
                if x + 1 < cols {
                    adj.connect(k, k + 1);
                }
                if y + 1 < rows {
                    adj.connect(k, k + cols);
                }
            }
        }
        adj
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of every node.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes];
        for &(a, b) in &self.edges {
            out[a].push(b);
            out[b].push(a);
        }
        out
    }
}

/// `Σ_k E_{y_k}(k) + β Σ_k Σ_{k' ∈ N(k)} |y_k − y_k'|`. The double sum visits
/// each unordered neighbor pair twice.
pub fn labeling_energy(
    unaries: &[(f64, f64)],
    adjacency: &Adjacency,
    beta: f64,
    labels: &[u8],
) -> f64 {
    let unary: f64 = unaries
        .iter()
        .zip(labels)
        .map(|(&(e0, e1), &y)| if y == 0 { e0 } else { e1 })
        .sum();
    let cut = adjacency
        .edges()
        .iter()
        .filter(|&&(a, b)| labels[a] != labels[b])
        .count();
    unary + 2.0 * beta * cut as f64
}

struct Edge {
    to: usize,
    cap: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    next: Vec<usize>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        FlowGraph {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
            level: vec![0; nodes],
            next: vec![0; nodes],
        }
    }

    // Edge id `e` and its reverse `e ^ 1` are stored in pairs.
    fn add(&mut self, a: usize, b: usize, cap_ab: f64, cap_ba: f64) {
        self.adj[a].push(self.edges.len());
        self.edges.push(Edge { to: b, cap: cap_ab });
        self.adj[b].push(self.edges.len());
        self.edges.push(Edge { to: a, cap: cap_ba });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(-1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let Edge { to, cap } = self.edges[e];
                if cap > 0.0 && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    queue.push_back(to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: f64) -> f64 {
        if v == t {
            return pushed;
        }
        while self.next[v] < self.adj[v].len() {
            let e = self.adj[v][self.next[v]];
            let Edge { to, cap } = self.edges[e];
            if cap > 0.0 && self.level[to] == self.level[v] + 1 {
                let got = self.dfs(to, t, pushed.min(cap));
                if got > 0.0 {
                    self.edges[e].cap -= got;
                    self.edges[e ^ 1].cap += got;
                    return got;
                }
            }
            self.next[v] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) {
        while self.bfs(s, t) {
            self.next.fill(0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= 0.0 {
                    break;
                }
            }
        }
    }

    /// Nodes that can still reach `t` in the residual graph.
    fn reaches_sink(&self, t: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[t] = true;
        let mut queue = VecDeque::from([t]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                // Residual capacity of the edge pointing *into* v.
                let u = self.edges[e].to;
                if !seen[u] && self.edges[e ^ 1].cap > 0.0 {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

/// Globally optimal binary labels for the energy of [`labeling_energy`].
///
/// Among several optimal labelings the one with the most zeros is returned:
/// a node gets label 1 only if it is on the sink side of every minimum cut.
pub fn graph_cut_labels(unaries: &[(f64, f64)], adjacency: &Adjacency, beta: f64) -> Vec<u8> {
    let m = unaries.len();
    let (s, t) = (m, m + 1);
    let mut g = FlowGraph::new(m + 2);
    for (k, &(e0, e1)) in unaries.iter().enumerate() {
        let base = e0.min(e1);
        // Label 0 is the source side: cutting s→k costs E1, k→t costs E0.
        let (c1, c0) = (e1 - base, e0 - base);
        if c1 > 0.0 {
            g.add(s, k, c1, 0.0);
        }
        if c0 > 0.0 {
            g.add(k, t, c0, 0.0);
        }
    }
    let w = 2.0 * beta;
    if w > 0.0 {
        for &(a, b) in adjacency.edges() {
            if a < m && b < m {
                g.add(a, b, w, w);
            }
        }
    }
    g.max_flow(s, t);
    let sink_side = g.reaches_sink(t);
    (0..m).map(|k| u8::from(sink_side[k])).collect()
}
