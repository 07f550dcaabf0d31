//! Undirected graph topology with a fixed stored orientation per edge.
//!
//! Every undirected edge is stored exactly once, oriented as it first
//! appeared in the input. The orientation only matters for the signed
//! scatter of sheaf diffusion, where it determines which endpoint receives
//! `+δ_e` and which receives `-δ_e`.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    eps: f64,
}

impl Graph {
    /// Builds a graph from an edge iterator, dropping repeated undirected
    /// edges (the first orientation wins).
    ///
    /// Self-loops and out-of-range indices are rejected. The reported line
    /// number is the 1-based position of the offending edge in the iterator.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut b = GraphBuilder::new(num_nodes)?;
        for (i, (u, v)) in edges.into_iter().enumerate() {
            b.push(u, v, i + 1)?;
        }
        Ok(b.finish())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Returns a copy with the degree-smoothing constant replaced.
    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps must be finite and nonnegative, got {eps}"
            )));
        }
        self.eps = eps;
        Ok(self)
    }

    /// `w_e = ((deg(u)+ε)(deg(v)+ε))^{-1/2}` for every stored edge.
    pub fn edge_norm_weights(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&(u, v)| {
                let du = self.degrees[u] as f64 + self.eps;
                let dv = self.degrees[v] as f64 + self.eps;
                1.0 / (du * dv).sqrt()
            })
            .collect()
    }

    /// Neighbor lists in edge order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Relabels node `i` as `perm[i]`, keeping edge order and orientation.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "permutation has length {}, graph has {} nodes",
                perm.len(),
                self.num_nodes
            )));
        }
        let g = Graph::from_edges(
            self.num_nodes,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
        )?;
        g.with_eps(self.eps)
    }

    /// Returns a copy with the stored orientation of edge `e` reversed.
    pub fn with_flipped_edge(&self, e: usize) -> Self {
        let mut g = self.clone();
        let (u, v) = g.edges[e];
        g.edges[e] = (v, u);
        g
    }

    pub fn path(n: usize) -> Self {
        Graph::from_edges(n, (1..n).map(|i| (i - 1, i))).expect("path graph is valid")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "a cycle needs at least 3 nodes");
        Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle graph is valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
        Graph::from_edges(n, edges).expect("complete graph is valid")
    }

    /// Connected Watts–Strogatz small-world graph: a ring lattice where each
    /// node links to its `k/2` nearest neighbors on each side, then every
    /// lattice edge is rewired with probability `p`. Draws are repeated with
    /// the same RNG stream until the result is connected.
    pub fn watts_strogatz(n: usize, k: usize, p: f64, seed: u64) -> Result<Self> {
        if k < 2 || k % 2 != 0 || k >= n {
            return Err(Error::InvalidArgument(format!(
                "watts-strogatz needs an even k with 2 <= k < n, got k={k}, n={n}"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "rewiring probability must lie in [0, 1], got {p}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let g = ws_draw(n, k, p, &mut rng);
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(Error::InvalidArgument(format!(
            "no connected watts-strogatz graph found for n={n}, k={k}, p={p}"
        )))
    }
}

fn ws_draw(n: usize, k: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * k / 2);
    let mut present: HashSet<(usize, usize)> = HashSet::new();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            edges.push((u, v));
            present.insert(key(u, v));
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let idx = (j - 1) * n + u;
            if rng.random::<f64>() >= p {
                continue;
            }
            let (a, b) = edges[idx];
            // Nodes already saturated keep their edge.
            if present.iter().filter(|&&(x, y)| x == a || y == a).count() >= n - 1 {
                continue;
            }
            let mut w = rng.random_range(0..n);
            while w == a || present.contains(&key(a, w)) {
                w = rng.random_range(0..n);
            }
            present.remove(&key(a, b));
            present.insert(key(a, w));
            edges[idx] = (a, w);
        }
    }
    Graph::from_edges(n, edges).expect("rewired lattice is valid")
}

struct GraphBuilder {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    seen: HashSet<(usize, usize)>,
}

impl GraphBuilder {
    fn new(num_nodes: usize) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        Ok(Self {
            num_nodes,
            edges: Vec::new(),
            seen: HashSet::new(),
        })
    }

    fn push(&mut self, u: usize, v: usize, line: usize) -> Result<()> {
        for index in [u, v] {
            if index >= self.num_nodes {
                return Err(Error::NodeOutOfRange {
                    index,
                    num_nodes: self.num_nodes,
                    line,
                });
            }
        }
        if u == v {
            return Err(Error::SelfLoop { node: u, line });
        }
        if self.seen.insert((u.min(v), u.max(v))) {
            self.edges.push((u, v));
        }
        Ok(())
    }

    fn finish(self) -> Graph {
        let mut degrees = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        Graph {
            num_nodes: self.num_nodes,
            edges: self.edges,
            degrees,
            eps: 0.0,
        }
    }
}

/// Parses `src,dst[,weight]` lines. Weights are accepted and discarded; a
/// non-numeric first line is treated as a header. Blank lines are skipped.
pub fn parse_edge_list(text: &str, num_nodes: usize) -> Result<Graph> {
    let mut b = GraphBuilder::new(num_nodes)?;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 'src,dst' or 'src,dst,weight', got {line:?}"),
            });
        }
        let index = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid node index {s:?}"),
            })
        };
        let (u, v) = (index(fields[0])?, index(fields[1])?);
        if let Some(w) = fields.get(2) {
            w.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid edge weight {w:?}"),
            })?;
        }
        b.push(u, v, line_no)?;
    }
    Ok(b.finish())
}

pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: usize) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, num_nodes)
}

/// Writes the stored edges as `src,dst` lines with a header.
pub fn write_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("src,dst\n");
    for &(u, v) in g.edges() {
        out.push_str(&format!("{u},{v}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
