//! Undirected simple graphs in CSR layout, Erdős–Rényi `G(N, M)` and
//! quiet-planted generation, degree features and the text file format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Immutable undirected simple graph.
///
/// Edges are stored once each as `(i, j)` with `i < j`, sorted
/// lexicographically. The CSR arrays list every edge in both directions, so
/// `csr_rows()[k] -> csr_neighbors()[k]` enumerates all `2M` directed edges.
#[derive(Clone, Debug)]
pub struct Graph {
    n_nodes: usize,
    edges: Arc<[(usize, usize)]>,
    offsets: Vec<usize>,
    neighbors: Arc<[usize]>,
    rows: Arc<[usize]>,
    planted: Option<PlantedColoring>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n_nodes == other.n_nodes && self.edges == other.edges && self.planted == other.planted
    }
}

/// A balanced proper coloring the graph was generated around.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedColoring {
    pub colors: Vec<usize>,
    pub q: usize,
}

impl PlantedColoring {
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.q];
        for &c in &self.colors {
            sizes[c] += 1;
        }
        sizes
    }
}

impl Graph {
    /// Build a graph from an edge list. Pairs may come in either orientation;
    /// self-loops, duplicates and out-of-range endpoints are rejected.
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            for v in [a, b] {
                if v >= n_nodes {
                    return Err(Error::IndexOutOfRange { index: v, len: n_nodes });
                }
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self::from_canonical(n_nodes, list))
    }

    fn from_canonical(n_nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut degree = vec![0usize; n_nodes];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n_nodes].to_vec();
        let mut neighbors = vec![0usize; 2 * edges.len()];
        for &(i, j) in &edges {
            neighbors[cursor[i]] = j;
            cursor[i] += 1;
            neighbors[cursor[j]] = i;
            cursor[j] += 1;
        }
        for i in 0..n_nodes {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        let rows: Vec<usize> = (0..n_nodes).flat_map(|i| std::iter::repeat_n(i, degree[i])).collect();
        Self {
            n_nodes,
            edges: edges.into(),
            offsets,
            neighbors: neighbors.into(),
            rows: rows.into(),
            planted: None,
        }
    }

    /// Attach a planted coloring. It must cover every node, use colors below
    /// `q`, and leave no edge monochromatic.
    pub fn with_planting(mut self, planting: PlantedColoring) -> Result<Self> {
        if planting.colors.len() != self.n_nodes {
            return Err(Error::shape(
                "with_planting",
                format!("{} colors for {} nodes", planting.colors.len(), self.n_nodes),
            ));
        }
        if planting.q == 0 {
            return Err(Error::InvalidArgument("planting with q = 0".into()));
        }
        if let Some(&c) = planting.colors.iter().find(|&&c| c >= planting.q) {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: planting.q,
            });
        }
        if let Some(&(i, j)) = self
            .edges
            .iter()
            .find(|&&(i, j)| planting.colors[i] == planting.colors[j])
        {
            return Err(Error::InvalidArgument(format!(
                "planted coloring has a conflict on edge ({i}, {j})"
            )));
        }
        self.planted = Some(planting);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edges_shared(&self) -> Arc<[(usize, usize)]> {
        Arc::clone(&self.edges)
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Target of each directed edge, in CSR order.
    pub fn csr_neighbors(&self) -> Arc<[usize]> {
        Arc::clone(&self.neighbors)
    }

    /// Source row of each directed edge, in CSR order.
    pub fn csr_rows(&self) -> Arc<[usize]> {
        Arc::clone(&self.rows)
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Mean connectivity `c = 2M / N`.
    pub fn mean_connectivity(&self) -> f64 {
        2.0 * self.n_edges() as f64 / self.n_nodes as f64
    }

    pub fn planted(&self) -> Option<&PlantedColoring> {
        self.planted.as_ref()
    }

    /// Relabel nodes so that node `i` becomes `perm[i]`. The planting, if
    /// any, follows its nodes.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(Error::shape("relabel", "permutation length differs from N"));
        }
        let g = Self::from_edges(self.n_nodes, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))?;
        match &self.planted {
            None => Ok(g),
            Some(p) => {
                let mut colors = vec![0; self.n_nodes];
                for (i, &c) in p.colors.iter().enumerate() {
                    colors[perm[i]] = c;
                }
                g.with_planting(PlantedColoring { colors, q: p.q })
            }
        }
    }
}

/// Number of edges for `n` nodes at mean connectivity `c`: `round(n c / 2)`.
pub fn edge_count(n: usize, c: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
    }
    if !c.is_finite() || c < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "connectivity must be finite and >= 0, got {c}"
        )));
    }
    let m = (n as f64 * c / 2.0).round() as usize;
    let available = n * (n - 1) / 2;
    if m > available {
        return Err(Error::InfeasibleDensity {
            requested: m,
            available,
        });
    }
    Ok(m)
}

/// Decode the `k`-th unordered pair in column order: (0,1), (0,2), (1,2), (0,3), ...
fn pair_from_index(k: usize) -> (usize, usize) {
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).floor() as usize;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}

/// Erdős–Rényi `G(N, M)`: exactly `M = round(Nc/2)` distinct edges drawn
/// uniformly without replacement from all `N(N-1)/2` pairs.
pub fn generate_er(n: usize, c: f64, seed: u64) -> Result<Graph> {
    let m = edge_count(n, c)?;
    let mut rng = rng::seeded(seed);
    let picks = rand::seq::index::sample(&mut rng, n * (n - 1) / 2, m);
    let edges: Vec<(usize, usize)> = picks.into_iter().map(pair_from_index).collect();
    Graph::from_edges(n, edges)
}

/// Sizes of a balanced partition of `n` nodes into `q` classes: the first
/// `n mod q` classes get one extra node.
pub fn balanced_class_sizes(n: usize, q: usize) -> Vec<usize> {
    (0..q).map(|a| n / q + usize::from(a < n % q)).collect()
}

/// Number of node pairs whose endpoints lie in different classes.
pub fn heterochromatic_pairs(class_sizes: &[usize]) -> usize {
    let n: usize = class_sizes.iter().sum();
    let same: usize = class_sizes.iter().map(|k| k * k.saturating_sub(1) / 2).sum();
    n * n.saturating_sub(1) / 2 - same
}

/// Quiet planting. A balanced coloring is laid on a random node permutation,
/// then node pairs are sampled uniformly and kept only when their colors
/// differ and the edge is new, until `M` edges exist.
pub fn generate_planted(n: usize, c: f64, q: usize, seed: u64) -> Result<(Graph, PlantedColoring)> {
    if q < 2 {
        return Err(Error::InvalidArgument(format!("planting needs q >= 2, got {q}")));
    }
    let m = edge_count(n, c)?;
    let sizes = balanced_class_sizes(n, q);
    let available = heterochromatic_pairs(&sizes);
    if m > available {
        return Err(Error::InfeasibleDensity {
            requested: m,
            available,
        });
    }

    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut colors = vec![0usize; n];
    let mut cursor = 0;
    for (color, &size) in sizes.iter().enumerate() {
        for &node in &order[cursor..cursor + size] {
            colors[node] = color;
        }
        cursor += size;
    }

    let cap = 1000usize.saturating_mul(m.max(1));
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    let mut rejected = 0usize;
    while edges.len() < m {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let pair = (i.min(j), i.max(j));
        if colors[i] != colors[j] && seen.insert(pair) {
            edges.push(pair);
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= cap {
                return Err(Error::RejectionCap(rejected));
            }
        }
    }

    let planting = PlantedColoring { colors, q };
    let graph = Graph::from_edges(n, edges)?.with_planting(planting.clone())?;
    Ok((graph, planting))
}

/// Node degree divided by the mean connectivity. All zeros on an edgeless
/// graph.
pub fn degree_feature(g: &Graph) -> Vec<f64> {
    let c = g.mean_connectivity();
    if c == 0.0 {
        return vec![0.0; g.n_nodes()];
    }
    (0..g.n_nodes()).map(|i| g.degree(i) as f64 / c).collect()
}

/// Serialize to the text format: `N M q`, an optional color line when
/// `q > 0`, then one `i j` line per edge.
pub fn to_text(g: &Graph) -> String {
    let q = g.planted().map_or(0, |p| p.q);
    let mut out = String::with_capacity(16 + 12 * g.n_edges());
    let _ = writeln!(out, "{} {} {}", g.n_nodes(), g.n_edges(), q);
    if let Some(p) = g.planted() {
        let line: Vec<String> = p.colors.iter().map(|c| c.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    for &(i, j) in g.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

pub fn write_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_text(g)).map_err(|e| Error::io(path, e))
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(&text, path)
}

pub fn parse_graph(text: &str, path: &Path) -> Result<Graph> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(hl, format!("malformed header: {e}")))?;
    let [n, m, q] = fields[..] else {
        return Err(err(hl, format!("header needs `N M q`, got {} fields", fields.len())));
    };
    if n == 0 {
        return Err(err(hl, "N must be positive".into()));
    }

    let planting = if q > 0 {
        let (cl, line) = lines.next().ok_or_else(|| err(hl + 1, "missing color line".into()))?;
        let colors: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(cl, format!("malformed color: {e}")))?;
        if colors.len() != n {
            return Err(err(cl, format!("expected {n} colors, found {}", colors.len())));
        }
        if let Some(c) = colors.iter().find(|&&c| c >= q) {
            return Err(err(cl, format!("color {c} out of range for q = {q}")));
        }
        Some(PlantedColoring { colors, q })
    } else {
        None
    };

    let mut edges = Vec::with_capacity(m);
    let mut seen = HashSet::with_capacity(m);
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(ln, format!("expected `i j`, got {line:?}")));
        };
        let i: usize = a.parse().map_err(|e| err(ln, format!("bad index {a:?}: {e}")))?;
        let j: usize = b.parse().map_err(|e| err(ln, format!("bad index {b:?}: {e}")))?;
        if i >= n || j >= n {
            return Err(err(ln, format!("index out of range for N = {n}: {i} {j}")));
        }
        if i == j {
            return Err(err(ln, format!("self-loop on node {i}")));
        }
        let pair = (i.min(j), i.max(j));
        if !seen.insert(pair) {
            return Err(err(ln, format!("duplicate edge {} {}", pair.0, pair.1)));
        }
        edges.push(pair);
    }
    if edges.len() != m {
        return Err(err(
            hl,
            format!("header declares {m} edges but {} are listed", edges.len()),
        ));
    }
    let g = Graph::from_edges(n, edges)?;
    match planting {
        Some(p) => g.with_planting(p),
        None => Ok(g),
    }
}
