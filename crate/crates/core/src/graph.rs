//! Weighted graphs in compressed adjacency form, edge-list IO, synthetic
//! generators and edge-weight models.
//!
//! Node ids are dense `usize` values in `[0, node_count)`. Undirected graphs
//! store every edge as two arcs, so `out_weight_sum` is the weighted degree.
//! Bipartite instances carry a per-node [`Side`] marker and only hold arcs
//! from side A to side B.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{GcombError, Result};
use crate::fmt;
use crate::seed;

/// Edge weight used by the constant weight model.
pub const CONSTANT_WEIGHT: f64 = 0.1;
/// Values drawn uniformly by the tri-valency weight model.
pub const TRIVALENCY_WEIGHTS: [f64; 3] = [0.1, 0.01, 0.001];
/// Fraction of nodes placed on side A by [`gen_bp`].
pub const BP_SIDE_A_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Clone, Debug)]
pub struct Graph {
    directed: bool,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    // Reverse adjacency; empty for undirected graphs, where it equals the
    // forward adjacency.
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
    out_weight_sum: Vec<f64>,
    sides: Option<Vec<Side>>,
    original_ids: Vec<u64>,
}

impl Graph {
    /// Builds a graph from an edge list over dense ids.
    ///
    /// Self-loops are dropped and duplicate edges keep the last weight. For
    /// undirected graphs `(u, v)` and `(v, u)` are the same edge.
    pub fn from_edges(
        node_count: usize,
        directed: bool,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut keyed = Vec::new();
        for (seq, (u, v, w)) in edges.into_iter().enumerate() {
            if u >= node_count || v >= node_count {
                return Err(GcombError::domain(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(GcombError::domain(format!("edge ({u}, {v}) has weight {w}")));
            }
            if u == v {
                continue;
            }
            let key = if directed { (u, v) } else { (u.min(v), u.max(v)) };
            keyed.push((key, seq, w));
        }
        keyed.sort_unstable_by_key(|&(key, seq, _)| (key, seq));
        let mut canonical: Vec<(usize, usize, f64)> = Vec::with_capacity(keyed.len());
        for ((u, v), _, w) in keyed {
            match canonical.last_mut() {
                Some(last) if last.0 == u && last.1 == v => last.2 = w,
                _ => canonical.push((u, v, w)),
            }
        }
        Ok(Self::from_canonical(node_count, directed, &canonical))
    }

    // `edges` must be free of duplicates and self-loops.
    fn from_canonical(node_count: usize, directed: bool, edges: &[(usize, usize, f64)]) -> Self {
        let mut arcs: Vec<(usize, usize, f64)> = if directed {
            edges.to_vec()
        } else {
            edges
                .iter()
                .flat_map(|&(u, v, w)| [(u, v, w), (v, u, w)])
                .collect()
        };
        arcs.sort_unstable_by_key(|&(u, v, _)| (u, v));

        let mut offsets = vec![0usize; node_count + 1];
        for &(u, _, _) in &arcs {
            offsets[u + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        let targets: Vec<usize> = arcs.iter().map(|a| a.1).collect();
        let weights: Vec<f64> = arcs.iter().map(|a| a.2).collect();
        let out_weight_sum = (0..node_count)
            .map(|v| weights[offsets[v]..offsets[v + 1]].iter().sum())
            .collect();

        let (in_offsets, in_sources) = if directed {
            let mut in_offsets = vec![0usize; node_count + 1];
            for &(_, v, _) in &arcs {
                in_offsets[v + 1] += 1;
            }
            for i in 0..node_count {
                in_offsets[i + 1] += in_offsets[i];
            }
            let mut fill = in_offsets.clone();
            let mut in_sources = vec![0usize; arcs.len()];
            for &(u, v, _) in &arcs {
                in_sources[fill[v]] = u;
                fill[v] += 1;
            }
            (in_offsets, in_sources)
        } else {
            (Vec::new(), Vec::new())
        };

        Graph {
            directed,
            offsets,
            targets,
            weights,
            in_offsets,
            in_sources,
            out_weight_sum,
            sides: None,
            original_ids: (0..node_count as u64).collect(),
        }
    }

    /// Attaches a bipartite partition. Every arc must run from side A to side B.
    pub fn with_sides(mut self, sides: Vec<Side>) -> Result<Self> {
        if sides.len() != self.node_count() {
            return Err(GcombError::domain("side vector length differs from node count"));
        }
        for u in 0..self.node_count() {
            for &v in self.neighbors(u) {
                if sides[u] != Side::A || sides[v] != Side::B {
                    return Err(GcombError::domain(format!(
                        "edge ({u}, {v}) does not run from side A to side B"
                    )));
                }
            }
        }
        self.sides = Some(sides);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Number of stored arcs (twice the edge count for undirected graphs).
    pub fn arc_count(&self) -> usize {
        self.targets.len()
    }

    /// Number of logical edges.
    pub fn edge_count(&self) -> usize {
        if self.directed {
            self.arc_count()
        } else {
            self.arc_count() / 2
        }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn neighbor_weights(&self, v: usize) -> &[f64] {
        &self.weights[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Global index of `v`'s first outgoing arc; arc `arc_start(v) + i`
    /// is the `i`-th entry of `neighbors(v)`.
    pub fn arc_start(&self, v: usize) -> usize {
        self.offsets[v]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        if self.directed {
            &self.in_sources[self.in_offsets[v]..self.in_offsets[v + 1]]
        } else {
            self.neighbors(v)
        }
    }

    /// Raw node feature: the sum of outgoing edge weights.
    pub fn out_weight_sum(&self) -> &[f64] {
        &self.out_weight_sum
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|v| self.out_degree(v)).max().unwrap_or(0)
    }

    pub fn sides(&self) -> Option<&[Side]> {
        self.sides.as_deref()
    }

    pub fn is_bipartite(&self) -> bool {
        self.sides.is_some()
    }

    pub fn side(&self, v: usize) -> Option<Side> {
        self.sides.as_ref().map(|s| s[v])
    }

    /// Nodes on side A, or every node for non-bipartite graphs.
    pub fn side_a_nodes(&self) -> Vec<usize> {
        match &self.sides {
            Some(s) => (0..self.node_count()).filter(|&v| s[v] == Side::A).collect(),
            None => (0..self.node_count()).collect(),
        }
    }

    pub fn side_b_count(&self) -> usize {
        self.sides
            .as_ref()
            .map_or(0, |s| s.iter().filter(|&&x| x == Side::B).count())
    }

    pub fn original_id(&self, v: usize) -> u64 {
        self.original_ids[v]
    }

    /// Canonical edge list: every arc for directed graphs, `u < v` for
    /// undirected ones, sorted by `(u, v)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .zip(self.neighbor_weights(u))
                .filter(move |(&v, _)| self.directed || u < v)
                .map(move |(&v, &w)| (u, v, w))
        })
    }

    /// Checks the structural invariants. Used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        for v in 0..self.node_count() {
            let sum: f64 = self.neighbor_weights(v).iter().sum();
            if sum != self.out_weight_sum[v] {
                return Err(GcombError::domain(format!("out_weight_sum mismatch at node {v}")));
            }
            if self.neighbors(v).windows(2).any(|w| w[0] >= w[1]) {
                return Err(GcombError::domain(format!("unsorted adjacency at node {v}")));
            }
        }
        if let Some(s) = &self.sides {
            for (u, v, _) in self.edges() {
                if s[u] != Side::A || s[v] != Side::B {
                    return Err(GcombError::domain(format!("edge ({u}, {v}) crosses sides wrongly")));
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with every edge weight replaced by `f(u, v, old)`,
    /// visiting edges in canonical order.
    fn map_weights(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Graph {
        let edges: Vec<_> = self.edges().map(|(u, v, w)| (u, v, f(u, v, w))).collect();
        let mut g = Graph::from_canonical(self.node_count(), self.directed, &edges);
        g.sides = self.sides.clone();
        g.original_ids = self.original_ids.clone();
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    /// Every edge gets [`CONSTANT_WEIGHT`].
    Constant,
    /// Uniform draw from [`TRIVALENCY_WEIGHTS`].
    TriValency,
    /// Every edge gets weight 1.
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightModel {
    pub kind: WeightKind,
    pub seed: u64,
}

impl WeightModel {
    pub fn new(kind: WeightKind, seed: u64) -> Self {
        WeightModel { kind, seed }
    }
}

/// Replaces every edge weight according to `model`. Undirected edges get a
/// single draw shared by both arcs.
pub fn assign_weights(g: &Graph, model: &WeightModel) -> Graph {
    match model.kind {
        WeightKind::Constant => g.map_weights(|_, _, _| CONSTANT_WEIGHT),
        WeightKind::Unit => g.map_weights(|_, _, _| 1.0),
        WeightKind::TriValency => {
            let mut rng = seed::rng(model.seed);
            g.map_weights(|_, _, _| *TRIVALENCY_WEIGHTS.choose(&mut rng).unwrap())
        }
    }
}

/// Random bipartite graph: the first `⌊0.2 n⌋` nodes form side A, and each
/// A→B pair is an edge independently with probability `p`.
pub fn gen_bp(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n < 5 {
        return Err(GcombError::domain(format!("gen_bp needs n >= 5, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GcombError::domain(format!("edge probability {p} outside [0, 1]")));
    }
    let a = (BP_SIDE_A_FRACTION * n as f64).floor() as usize;
    let mut rng = seed::rng(seed);
    let mut edges = Vec::new();
    for u in 0..a {
        for v in a..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    let sides = (0..n).map(|v| if v < a { Side::A } else { Side::B }).collect();
    Graph::from_canonical(n, true, &edges).with_sides(sides)
}

/// Undirected Barabási–Albert graph grown by preferential attachment with
/// the repeated-nodes urn. Produces exactly `m_attach * (n - m_attach)` edges.
pub fn gen_ba(n: usize, m_attach: usize, seed: u64) -> Result<Graph> {
    if m_attach < 1 || n <= m_attach {
        return Err(GcombError::domain(format!(
            "gen_ba needs n > m_attach >= 1, got n={n}, m_attach={m_attach}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut edges = Vec::with_capacity(m_attach * (n - m_attach));
    let mut urn: Vec<usize> = Vec::with_capacity(2 * m_attach * n);
    let mut targets: Vec<usize> = (0..m_attach).collect();
    for source in m_attach..n {
        for &t in &targets {
            edges.push((t, source, 1.0));
        }
        urn.extend_from_slice(&targets);
        urn.extend(std::iter::repeat_n(source, m_attach));
        targets.clear();
        while targets.len() < m_attach {
            let pick = urn[rng.gen_range(0..urn.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
    }
    Graph::from_edges(n, false, edges)
}

/// Doubles the node set into copies `V1` (side A, ids `0..n`) and `V2`
/// (side B, ids `n..2n`) with an arc `u → n + v` for every arc `u → v`.
/// Isolated copies are kept.
pub fn to_bipartite(g: &Graph) -> Graph {
    let n = g.node_count();
    let mut edges = Vec::with_capacity(g.arc_count());
    for u in 0..n {
        for (&v, &w) in g.neighbors(u).iter().zip(g.neighbor_weights(u)) {
            edges.push((u, n + v, w));
        }
    }
    let sides = (0..2 * n).map(|v| if v < n { Side::A } else { Side::B }).collect();
    let mut out = Graph::from_canonical(2 * n, true, &edges);
    out.original_ids = (0..2 * n).map(|v| g.original_id(v % n.max(1))).collect();
    out.with_sides(sides).expect("copies are bipartite by construction")
}

/// Reads an edge list from `path`. See [`parse_edge_list`].
pub fn load_edge_list(path: impl AsRef<Path>, directed: bool) -> Result<Graph> {
    let file = File::open(path)?;
    parse_edge_list(BufReader::new(file), directed)
}

/// Parses whitespace-separated `u v [w]` lines; `#` starts a comment line.
///
/// Ids are remapped to dense ids in first-seen order unless the metadata
/// comment `#! nodes <n>` is present, in which case ids are taken verbatim
/// and must be below `n`. An additional `#! side-a <k>` marks nodes `0..k`
/// as side A and the rest as side B, and `#! directed` overrides `directed`.
pub fn parse_edge_list(reader: impl BufRead, mut directed: bool) -> Result<Graph> {
    let mut declared_nodes: Option<usize> = None;
    let mut side_a: Option<usize> = None;
    let mut dense: std::collections::HashMap<u64, usize> = Default::default();
    let mut original_ids: Vec<u64> = Vec::new();
    let mut raw_edges: Vec<(u64, u64, f64)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if let Some(meta) = trimmed.strip_prefix("#!") {
            let mut it = meta.split_whitespace();
            let key = it.next();
            if key == Some("directed") && it.clone().next().is_none() {
                directed = true;
                continue;
            }
            let value = it.next().map(|s| s.parse::<usize>());
            match (key, value) {
                (Some("nodes"), Some(Ok(n))) => declared_nodes = Some(n),
                (Some("side-a"), Some(Ok(k))) => side_a = Some(k),
                _ => return Err(GcombError::parse(lineno, format!("bad metadata `{trimmed}`"))),
            }
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(GcombError::parse(lineno, format!("expected `u v [w]`, got `{trimmed}`")));
        }
        let id = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| GcombError::parse(lineno, format!("invalid node id `{s}`")))
        };
        let u = id(fields[0])?;
        let v = id(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| GcombError::parse(lineno, format!("invalid weight `{s}`")))?,
            None => 1.0,
        };
        if !(0.0..=1.0).contains(&w) {
            return Err(GcombError::domain(format!("line {lineno}: weight {w} outside [0, 1]")));
        }
        raw_edges.push((u, v, w));
    }

    let (n, edges): (usize, Vec<(usize, usize, f64)>) = match declared_nodes {
        Some(n) => {
            let mut edges = Vec::with_capacity(raw_edges.len());
            for (u, v, w) in raw_edges {
                if u as usize >= n || v as usize >= n {
                    return Err(GcombError::domain(format!(
                        "edge ({u}, {v}) exceeds declared node count {n}"
                    )));
                }
                edges.push((u as usize, v as usize, w));
            }
            original_ids = (0..n as u64).collect();
            (n, edges)
        }
        None => {
            let mut remap = |x: u64| {
                *dense.entry(x).or_insert_with(|| {
                    original_ids.push(x);
                    original_ids.len() - 1
                })
            };
            let edges = raw_edges
                .into_iter()
                .map(|(u, v, w)| (remap(u), remap(v), w))
                .collect();
            (original_ids.len(), edges)
        }
    };

    let mut g = Graph::from_edges(n, directed, edges)?;
    g.original_ids = original_ids;
    if let Some(k) = side_a {
        if k > n {
            return Err(GcombError::domain(format!("side-a {k} exceeds node count {n}")));
        }
        let sides = (0..n).map(|v| if v < k { Side::A } else { Side::B }).collect();
        g = g.with_sides(sides)?;
    }
    Ok(g)
}

/// Writes the canonical edge list with `#! directed`, `#! nodes` and (for
/// bipartite graphs) `#! side-a` metadata so that isolated nodes and sides survive a
/// round trip.
pub fn write_edge_list(g: &Graph, mut out: impl Write) -> Result<()> {
    writeln!(out, "# {} graph", if g.is_directed() { "directed" } else { "undirected" })?;
    if g.is_directed() {
        writeln!(out, "#! directed")?;
    }
    writeln!(out, "#! nodes {}", g.node_count())?;
    if let Some(sides) = g.sides() {
        let k = sides.iter().take_while(|&&s| s == Side::A).count();
        if sides[k..].iter().all(|&s| s == Side::B) {
            writeln!(out, "#! side-a {k}")?;
        }
    }
    for (u, v, w) in g.edges() {
        writeln!(out, "{u} {v} {}", fmt::real(w))?;
    }
    Ok(())
}

pub fn save_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_edge_list(g, &mut w)?;
    w.flush()?;
    Ok(())
}
