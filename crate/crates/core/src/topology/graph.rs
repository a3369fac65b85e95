use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TopologyError;
use crate::seed;

const MAX_RANDOM_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Ring,
    Star,
    Random,
    Full,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Star => "star",
            TopologyKind::Random => "random",
            TopologyKind::Full => "full",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "star" => Ok(TopologyKind::Star),
            "random" => Ok(TopologyKind::Random),
            "full" | "fully_connected" => Ok(TopologyKind::Full),
            other => Err(format!("unknown topology '{other}'")),
        }
    }
}

/// An edge added after construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mutation {
    pub round: usize,
    pub a: usize,
    pub b: usize,
}

/// Undirected simple graph over node ids `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyGraph {
    adjacency: Vec<BTreeSet<usize>>,
    mutation_log: Vec<Mutation>,
}

impl TopologyGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); n],
            mutation_log: Vec::new(),
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            g.insert(a, b)?;
        }
        Ok(g)
    }

    fn insert(&mut self, a: usize, b: usize) -> Result<bool, TopologyError> {
        if a == b || a >= self.n_nodes() || b >= self.n_nodes() {
            return Err(TopologyError::InvalidEdge(a, b));
        }
        let added = self.adjacency[a].insert(b);
        self.adjacency[b].insert(a);
        Ok(added)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    /// Neighbors of `node` in ascending id order.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[node].iter().copied()
    }

    pub fn neighbor_list(&self, node: usize) -> Vec<usize> {
        self.neighbors(node).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(&b))
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(BTreeSet::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// `|E| / N`; a node's expected degree is twice this.
    pub fn edges_per_node(&self) -> f64 {
        self.edge_count() as f64 / self.n_nodes() as f64
    }

    /// Edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, s)| s.range(a + 1..).map(move |&b| (a, b)))
            .collect()
    }

    pub fn mutation_log(&self) -> &[Mutation] {
        &self.mutation_log
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == n
    }

    /// Adds the undirected edge `(i, j)` and records it in the mutation log.
    ///
    /// Returns `Ok(false)` without logging when the edge already exists.
    pub fn add_edge(&mut self, i: usize, j: usize, round: usize) -> Result<bool, TopologyError> {
        let added = self.insert(i, j)?;
        if added {
            self.mutation_log.push(Mutation { round, a: i, b: j });
        } else {
            log::warn!("edge ({i}, {j}) already present; ignoring");
        }
        Ok(added)
    }

    /// Edge list: one `i j` pair per line, `i < j`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (a, b) in self.edges() {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    /// Mutation log as CSV with header `round,node_a,node_b`.
    pub fn write_mutation_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "round,node_a,node_b")?;
        for m in &self.mutation_log {
            writeln!(w, "{},{},{}", m.round, m.a, m.b)?;
        }
        Ok(())
    }
}

/// Builds one of the four evaluation topologies.
///
/// `random` is Erdős–Rényi `G(n, random_p)`, redrawn with a fresh derived
/// seed until connected.
pub fn build_topology(
    kind: TopologyKind,
    n: usize,
    seed: u64,
    random_p: f64,
) -> Result<TopologyGraph, TopologyError> {
    if n < 3 {
        return Err(TopologyError::InvalidSize(n));
    }
    let mut g = TopologyGraph::empty(n);
    match kind {
        TopologyKind::Ring => {
            for i in 0..n {
                g.insert(i, (i + 1) % n)?;
            }
        }
        TopologyKind::Star => {
            for i in 1..n {
                g.insert(0, i)?;
            }
        }
        TopologyKind::Full => {
            for i in 0..n {
                for j in i + 1..n {
                    g.insert(i, j)?;
                }
            }
        }
        TopologyKind::Random => {
            if !(random_p > 0.0 && random_p <= 1.0) {
                return Err(TopologyError::InvalidProbability(random_p));
            }
            for attempt in 0..MAX_RANDOM_ATTEMPTS {
                let mut rng = seed::derived_rng(seed, &[attempt as u64]);
                let mut candidate = TopologyGraph::empty(n);
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random_bool(random_p) {
                            candidate.insert(i, j)?;
                        }
                    }
                }
                if candidate.is_connected() {
                    return Ok(candidate);
                }
            }
            return Err(TopologyError::GenerationFailure(MAX_RANDOM_ATTEMPTS));
        }
    }
    Ok(g)
}
