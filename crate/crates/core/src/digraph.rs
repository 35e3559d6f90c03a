//! Directed-graph data model, strong-connectivity validation, and the
//! structural quantities (diameter, max out-degree) the protocol needs.
//!
//! Nodes are contiguous ids `0..n`. External files may use arbitrary
//! labels; they are mapped to ids in first-appearance order on ingestion
//! and the mapping travels with the graph as a [`LabeledGraph`].

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(usize, usize),
    #[error("edge endpoint {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// An immutable simple directed graph.
///
/// Both adjacency directions are precomputed and kept in ascending node-id
/// order; every neighbor sum in the crate iterates them in that order so
/// runs are bit-reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

/// Structural quantities of a strongly connected digraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    /// Max over ordered pairs of the shortest directed path length.
    pub diameter: usize,
    /// Max out-degree.
    pub max_out_degree: usize,
}

impl DiGraph {
    /// Builds a graph from a directed edge list. Rejects self-loops and
    /// duplicate edges; a self-loop would double-count the node's own
    /// contribution, which the update rules account for separately.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if node_count < 2 {
            return Err(GraphError::TooFewNodes(node_count));
        }
        let mut seen = vec![false; node_count * node_count];
        let mut in_neighbors = vec![Vec::new(); node_count];
        let mut out_neighbors = vec![Vec::new(); node_count];
        let mut sorted: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(src, dst) in edges {
            if src >= node_count {
                return Err(GraphError::NodeOutOfRange(src, node_count));
            }
            if dst >= node_count {
                return Err(GraphError::NodeOutOfRange(dst, node_count));
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            let slot = &mut seen[src * node_count + dst];
            if *slot {
                return Err(GraphError::DuplicateEdge(src, dst));
            }
            *slot = true;
            out_neighbors[src].push(dst);
            in_neighbors[dst].push(src);
            sorted.push((src, dst));
        }
        for list in in_neighbors.iter_mut().chain(out_neighbors.iter_mut()) {
            list.sort_unstable();
        }
        sorted.sort_unstable();
        Ok(DiGraph {
            node_count,
            edges: sorted,
            in_neighbors,
            out_neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges sorted by (src, dst).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// In-neighbors of `node`, ascending.
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_neighbors[node]
    }

    /// Out-neighbors of `node`, ascending.
    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_neighbors[node]
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_neighbors[node].len()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_neighbors[node].len()
    }

    /// True iff every ordered pair of nodes is joined by a directed path.
    ///
    /// Checked by one forward traversal and one traversal of the transposed
    /// graph, both from node 0.
    pub fn is_strongly_connected(&self) -> bool {
        self.reaches_all(&self.out_neighbors) && self.reaches_all(&self.in_neighbors)
    }

    fn reaches_all(&self, adjacency: &[Vec<usize>]) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.node_count
    }

    /// Validates strong connectivity, returning the graph error callers
    /// surface as a configuration failure.
    pub fn validate_strongly_connected(&self) -> Result<(), GraphError> {
        if self.is_strongly_connected() {
            Ok(())
        } else {
            Err(GraphError::NotStronglyConnected)
        }
    }

    /// Diameter and max out-degree. The diameter is computed by all-pairs
    /// BFS; n stays small enough here that simplicity wins.
    pub fn stats(&self) -> Result<GraphStats, GraphError> {
        self.validate_strongly_connected()?;
        let mut diameter = 0;
        let mut dist = vec![0usize; self.node_count];
        for start in 0..self.node_count {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[start] = 0;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.out_neighbors[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            diameter = diameter.max(*dist.iter().max().unwrap());
        }
        let max_out_degree = (0..self.node_count)
            .map(|i| self.out_degree(i))
            .max()
            .unwrap();
        Ok(GraphStats {
            diameter,
            max_out_degree,
        })
    }

    /// Directed n-cycle 0 -> 1 -> ... -> n-1 -> 0.
    pub fn cycle(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        DiGraph::from_edges(n, &edges).expect("cycle is a valid graph")
    }

    /// Complete digraph: every ordered pair is an edge.
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    edges.push((i, j));
                }
            }
        }
        DiGraph::from_edges(n, &edges).expect("complete digraph is a valid graph")
    }

    /// Random strongly connected digraph: a directed n-cycle (which already
    /// guarantees strong connectivity) plus each remaining ordered pair
    /// added independently with probability `extra_edge_prob`, drawn from a
    /// ChaCha8 stream seeded with `seed`. Pairs are visited in lexicographic
    /// order, so the result is fully determined by `(n, extra_edge_prob,
    /// seed)`.
    pub fn generate(n: usize, extra_edge_prob: f64, seed: u64) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        assert!(
            (0.0..=1.0).contains(&extra_edge_prob),
            "edge probability must lie in [0, 1]"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        for i in 0..n {
            for j in 0..n {
                if i == j || j == (i + 1) % n {
                    continue;
                }
                if rng.random::<f64>() < extra_edge_prob {
                    edges.push((i, j));
                }
            }
        }
        let g = DiGraph::from_edges(n, &edges)?;
        debug_assert!(g.is_strongly_connected());
        Ok(g)
    }
}

/// A digraph together with the external labels its nodes were ingested
/// under. Node id `i` carries `labels[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub graph: DiGraph,
    pub labels: Vec<String>,
}

impl LabeledGraph {
    /// Labels each node with its id rendered in decimal.
    pub fn with_numeric_labels(graph: DiGraph) -> Self {
        let labels = (0..graph.node_count()).map(|i| i.to_string()).collect();
        LabeledGraph { graph, labels }
    }

    /// Parses an edge-list file: one `SRC DST` pair per line, whitespace
    /// separated, `#` lines ignored. Labels are arbitrary tokens mapped to
    /// ids in first-appearance order.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut labels: Vec<String> = Vec::new();
        let mut ids: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
        let mut intern = |token: &str, labels: &mut Vec<String>| -> usize {
            if let Some(&id) = ids.get(token) {
                return id;
            }
            let id = labels.len();
            labels.push(token.to_string());
            ids.insert(token.to_string(), id);
            id
        };
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (src, dst) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(GraphError::Parse {
                        line: lineno + 1,
                        msg: format!("expected 'SRC DST', got {line:?}"),
                    })
                }
            };
            if src == dst {
                return Err(GraphError::Parse {
                    line: lineno + 1,
                    msg: format!("self-loop on {src:?}"),
                });
            }
            let s = intern(src, &mut labels);
            let d = intern(dst, &mut labels);
            edges.push((s, d));
        }
        if labels.len() < 2 {
            return Err(GraphError::TooFewNodes(labels.len()));
        }
        let n = labels.len();
        let graph = DiGraph::from_edges(n, &edges)?;
        Ok(LabeledGraph { graph, labels })
    }

    /// Renders the graph as an edge-list file. The header comments carry the
    /// exact id-to-label mapping so trace rows (which use ids) can be
    /// reconnected to labels; parsers skip them.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes {}", self.graph.node_count());
        for (id, label) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "# node {id} {label}");
        }
        for &(src, dst) in self.graph.edges() {
            let _ = writeln!(out, "{} {}", self.labels[src], self.labels[dst]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent all-pairs BFS oracle used to freeze diameter values.
    fn bfs_diameter_oracle(n: usize, edges: &[(usize, usize)]) -> Option<usize> {
        let mut adj = vec![vec![]; n];
        for &(u, v) in edges {
            adj[u].push(v);
        }
        let mut best = 0;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let far = *dist.iter().max().unwrap();
            if far == usize::MAX {
                return None;
            }
            best = best.max(far);
        }
        Some(best)
    }

    /// 3 nodes, edges {0->1, 1->2, 2->0, 0->2}.
    pub(crate) fn g4() -> DiGraph {
        DiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap()
    }

    #[test]
    fn cycle_is_strongly_connected() {
        assert!(DiGraph::cycle(3).is_strongly_connected());
    }

    #[test]
    fn single_edge_is_not_strongly_connected() {
        let g = DiGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(!g.is_strongly_connected());
        assert!(g.stats().is_err());
    }

    #[test]
    fn two_components_are_not_strongly_connected() {
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        assert!(!g.is_strongly_connected());
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(matches!(
            DiGraph::from_edges(3, &[(0, 0)]),
            Err(GraphError::SelfLoop(0))
        ));
        assert!(matches!(
            DiGraph::from_edges(3, &[(0, 1), (0, 1)]),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
    }

    #[test]
    fn cycle_stats() {
        let stats = DiGraph::cycle(3).stats().unwrap();
        assert_eq!(stats.diameter, 2);
        assert_eq!(stats.max_out_degree, 1);
    }

    #[test]
    fn complete_graph_stats() {
        let stats = DiGraph::complete(3).stats().unwrap();
        assert_eq!(stats.diameter, 1);
        assert_eq!(stats.max_out_degree, 2);
    }

    #[test]
    fn g4_stats_match_bfs_oracle() {
        let g = g4();
        let oracle = bfs_diameter_oracle(3, g.edges()).unwrap();
        assert_eq!(oracle, 2);
        let stats = g.stats().unwrap();
        assert_eq!(stats.diameter, oracle);
        assert_eq!(stats.max_out_degree, 2);
    }

    #[test]
    fn n_cycle_stats_parametric() {
        for n in 2..40 {
            let stats = DiGraph::cycle(n).stats().unwrap();
            assert_eq!(stats.diameter, n - 1);
            assert_eq!(stats.max_out_degree, 1);
        }
    }

    #[test]
    fn degree_sums_match_edge_count() {
        let g = DiGraph::generate(17, 0.2, 3).unwrap();
        let din: usize = (0..17).map(|i| g.in_degree(i)).sum();
        let dout: usize = (0..17).map(|i| g.out_degree(i)).sum();
        assert_eq!(din, g.edge_count());
        assert_eq!(dout, g.edge_count());
        for i in 0..17 {
            assert!(g.in_degree(i) >= 1);
            assert!(g.out_degree(i) >= 1);
        }
    }

    #[test]
    fn generate_zero_prob_is_cycle() {
        let g = DiGraph::generate(5, 0.0, 9).unwrap();
        assert_eq!(g, DiGraph::cycle(5));
    }

    #[test]
    fn generate_full_prob_is_complete() {
        let g = DiGraph::generate(5, 1.0, 9).unwrap();
        assert_eq!(g, DiGraph::complete(5));
    }

    #[test]
    fn generate_is_deterministic_and_connected() {
        let a = DiGraph::generate(20, 0.1, 42).unwrap();
        let b = DiGraph::generate(20, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_strongly_connected());
        assert!(a.edge_count() >= 20 && a.edge_count() <= 20 + 19 * 20);
        let c = DiGraph::generate(20, 0.1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parse_maps_labels_in_first_appearance_order() {
        let text = "# comment\nb a\na c\nc b\n";
        let lg = LabeledGraph::parse(text).unwrap();
        assert_eq!(lg.labels, vec!["b", "a", "c"]);
        assert_eq!(lg.graph.edges(), &[(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        assert!(matches!(
            LabeledGraph::parse("a b c\n"),
            Err(GraphError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            LabeledGraph::parse("a a\n"),
            Err(GraphError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn render_parse_round_trip_preserves_structure() {
        let g = DiGraph::generate(9, 0.25, 5).unwrap();
        let lg = LabeledGraph::with_numeric_labels(g.clone());
        let text = lg.render();
        let back = LabeledGraph::parse(&text).unwrap();
        // Ids may be permuted by appearance order; compare relabeled edges.
        let mut expect: Vec<(String, String)> = g
            .edges()
            .iter()
            .map(|&(u, v)| (u.to_string(), v.to_string()))
            .collect();
        let mut got: Vec<(String, String)> = back
            .graph
            .edges()
            .iter()
            .map(|&(u, v)| (back.labels[u].clone(), back.labels[v].clone()))
            .collect();
        expect.sort();
        got.sort();
        assert_eq!(expect, got);
        // The rendered mapping comments document the exact ingestion mapping.
        for (id, label) in lg.labels.iter().enumerate() {
            assert!(text.contains(&format!("# node {id} {label}")));
        }
    }
}
