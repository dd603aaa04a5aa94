//! Communication graphs and per-iteration link failures.
//!
//! Agents communicate over a simple undirected graph. At every iteration the
//! realized graph is a random subgraph of a fixed base graph: each base edge
//! is alive independently with probability `1 - link_failure_prob`, freshly
//! sampled per iteration. The expected Laplacian is therefore
//! `(1 - p) * L(base)`, and the estimator's connectivity assumption is about
//! that mean graph: the base graph must be connected.
//!
//! Vertices are `0..n` internally. The text interchange format is 1-based:
//! a header line `N E` followed by `E` lines `u v`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex {vertex} out of range for {n_vertices} vertices")]
    VertexOutOfRange { vertex: usize, n_vertices: usize },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("link failure probability {0} outside [0, 1]")]
    InvalidFailureProbability(f64),
    #[error("edge list parse error: {0}")]
    Parse(String),
}

/// Simple undirected graph. Edges are stored deduplicated with endpoints
/// ordered `u < v`. Geometric graphs retain their vertex coordinates so a
/// placement can be audited or re-derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
    coords: Option<Vec<(f64, f64)>>,
}

impl Graph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            for v in [a, b] {
                if v >= n_vertices {
                    return Err(GraphError::VertexOutOfRange {
                        vertex: v,
                        n_vertices,
                    });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        Ok(Self {
            n_vertices,
            edges: normalized,
            coords: None,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Edges with endpoints ordered `u < v`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Unit-square coordinates when the graph came from a geometric placement.
    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Breadth-first connectivity. The empty graph on one vertex is
    /// connected; on zero vertices it is connected vacuously.
    pub fn is_connected(&self) -> bool {
        if self.n_vertices <= 1 {
            return true;
        }
        let adj = self.adjacency_lists();
        let mut seen = vec![false; self.n_vertices];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_vertices
    }

    /// `N E` header plus one 1-based `u v` line per edge.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_vertices, self.edges.len());
        for &(a, b) in &self.edges {
            out.push_str(&format!("{} {}\n", a + 1, b + 1));
        }
        out
    }

    pub fn from_edge_list_text(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GraphError::Parse("empty input".into()))?;
        let mut parts = header.split_whitespace();
        let n: usize = parse_field(parts.next(), "vertex count")?;
        let e: usize = parse_field(parts.next(), "edge count")?;
        let mut edges = Vec::with_capacity(e);
        for line in lines {
            let mut parts = line.split_whitespace();
            let u: usize = parse_field(parts.next(), "edge endpoint")?;
            let v: usize = parse_field(parts.next(), "edge endpoint")?;
            if u == 0 || v == 0 {
                return Err(GraphError::Parse(format!(
                    "endpoints are 1-based, got line {line:?}"
                )));
            }
            edges.push((u - 1, v - 1));
        }
        if edges.len() != e {
            return Err(GraphError::Parse(format!(
                "header declares {e} edges, found {}",
                edges.len()
            )));
        }
        Self::new(n, edges)
    }
}

fn parse_field(field: Option<&str>, what: &str) -> Result<usize, GraphError> {
    field
        .ok_or_else(|| GraphError::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|e| GraphError::Parse(format!("bad {what}: {e}")))
}

/// Uniform placement of `n` vertices in the unit square with an edge between
/// every pair at Euclidean distance `<= radius`. Deterministic in `seed`
/// (coordinates are drawn x-then-y per vertex from a derived ChaCha8 stream).
/// The result may be disconnected; callers that need connectivity check it.
pub fn random_geometric(n: usize, radius: f64, seed: u64) -> Graph {
    let mut rng = crate::rng::derive_rng(seed, crate::rng::STREAM_PLACEMENT);
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i].0 - coords[j].0;
            let dy = coords[i].1 - coords[j].1;
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((i, j));
            }
        }
    }
    let mut g = Graph::new(n, edges).expect("generated edges are in range and loop-free");
    g.coords = Some(coords);
    g
}

/// Base graph plus i.i.d. per-iteration link failure probability.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    base: Graph,
    link_failure_prob: f64,
}

impl NetworkModel {
    pub fn new(base: Graph, link_failure_prob: f64) -> Result<Self, GraphError> {
        if !(0.0..=1.0).contains(&link_failure_prob) || !link_failure_prob.is_finite() {
            return Err(GraphError::InvalidFailureProbability(link_failure_prob));
        }
        Ok(Self {
            base,
            link_failure_prob,
        })
    }

    pub fn base(&self) -> &Graph {
        &self.base
    }

    pub fn link_failure_prob(&self) -> f64 {
        self.link_failure_prob
    }

    /// One realized communication graph: every base edge kept independently
    /// with probability `1 - link_failure_prob`. One uniform draw per base
    /// edge, in edge order, regardless of outcome.
    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Graph {
        let p = self.link_failure_prob;
        let edges: Vec<(usize, usize)> = self
            .base
            .edges
            .iter()
            .filter(|_| rng.random::<f64>() >= p)
            .copied()
            .collect();
        Graph {
            n_vertices: self.base.n_vertices,
            edges,
            coords: self.base.coords.clone(),
        }
    }

    /// Expected Laplacian `(1 - p) * L(base)`.
    pub fn mean_laplacian(&self) -> DMatrix<f64> {
        laplacian(&self.base) * (1.0 - self.link_failure_prob)
    }
}

/// Graph Laplacian `L = D - A`. Entries are small integers, exactly
/// representable in f64, so row sums are exactly zero.
pub fn laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.n_vertices;
    let mut l = DMatrix::zeros(n, n);
    for &(a, b) in &g.edges {
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
    }
    l
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = m.clone().symmetric_eigenvalues();
    ev.as_mut_slice()
        .sort_unstable_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    ev
}

/// Second-smallest Laplacian eigenvalue; positive iff the graph is connected
/// (up to the 1e-9 numerical threshold used throughout).
pub fn algebraic_connectivity(laplacian: &DMatrix<f64>) -> f64 {
    assert!(
        laplacian.nrows() >= 2,
        "algebraic connectivity needs at least two vertices"
    );
    symmetric_eigenvalues(laplacian)[1]
}

/// Largest Laplacian eigenvalue, the scale against which the consensus
/// weight is chosen.
pub fn max_laplacian_eigenvalue(laplacian: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(laplacian);
    ev[ev.len() - 1]
}

pub const CONNECTIVITY_TOL: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn complete(n: usize) -> Graph {
        let edges = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        Graph::new(n, edges).unwrap()
    }

    #[test]
    fn rejects_self_loops_and_range_violations() {
        assert!(matches!(
            Graph::new(3, vec![(0, 0)]),
            Err(GraphError::SelfLoop(0))
        ));
        assert!(matches!(
            Graph::new(3, vec![(0, 3)]),
            Err(GraphError::VertexOutOfRange { .. })
        ));
    }

    #[test]
    fn deduplicates_and_orients_edges() {
        let g = Graph::new(4, vec![(2, 1), (1, 2), (3, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 3), (1, 2)]);
    }

    #[test]
    fn triangle_spectrum() {
        let l = laplacian(&complete(3));
        let ev = symmetric_eigenvalues(&l);
        assert_relative_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(ev[2], 3.0, epsilon = 1e-12);
        assert_relative_eq!(algebraic_connectivity(&l), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn two_path_connectivity_is_two() {
        let g = Graph::new(2, vec![(0, 1)]).unwrap();
        assert_relative_eq!(algebraic_connectivity(&laplacian(&g)), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn star_max_eigenvalue_is_vertex_count() {
        let g = Graph::new(4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_relative_eq!(
            max_laplacian_eigenvalue(&laplacian(&g)),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn laplacian_rows_sum_to_exact_zero() {
        let g = random_geometric(40, 0.35, 7);
        let l = laplacian(&g);
        let ones = DVector::from_element(40, 1.0);
        let r = &l * ones;
        assert!(r.iter().all(|&x| x == 0.0), "integer row sums must cancel");
    }

    #[test]
    fn geometric_graph_matches_its_stored_coordinates() {
        // Oracle: re-derive the edge set from the retained placement.
        let (n, radius) = (50, 0.3);
        let g = random_geometric(n, radius, 7);
        let coords = g.coords().expect("geometric graphs retain coordinates");
        let mut expected = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[i].0 - coords[j].0;
                let dy = coords[i].1 - coords[j].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(g.edges(), expected.as_slice());
        // same seed, same graph; different seed, different placement
        assert_eq!(random_geometric(n, radius, 7), g);
        assert_ne!(
            random_geometric(n, radius, 8).coords(),
            g.coords(),
            "placements must depend on the seed"
        );
    }

    #[test]
    fn sampled_edge_count_matches_binomial_mean() {
        // Cycle on 1000 vertices: exactly 1000 base edges. Mean kept edges is
        // 900 with std sqrt(1000*0.1*0.9) ~ 9.49; over 10_000 samples the
        // sample-mean std is ~0.095, so a 3-sigma band is [899.7, 900.3].
        let n = 1000;
        let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let base = Graph::new(n, edges).unwrap();
        let model = NetworkModel::new(base, 0.1).unwrap();
        let mut rng = crate::rng::derive_rng(11, 0);
        let samples = 10_000;
        let total: usize = (0..samples)
            .map(|_| model.sample_instance(&mut rng).edges().len())
            .sum();
        let mean = total as f64 / samples as f64;
        assert!(
            (mean - 900.0).abs() < 0.3,
            "kept-edge mean {mean} outside 3-sigma band around 900"
        );
    }

    #[test]
    fn mean_laplacian_scales_algebraic_connectivity() {
        let g = random_geometric(30, 0.4, 3);
        assert!(g.is_connected());
        let model = NetworkModel::new(g.clone(), 0.25).unwrap();
        let lam2_base = algebraic_connectivity(&laplacian(&g));
        let lam2_mean = algebraic_connectivity(&model.mean_laplacian());
        assert_relative_eq!(lam2_mean, 0.75 * lam2_base, epsilon = 1e-9);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (0, 3)]).unwrap();
        let text = g.to_edge_list_text();
        assert_eq!(text, "4 3\n1 2\n1 4\n2 3\n");
        assert_eq!(Graph::from_edge_list_text(&text).unwrap(), g);
    }

    #[test]
    fn edge_list_rejects_zero_based_input() {
        assert!(Graph::from_edge_list_text("2 1\n0 1\n").is_err());
        assert!(Graph::from_edge_list_text("2 2\n1 2\n").is_err());
        assert!(Graph::from_edge_list_text("").is_err());
    }

    proptest! {
        #[test]
        fn instances_are_subgraphs(seed in 0u64..500, p in 0.0f64..=1.0) {
            let base = random_geometric(20, 0.5, 9);
            let model = NetworkModel::new(base.clone(), p).unwrap();
            let mut rng = crate::rng::derive_rng(seed, 0);
            let inst = model.sample_instance(&mut rng);
            prop_assert_eq!(inst.n_vertices(), base.n_vertices());
            for e in inst.edges() {
                prop_assert!(base.edges().contains(e));
            }
        }

        #[test]
        fn spectral_connectivity_agrees_with_bfs(seed in 0u64..300, radius in 0.05f64..0.9) {
            let g = random_geometric(12, radius, seed);
            let lam2 = algebraic_connectivity(&laplacian(&g));
            prop_assert_eq!(lam2 > CONNECTIVITY_TOL, g.is_connected());
        }
    }
}
