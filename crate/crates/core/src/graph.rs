//! Communication graphs, leader-grounded Laplacians and their spectra.
//!
//! Agent indices are 0-based inside the library. Everything that leaves the
//! crate (CSV, JSON, CLI output) is converted to 1-based indices at the edge.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eigenvalues_symmetric;

/// Maximum number of Erdős–Rényi draws before giving up on connectivity.
pub const RANDOM_GRAPH_MAX_ATTEMPTS: usize = 10_000;

/// Undirected, unweighted communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    n_agents: usize,
    adjacency: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
    laplacian: DMatrix<f64>,
}

impl GraphModel {
    /// Builds a graph from an undirected edge list (0-based endpoints).
    pub fn from_edges(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n_agents, n_agents);
        for &(i, j) in edges {
            for idx in [i, j] {
                if idx >= n_agents {
                    return Err(Error::InvalidAgent {
                        index: idx,
                        n_agents,
                    });
                }
            }
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop at agent {}", i + 1)));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        Self::from_adjacency(adjacency)
    }

    /// Builds a graph from a symmetric 0/1 adjacency matrix with zero diagonal.
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: adjacency.ncols(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidTopology("graph needs at least one agent".into()));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidTopology(format!("self-loop at agent {}", i + 1)));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::InvalidTopology("adjacency must be binary".into()));
                }
                if a != adjacency[(j, i)] {
                    return Err(Error::InvalidTopology("adjacency must be symmetric".into()));
                }
            }
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[(i, j)] == 1.0).collect())
            .collect();
        let degrees = DVector::from_iterator(n, adjacency.row_iter().map(|r| r.sum()));
        let laplacian = DMatrix::from_diagonal(&degrees) - &adjacency;
        Ok(Self {
            n_agents: n,
            adjacency,
            neighbors,
            laplacian,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Neighbor set of agent `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_agents).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_agents {
            for &j in &self.neighbors[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n_agents
    }

    /// Sorted Laplacian spectrum `0 = λ_1 ≤ λ_2 ≤ … ≤ λ_N`.
    pub fn laplacian_spectrum(&self) -> Result<Vec<f64>> {
        eigenvalues_symmetric(&self.laplacian)
    }

    fn check_agent(&self, index: usize) -> Result<()> {
        if index >= self.n_agents {
            return Err(Error::InvalidAgent {
                index,
                n_agents: self.n_agents,
            });
        }
        Ok(())
    }

    /// Laplacian of the subgraph obtained by deleting vertex `removed`.
    pub fn laplacian_without(&self, removed: usize) -> Result<DMatrix<f64>> {
        self.check_agent(removed)?;
        let keep: Vec<usize> = (0..self.n_agents).filter(|&i| i != removed).collect();
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
            self.adjacency[(keep[a], keep[b])]
        });
        Ok(GraphModel::from_adjacency(sub)?.laplacian)
    }
}

/// Topology families used throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Line,
    Ring,
    Star,
    RandomConnected,
    Clique,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyKind::Line => "line",
            TopologyKind::Ring => "ring",
            TopologyKind::Star => "star",
            TopologyKind::RandomConnected => "random_connected",
            TopologyKind::Clique => "clique",
        };
        f.write_str(s)
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(TopologyKind::Line),
            "ring" => Ok(TopologyKind::Ring),
            "star" => Ok(TopologyKind::Star),
            "random_connected" | "random" => Ok(TopologyKind::RandomConnected),
            "clique" | "complete" => Ok(TopologyKind::Clique),
            other => Err(Error::InvalidTopology(format!("unknown kind '{other}'"))),
        }
    }
}

/// Declarative description of a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n_agents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, n_agents: usize) -> Self {
        Self {
            kind,
            n_agents,
            edge_probability: None,
            seed: None,
        }
    }

    pub fn random(n_agents: usize, edge_probability: f64, seed: u64) -> Self {
        Self {
            kind: TopologyKind::RandomConnected,
            n_agents,
            edge_probability: Some(edge_probability),
            seed: Some(seed),
        }
    }

    /// Short label such as `line` or `random_connected(p=0.3,seed=7)`.
    pub fn label(&self) -> String {
        match self.kind {
            TopologyKind::RandomConnected => format!(
                "random_connected(p={},seed={})",
                self.edge_probability.unwrap_or(f64::NAN),
                self.seed.unwrap_or(0)
            ),
            kind => kind.to_string(),
        }
    }
}

/// The six ten-agent topologies of the spectral survey: line, ring, star,
/// two seeded random connected graphs and a clique.
pub fn canonical_topologies(n_agents: usize, edge_probability: f64, seeds: [u64; 2]) -> Vec<TopologySpec> {
    vec![
        TopologySpec::new(TopologyKind::Line, n_agents),
        TopologySpec::new(TopologyKind::Ring, n_agents),
        TopologySpec::new(TopologyKind::Star, n_agents),
        TopologySpec::random(n_agents, edge_probability, seeds[0]),
        TopologySpec::random(n_agents, edge_probability, seeds[1]),
        TopologySpec::new(TopologyKind::Clique, n_agents),
    ]
}

/// Default survey set: `N = 10`, random graphs with `p = 0.3` and seeds 1 and 2.
pub fn default_survey_topologies() -> Vec<TopologySpec> {
    canonical_topologies(10, 0.3, [1, 2])
}

/// Builds a connected graph for the given spec. The star is centred on the
/// first agent.
pub fn build_topology(spec: &TopologySpec) -> Result<GraphModel> {
    let n = spec.n_agents;
    if n < 2 {
        return Err(Error::InvalidTopology(format!(
            "need at least 2 agents, got {n}"
        )));
    }
    let edges: Vec<(usize, usize)> = match spec.kind {
        TopologyKind::Line => (0..n - 1).map(|i| (i, i + 1)).collect(),
        TopologyKind::Ring => {
            let mut e: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            if n > 2 {
                e.push((n - 1, 0));
            }
            e
        }
        TopologyKind::Star => (1..n).map(|i| (0, i)).collect(),
        TopologyKind::Clique => (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect(),
        TopologyKind::RandomConnected => return random_connected(spec),
    };
    GraphModel::from_edges(n, &edges)
}

fn random_connected(spec: &TopologySpec) -> Result<GraphModel> {
    let n = spec.n_agents;
    let p = spec.edge_probability.ok_or_else(|| {
        Error::InvalidTopology("random_connected needs edge_probability".into())
    })?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidTopology(format!(
            "edge_probability must lie in (0, 1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
    for _ in 0..RANDOM_GRAPH_MAX_ATTEMPTS {
        let mut adjacency = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    adjacency[(i, j)] = 1.0;
                    adjacency[(j, i)] = 1.0;
                }
            }
        }
        let graph = GraphModel::from_adjacency(adjacency)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(Error::RejectionLimit {
        attempts: RANDOM_GRAPH_MAX_ATTEMPTS,
        n_agents: n,
        edge_probability: p,
    })
}

/// Leader-grounded objects for one choice of leader.
#[derive(Debug, Clone)]
pub struct GroundedSpectrum {
    leader: usize,
    grounded_laplacian: DMatrix<f64>,
    reduced_matrix: DMatrix<f64>,
    coupling_column: DVector<f64>,
    eigenvalues: Vec<f64>,
}

impl GroundedSpectrum {
    pub fn leader(&self) -> usize {
        self.leader
    }

    /// `L_l`: the Laplacian with the leader's row zeroed.
    pub fn grounded_laplacian(&self) -> &DMatrix<f64> {
        &self.grounded_laplacian
    }

    /// `M_l`: `L_l` with the leader's row and column deleted.
    pub fn reduced_matrix(&self) -> &DMatrix<f64> {
        &self.reduced_matrix
    }

    /// `ℓ_l`: the deleted leader column restricted to follower rows.
    pub fn coupling_column(&self) -> &DVector<f64> {
        &self.coupling_column
    }

    /// Sorted spectrum `λ_{2,l} ≤ … ≤ λ_{N,l}` of `M_l`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    /// `σ(L_l) = σ(M_l) ∪ {0}`, sorted.
    pub fn full_spectrum_with_zero(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.eigenvalues.len() + 1);
        out.push(0.0);
        out.extend_from_slice(&self.eigenvalues);
        out.sort_by(f64::total_cmp);
        out
    }
}

/// Grounds `graph` at `leader`.
pub fn ground(graph: &GraphModel, leader: usize) -> Result<GroundedSpectrum> {
    graph.check_agent(leader)?;
    let n = graph.n_agents();
    if n < 2 {
        return Err(Error::InvalidTopology("grounding needs at least 2 agents".into()));
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let mut grounded = graph.laplacian().clone();
    grounded.row_mut(leader).fill(0.0);
    let keep: Vec<usize> = (0..n).filter(|&i| i != leader).collect();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |a, b| grounded[(keep[a], keep[b])]);
    let coupling = DVector::from_iterator(n - 1, keep.iter().map(|&i| grounded[(i, leader)]));
    let eigenvalues = eigenvalues_symmetric(&reduced)?;
    if eigenvalues[0] <= 0.0 {
        return Err(Error::Disconnected);
    }
    Ok(GroundedSpectrum {
        leader,
        grounded_laplacian: grounded,
        reduced_matrix: reduced,
        coupling_column: coupling,
        eigenvalues,
    })
}

/// Grounded spectra for every possible leader of a connected graph.
pub fn ground_all(graph: &GraphModel) -> Result<Vec<GroundedSpectrum>> {
    (0..graph.n_agents()).map(|l| ground(graph, l)).collect()
}

/// One row of the spectral survey.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyRow {
    pub topology: String,
    /// 0-based leader index.
    pub leader: usize,
    pub lambda2: f64,
    pub lambda_n: f64,
    pub lambda2l: f64,
    pub lambda_nl: f64,
}

/// `λ_2, λ_N, λ_{2,l}, λ_{N,l}` for every topology and every leader.
pub fn spectrum_survey(specs: &[TopologySpec]) -> Result<Vec<SurveyRow>> {
    let mut rows = Vec::new();
    for spec in specs {
        let graph = build_topology(spec)?;
        let spectrum = graph.laplacian_spectrum()?;
        let lambda2 = spectrum[1];
        let lambda_n = *spectrum.last().expect("non-empty");
        for grounded in ground_all(&graph)? {
            rows.push(SurveyRow {
                topology: spec.label(),
                leader: grounded.leader(),
                lambda2,
                lambda_n,
                lambda2l: grounded.lambda2(),
                lambda_nl: grounded.lambda_max(),
            });
        }
    }
    Ok(rows)
}

/// Survey CSV, 1-based leader column.
pub fn survey_csv(rows: &[SurveyRow]) -> String {
    let mut out = String::from("topology,leader,lambda2,lambdaN,lambda2l,lambdaNl\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.topology),
            r.leader + 1,
            r.lambda2,
            r.lambda_n,
            r.lambda2l,
            r.lambda_nl
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line4() -> GraphModel {
        build_topology(&TopologySpec::new(TopologyKind::Line, 4)).unwrap()
    }

    #[test]
    fn line_edges() {
        assert_eq!(line4().edges(), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn clique_adjacency() {
        let g = build_topology(&TopologySpec::new(TopologyKind::Clique, 3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.adjacency()[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn grounded_line_matches_worked_example() {
        let s = ground(&line4(), 1).unwrap();
        let expected_l = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, -1.0, 2.0, -1.0, //
                0.0, 0.0, -1.0, 1.0,
            ],
        );
        assert_eq!(s.grounded_laplacian(), &expected_l);
        let expected_m =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(s.reduced_matrix(), &expected_m);
        assert_eq!(
            s.coupling_column(),
            &DVector::from_vec(vec![-1.0, -1.0, 0.0])
        );
    }

    #[test]
    fn grounded_line_spectrum() {
        // 2x2 block has trace 3 and determinant 1, plus the isolated 1.
        let s = ground(&line4(), 1).unwrap();
        let disc = 5.0f64.sqrt();
        let expected = [(3.0 - disc) / 2.0, 1.0, (3.0 + disc) / 2.0];
        for (a, b) in s.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.lambda2() - 0.381966).abs() < 1e-6);
    }

    #[test]
    fn star_center_grounds_to_identity() {
        let g = build_topology(&TopologySpec::new(TopologyKind::Star, 10)).unwrap();
        let s = ground(&g, 0).unwrap();
        assert_eq!(s.reduced_matrix(), &DMatrix::identity(9, 9));
        assert_eq!(s.lambda2(), 1.0);
        assert_eq!(s.lambda_max(), 1.0);
    }

    #[test]
    fn decomposition_into_subgraph_laplacian() {
        // M_l = L_{-l} - diag(ℓ_l), exactly.
        let g = build_topology(&TopologySpec::random(9, 0.4, 3)).unwrap();
        for l in 0..9 {
            let s = ground(&g, l).unwrap();
            let rebuilt = g.laplacian_without(l).unwrap()
                - DMatrix::from_diagonal(s.coupling_column());
            assert_eq!(&rebuilt, s.reduced_matrix());
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let g = GraphModel::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
        assert_eq!(ground(&g, 0).unwrap_err(), Error::Disconnected);
    }

    #[test]
    fn random_graph_is_connected_and_deterministic() {
        let spec = TopologySpec::random(10, 0.3, 7);
        let a = build_topology(&spec).unwrap();
        let b = build_topology(&spec).unwrap();
        assert!(a.is_connected());
        assert_eq!(a.adjacency(), b.adjacency());
    }

    #[test]
    fn random_graph_rejection_limit() {
        let spec = TopologySpec::random(40, 1e-6, 1);
        assert!(matches!(
            build_topology(&spec),
            Err(Error::RejectionLimit { .. })
        ));
    }

    #[test]
    fn invalid_specs() {
        assert!(build_topology(&TopologySpec::new(TopologyKind::Line, 1)).is_err());
        let mut spec = TopologySpec::random(5, 0.0, 1);
        assert!(build_topology(&spec).is_err());
        spec.edge_probability = None;
        assert!(build_topology(&spec).is_err());
        assert!("hexagon".parse::<TopologyKind>().is_err());
    }

    #[test]
    fn survey_csv_header_and_indexing() {
        let rows = spectrum_survey(&[TopologySpec::new(TopologyKind::Star, 4)]).unwrap();
        let csv = survey_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("topology,leader,lambda2,lambdaN,lambda2l,lambdaNl")
        );
        assert!(lines.next().unwrap().starts_with("star,1,"));
        assert_eq!(csv.lines().count(), 5);
    }
}
