//! Spatial and temporal factor graphs and their Laplacians.
//!
//! The temporal graph is a path over observed time steps; the spatial graph
//! connects the traffic participants (spider or mesh). The model only ever
//! uses the factor graphs: the Cartesian product is materialized for
//! verification only.

use crate::error::{GftnnError, Result};
use crate::linalg::Matrix;

/// Minimum hub distance used when deriving inverse-distance weights, in meters.
pub const MIN_WEIGHT_DISTANCE: f64 = 0.1;

/// Undirected weighted graph `G = (V, E, W)` with binary adjacency `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    id: String,
    weights: Matrix,
    adjacency: Matrix,
}

impl Graph {
    /// Builds an unweighted graph from an arbitrary symmetric 0/1 adjacency.
    ///
    /// This is the entry point for scenario-dependent topologies (k-nearest
    /// neighbours, epsilon neighbourhoods).
    pub fn from_adjacency(id: impl Into<String>, adjacency: Matrix) -> Result<Graph> {
        let weights = adjacency.clone();
        Graph::new(id, adjacency, weights)
    }

    /// Builds a graph from adjacency and weights, validating every invariant.
    pub fn new(id: impl Into<String>, adjacency: Matrix, weights: Matrix) -> Result<Graph> {
        let n = adjacency.rows();
        if n == 0 || !adjacency.is_square() {
            return Err(GftnnError::InvalidSize(format!(
                "adjacency must be a non-empty square matrix, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        if weights.rows() != n || weights.cols() != n {
            return Err(GftnnError::Dimension(format!(
                "weights {}x{} do not match {n} nodes",
                weights.rows(),
                weights.cols()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(GftnnError::Contract(format!("self-loop on node {i}")));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(GftnnError::Contract(format!(
                        "adjacency[{i}][{j}] = {a} is not binary"
                    )));
                }
                if a != adjacency[(j, i)] || weights[(i, j)] != weights[(j, i)] {
                    return Err(GftnnError::Contract(format!(
                        "graph is not symmetric at ({i}, {j})"
                    )));
                }
                let w = weights[(i, j)];
                if !w.is_finite() || (a == 1.0 && w <= 0.0) {
                    return Err(GftnnError::Contract(format!(
                        "edge ({i}, {j}) has invalid weight {w}"
                    )));
                }
            }
        }
        Ok(Graph {
            id: id.into(),
            weights,
            adjacency,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] == 1.0
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n_nodes();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .count()
    }

    /// Weighted degrees `D_ii = Σ_j (W ⊙ A)_ij`.
    pub fn degrees(&self) -> Vec<f64> {
        let n = self.n_nodes();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.weights[(i, j)] * self.adjacency[(i, j)])
                    .sum()
            })
            .collect()
    }
}

/// Path graph over `n` nodes, edges `(i, i + 1)`.
pub fn build_line_graph(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(GftnnError::InvalidSize(format!(
            "line graph needs at least 2 nodes, got {n}"
        )));
    }
    let adjacency = Matrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
    Graph::from_adjacency(format!("line({n})"), adjacency)
}

/// Star graph: every participant is connected to the hub only.
pub fn build_spider_graph(n_vehicles: usize, hub_index: usize) -> Result<Graph> {
    if n_vehicles < 2 {
        return Err(GftnnError::InvalidSize(format!(
            "spider graph needs at least 2 nodes, got {n_vehicles}"
        )));
    }
    if hub_index >= n_vehicles {
        return Err(GftnnError::IndexOutOfRange {
            index: hub_index,
            len: n_vehicles,
        });
    }
    let adjacency = Matrix::from_fn(n_vehicles, n_vehicles, |i, j| {
        if i != j && (i == hub_index || j == hub_index) {
            1.0
        } else {
            0.0
        }
    });
    Graph::from_adjacency(format!("spider({n_vehicles},hub={hub_index})"), adjacency)
}

/// Complete graph `K_n`.
pub fn build_mesh_graph(n_vehicles: usize) -> Result<Graph> {
    if n_vehicles < 2 {
        return Err(GftnnError::InvalidSize(format!(
            "mesh graph needs at least 2 nodes, got {n_vehicles}"
        )));
    }
    let adjacency = Matrix::from_fn(n_vehicles, n_vehicles, |i, j| if i != j { 1.0 } else { 0.0 });
    Graph::from_adjacency(format!("mesh({n_vehicles})"), adjacency)
}

/// Reweights the hub edges of a spider graph by inverse Euclidean distance.
///
/// Distances below [`MIN_WEIGHT_DISTANCE`] are clamped, so ghost vehicles
/// sitting on top of the hub get weight `1 / 0.1`.
pub fn apply_inverse_distance_weights(
    graph: &Graph,
    positions: &[(f64, f64)],
    hub_index: usize,
) -> Result<Graph> {
    let n = graph.n_nodes();
    if positions.len() != n {
        return Err(GftnnError::Dimension(format!(
            "{} positions for {n} nodes",
            positions.len()
        )));
    }
    if hub_index >= n {
        return Err(GftnnError::IndexOutOfRange {
            index: hub_index,
            len: n,
        });
    }
    if let Some(i) = positions
        .iter()
        .position(|(x, y)| !x.is_finite() || !y.is_finite())
    {
        return Err(GftnnError::Data(format!("non-finite position for node {i}")));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if graph.has_edge(i, j) && i != hub_index && j != hub_index {
                return Err(GftnnError::Contract(format!(
                    "edge ({i}, {j}) does not touch hub {hub_index}; not a spider graph"
                )));
            }
        }
    }

    let (hx, hy) = positions[hub_index];
    let mut weights = graph.weights().clone();
    for j in 0..n {
        if j == hub_index || !graph.has_edge(hub_index, j) {
            continue;
        }
        let (x, y) = positions[j];
        let d = ((x - hx).powi(2) + (y - hy).powi(2)).sqrt();
        let w = 1.0 / d.max(MIN_WEIGHT_DISTANCE);
        weights[(hub_index, j)] = w;
        weights[(j, hub_index)] = w;
    }
    Graph::new(
        format!("{}+invdist", graph.id()),
        graph.adjacency().clone(),
        weights,
    )
}

/// Graph Laplacian `L = D − W ⊙ A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub matrix: Matrix,
    pub source_graph_id: String,
}

pub fn laplacian(graph: &Graph) -> Laplacian {
    let n = graph.n_nodes();
    let degrees = graph.degrees();
    let matrix = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            degrees[i]
        } else {
            -graph.weights()[(i, j)] * graph.adjacency()[(i, j)]
        }
    });
    Laplacian {
        matrix,
        source_graph_id: graph.id().to_string(),
    }
}

/// Explicit Cartesian product `G1 □ G2`; node `(i1, i2)` maps to `i1 * N2 + i2`.
pub fn cartesian_product(g1: &Graph, g2: &Graph) -> Graph {
    let (n1, n2) = (g1.n_nodes(), g2.n_nodes());
    let n = n1 * n2;
    let mut adjacency = Matrix::zeros(n, n);
    let mut weights = Matrix::zeros(n, n);
    for a in 0..n {
        let (i1, i2) = (a / n2, a % n2);
        for b in 0..n {
            let (j1, j2) = (b / n2, b % n2);
            if i1 == j1 && g2.has_edge(i2, j2) {
                adjacency[(a, b)] = 1.0;
                weights[(a, b)] = g2.weights()[(i2, j2)];
            } else if i2 == j2 && g1.has_edge(i1, j1) {
                adjacency[(a, b)] = 1.0;
                weights[(a, b)] = g1.weights()[(i1, j1)];
            }
        }
    }
    Graph {
        id: format!("{}x{}", g1.id(), g2.id()),
        weights,
        adjacency,
    }
}
