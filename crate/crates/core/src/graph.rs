//! Distance-constraint graphs and their oriented incidence matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// One oriented constraint edge. Orientation is bookkeeping only: it fixes
/// the sign convention of the relative distance, never the physics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

impl Edge {
    pub fn new(tail: usize, head: usize) -> Self {
        Edge { tail, head }
    }
}

impl From<(usize, usize)> for Edge {
    fn from((tail, head): (usize, usize)) -> Self {
        Edge { tail, head }
    }
}

/// Undirected constraint graph over the agents, immutable after construction.
/// Vertices are indexed 0..vertex_count; the ambient dimension is the length
/// of each agent's position vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph {
    vertex_count: usize,
    dimension: usize,
    edges: Vec<Edge>,
}

impl ConstraintGraph {
    /// Validates and freezes the edge list. Self-loops, duplicate vertex pairs
    /// (in either orientation) and out-of-range indices are construction errors.
    pub fn new(vertex_count: usize, dimension: usize, edges: Vec<Edge>) -> Result<Self, Error> {
        if dimension == 0 {
            return Err(Error::ZeroDimension);
        }
        if vertex_count < 2 || edges.is_empty() {
            return Err(Error::GraphTooSmall {
                vertices: vertex_count,
                edges: edges.len(),
            });
        }
        for (j, e) in edges.iter().enumerate() {
            for &v in &[e.tail, e.head] {
                if v >= vertex_count {
                    return Err(Error::VertexOutOfRange {
                        edge: j,
                        vertex: v,
                        vertex_count,
                    });
                }
            }
            if e.tail == e.head {
                return Err(Error::SelfLoop {
                    edge: j,
                    vertex: e.tail,
                });
            }
            for (i, prior) in edges[..j].iter().enumerate() {
                let same = (prior.tail, prior.head) == (e.tail, e.head)
                    || (prior.tail, prior.head) == (e.head, e.tail);
                if same {
                    return Err(Error::DuplicateEdge {
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Ok(ConstraintGraph {
            vertex_count,
            dimension,
            edges,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge indices incident to the given vertex.
    pub fn incident_edges(&self, vertex: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.tail == vertex || e.head == vertex)
            .map(|(j, _)| j)
            .collect()
    }

    fn component_count(&self) -> usize {
        let mut seen = vec![false; self.vertex_count];
        let mut components = 0;
        for start in 0..self.vertex_count {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for e in &self.edges {
                    let other = if e.tail == v {
                        e.head
                    } else if e.head == v {
                        e.tail
                    } else {
                        continue;
                    };
                    if !seen[other] {
                        seen[other] = true;
                        stack.push(other);
                    }
                }
            }
        }
        components
    }

    /// (connected, acyclic). A graph with c components is acyclic exactly when
    /// it has vertex_count - c edges; the numeric cross-check is
    /// rank(B) = vertex_count - c.
    pub fn is_connected_acyclic(&self) -> (bool, bool) {
        let c = self.component_count();
        let acyclic = self.edges.len() == self.vertex_count - c;
        (c == 1, acyclic)
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix::from_graph(self)
    }
}

/// Oriented incidence matrix of a constraint graph, with its Kronecker
/// expansion to the ambient dimension.
///
/// The vertex-edge matrix B has one column per edge with -1 at the tail and
/// +1 at the head. The expanded matrix maps stacked positions to stacked
/// relative distances, z = Bbar q, so it has one n-row block per edge and one
/// n-column block per vertex, block (j, i) = B[i, j] * I_n.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    vertex_edge: DMatrix<f64>,
    expanded: DMatrix<f64>,
    dimension: usize,
}

impl IncidenceMatrix {
    pub fn from_graph(graph: &ConstraintGraph) -> Self {
        let (nv, ne, n) = (graph.vertex_count, graph.edges.len(), graph.dimension);
        let mut b = DMatrix::zeros(nv, ne);
        for (j, e) in graph.edges.iter().enumerate() {
            b[(e.tail, j)] = -1.0;
            b[(e.head, j)] = 1.0;
        }
        let mut expanded = DMatrix::zeros(n * ne, n * nv);
        for (j, e) in graph.edges.iter().enumerate() {
            for c in 0..n {
                expanded[(j * n + c, e.tail * n + c)] = -1.0;
                expanded[(j * n + c, e.head * n + c)] = 1.0;
            }
        }
        IncidenceMatrix {
            vertex_edge: b,
            expanded,
            dimension: n,
        }
    }

    /// Vertex-by-edge matrix B.
    pub fn vertex_edge(&self) -> &DMatrix<f64> {
        &self.vertex_edge
    }

    /// Expanded matrix Bbar with shape (n * edges) x (n * vertices).
    pub fn expanded(&self) -> &DMatrix<f64> {
        &self.expanded
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_edge.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.vertex_edge.ncols()
    }

    /// Stacked relative distances z = Bbar q.
    pub fn relative_distances(&self, positions: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if positions.len() != self.expanded.ncols() {
            return Err(Error::DimensionMismatch {
                what: "stacked positions",
                expected: self.expanded.ncols(),
                actual: positions.len(),
            });
        }
        Ok(&self.expanded * positions)
    }
}
