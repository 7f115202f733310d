use thiserror::Error;

use crate::coupling::SpringError;

/// Everything that can go wrong while building or evaluating a network.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(
        "graph needs at least 2 vertices and 1 edge, got {vertices} vertices and {edges} edges"
    )]
    GraphTooSmall { vertices: usize, edges: usize },

    #[error("ambient dimension must be at least 1")]
    ZeroDimension,

    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },

    #[error("edges {first} and {second} connect the same vertex pair")]
    DuplicateEdge { first: usize, second: usize },

    #[error("edge {edge} references vertex {vertex}, but the graph has {vertex_count} vertices")]
    VertexOutOfRange {
        edge: usize,
        vertex: usize,
        vertex_count: usize,
    },

    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("edge {edge}: {reason}")]
    InvalidCoupling { edge: usize, reason: String },

    #[error("expected one coupling per edge: {edges} edges, {couplings} couplings")]
    CouplingCountMismatch { edges: usize, couplings: usize },

    #[error("edge {edge}: {source}")]
    Spring { edge: usize, source: SpringError },

    #[error("edge {edge}: initial separation {distance} exceeds the feasible radius {radius}")]
    InfeasibleStart {
        edge: usize,
        distance: f64,
        radius: f64,
    },

    #[error("invalid bounds: {reason}")]
    InvalidBounds { reason: String },

    #[error("invalid simulation settings: {reason}")]
    InvalidConfig { reason: String },

    #[error("sampling failed: {reason}")]
    Sampling { reason: String },

    #[error("player index {player} out of range for {player_count} players")]
    PlayerOutOfRange { player: usize, player_count: usize },
}
