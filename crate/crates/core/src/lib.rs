//! Networks of unit-mass double integrators coupled along a distance graph by
//! nonlinear spring-damper pairs. The library builds the graph and its
//! incidence structure, assembles the coupled dynamics in port-Hamiltonian
//! form, integrates them, reads the same network as an exact potential game,
//! and certifies reached configurations as variational equilibria. The
//! `verify` module holds randomized self-checks (finite-difference gradient
//! probes, a supply-rate experiment) that exercise the shipped code paths.

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod graph;
pub mod verify;

pub use coupling::{Coupling, Damping, SpringError, SpringLaw, SpringModel};
pub use dynamics::{
    EquilibriumCheck, Network, NetworkState, Sample, SimulationConfig, Termination, Trajectory,
};
pub use error::Error;
pub use game::{DecisionBounds, EquilibriumReport, PotentialCheck, PotentialGame};
pub use graph::{ConstraintGraph, Edge, IncidenceMatrix};
