//! Run a scenario end to end: integrate, write the trajectory table, and
//! certify the final configuration.

use crate::scenario::{Scenario, ScenarioError};
use serde::Serialize;
use springnet_core::{Error as ModelError, Network, PotentialGame, Termination, Trajectory};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

/// Final energy at or below this, with every separation near rest, counts as
/// the global minimum rather than an alternative stationary point.
pub const ENERGY_MINIMUM_TOL: f64 = 1e-6;
pub const REST_DISTANCE_TOL: f64 = 1e-3;

#[derive(Debug)]
pub enum RunError {
    Scenario(ScenarioError),
    Model(ModelError),
    Io(std::io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Scenario(e) => write!(f, "{e}"),
            RunError::Model(e) => write!(f, "{}", crate::scenario::describe_model_error(e)),
            RunError::Io(e) => write!(f, "cannot write output: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ScenarioError> for RunError {
    fn from(e: ScenarioError) -> Self {
        RunError::Scenario(e)
    }
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        RunError::Model(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Equilibrium certificate for the final sample, written as `report.toml`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportFile {
    pub converged: bool,
    pub is_variational_equilibrium: bool,
    pub boundary_active: bool,
    pub at_energy_minimum: bool,
    /// Converged and certified, but not at the zero-energy configuration.
    pub alternative_equilibrium: bool,
    pub pseudo_gradient_norm: f64,
    pub momentum_norm: f64,
    pub potential_value: f64,
    pub tolerance: f64,
    pub per_player_gradient_norms: Vec<f64>,
}

/// Run bookkeeping, written as `summary.toml`. Wall time lives here and only
/// here so the other outputs are reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryFile {
    pub scenario: String,
    pub termination: String,
    /// 1-based edge for domain or singularity terminations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination_edge: Option<usize>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub samples: usize,
    pub final_time: f64,
    pub final_energy: f64,
    pub final_momentum_norm: f64,
    pub final_force_norm: f64,
    pub wall_seconds: f64,
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: ReportFile,
    pub summary: SummaryFile,
}

fn component_suffix(dimension: usize, component: usize) -> String {
    match dimension {
        1 => String::new(),
        2 | 3 => format!("_{}", ["x", "y", "z"][component]),
        _ => format!("_c{}", component + 1),
    }
}

/// Column header for the trajectory table; component suffixes follow the
/// dimension (`q_1` in 1D, `q_1_x`/`q_1_y` in 2D, `_c4` and up beyond 3D).
pub fn trajectory_header(network: &Network) -> String {
    let n = network.dimension();
    let mut columns = vec!["t".to_string()];
    for kind in ["q", "p"] {
        for agent in 1..=network.agent_count() {
            for c in 0..n {
                columns.push(format!("{kind}_{agent}{}", component_suffix(n, c)));
            }
        }
    }
    for edge in 1..=network.edge_count() {
        columns.push(format!("dist_e{edge}"));
    }
    columns.push("H".to_string());
    columns.push("u_norm".to_string());
    columns.join(",")
}

pub fn write_trajectory_table(
    network: &Network,
    trajectory: &Trajectory,
    out: &mut dyn std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "{}", trajectory_header(network))?;
    for sample in &trajectory.samples {
        write!(out, "{:.16e}", sample.t)?;
        for v in sample.state.positions().iter() {
            write!(out, ",{v:.16e}")?;
        }
        for v in sample.state.momenta().iter() {
            write!(out, ",{v:.16e}")?;
        }
        for s in &sample.separations {
            write!(out, ",{s:.16e}")?;
        }
        write!(out, ",{:.16e}", sample.hamiltonian)?;
        writeln!(out, ",{:.16e}", sample.control.norm())?;
    }
    Ok(())
}

fn termination_name(t: &Termination) -> (String, Option<usize>) {
    match t {
        Termination::Converged => ("converged".into(), None),
        Termination::TMaxReached => ("t_max_reached".into(), None),
        Termination::DomainViolation { edge } => ("domain_violation".into(), Some(edge + 1)),
        Termination::SingularConfiguration { edge } => {
            ("singular_configuration".into(), Some(edge + 1))
        }
    }
}

/// Certify the trajectory's final sample against the scenario's decision box.
pub fn certify_final(
    scenario: &Scenario,
    network: &Network,
    trajectory: &Trajectory,
) -> Result<ReportFile, RunError> {
    let final_sample = trajectory
        .samples
        .last()
        .expect("a trajectory always carries at least the initial sample");
    let initial = &trajectory.samples[0].state;
    let bounds = scenario.decision_bounds(network, initial)?;
    let game = PotentialGame::new(network, bounds)?;
    let x = final_sample.state.collective();
    let tolerance = scenario.simulation.force_tolerance;
    let report = game.certify_equilibrium(&x, tolerance)?;

    let near_rest = final_sample
        .separations
        .iter()
        .zip(network.couplings())
        .all(|(s, c)| (s - c.spring.rest_length).abs() <= REST_DISTANCE_TOL);
    let at_energy_minimum = final_sample.hamiltonian <= ENERGY_MINIMUM_TOL && near_rest;
    let converged = trajectory.converged();

    Ok(ReportFile {
        converged,
        is_variational_equilibrium: report.is_variational_equilibrium,
        boundary_active: report.boundary_active,
        at_energy_minimum,
        alternative_equilibrium: converged
            && report.is_variational_equilibrium
            && !at_energy_minimum,
        pseudo_gradient_norm: report.pseudo_gradient_norm,
        momentum_norm: report.momentum_norm,
        potential_value: report.potential_value,
        tolerance,
        per_player_gradient_norms: report.per_player_gradient_norms,
    })
}

/// Integrate the scenario and, when `out_dir` is given, write
/// `trajectory.csv`, `report.toml`, and `summary.toml` into it.
pub fn run_scenario(scenario: &Scenario, out_dir: Option<&Path>) -> Result<RunOutput, RunError> {
    let (network, initial) = scenario.build()?;
    let config = scenario.simulation_config();

    let started = Instant::now();
    let trajectory = network.simulate(&initial, &config)?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let report = certify_final(scenario, &network, &trajectory)?;
    let final_sample = trajectory.samples.last().unwrap();
    let equilibrium = network.detect_equilibrium(
        &final_sample.state,
        config.momentum_tolerance,
        config.force_tolerance,
    )?;
    let (termination, termination_edge) = termination_name(&trajectory.termination);
    let summary = SummaryFile {
        scenario: scenario.name.clone(),
        termination,
        termination_edge,
        steps: trajectory.steps,
        rejected_steps: trajectory.rejected_steps,
        samples: trajectory.samples.len(),
        final_time: final_sample.t,
        final_energy: final_sample.hamiltonian,
        final_momentum_norm: equilibrium.momentum_residual,
        final_force_norm: equilibrium.force_residual,
        wall_seconds,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut table = std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?);
        write_trajectory_table(&network, &trajectory, &mut table)?;
        table.flush()?;
        std::fs::write(
            dir.join("report.toml"),
            toml::to_string_pretty(&report).expect("report serializes"),
        )?;
        std::fs::write(
            dir.join("summary.toml"),
            toml::to_string_pretty(&summary).expect("summary serializes"),
        )?;
    }

    Ok(RunOutput {
        trajectory,
        report,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use springnet_core::{ConstraintGraph, Coupling, Damping, Edge, SpringModel};

    fn pair_network(dimension: usize) -> Network {
        let graph = ConstraintGraph::new(2, dimension, vec![Edge::new(0, 1)]).unwrap();
        let coupling = Coupling {
            spring: SpringModel::constant(1.0, 0.5),
            damping: Damping::Scalar(1.0),
        };
        Network::new(graph, vec![coupling]).unwrap()
    }

    #[test]
    fn header_suffixes_follow_the_dimension() {
        assert_eq!(
            trajectory_header(&pair_network(1)),
            "t,q_1,q_2,p_1,p_2,dist_e1,H,u_norm"
        );
        assert_eq!(
            trajectory_header(&pair_network(3)),
            "t,q_1_x,q_1_y,q_1_z,q_2_x,q_2_y,q_2_z,\
             p_1_x,p_1_y,p_1_z,p_2_x,p_2_y,p_2_z,dist_e1,H,u_norm"
        );
        assert_eq!(
            trajectory_header(&pair_network(4)),
            "t,q_1_c1,q_1_c2,q_1_c3,q_1_c4,q_2_c1,q_2_c2,q_2_c3,q_2_c4,\
             p_1_c1,p_1_c2,p_1_c3,p_1_c4,p_2_c1,p_2_c2,p_2_c3,p_2_c4,dist_e1,H,u_norm"
        );
    }

    #[test]
    fn table_rows_carry_full_precision() {
        let network = pair_network(1);
        let initial = network
            .state(
                nalgebra::dvector![0.0, 1.0 / 3.0],
                nalgebra::dvector![0.0, 0.0],
            )
            .unwrap();
        let config = springnet_core::SimulationConfig {
            t_max: 1e-3,
            momentum_tolerance: 1e-30,
            ..Default::default()
        };
        let trajectory = network.simulate(&initial, &config).unwrap();
        let mut buffer = Vec::new();
        write_trajectory_table(&network, &trajectory, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let first_row = text.lines().nth(1).unwrap();
        let q2: f64 = first_row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(q2, 1.0 / 3.0, "17 significant digits survive the format");
    }

    // Every written cell must parse back to the exact in-memory value.
    #[test]
    fn table_reparses_to_the_samples_exactly() {
        let network = pair_network(2);
        let initial = network
            .state(
                nalgebra::dvector![0.1, 0.2, 0.7, 0.3],
                nalgebra::dvector![0.05, -0.05, -0.05, 0.05],
            )
            .unwrap();
        let config = springnet_core::SimulationConfig {
            t_max: 0.5,
            output_interval: 0.05,
            momentum_tolerance: 1e-30,
            ..Default::default()
        };
        let trajectory = network.simulate(&initial, &config).unwrap();
        let mut buffer = Vec::new();
        write_trajectory_table(&network, &trajectory, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        let columns = header.split(',').count();
        let rows: Vec<Vec<f64>> = lines
            .map(|line| line.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), trajectory.samples.len());
        for (row, sample) in rows.iter().zip(&trajectory.samples) {
            assert_eq!(row.len(), columns);
            let mut cell = row.iter();
            assert_eq!(*cell.next().unwrap(), sample.t);
            for v in sample.state.positions().iter() {
                assert_eq!(cell.next().unwrap(), v);
            }
            for v in sample.state.momenta().iter() {
                assert_eq!(cell.next().unwrap(), v);
            }
            for s in &sample.separations {
                assert_eq!(cell.next().unwrap(), s);
            }
            assert_eq!(*cell.next().unwrap(), sample.hamiltonian);
            assert_eq!(*cell.next().unwrap(), sample.control.norm());
        }
    }
}
