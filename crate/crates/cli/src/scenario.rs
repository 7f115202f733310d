//! Scenario files: a versioned, human-editable description of a network, its
//! initial condition, and integrator settings. Vertex indices are 1-based in
//! files and 0-based everywhere in code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use springnet_core::{
    ConstraintGraph, Coupling, Damping, DecisionBounds, Edge, Network, NetworkState,
    SimulationConfig, SpringModel,
};
use std::fmt;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// Everything a scenario file can say, with defaults already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub dimension: usize,
    pub seed: u64,
    /// Initial position per agent, `dimension` entries each.
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// 0-based endpoint pairs in file order.
    pub edges: Vec<(usize, usize)>,
    pub couplings: Vec<CouplingSpec>,
    pub simulation: SimulationSection,
    pub bounds: Option<BoundsSection>,
    pub objective_skew: Option<ObjectiveSkew>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub spring: SpringSpec,
    pub damping: DampingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpringSpec {
    Constant {
        stiffness: f64,
        rest_length: f64,
    },
    Barrier {
        stiffness: f64,
        barrier_scale: f64,
        rest_length: f64,
        critical_distance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DampingSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub t_max: f64,
    pub output_interval: f64,
    pub momentum_tolerance: f64,
    pub force_tolerance: f64,
    pub energy_guard: bool,
    pub min_dt: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let c = SimulationConfig::default();
        SimulationSection {
            dt: c.dt,
            t_max: c.t_max,
            output_interval: c.output_interval,
            momentum_tolerance: c.momentum_tolerance,
            force_tolerance: c.force_tolerance,
            energy_guard: c.energy_guard,
            min_dt: c.min_dt,
        }
    }
}

/// Box halfwidths about the initial center of mass (positions) and zero
/// (velocities); omitted sections fall back to the energy-derived default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub position_halfwidth: f64,
    pub velocity_halfwidth: f64,
}

/// Deliberate break of one player's objective, for demonstrating that the
/// exact-potential check fails when it should. 1-based in files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSkew {
    pub player: usize,
    pub factor: f64,
}

// Raw serde shape of the file; `Scenario` is this with defaults resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format_version: u32,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    dimension: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    defaults: Option<DefaultsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationFileSection>,
    #[serde(rename = "agents")]
    agents: Vec<AgentSection>,
    #[serde(rename = "edges")]
    edges: Vec<EdgeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective_skew: Option<ObjectiveSkew>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefaultsSection {
    coupling: CouplingSpec,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationFileSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    momentum_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    force_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    energy_guard: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentSection {
    position: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    velocity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeSection {
    tail: usize,
    head: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coupling: Option<CouplingSpec>,
}

/// Why a scenario was refused.
#[derive(Debug)]
pub enum ScenarioError {
    Io(std::io::Error),
    Parse(toml::de::Error),
    Invalid(String),
    /// Structurally sound file describing an infeasible or inconsistent
    /// network; carries the underlying model error.
    Model(springnet_core::Error),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io(e) => write!(f, "cannot read scenario: {e}"),
            ScenarioError::Parse(e) => write!(f, "scenario parse error: {e}"),
            ScenarioError::Invalid(reason) => write!(f, "invalid scenario: {reason}"),
            ScenarioError::Model(e) => write!(f, "scenario rejected: {}", describe_model_error(e)),
        }
    }
}

/// Core errors index edges and vertices from 0; scenario files count from 1.
/// Rephrase the indexed variants for file authors.
pub fn describe_model_error(e: &springnet_core::Error) -> String {
    use springnet_core::Error as E;
    match e {
        E::SelfLoop { edge, vertex } => {
            format!("edge {} is a self-loop on agent {}", edge + 1, vertex + 1)
        }
        E::DuplicateEdge { first, second } => format!(
            "edges {} and {} connect the same agent pair",
            first + 1,
            second + 1
        ),
        E::InvalidCoupling { edge, reason } => format!("edge {}: {reason}", edge + 1),
        E::Spring { edge, source } => format!("edge {}: {source}", edge + 1),
        E::InfeasibleStart {
            edge,
            distance,
            radius,
        } => format!(
            "edge {}: initial separation {distance} exceeds the feasible radius {radius}",
            edge + 1
        ),
        other => other.to_string(),
    }
}

impl std::error::Error for ScenarioError {}

impl From<springnet_core::Error> for ScenarioError {
    fn from(e: springnet_core::Error) -> Self {
        ScenarioError::Model(e)
    }
}

impl SpringSpec {
    pub fn build(&self) -> SpringModel {
        match *self {
            SpringSpec::Constant {
                stiffness,
                rest_length,
            } => SpringModel::constant(stiffness, rest_length),
            SpringSpec::Barrier {
                stiffness,
                barrier_scale,
                rest_length,
                critical_distance,
            } => SpringModel::barrier(stiffness, barrier_scale, rest_length, critical_distance),
        }
    }
}

impl DampingSpec {
    pub fn build(&self) -> Result<Damping, ScenarioError> {
        match self {
            DampingSpec::Scalar(d) => Ok(Damping::Scalar(*d)),
            DampingSpec::Matrix(rows) => {
                let size = rows.len();
                if rows.iter().any(|r| r.len() != size) {
                    return Err(ScenarioError::Invalid(
                        "damping matrix rows must all have the matrix size".into(),
                    ));
                }
                let mut m = DMatrix::zeros(size, size);
                for (i, row) in rows.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        m[(i, j)] = *v;
                    }
                }
                Ok(Damping::Matrix(m))
            }
        }
    }
}

impl CouplingSpec {
    pub fn build(&self) -> Result<Coupling, ScenarioError> {
        Ok(Coupling {
            spring: self.spring.build(),
            damping: self.damping.build()?,
        })
    }
}

impl Scenario {
    /// Parse and validate a scenario from TOML text.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(ScenarioError::Parse)?;
        Scenario::resolve(file)
    }

    /// Parse and validate a scenario file on disk.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(ScenarioError::Io)?;
        Scenario::parse(&text)
    }

    fn resolve(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.format_version != FORMAT_VERSION {
            return Err(ScenarioError::Invalid(format!(
                "format_version {} not supported (this build reads {FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.name.is_empty() {
            return Err(ScenarioError::Invalid("name must not be empty".into()));
        }
        let n = file.dimension;
        let agent_count = file.agents.len();

        let mut positions = Vec::with_capacity(agent_count);
        let mut velocities = Vec::with_capacity(agent_count);
        for (i, agent) in file.agents.iter().enumerate() {
            if agent.position.len() != n {
                return Err(ScenarioError::Invalid(format!(
                    "agent {}: position has {} entries, dimension is {n}",
                    i + 1,
                    agent.position.len()
                )));
            }
            let velocity = agent.velocity.clone().unwrap_or_else(|| vec![0.0; n]);
            if velocity.len() != n {
                return Err(ScenarioError::Invalid(format!(
                    "agent {}: velocity has {} entries, dimension is {n}",
                    i + 1,
                    velocity.len()
                )));
            }
            positions.push(agent.position.clone());
            velocities.push(velocity);
        }

        let default_coupling = file.defaults.as_ref().map(|d| &d.coupling);
        let mut edges = Vec::with_capacity(file.edges.len());
        let mut couplings = Vec::with_capacity(file.edges.len());
        for (j, edge) in file.edges.iter().enumerate() {
            if edge.tail == 0 || edge.head == 0 {
                return Err(ScenarioError::Invalid(format!(
                    "edge {}: vertex indices are 1-based",
                    j + 1
                )));
            }
            if edge.tail > agent_count || edge.head > agent_count {
                return Err(ScenarioError::Invalid(format!(
                    "edge {}: endpoint beyond the {} declared agents",
                    j + 1,
                    agent_count
                )));
            }
            edges.push((edge.tail - 1, edge.head - 1));
            let spec = match (&edge.coupling, default_coupling) {
                (Some(c), _) => c.clone(),
                (None, Some(c)) => c.clone(),
                (None, None) => {
                    return Err(ScenarioError::Invalid(format!(
                        "edge {}: no coupling given and no [defaults.coupling] present",
                        j + 1
                    )))
                }
            };
            couplings.push(spec);
        }

        let defaults = SimulationSection::default();
        let s = file.simulation.unwrap_or_default();
        let simulation = SimulationSection {
            dt: s.dt.unwrap_or(defaults.dt),
            t_max: s.t_max.unwrap_or(defaults.t_max),
            output_interval: s.output_interval.unwrap_or(defaults.output_interval),
            momentum_tolerance: s.momentum_tolerance.unwrap_or(defaults.momentum_tolerance),
            force_tolerance: s.force_tolerance.unwrap_or(defaults.force_tolerance),
            energy_guard: s.energy_guard.unwrap_or(defaults.energy_guard),
            min_dt: s.min_dt.unwrap_or(defaults.min_dt),
        };

        if let Some(skew) = &file.objective_skew {
            if skew.player == 0 || skew.player > agent_count {
                return Err(ScenarioError::Invalid(format!(
                    "objective_skew.player {} out of range (1-based)",
                    skew.player
                )));
            }
        }

        let scenario = Scenario {
            name: file.name,
            description: file.description,
            dimension: n,
            seed: file.seed,
            positions,
            velocities,
            edges,
            couplings,
            simulation,
            bounds: file.bounds,
            objective_skew: file.objective_skew,
        };
        // Surface structural problems and infeasible starts at load time. A
        // coincident start is left for the run itself to refuse: the file is
        // well formed, the configuration is just dynamically singular.
        let (network, state) = scenario.build()?;
        match network.check_feasible_start(&state) {
            Ok(()) => {}
            Err(springnet_core::Error::Spring {
                source: springnet_core::SpringError::Singular { .. },
                ..
            }) => {}
            Err(e) => return Err(e.into()),
        }
        Ok(scenario)
    }

    /// Serialize with every applied default written out; `parse` of the
    /// result reproduces this scenario exactly.
    pub fn serialize(&self) -> String {
        let file = ScenarioFile {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            description: self.description.clone(),
            dimension: self.dimension,
            seed: self.seed,
            defaults: None,
            simulation: Some(SimulationFileSection {
                dt: Some(self.simulation.dt),
                t_max: Some(self.simulation.t_max),
                output_interval: Some(self.simulation.output_interval),
                momentum_tolerance: Some(self.simulation.momentum_tolerance),
                force_tolerance: Some(self.simulation.force_tolerance),
                energy_guard: Some(self.simulation.energy_guard),
                min_dt: Some(self.simulation.min_dt),
            }),
            agents: self
                .positions
                .iter()
                .zip(&self.velocities)
                .map(|(q, v)| AgentSection {
                    position: q.clone(),
                    velocity: Some(v.clone()),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .zip(&self.couplings)
                .map(|(&(tail, head), coupling)| EdgeSection {
                    tail: tail + 1,
                    head: head + 1,
                    coupling: Some(coupling.clone()),
                })
                .collect(),
            bounds: self.bounds,
            objective_skew: self.objective_skew,
        };
        toml::to_string_pretty(&file).expect("scenario serialization is infallible")
    }

    pub fn agent_count(&self) -> usize {
        self.positions.len()
    }

    /// Build the network and its initial state. Start feasibility is the
    /// integrator's gate, not this one.
    pub fn build(&self) -> Result<(Network, NetworkState), ScenarioError> {
        let edges = self
            .edges
            .iter()
            .map(|&(tail, head)| Edge::new(tail, head))
            .collect();
        let graph = ConstraintGraph::new(self.agent_count(), self.dimension, edges)?;
        let couplings = self
            .couplings
            .iter()
            .map(|c| c.build())
            .collect::<Result<Vec<_>, _>>()?;
        let network = Network::new(graph, couplings)?;

        let n = self.dimension;
        let dof = n * self.agent_count();
        let mut q = DVector::zeros(dof);
        let mut p = DVector::zeros(dof);
        for (i, (pos, vel)) in self.positions.iter().zip(&self.velocities).enumerate() {
            for c in 0..n {
                q[i * n + c] = pos[c];
                p[i * n + c] = vel[c];
            }
        }
        let state = network.state(q, p)?;
        Ok((network, state))
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            dt: self.simulation.dt,
            t_max: self.simulation.t_max,
            output_interval: self.simulation.output_interval,
            momentum_tolerance: self.simulation.momentum_tolerance,
            force_tolerance: self.simulation.force_tolerance,
            energy_guard: self.simulation.energy_guard,
            energy_tolerance: 1e-8,
            min_dt: self.simulation.min_dt,
        }
    }

    /// The declared decision box, or the energy-derived default.
    pub fn decision_bounds(
        &self,
        network: &Network,
        initial: &NetworkState,
    ) -> Result<DecisionBounds, ScenarioError> {
        match self.bounds {
            None => Ok(DecisionBounds::from_initial_state(network, initial)?),
            Some(b) => {
                let n = self.dimension;
                let dof = n * self.agent_count();
                let mut center = vec![0.0; n];
                for pos in &self.positions {
                    for c in 0..n {
                        center[c] += pos[c];
                    }
                }
                for c in &mut center {
                    *c /= self.agent_count() as f64;
                }
                let mut lower = DVector::zeros(2 * dof);
                let mut upper = DVector::zeros(2 * dof);
                for i in 0..self.agent_count() {
                    for c in 0..n {
                        lower[i * n + c] = center[c] - b.position_halfwidth;
                        upper[i * n + c] = center[c] + b.position_halfwidth;
                        lower[dof + i * n + c] = -b.velocity_halfwidth;
                        upper[dof + i * n + c] = b.velocity_halfwidth;
                    }
                }
                Ok(DecisionBounds::new(lower, upper)?)
            }
        }
    }
}

/// A scenario shipped inside the binary.
pub struct BundledScenario {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

pub const BUNDLED: &[BundledScenario] = &[
    BundledScenario {
        name: "nine_agent_mesh",
        summary: "9 agents, 16 barrier couplings on a cyclic mesh; the benchmark run",
        text: include_str!("../scenarios/nine_agent_mesh.toml"),
    },
    BundledScenario {
        name: "two_agent_linear",
        summary: "overdamped pair on a line; analytically transparent",
        text: include_str!("../scenarios/two_agent_linear.toml"),
    },
    BundledScenario {
        name: "path4_acyclic",
        summary: "4 agents on a path; converges to the global energy minimum",
        text: include_str!("../scenarios/path4_acyclic.toml"),
    },
    BundledScenario {
        name: "triangle_cyclic",
        summary: "3 agents on a cycle with unequal springs",
        text: include_str!("../scenarios/triangle_cyclic.toml"),
    },
    BundledScenario {
        name: "negative_control",
        summary: "triangle with one deliberately skewed objective; potential check must fail",
        text: include_str!("../scenarios/negative_control.toml"),
    },
];

/// Bundled name or path on disk, bundled names winning ties.
pub fn resolve(input: &str) -> Result<Scenario, ScenarioError> {
    for bundled in BUNDLED {
        if bundled.name == input {
            return Scenario::parse(bundled.text);
        }
    }
    Scenario::load(Path::new(input))
}
