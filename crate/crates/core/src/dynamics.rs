//! Assembled networks: energy accounting, the coupling control law, and the
//! fixed-step integrator with pole-aware step rejection.

use nalgebra::{DMatrix, DVector};

use crate::coupling::{Coupling, SpringError};
use crate::error::Error;
use crate::graph::{ConstraintGraph, IncidenceMatrix};

/// Graph plus one coupling per edge, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    graph: ConstraintGraph,
    incidence: IncidenceMatrix,
    couplings: Vec<Coupling>,
}

/// Positions, momenta, and the derived relative distances z = Bbar q.
/// Only networks hand these out, so z is always consistent with q.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    q: DVector<f64>,
    p: DVector<f64>,
    z: DVector<f64>,
}

impl NetworkState {
    pub fn positions(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn momenta(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn relative_distances(&self) -> &DVector<f64> {
        &self.z
    }

    /// Stacked decision variable (q; qdot). Momenta equal velocities here
    /// because every agent carries unit mass.
    pub fn collective(&self) -> DVector<f64> {
        let mut x = DVector::zeros(2 * self.q.len());
        x.rows_mut(0, self.q.len()).copy_from(&self.q);
        x.rows_mut(self.q.len(), self.p.len()).copy_from(&self.p);
        x
    }
}

/// Gradient of the Hamiltonian split into its two blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianGradient {
    /// dH/dz, stacked per edge.
    pub z: DVector<f64>,
    /// dH/dp, stacked per agent.
    pub p: DVector<f64>,
}

/// Time derivative of the full state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub q_dot: DVector<f64>,
    pub p_dot: DVector<f64>,
    pub z_dot: DVector<f64>,
}

/// Residuals the equilibrium detector thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumCheck {
    pub converged: bool,
    /// Infinity norm of the momenta.
    pub momentum_residual: f64,
    /// Infinity norm of the net spring force per agent, Bbar^T dH/dz.
    pub force_residual: f64,
}

/// Integrator settings. The integrator is classical fourth-order Runge-Kutta
/// with a fixed base step; steps that evaluate beyond a barrier pole are
/// rejected and retried at half the step down to `min_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Spacing of recorded samples; equilibrium is checked at each one.
    pub output_interval: f64,
    pub momentum_tolerance: f64,
    pub force_tolerance: f64,
    /// When set, steps whose energy increase exceeds `energy_tolerance` are
    /// also rejected and retried smaller (best effort: once `min_dt` is
    /// reached the step is accepted and the increase recorded).
    pub energy_guard: bool,
    pub energy_tolerance: f64,
    pub min_dt: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 1e-3,
            t_max: 100.0,
            output_interval: 1e-2,
            momentum_tolerance: 1e-6,
            force_tolerance: 1e-6,
            energy_guard: false,
            energy_tolerance: 1e-8,
            min_dt: 1e-9,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), String> {
        let finite_positive = |name: &str, v: f64| -> Result<(), String> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive and finite, got {v}"))
            }
        };
        finite_positive("dt", self.dt)?;
        finite_positive("t_max", self.t_max)?;
        finite_positive("output_interval", self.output_interval)?;
        finite_positive("momentum_tolerance", self.momentum_tolerance)?;
        finite_positive("force_tolerance", self.force_tolerance)?;
        finite_positive("energy_tolerance", self.energy_tolerance)?;
        finite_positive("min_dt", self.min_dt)?;
        if self.min_dt > self.dt {
            return Err(format!(
                "min_dt {} must not exceed dt {}",
                self.min_dt, self.dt
            ));
        }
        Ok(())
    }
}

/// Why a simulation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    TMaxReached,
    DomainViolation { edge: usize },
    SingularConfiguration { edge: usize },
}

/// One recorded point along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: NetworkState,
    pub hamiltonian: f64,
    /// Separation per edge, in file order.
    pub separations: Vec<f64>,
    /// Coupling control input at the sample.
    pub control: DVector<f64>,
}

/// Recorded run: samples plus step accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    pub steps: usize,
    pub rejected_steps: usize,
    /// Largest positive per-step energy increase observed (0 when energy
    /// never increased across a step).
    pub max_energy_step_increase: f64,
}

impl Trajectory {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn final_sample(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectories record at least the initial sample")
    }

    /// Largest infinity norm of (q, p) over the recorded samples.
    pub fn max_state_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.state.q.amax().max(s.state.p.amax()))
            .fold(0.0, f64::max)
    }
}

// Reusable integrator buffers; one allocation set per simulate call.
struct StepBuffers {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    ps2: DVector<f64>,
    ps3: DVector<f64>,
    ps4: DVector<f64>,
    qt: DVector<f64>,
    q_new: DVector<f64>,
    p_new: DVector<f64>,
    w: Vec<f64>,
    f: Vec<f64>,
}

impl StepBuffers {
    fn new(agent_dof: usize, dimension: usize) -> Self {
        StepBuffers {
            k1: DVector::zeros(agent_dof),
            k2: DVector::zeros(agent_dof),
            k3: DVector::zeros(agent_dof),
            k4: DVector::zeros(agent_dof),
            ps2: DVector::zeros(agent_dof),
            ps3: DVector::zeros(agent_dof),
            ps4: DVector::zeros(agent_dof),
            qt: DVector::zeros(agent_dof),
            q_new: DVector::zeros(agent_dof),
            p_new: DVector::zeros(agent_dof),
            w: vec![0.0; dimension],
            f: vec![0.0; dimension],
        }
    }
}

type EdgeFailure = (usize, SpringError);

fn spring_error(err: EdgeFailure) -> Error {
    Error::Spring {
        edge: err.0,
        source: err.1,
    }
}

impl Network {
    pub fn new(graph: ConstraintGraph, couplings: Vec<Coupling>) -> Result<Self, Error> {
        if couplings.len() != graph.edge_count() {
            return Err(Error::CouplingCountMismatch {
                edges: graph.edge_count(),
                couplings: couplings.len(),
            });
        }
        for (j, c) in couplings.iter().enumerate() {
            c.validate(graph.dimension())
                .map_err(|reason| Error::InvalidCoupling { edge: j, reason })?;
        }
        let incidence = graph.incidence();
        Ok(Network {
            graph,
            incidence,
            couplings,
        })
    }

    pub fn graph(&self) -> &ConstraintGraph {
        &self.graph
    }

    pub fn incidence(&self) -> &IncidenceMatrix {
        &self.incidence
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn dimension(&self) -> usize {
        self.graph.dimension()
    }

    pub fn agent_count(&self) -> usize {
        self.graph.vertex_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// Stacked position (or momentum) length: dimension times agents.
    pub fn agent_dof(&self) -> usize {
        self.dimension() * self.agent_count()
    }

    /// Stacked relative-position length: dimension times edges.
    pub fn edge_dof(&self) -> usize {
        self.dimension() * self.edge_count()
    }

    /// Build a consistent state from stacked positions and momenta.
    pub fn state(&self, q: DVector<f64>, p: DVector<f64>) -> Result<NetworkState, Error> {
        if q.len() != self.agent_dof() {
            return Err(Error::DimensionMismatch {
                what: "stacked positions",
                expected: self.agent_dof(),
                actual: q.len(),
            });
        }
        if p.len() != self.agent_dof() {
            return Err(Error::DimensionMismatch {
                what: "stacked momenta",
                expected: self.agent_dof(),
                actual: p.len(),
            });
        }
        let z = self.incidence.relative_distances(&q)?;
        Ok(NetworkState { q, p, z })
    }

    /// Build a state from the stacked decision variable (q; qdot).
    pub fn state_from_collective(&self, x: &DVector<f64>) -> Result<NetworkState, Error> {
        let dof = self.agent_dof();
        if x.len() != 2 * dof {
            return Err(Error::DimensionMismatch {
                what: "collective state",
                expected: 2 * dof,
                actual: x.len(),
            });
        }
        let q = DVector::from_column_slice(&x.as_slice()[..dof]);
        let p = DVector::from_column_slice(&x.as_slice()[dof..]);
        self.state(q, p)
    }

    /// Distance between an edge's endpoints in a stacked position slice.
    pub fn separation(&self, q: &[f64], edge: usize) -> f64 {
        let n = self.dimension();
        let e = self.graph.edges()[edge];
        let (a, b) = (e.tail * n, e.head * n);
        let mut acc = 0.0;
        for c in 0..n {
            let d = q[b + c] - q[a + c];
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Separation per edge.
    pub fn separations(&self, state: &NetworkState) -> Vec<f64> {
        (0..self.edge_count())
            .map(|j| self.separation(state.q.as_slice(), j))
            .collect()
    }

    fn energy_slices(&self, q: &[f64], p: &[f64]) -> Result<f64, EdgeFailure> {
        let mut h = 0.0;
        for v in p {
            h += 0.5 * v * v;
        }
        for j in 0..self.edge_count() {
            let s = self.separation(q, j);
            h += self.couplings[j]
                .spring
                .potential_at(s)
                .map_err(|e| (j, e))?;
        }
        Ok(h)
    }

    /// Total energy: kinetic plus every spring potential.
    pub fn hamiltonian(&self, state: &NetworkState) -> Result<f64, Error> {
        self.energy_slices(state.q.as_slice(), state.p.as_slice())
            .map_err(spring_error)
    }

    /// Gradient blocks (dH/dz, dH/dp).
    pub fn hamiltonian_gradient(&self, state: &NetworkState) -> Result<HamiltonianGradient, Error> {
        let n = self.dimension();
        let mut gz = DVector::zeros(self.edge_dof());
        for j in 0..self.edge_count() {
            let s = self.separation(state.q.as_slice(), j);
            let coef = self.couplings[j]
                .spring
                .gradient_coefficient(s)
                .map_err(|e| spring_error((j, e)))?;
            for c in 0..n {
                gz[j * n + c] = coef * state.z[j * n + c];
            }
        }
        Ok(HamiltonianGradient {
            z: gz,
            p: state.p.clone(),
        })
    }

    // out := -Bbar^T (dH/dz + damped * D Bbar p), accumulated edge-locally.
    fn force_aggregate(
        &self,
        q: &[f64],
        p: Option<&[f64]>,
        out: &mut DVector<f64>,
        w: &mut [f64],
        f: &mut [f64],
    ) -> Result<(), EdgeFailure> {
        let n = self.dimension();
        out.fill(0.0);
        let out = out.as_mut_slice();
        for (j, coupling) in self.couplings.iter().enumerate() {
            let e = self.graph.edges()[j];
            let (a, b) = (e.tail * n, e.head * n);
            let s = self.separation(q, j);
            let coef = coupling
                .spring
                .gradient_coefficient(s)
                .map_err(|er| (j, er))?;
            for c in 0..n {
                f[c] = coef * (q[b + c] - q[a + c]);
            }
            if let Some(p) = p {
                for c in 0..n {
                    w[c] = p[b + c] - p[a + c];
                }
                coupling.damping.accumulate(w, f);
            }
            // u = -Bbar^T f: the tail entry of Bbar^T is -1, the head +1
            for c in 0..n {
                out[a + c] += f[c];
                out[b + c] -= f[c];
            }
        }
        Ok(())
    }

    // out := Bbar^T dH/dz (net spring force residual per agent).
    fn spring_residual(&self, q: &[f64], out: &mut DVector<f64>) -> Result<(), EdgeFailure> {
        let n = self.dimension();
        out.fill(0.0);
        let out = out.as_mut_slice();
        for (j, coupling) in self.couplings.iter().enumerate() {
            let e = self.graph.edges()[j];
            let (a, b) = (e.tail * n, e.head * n);
            let s = self.separation(q, j);
            let coef = coupling
                .spring
                .gradient_coefficient(s)
                .map_err(|er| (j, er))?;
            for c in 0..n {
                let g = coef * (q[b + c] - q[a + c]);
                out[a + c] -= g;
                out[b + c] += g;
            }
        }
        Ok(())
    }

    /// Coupling control input u = -Bbar^T (D Bbar p + dH/dz), aggregated
    /// edge by edge: each agent only needs its incident edges.
    pub fn control_law(&self, state: &NetworkState) -> Result<DVector<f64>, Error> {
        let mut u = DVector::zeros(self.agent_dof());
        let mut w = vec![0.0; self.dimension()];
        let mut f = vec![0.0; self.dimension()];
        self.force_aggregate(
            state.q.as_slice(),
            Some(state.p.as_slice()),
            &mut u,
            &mut w,
            &mut f,
        )
        .map_err(spring_error)?;
        Ok(u)
    }

    /// Same control input assembled from the dense incidence and damping
    /// matrices; the edge-local path must agree with this to rounding.
    pub fn control_law_assembled(&self, state: &NetworkState) -> Result<DVector<f64>, Error> {
        let grad = self.hamiltonian_gradient(state)?;
        let bbar = self.incidence.expanded();
        let damping = self.damping_block_diagonal();
        let w = bbar * &state.p;
        Ok(-(bbar.transpose() * (damping * w + grad.z)))
    }

    /// Block-diagonal damper matrix over the stacked edge coordinates.
    pub fn damping_block_diagonal(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut d = DMatrix::zeros(self.edge_dof(), self.edge_dof());
        for (j, coupling) in self.couplings.iter().enumerate() {
            d.view_mut((j * n, j * n), (n, n))
                .copy_from(&coupling.damping.matrix(n));
        }
        d
    }

    /// Coefficient matrix K of the collective gradient flow
    /// (z; p)' = -K (dH/dz; dH/dp). Its symmetric part is block-diagonal
    /// positive semidefinite, which is the energy-decay statement.
    pub fn gradient_flow_matrix(&self) -> DMatrix<f64> {
        let (ne, na) = (self.edge_dof(), self.agent_dof());
        let bbar = self.incidence.expanded();
        let mut k = DMatrix::zeros(ne + na, ne + na);
        k.view_mut((0, ne), (ne, na)).copy_from(&(-bbar));
        k.view_mut((ne, 0), (na, ne)).copy_from(&bbar.transpose());
        k.view_mut((ne, ne), (na, na))
            .copy_from(&(bbar.transpose() * self.damping_block_diagonal() * bbar));
        k
    }

    /// Energy decay rate -(Bbar p)^T D (Bbar p), accumulated per edge so the
    /// scalar-damper case is a sum of exact nonnegatives.
    pub fn dissipation_rate(&self, state: &NetworkState) -> f64 {
        let n = self.dimension();
        let p = state.p.as_slice();
        let mut w = vec![0.0; n];
        let mut dw = vec![0.0; n];
        let mut total = 0.0;
        for (j, coupling) in self.couplings.iter().enumerate() {
            let e = self.graph.edges()[j];
            let (a, b) = (e.tail * n, e.head * n);
            for c in 0..n {
                w[c] = p[b + c] - p[a + c];
                dw[c] = 0.0;
            }
            coupling.damping.accumulate(&w, &mut dw);
            for c in 0..n {
                total += w[c] * dw[c];
            }
        }
        -total
    }

    /// Dynamics with an external input: z' = Bbar dH/dp, p' = u, y = dH/dp.
    /// No spring force acts here; the couplings only enter through the
    /// control law.
    pub fn open_loop_rhs(
        &self,
        state: &NetworkState,
        input: &DVector<f64>,
    ) -> Result<StateDerivative, Error> {
        if input.len() != self.agent_dof() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.agent_dof(),
                actual: input.len(),
            });
        }
        Ok(StateDerivative {
            q_dot: state.p.clone(),
            p_dot: input.clone(),
            z_dot: self.incidence.expanded() * &state.p,
        })
    }

    /// Closed loop: the open loop driven by the coupling control law.
    pub fn closed_loop_rhs(&self, state: &NetworkState) -> Result<StateDerivative, Error> {
        let u = self.control_law(state)?;
        Ok(StateDerivative {
            q_dot: state.p.clone(),
            p_dot: u,
            z_dot: self.incidence.expanded() * &state.p,
        })
    }

    /// Threshold the momentum and net-spring-force residuals.
    pub fn detect_equilibrium(
        &self,
        state: &NetworkState,
        momentum_tolerance: f64,
        force_tolerance: f64,
    ) -> Result<EquilibriumCheck, Error> {
        let mut residual = DVector::zeros(self.agent_dof());
        self.spring_residual(state.q.as_slice(), &mut residual)
            .map_err(spring_error)?;
        let momentum = state.p.amax();
        let force = residual.amax();
        Ok(EquilibriumCheck {
            converged: momentum <= momentum_tolerance && force <= force_tolerance,
            momentum_residual: momentum,
            force_residual: force,
        })
    }

    /// Initial-condition admission: every separation within its feasible
    /// radius, no coincident endpoints under a positive rest length.
    pub fn check_feasible_start(&self, state: &NetworkState) -> Result<(), Error> {
        for (j, coupling) in self.couplings.iter().enumerate() {
            let s = self.separation(state.q.as_slice(), j);
            if s == 0.0 && coupling.spring.rest_length > 0.0 {
                return Err(spring_error((
                    j,
                    SpringError::Singular {
                        rest_length: coupling.spring.rest_length,
                    },
                )));
            }
            if s > coupling.spring.feasible_radius {
                return Err(Error::InfeasibleStart {
                    edge: j,
                    distance: s,
                    radius: coupling.spring.feasible_radius,
                });
            }
        }
        Ok(())
    }

    fn make_sample(
        &self,
        t: f64,
        q: &DVector<f64>,
        p: &DVector<f64>,
        h: f64,
    ) -> Result<Sample, Error> {
        let state = self.state(q.clone(), p.clone())?;
        let separations = self.separations(&state);
        let control = self.control_law(&state)?;
        Ok(Sample {
            t,
            state,
            hamiltonian: h,
            separations,
            control,
        })
    }

    fn rk4_step(
        &self,
        q: &DVector<f64>,
        p: &DVector<f64>,
        dt: f64,
        b: &mut StepBuffers,
    ) -> Result<f64, EdgeFailure> {
        let half = 0.5 * dt;

        self.force_aggregate(
            q.as_slice(),
            Some(p.as_slice()),
            &mut b.k1,
            &mut b.w,
            &mut b.f,
        )?;

        b.qt.copy_from(q);
        b.qt.axpy(half, p, 1.0);
        b.ps2.copy_from(p);
        b.ps2.axpy(half, &b.k1, 1.0);
        self.force_aggregate(
            b.qt.as_slice(),
            Some(b.ps2.as_slice()),
            &mut b.k2,
            &mut b.w,
            &mut b.f,
        )?;

        b.qt.copy_from(q);
        b.qt.axpy(half, &b.ps2, 1.0);
        b.ps3.copy_from(p);
        b.ps3.axpy(half, &b.k2, 1.0);
        self.force_aggregate(
            b.qt.as_slice(),
            Some(b.ps3.as_slice()),
            &mut b.k3,
            &mut b.w,
            &mut b.f,
        )?;

        b.qt.copy_from(q);
        b.qt.axpy(dt, &b.ps3, 1.0);
        b.ps4.copy_from(p);
        b.ps4.axpy(dt, &b.k3, 1.0);
        self.force_aggregate(
            b.qt.as_slice(),
            Some(b.ps4.as_slice()),
            &mut b.k4,
            &mut b.w,
            &mut b.f,
        )?;

        let sixth = dt / 6.0;
        b.q_new.copy_from(q);
        b.q_new.axpy(sixth, p, 1.0);
        b.q_new.axpy(2.0 * sixth, &b.ps2, 1.0);
        b.q_new.axpy(2.0 * sixth, &b.ps3, 1.0);
        b.q_new.axpy(sixth, &b.ps4, 1.0);

        b.p_new.copy_from(p);
        b.p_new.axpy(sixth, &b.k1, 1.0);
        b.p_new.axpy(2.0 * sixth, &b.k2, 1.0);
        b.p_new.axpy(2.0 * sixth, &b.k3, 1.0);
        b.p_new.axpy(sixth, &b.k4, 1.0);

        // the end state must itself be in domain for the step to stand
        self.energy_slices(b.q_new.as_slice(), b.p_new.as_slice())
    }

    /// Integrate the closed loop from a feasible initial state.
    ///
    /// Converges when both residuals drop below their tolerances at a sample,
    /// stops at t_max otherwise; a step that cannot stay inside the barrier
    /// domain even at min_dt ends the run as a domain violation, and an
    /// exactly singular configuration aborts immediately. The partial
    /// trajectory is returned in every case.
    pub fn simulate(
        &self,
        initial: &NetworkState,
        config: &SimulationConfig,
    ) -> Result<Trajectory, Error> {
        config
            .validate()
            .map_err(|reason| Error::InvalidConfig { reason })?;
        if initial.q.len() != self.agent_dof() {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: self.agent_dof(),
                actual: initial.q.len(),
            });
        }
        self.check_feasible_start(initial)?;

        let mut q = initial.q.clone();
        let mut p = initial.p.clone();
        let mut bufs = StepBuffers::new(self.agent_dof(), self.dimension());

        let mut h = self
            .energy_slices(q.as_slice(), p.as_slice())
            .map_err(spring_error)?;
        let mut samples = vec![self.make_sample(0.0, &q, &p, h)?];

        let mut t = 0.0;
        let mut dt = config.dt;
        let mut steps = 0usize;
        let mut rejected = 0usize;
        let mut max_increase = 0.0f64;
        let mut sample_index = 1usize;

        let termination = loop {
            let remaining = config.t_max - t;
            if remaining < 1e-12 {
                break Termination::TMaxReached;
            }
            let step_dt = dt.min(remaining);
            match self.rk4_step(&q, &p, step_dt, &mut bufs) {
                Ok(h_new) => {
                    let delta = h_new - h;
                    if config.energy_guard
                        && delta > config.energy_tolerance
                        && step_dt == dt
                        && dt * 0.5 >= config.min_dt
                    {
                        dt *= 0.5;
                        rejected += 1;
                        continue;
                    }
                    std::mem::swap(&mut q, &mut bufs.q_new);
                    std::mem::swap(&mut p, &mut bufs.p_new);
                    t += step_dt;
                    steps += 1;
                    h = h_new;
                    if delta > max_increase {
                        max_increase = delta;
                    }
                    dt = (dt * 2.0).min(config.dt);

                    let next_sample_t = sample_index as f64 * config.output_interval;
                    if t + 0.5 * step_dt >= next_sample_t {
                        sample_index += 1;
                        match self.make_sample(t, &q, &p, h) {
                            Ok(s) => samples.push(s),
                            Err(Error::Spring {
                                edge,
                                source: SpringError::Singular { .. },
                            }) => break Termination::SingularConfiguration { edge },
                            Err(e) => return Err(e),
                        }
                        let check = match self.detect_equilibrium(
                            &samples.last().unwrap().state,
                            config.momentum_tolerance,
                            config.force_tolerance,
                        ) {
                            Ok(c) => c,
                            Err(Error::Spring {
                                edge,
                                source: SpringError::Singular { .. },
                            }) => break Termination::SingularConfiguration { edge },
                            Err(e) => return Err(e),
                        };
                        if check.converged {
                            break Termination::Converged;
                        }
                    }
                }
                Err((edge, SpringError::BeyondCritical { .. })) => {
                    rejected += 1;
                    if dt * 0.5 < config.min_dt {
                        break Termination::DomainViolation { edge };
                    }
                    dt *= 0.5;
                }
                Err((edge, SpringError::Singular { .. })) => {
                    break Termination::SingularConfiguration { edge }
                }
            }
        };

        if t > samples.last().map(|s| s.t).unwrap_or(0.0) {
            if let Ok(s) = self.make_sample(t, &q, &p, h) {
                samples.push(s);
            }
        }

        Ok(Trajectory {
            samples,
            termination,
            steps,
            rejected_steps: rejected,
            max_energy_step_increase: max_increase,
        })
    }
}
