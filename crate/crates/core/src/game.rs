//! The decision view of a network: per-agent objectives over position and
//! velocity, the shared potential they all descend, pseudo-gradients, and
//! equilibrium certification over compact box constraints.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::{SpringLaw, DOMAIN_GUARD};
use crate::dynamics::{Network, NetworkState};
use crate::error::Error;
use crate::verify::sample_collective_where;

/// Deviation mismatch allowed by the exact-potential checker, relative to
/// max(1, |potential difference|).
pub const EXACT_POTENTIAL_TOL: f64 = 1e-9;

/// Componentwise box bounds over the stacked decision variable (q; qdot).
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl DecisionBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, Error> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidBounds {
                reason: format!("bound lengths differ: {} vs {}", lower.len(), upper.len()),
            });
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::InvalidBounds {
                    reason: "bounds must be finite".into(),
                });
            }
            if lower[i] >= upper[i] {
                return Err(Error::InvalidBounds {
                    reason: format!(
                        "component {i}: lower {} not below upper {}",
                        lower[i], upper[i]
                    ),
                });
            }
        }
        Ok(DecisionBounds { lower, upper })
    }

    /// Default box: comfortably contains everything reachable from the given
    /// start. The center of mass is preserved by the pairwise forces and the
    /// total energy never rises, so each separation stays within the reach its
    /// spring allows at energy H(0), each position within (agents - 1) reaches
    /// of the initial center of mass, and each velocity within sqrt(2 H(0)).
    pub fn from_initial_state(network: &Network, initial: &NetworkState) -> Result<Self, Error> {
        let h0 = network.hamiltonian(initial)?;
        let n = network.dimension();
        let agents = network.agent_count();
        let dof = n * agents;
        let q = initial.positions();

        let mut center = vec![0.0; n];
        for i in 0..agents {
            for c in 0..n {
                center[c] += q[i * n + c];
            }
        }
        for c in &mut center {
            *c /= agents as f64;
        }

        let mut reach = 0.0f64;
        for coupling in network.couplings() {
            let spring = &coupling.spring;
            let r = match spring.law {
                SpringLaw::Constant { stiffness } => {
                    spring.rest_length + (2.0 * h0.max(0.0) / stiffness).sqrt()
                }
                SpringLaw::Barrier { .. } => spring.critical_distance,
            };
            reach = reach.max(r);
        }
        let half = (agents as f64 - 1.0) * reach + 1.0;
        let vmax = (2.0 * h0.max(0.0)).sqrt() + 1.0;

        let mut lower = DVector::zeros(2 * dof);
        let mut upper = DVector::zeros(2 * dof);
        for i in 0..agents {
            for c in 0..n {
                lower[i * n + c] = center[c] - half;
                upper[i * n + c] = center[c] + half;
                lower[dof + i * n + c] = -vmax;
                upper[dof + i * n + c] = vmax;
            }
        }
        DecisionBounds::new(lower, upper)
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.len() == 0
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.lower.len()
            && (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    /// Smallest componentwise distance to a bound; positive exactly for
    /// strictly interior points.
    pub fn interior_margin(&self, x: &DVector<f64>) -> f64 {
        (0..x.len())
            .map(|i| (x[i] - self.lower[i]).min(self.upper[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Result of the randomized exact-potential identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialCheck {
    pub samples: usize,
    /// max over samples of |dJ_i - dP| / max(1, |dP|).
    pub worst_deviation: f64,
    pub worst_player: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Certification outcome at a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    /// Infinity norm of the stacked per-player objective gradients.
    pub pseudo_gradient_norm: f64,
    /// Infinity norm of the velocity half of the decision variable.
    pub momentum_norm: f64,
    pub potential_value: f64,
    /// Small pseudo-gradient at a strictly interior point.
    pub is_variational_equilibrium: bool,
    /// Small pseudo-gradient on (or outside) the box: indeterminate, the
    /// unconstrained first-order test says nothing there.
    pub boundary_active: bool,
    pub per_player_gradient_norms: Vec<f64>,
}

/// A network read as a game: player i controls (q_i, qdot_i) inside its slice
/// of the box, pays its kinetic energy plus the potentials of its incident
/// springs, and the network Hamiltonian is the shared potential.
#[derive(Debug, Clone)]
pub struct PotentialGame<'a> {
    network: &'a Network,
    bounds: DecisionBounds,
}

impl<'a> PotentialGame<'a> {
    pub fn new(network: &'a Network, bounds: DecisionBounds) -> Result<Self, Error> {
        let expected = 2 * network.dimension() * network.agent_count();
        if bounds.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "decision bounds",
                expected,
                actual: bounds.len(),
            });
        }
        Ok(PotentialGame { network, bounds })
    }

    pub fn with_default_bounds(
        network: &'a Network,
        initial: &NetworkState,
    ) -> Result<Self, Error> {
        let bounds = DecisionBounds::from_initial_state(network, initial)?;
        PotentialGame::new(network, bounds)
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn bounds(&self) -> &DecisionBounds {
        &self.bounds
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<(), Error> {
        let expected = self.bounds.len();
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "collective state",
                expected,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn dof(&self) -> usize {
        self.network.dimension() * self.network.agent_count()
    }

    fn edge_separation(&self, x: &DVector<f64>, edge: usize) -> f64 {
        let n = self.network.dimension();
        let e = self.network.graph().edges()[edge];
        let mut acc = 0.0;
        for c in 0..n {
            let d = x[e.head * n + c] - x[e.tail * n + c];
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Kinetic and coupling parts of player i's objective.
    pub fn local_objective_split(
        &self,
        player: usize,
        x: &DVector<f64>,
    ) -> Result<(f64, f64), Error> {
        self.check_x(x)?;
        let n = self.network.dimension();
        let agents = self.network.agent_count();
        if player >= agents {
            return Err(Error::PlayerOutOfRange {
                player,
                player_count: agents,
            });
        }
        let dof = self.dof();
        let mut kinetic = 0.0;
        for c in 0..n {
            let v = x[dof + player * n + c];
            kinetic += 0.5 * v * v;
        }
        let mut springs = 0.0;
        for (j, e) in self.network.graph().edges().iter().enumerate() {
            if e.tail != player && e.head != player {
                continue;
            }
            let s = self.edge_separation(x, j);
            springs += self.network.couplings()[j]
                .spring
                .potential_at(s)
                .map_err(|source| Error::Spring { edge: j, source })?;
        }
        Ok((kinetic, springs))
    }

    /// Player i's cost: its kinetic energy plus every incident spring
    /// potential.
    pub fn local_objective(&self, player: usize, x: &DVector<f64>) -> Result<f64, Error> {
        let (kinetic, springs) = self.local_objective_split(player, x)?;
        Ok(kinetic + springs)
    }

    /// The shared potential: the network Hamiltonian through the state map.
    pub fn potential(&self, x: &DVector<f64>) -> Result<f64, Error> {
        let state = self.network.state_from_collective(x)?;
        self.network.hamiltonian(&state)
    }

    /// The potential reassembled player by player, each edge attributed to
    /// its higher-indexed endpoint so nothing is counted twice. Agrees with
    /// `potential` to rounding; kept as an independent assembly of the same
    /// function.
    pub fn potential_by_player(&self, x: &DVector<f64>) -> Result<f64, Error> {
        self.check_x(x)?;
        let n = self.network.dimension();
        let dof = self.dof();
        let mut total = 0.0;
        for i in 0..self.network.agent_count() {
            for c in 0..n {
                let v = x[dof + i * n + c];
                total += 0.5 * v * v;
            }
            for (j, e) in self.network.graph().edges().iter().enumerate() {
                let other = if e.tail == i {
                    e.head
                } else if e.head == i {
                    e.tail
                } else {
                    continue;
                };
                if other < i {
                    let s = self.edge_separation(x, j);
                    total += self.network.couplings()[j]
                        .spring
                        .potential_at(s)
                        .map_err(|source| Error::Spring { edge: j, source })?;
                }
            }
        }
        Ok(total)
    }

    /// Stacked per-player objective gradients: position blocks first, then
    /// velocity blocks, matching the (q; qdot) layout.
    pub fn pseudo_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.check_x(x)?;
        let n = self.network.dimension();
        let dof = self.dof();
        let mut f = DVector::zeros(2 * dof);
        for (j, e) in self.network.graph().edges().iter().enumerate() {
            let s = self.edge_separation(x, j);
            let coef = self.network.couplings()[j]
                .spring
                .gradient_coefficient(s)
                .map_err(|source| Error::Spring { edge: j, source })?;
            let (a, b) = (e.tail * n, e.head * n);
            for c in 0..n {
                let g = coef * (x[b + c] - x[a + c]);
                // d/dq_i of h(q_head - q_tail): -g at the tail, +g at the head
                f[a + c] -= g;
                f[b + c] += g;
            }
        }
        for i in 0..dof {
            f[dof + i] = x[dof + i];
        }
        Ok(f)
    }

    /// The same stacked gradient produced through the energy side:
    /// blockdiag(Bbar^T, I) times the Hamiltonian gradient at the mapped
    /// state.
    pub fn pseudo_gradient_factored(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        let state = self.network.state_from_collective(x)?;
        let grad = self.network.hamiltonian_gradient(&state)?;
        let dof = self.dof();
        let mut f = DVector::zeros(2 * dof);
        let position = self.network.incidence().expanded().transpose() * grad.z;
        f.rows_mut(0, dof).copy_from(&position);
        f.rows_mut(dof, dof).copy_from(&grad.p);
        Ok(f)
    }

    /// Draw unilateral deviations and measure how far the objective change
    /// strays from the potential change. The identity is exact, so any
    /// deviation beyond rounding fails the check.
    pub fn check_exact_potential(
        &self,
        samples: usize,
        seed: u64,
    ) -> Result<PotentialCheck, Error> {
        self.check_exact_potential_with(
            |game, player, x| game.local_objective(player, x),
            samples,
            seed,
        )
    }

    /// Same sampling loop with a caller-supplied objective, so a deliberately
    /// broken objective can demonstrate the check has teeth.
    pub fn check_exact_potential_with<F>(
        &self,
        objective: F,
        samples: usize,
        seed: u64,
    ) -> Result<PotentialCheck, Error>
    where
        F: Fn(&PotentialGame, usize, &DVector<f64>) -> Result<f64, Error>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = self.network.agent_count();
        let network = self.network;
        let in_domain = |j: usize, s: f64| {
            let spring = &network.couplings()[j].spring;
            s < spring.critical_distance - DOMAIN_GUARD && (s > 0.0 || spring.rest_length == 0.0)
        };
        let mut worst = 0.0f64;
        let mut worst_player = 0usize;
        for _ in 0..samples {
            let x = sample_collective_where(
                self.network,
                &self.bounds,
                &mut rng,
                &in_domain,
                1.0,
                1000,
            )?;
            let player = rng.gen_range(0..agents);
            let deviated = self.sample_deviation(&x, player, &mut rng)?;
            let dj = objective(self, player, &x)? - objective(self, player, &deviated)?;
            let dp = self.potential(&x)? - self.potential(&deviated)?;
            let deviation = (dj - dp).abs() / dp.abs().max(1.0);
            if deviation > worst {
                worst = deviation;
                worst_player = player;
            }
        }
        Ok(PotentialCheck {
            samples,
            worst_deviation: worst,
            worst_player,
            tolerance: EXACT_POTENTIAL_TOL,
            passed: worst <= EXACT_POTENTIAL_TOL,
        })
    }

    // Uniform draw of one player's slice inside the box, rejected until the
    // player's incident springs stay inside their domains.
    fn sample_deviation<R: Rng>(
        &self,
        x: &DVector<f64>,
        player: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>, Error> {
        let n = self.network.dimension();
        let dof = self.dof();
        let mut candidate = x.clone();
        'attempt: for _ in 0..10_000 {
            for c in 0..n {
                let (idx_q, idx_v) = (player * n + c, dof + player * n + c);
                candidate[idx_q] =
                    rng.gen_range(self.bounds.lower[idx_q]..self.bounds.upper[idx_q]);
                candidate[idx_v] =
                    rng.gen_range(self.bounds.lower[idx_v]..self.bounds.upper[idx_v]);
            }
            for (j, e) in self.network.graph().edges().iter().enumerate() {
                if e.tail != player && e.head != player {
                    continue;
                }
                let s = self.edge_separation(&candidate, j);
                let spring = &self.network.couplings()[j].spring;
                let out_of_domain = s >= spring.critical_distance - DOMAIN_GUARD
                    || (s == 0.0 && spring.rest_length > 0.0);
                if out_of_domain {
                    continue 'attempt;
                }
            }
            return Ok(candidate);
        }
        Err(Error::Sampling {
            reason: format!(
                "no feasible unilateral deviation for player {player} after 10000 draws"
            ),
        })
    }

    /// First-order test at a candidate point: a small stacked gradient at a
    /// strictly interior point certifies the variational condition over the
    /// box; on the boundary the test is indeterminate and only flagged.
    pub fn certify_equilibrium(
        &self,
        x: &DVector<f64>,
        tolerance: f64,
    ) -> Result<EquilibriumReport, Error> {
        let f = self.pseudo_gradient(x)?;
        let n = self.network.dimension();
        let dof = self.dof();
        let agents = self.network.agent_count();
        let mut per_player = Vec::with_capacity(agents);
        for i in 0..agents {
            let mut m = 0.0f64;
            for c in 0..n {
                m = m.max(f[i * n + c].abs()).max(f[dof + i * n + c].abs());
            }
            per_player.push(m);
        }
        let norm = f.amax();
        let momentum = x.rows(dof, dof).amax();
        let interior = self.bounds.interior_margin(x) > 0.0;
        let small = norm <= tolerance;
        Ok(EquilibriumReport {
            pseudo_gradient_norm: norm,
            momentum_norm: momentum,
            potential_value: self.potential(x)?,
            is_variational_equilibrium: small && interior,
            boundary_active: small && !interior,
            per_player_gradient_norms: per_player,
        })
    }
}
