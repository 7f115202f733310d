//! Runtime self-checks: randomized feasible-state samplers, central
//! finite-difference probes of every analytic gradient, and a supply-rate
//! experiment on the undriven dynamics. These run against the same code paths
//! the simulator uses, so a passing suite means the algebra in `coupling`,
//! `dynamics`, and `game` agrees with the functions it claims to
//! differentiate.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::SpringLaw;
use crate::dynamics::{Network, NetworkState};
use crate::error::Error;
use crate::game::{DecisionBounds, PotentialGame};

/// Relative error allowed between analytic gradients and second-order central
/// differences, measured as |fd - g| / max(1, |g|).
pub const FD_TOLERANCE: f64 = 1e-6;

/// Default central-difference step for the runtime gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Sampling keeps separations this far below any finite critical distance.
/// Near the pole the third derivative grows like the inverse fourth power of
/// the gap, so a fixed 1e-6 step needs this much clearance to keep the
/// truncation error under `FD_TOLERANCE`.
pub const FD_POLE_BAND: f64 = 2e-3;

/// Sampling keeps separations this far from the coincident configuration.
/// Curvature of the radial composition grows like 1/s^2, and at 5e-3 the
/// truncation error of a 1e-6 step is still two orders under tolerance.
pub const FD_ORIGIN_BAND: f64 = 5e-3;

/// Sampling keeps separations this far from a rest length where the law
/// switches branches; the value is only C^1 there.
pub const FD_SEAM_BAND: f64 = 1e-3;

/// Slack allowed in the integrated supply-rate inequality, absorbing
/// quadrature error over the horizon.
pub const PASSIVITY_TOL: f64 = 1e-6;

/// Outcome of one randomized gradient suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub samples: usize,
    pub worst_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Outcome of the driven supply-rate experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PassivityCheck {
    pub signals: usize,
    /// max over signals and sample times of stored-energy gain minus
    /// integrated supply; passivity demands this stay nonpositive.
    pub worst_excess: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Second-order central difference of a scalar function, one coordinate at a
/// time.
pub fn central_difference<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DVector<f64>, Error>
where
    F: Fn(&DVector<f64>) -> Result<f64, Error>,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

fn relative_error(fd: &DVector<f64>, analytic: &DVector<f64>) -> f64 {
    (fd - analytic).norm() / analytic.norm().max(1.0)
}

/// Place agents one by one near the centroid of their already-placed
/// neighbors, jittered at the scale of the connecting springs' comfortable
/// lengths, and reject the whole draw unless `accept(edge, separation)` holds
/// for every edge. Positions are n stacked coordinates per agent around
/// `center`.
pub fn sample_positions_where<R, F>(
    network: &Network,
    center: &[f64],
    rng: &mut R,
    accept: &F,
    max_tries: usize,
) -> Result<DVector<f64>, Error>
where
    R: Rng,
    F: Fn(usize, f64) -> bool,
{
    let n = network.dimension();
    if center.len() != n {
        return Err(Error::DimensionMismatch {
            what: "placement center",
            expected: n,
            actual: center.len(),
        });
    }
    let agents = network.agent_count();
    let edges = network.graph().edges();

    // Jitter scale a spring is comfortable at: near rest, clear of both the
    // coincident point and any pole.
    let comfortable: Vec<f64> = network
        .couplings()
        .iter()
        .map(|c| {
            let spring = &c.spring;
            if spring.critical_distance.is_finite() {
                spring.rest_length.clamp(
                    0.1 * spring.critical_distance,
                    0.8 * spring.critical_distance,
                )
            } else {
                spring.rest_length.max(0.1)
            }
        })
        .collect();

    let mut q = DVector::zeros(n * agents);
    for _ in 0..max_tries {
        for i in 0..agents {
            let mut anchor = vec![0.0; n];
            let mut scale = f64::INFINITY;
            let mut placed_neighbors = 0usize;
            for (j, e) in edges.iter().enumerate() {
                let other = if e.tail == i {
                    e.head
                } else if e.head == i {
                    e.tail
                } else {
                    continue;
                };
                if other < i {
                    for c in 0..n {
                        anchor[c] += q[other * n + c];
                    }
                    placed_neighbors += 1;
                    scale = scale.min(comfortable[j]);
                }
            }
            if placed_neighbors == 0 {
                anchor.copy_from_slice(center);
                scale = 0.5;
            } else {
                for a in &mut anchor {
                    *a /= placed_neighbors as f64;
                }
                scale *= 0.45;
            }
            for c in 0..n {
                q[i * n + c] = anchor[c] + rng.gen_range(-scale..scale);
            }
        }
        let ok = edges
            .iter()
            .enumerate()
            .all(|(j, _)| accept(j, network.separation(q.as_slice(), j)));
        if ok {
            return Ok(q);
        }
    }
    Err(Error::Sampling {
        reason: format!("no acceptable placement after {max_tries} draws"),
    })
}

/// Positions as above around the box center, velocities uniform per component
/// within the box capped at `velocity_cap`, the whole draw checked against
/// the box.
pub fn sample_collective_where<R, F>(
    network: &Network,
    bounds: &DecisionBounds,
    rng: &mut R,
    accept: &F,
    velocity_cap: f64,
    max_tries: usize,
) -> Result<DVector<f64>, Error>
where
    R: Rng,
    F: Fn(usize, f64) -> bool,
{
    let n = network.dimension();
    let agents = network.agent_count();
    let dof = n * agents;
    // Box midpoints of the first agent's position block; every agent gets
    // the same box in the default construction.
    let center: Vec<f64> = (0..n)
        .map(|c| 0.5 * (bounds.lower()[c] + bounds.upper()[c]))
        .collect();
    for _ in 0..max_tries {
        let q = sample_positions_where(network, &center, rng, accept, max_tries)?;
        let mut x = DVector::zeros(2 * dof);
        x.rows_mut(0, dof).copy_from(&q);
        for i in 0..dof {
            let lo = bounds.lower()[dof + i].max(-velocity_cap);
            let hi = bounds.upper()[dof + i].min(velocity_cap);
            x[dof + i] = rng.gen_range(lo..hi);
        }
        if bounds.contains(&x) {
            return Ok(x);
        }
    }
    Err(Error::Sampling {
        reason: format!("no in-box collective draw after {max_tries} tries"),
    })
}

// Domain acceptance with the finite-difference clearance bands.
fn fd_band_accept(network: &Network) -> impl Fn(usize, f64) -> bool + '_ {
    move |edge, s| {
        let spring = &network.couplings()[edge].spring;
        if s < FD_ORIGIN_BAND {
            return false;
        }
        match spring.law {
            SpringLaw::Constant { .. } => true,
            SpringLaw::Barrier { .. } => {
                s <= spring.critical_distance - FD_POLE_BAND
                    && (s - spring.rest_length).abs() >= FD_SEAM_BAND
            }
        }
    }
}

/// Probe every spring's gradient against central differences of its
/// potential, at random edge vectors clear of the singular sets.
pub fn check_spring_gradients(
    network: &Network,
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = network.dimension();
    let accept = fd_band_accept(network);
    let mut worst = 0.0f64;
    for k in 0..samples {
        let edge = k % network.edge_count();
        let spring = &network.couplings()[edge].spring;
        let z = loop {
            let mut z = DVector::zeros(n);
            for c in 0..n {
                z[c] = rng.gen_range(-1.0..1.0);
            }
            let norm = z.norm();
            if norm < 1e-3 {
                continue;
            }
            let reach = if spring.critical_distance.is_finite() {
                spring.critical_distance
            } else {
                spring.rest_length + 2.0
            };
            let radius = rng.gen_range(0.0..reach);
            z *= radius / norm;
            if accept(edge, z.norm()) {
                break z;
            }
        };
        let analytic = spring
            .gradient(&z)
            .map_err(|source| Error::Spring { edge, source })?;
        let fd = central_difference(
            |p| {
                spring
                    .potential(p)
                    .map_err(|source| Error::Spring { edge, source })
            },
            &z,
            step,
        )?;
        worst = worst.max(relative_error(&fd, &analytic));
    }
    Ok(GradientCheck {
        samples,
        worst_relative_error: worst,
        tolerance: FD_TOLERANCE,
        passed: worst <= FD_TOLERANCE,
    })
}

/// Probe the assembled Hamiltonian gradient. The energy is a function of the
/// relative positions and the momenta, so the difference quotients perturb
/// those directly; the analytic side comes from the network.
pub fn check_hamiltonian_gradient(
    network: &Network,
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dof = network.agent_dof();
    let accept = fd_band_accept(network);
    let bounds_center = vec![0.0; network.dimension()];
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let q = sample_positions_where(network, &bounds_center, &mut rng, &accept, 10_000)?;
        let mut p = DVector::zeros(dof);
        for i in 0..dof {
            p[i] = rng.gen_range(-1.0..1.0);
        }
        let state = network.state(q.clone(), p.clone())?;
        let grad = network.hamiltonian_gradient(&state)?;

        let n = network.dimension();
        let springs_total = |z: &DVector<f64>| -> Result<f64, Error> {
            let mut total = 0.0;
            for (j, coupling) in network.couplings().iter().enumerate() {
                let slice = z.rows(j * n, n).into_owned();
                total += coupling
                    .spring
                    .potential(&slice)
                    .map_err(|source| Error::Spring { edge: j, source })?;
            }
            Ok(total)
        };
        let fd_z = central_difference(springs_total, state.relative_distances(), step)?;
        let fd_p = central_difference(|p: &DVector<f64>| Ok(0.5 * p.dot(p)), &p, step)?;
        let mut fd = DVector::zeros(fd_z.len() + fd_p.len());
        fd.rows_mut(0, fd_z.len()).copy_from(&fd_z);
        fd.rows_mut(fd_z.len(), fd_p.len()).copy_from(&fd_p);
        let mut analytic = DVector::zeros(fd.len());
        analytic.rows_mut(0, grad.z.len()).copy_from(&grad.z);
        analytic
            .rows_mut(grad.z.len(), grad.p.len())
            .copy_from(&grad.p);
        worst = worst.max(relative_error(&fd, &analytic));
    }
    Ok(GradientCheck {
        samples,
        worst_relative_error: worst,
        tolerance: FD_TOLERANCE,
        passed: worst <= FD_TOLERANCE,
    })
}

/// Probe the stacked per-player gradients: differentiate each player's own
/// objective along its own coordinates and compare block by block.
pub fn check_pseudo_gradient(
    game: &PotentialGame,
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = game.network();
    let n = network.dimension();
    let dof = network.agent_dof();
    let accept = fd_band_accept(network);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = sample_collective_where(network, game.bounds(), &mut rng, &accept, 1.0, 10_000)?;
        let analytic = game.pseudo_gradient(&x)?;
        let mut fd = DVector::zeros(2 * dof);
        let mut probe = x.clone();
        for i in 0..network.agent_count() {
            for c in 0..n {
                for idx in [i * n + c, dof + i * n + c] {
                    probe[idx] = x[idx] + step;
                    let plus = game.local_objective(i, &probe)?;
                    probe[idx] = x[idx] - step;
                    let minus = game.local_objective(i, &probe)?;
                    probe[idx] = x[idx];
                    fd[idx] = (plus - minus) / (2.0 * step);
                }
            }
        }
        worst = worst.max(relative_error(&fd, &analytic));
    }
    Ok(GradientCheck {
        samples,
        worst_relative_error: worst,
        tolerance: FD_TOLERANCE,
        passed: worst <= FD_TOLERANCE,
    })
}

// Smooth test input: per component, three harmonics with random amplitude,
// frequency, and phase.
struct Harmonics {
    // coefficient triples per input component
    coefficients: Vec<[(f64, f64, f64); 3]>,
}

impl Harmonics {
    fn draw<R: Rng>(dof: usize, rng: &mut R) -> Self {
        let coefficients = (0..dof)
            .map(|_| {
                [0; 3].map(|_| {
                    (
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(0.3..3.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
            })
            .collect();
        Harmonics { coefficients }
    }

    fn evaluate(&self, t: f64, out: &mut DVector<f64>) {
        for (i, triples) in self.coefficients.iter().enumerate() {
            out[i] = triples
                .iter()
                .map(|(a, w, phi)| a * (w * t + phi).sin())
                .sum();
        }
    }
}

/// Drive the undriven double integrators with random smooth inputs and check
/// the supply-rate inequality for the kinetic storage: the gain in 0.5|p|^2
/// never exceeds the integral of u.p. The supply integral rides along as an
/// extra state so both sides see the same quadrature.
pub fn check_passivity(
    network: &Network,
    initial: &NetworkState,
    signals: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<PassivityCheck, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dof = network.agent_dof();
    if initial.momenta().len() != dof {
        return Err(Error::DimensionMismatch {
            what: "initial momenta",
            expected: dof,
            actual: initial.momenta().len(),
        });
    }
    let steps = (horizon / dt).ceil() as usize;
    let v0 = 0.5 * initial.momenta().dot(initial.momenta());

    let mut worst = f64::NEG_INFINITY;
    let mut u = DVector::zeros(dof);
    for _ in 0..signals {
        let input = Harmonics::draw(dof, &mut rng);
        let mut p = initial.momenta().clone();
        let mut supply = 0.0f64;
        let mut t = 0.0f64;
        for _ in 0..steps {
            // One RK4 step of (p, s) with pdot = u(t), sdot = u(t).p.
            let mut k_p = [
                DVector::zeros(dof),
                DVector::zeros(dof),
                DVector::zeros(dof),
                DVector::zeros(dof),
            ];
            let mut k_s = [0.0f64; 4];
            let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
            for stage in 0..4 {
                input.evaluate(t + offsets[stage], &mut u);
                let p_stage = match stage {
                    0 => p.clone(),
                    1 => &p + 0.5 * dt * &k_p[0],
                    2 => &p + 0.5 * dt * &k_p[1],
                    _ => &p + dt * &k_p[2],
                };
                k_s[stage] = u.dot(&p_stage);
                k_p[stage] = u.clone();
            }
            p += dt / 6.0 * (&k_p[0] + 2.0 * &k_p[1] + 2.0 * &k_p[2] + &k_p[3]);
            supply += dt / 6.0 * (k_s[0] + 2.0 * k_s[1] + 2.0 * k_s[2] + k_s[3]);
            t += dt;
            let stored = 0.5 * p.dot(&p);
            worst = worst.max(stored - v0 - supply);
        }
    }
    Ok(PassivityCheck {
        signals,
        worst_excess: worst,
        tolerance: PASSIVITY_TOL,
        passed: worst <= PASSIVITY_TOL,
    })
}
