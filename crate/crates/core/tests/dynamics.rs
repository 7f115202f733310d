//! Integrator and vector-field behavior: reference comparisons, dissipation,
//! structural identities, rejection handling, and invariance checks are all
//! exercised on small networks.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use springnet_core::verify::check_passivity;
use springnet_core::{
    ConstraintGraph, Coupling, Damping, Edge, Error, Network, NetworkState, SimulationConfig,
    SpringError, SpringModel, Termination,
};

fn pair_1d(k: f64, rest: f64, damping: f64) -> Network {
    let graph = ConstraintGraph::new(2, 1, vec![Edge::new(0, 1)]).unwrap();
    Network::new(
        graph,
        vec![Coupling {
            spring: SpringModel::constant(k, rest),
            damping: Damping::Scalar(damping),
        }],
    )
    .unwrap()
}

fn barrier_pair_2d(damping: f64) -> Network {
    let graph = ConstraintGraph::new(2, 2, vec![Edge::new(0, 1)]).unwrap();
    Network::new(
        graph,
        vec![Coupling {
            spring: SpringModel::barrier(0.8, 0.06, 0.6, 1.0),
            damping: Damping::Scalar(damping),
        }],
    )
    .unwrap()
}

fn triangle(damping: f64) -> Network {
    let graph = ConstraintGraph::new(
        3,
        2,
        vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(0, 2)],
    )
    .unwrap();
    let coupling = |k: f64| Coupling {
        spring: SpringModel::constant(k, 0.6),
        damping: Damping::Scalar(damping),
    };
    Network::new(graph, vec![coupling(1.0), coupling(1.5), coupling(0.8)]).unwrap()
}

// Exactly representable start so invariance checks see pure dynamics.
fn triangle_start(network: &Network) -> NetworkState {
    let q = DVector::from_vec(vec![0.0, 0.0, 0.75, 0.125, 0.25, 0.625]);
    let p = DVector::from_vec(vec![0.0, 0.25, -0.125, 0.0, 0.125, -0.25]);
    network.state(q, p).unwrap()
}

fn random_state<R: Rng>(network: &Network, rng: &mut R) -> NetworkState {
    let dof = network.agent_dof();
    let q = DVector::from_fn(dof, |_, _| rng.gen_range(-1.0..1.0));
    let p = DVector::from_fn(dof, |_, _| rng.gen_range(-0.5..0.5));
    network.state(q, p).unwrap()
}

#[test]
fn overdamped_pair_approaches_rest_monotonically() {
    let network = pair_1d(2.0, 0.5, 3.0);
    let initial = network
        .state(DVector::from_vec(vec![0.0, 1.2]), DVector::zeros(2))
        .unwrap();
    let config = SimulationConfig {
        t_max: 40.0,
        ..SimulationConfig::default()
    };
    let trajectory = network.simulate(&initial, &config).unwrap();
    assert!(trajectory.converged());

    let separations: Vec<f64> = trajectory
        .samples
        .iter()
        .map(|s| s.separations[0])
        .collect();
    for w in separations.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-12,
            "separation increased: {} -> {}",
            w[0],
            w[1]
        );
    }
    let last = *separations.last().unwrap();
    assert!((last - 0.5).abs() < 1e-5, "final separation {last}");

    // Ten-times-finer reference lands on the same sample grid; the coarse run
    // must sit on it to well under the convergence tolerances.
    let fine = network
        .simulate(
            &initial,
            &SimulationConfig {
                dt: 1e-4,
                t_max: 40.0,
                ..SimulationConfig::default()
            },
        )
        .unwrap();
    let common = trajectory.samples.len().min(fine.samples.len());
    assert!(common > 100);
    for i in 0..common {
        let (a, b) = (&trajectory.samples[i], &fine.samples[i]);
        assert!((a.t - b.t).abs() < 1e-9, "sample grids diverged at {i}");
        let dq = (a.state.positions() - b.state.positions()).amax();
        let dp = (a.state.momenta() - b.state.momenta()).amax();
        assert!(
            dq < 1e-9 && dp < 1e-9,
            "step-size sensitivity at t={}: {dq}, {dp}",
            a.t
        );
    }
}

#[test]
fn rest_start_converges_at_first_check() {
    let network = pair_1d(2.0, 0.5, 3.0);
    let initial = network
        .state(DVector::from_vec(vec![0.0, 0.5]), DVector::zeros(2))
        .unwrap();
    let config = SimulationConfig::default();
    let trajectory = network.simulate(&initial, &config).unwrap();
    assert!(trajectory.converged());
    assert_eq!(trajectory.samples.len(), 2);
    assert!((trajectory.samples[1].t - config.output_interval).abs() < 1e-12);
    for s in &trajectory.samples {
        assert_eq!(s.hamiltonian, 0.0);
    }
}

#[test]
fn energy_never_rises_along_trajectories() {
    let network = triangle(1.0);
    let trajectory = network
        .simulate(&triangle_start(&network), &SimulationConfig::default())
        .unwrap();
    assert!(trajectory.converged());
    assert!(
        trajectory.max_energy_step_increase <= 1e-8,
        "worst per-step energy increase {}",
        trajectory.max_energy_step_increase
    );
    for w in trajectory.samples.windows(2) {
        assert!(w[1].hamiltonian <= w[0].hamiltonian + 1e-7);
    }
}

#[test]
fn energy_rate_identity_holds_pointwise() {
    let network = triangle(1.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let state = random_state(&network, &mut rng);
        let grad = network.hamiltonian_gradient(&state).unwrap();
        let rhs = network.closed_loop_rhs(&state).unwrap();
        let chain = grad.z.dot(&rhs.z_dot) + grad.p.dot(&rhs.p_dot);
        let rate = network.dissipation_rate(&state);
        assert!(
            rate <= 1e-15,
            "dissipation rate must be nonpositive: {rate}"
        );
        assert!(
            (chain - rate).abs() <= 1e-12 * rate.abs().max(1.0),
            "chain rule {chain} vs quadratic form {rate}"
        );
    }
}

#[test]
fn closed_loop_is_open_loop_under_the_control_law() {
    let network = triangle(0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let state = random_state(&network, &mut rng);
        let u = network.control_law(&state).unwrap();
        let open = network.open_loop_rhs(&state, &u).unwrap();
        let closed = network.closed_loop_rhs(&state).unwrap();
        assert!((open.q_dot - closed.q_dot).amax() <= 1e-12);
        assert!((open.p_dot - closed.p_dot).amax() <= 1e-12);
        assert!((open.z_dot - closed.z_dot).amax() <= 1e-12);
    }
}

#[test]
fn closed_loop_is_a_gradient_flow() {
    let network = triangle(0.9);
    let k = network.gradient_flow_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let state = random_state(&network, &mut rng);
        let grad = network.hamiltonian_gradient(&state).unwrap();
        let mut nabla = DVector::zeros(grad.z.len() + grad.p.len());
        nabla.rows_mut(0, grad.z.len()).copy_from(&grad.z);
        nabla
            .rows_mut(grad.z.len(), grad.p.len())
            .copy_from(&grad.p);
        let flow = -&k * &nabla;
        let rhs = network.closed_loop_rhs(&state).unwrap();
        let mut stacked = DVector::zeros(nabla.len());
        stacked.rows_mut(0, rhs.z_dot.len()).copy_from(&rhs.z_dot);
        stacked
            .rows_mut(rhs.z_dot.len(), rhs.p_dot.len())
            .copy_from(&rhs.p_dot);
        assert!((flow - stacked).amax() <= 1e-12);
    }
}

#[test]
fn flow_matrix_quadratic_form_is_nonnegative() {
    let network = triangle(1.1);
    let k = network.gradient_flow_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = k.nrows();
    for _ in 0..1000 {
        let x = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let quad = x.dot(&(&k * &x));
        assert!(quad >= -1e-12, "x^T K x = {quad}");
    }
}

#[test]
fn constant_input_integrates_to_exact_parabolas() {
    let network = pair_1d(1.0, 0.3, 1.0);
    let q0 = DVector::from_vec(vec![0.1, 0.9]);
    let p0 = DVector::from_vec(vec![0.4, -0.2]);
    let u = DVector::from_vec(vec![0.3, -0.5]);
    let dt = 0.05;
    let mut q = q0.clone();
    let mut p = p0.clone();
    // RK4 by stages on the open loop; position growth is quadratic in time,
    // which the stages reproduce exactly.
    for _ in 0..20 {
        let s1 = network
            .open_loop_rhs(&network.state(q.clone(), p.clone()).unwrap(), &u)
            .unwrap();
        let s2 = network
            .open_loop_rhs(
                &network
                    .state(&q + 0.5 * dt * &s1.q_dot, &p + 0.5 * dt * &s1.p_dot)
                    .unwrap(),
                &u,
            )
            .unwrap();
        let s3 = network
            .open_loop_rhs(
                &network
                    .state(&q + 0.5 * dt * &s2.q_dot, &p + 0.5 * dt * &s2.p_dot)
                    .unwrap(),
                &u,
            )
            .unwrap();
        let s4 = network
            .open_loop_rhs(
                &network
                    .state(&q + dt * &s3.q_dot, &p + dt * &s3.p_dot)
                    .unwrap(),
                &u,
            )
            .unwrap();
        q += dt / 6.0 * (&s1.q_dot + 2.0 * &s2.q_dot + 2.0 * &s3.q_dot + &s4.q_dot);
        p += dt / 6.0 * (&s1.p_dot + 2.0 * &s2.p_dot + 2.0 * &s3.p_dot + &s4.p_dot);
    }
    let t = 20.0 * dt;
    for i in 0..2 {
        let q_exact = q0[i] + p0[i] * t + 0.5 * u[i] * t * t;
        let p_exact = p0[i] + u[i] * t;
        assert!(
            (q[i] - q_exact).abs() < 1e-12,
            "q[{i}] = {} vs {q_exact}",
            q[i]
        );
        assert!(
            (p[i] - p_exact).abs() < 1e-12,
            "p[{i}] = {} vs {p_exact}",
            p[i]
        );
    }
}

#[test]
fn open_loop_is_passive_from_rest_and_from_motion() {
    let network = triangle(1.0);
    let rest = network
        .state(
            DVector::from_vec(vec![0.0, 0.0, 0.6, 0.0, 0.3, 0.5]),
            DVector::zeros(6),
        )
        .unwrap();
    let report = check_passivity(&network, &rest, 10, 10.0, 1e-3, 21).unwrap();
    assert!(report.passed, "worst excess {}", report.worst_excess);

    let moving = triangle_start(&network);
    let report = check_passivity(&network, &moving, 10, 10.0, 1e-3, 22).unwrap();
    assert!(report.passed, "worst excess {}", report.worst_excess);
}

#[test]
fn barrier_bounce_rejects_steps_but_stays_feasible() {
    let network = barrier_pair_2d(0.5);
    // Outward fling violent enough that full steps would jump the pole at
    // separation 1; slower approaches resolve without any rejection.
    let initial = network
        .state(
            DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0]),
            DVector::from_vec(vec![-6.0, 0.0, 6.0, 0.0]),
        )
        .unwrap();
    let config = SimulationConfig {
        t_max: 2.0,
        energy_guard: true,
        ..SimulationConfig::default()
    };
    let h0 = network.hamiltonian(&initial).unwrap();
    let trajectory = network.simulate(&initial, &config).unwrap();
    assert!(
        !matches!(trajectory.termination, Termination::DomainViolation { .. }),
        "bounce misread as domain violation"
    );
    assert!(
        trajectory.rejected_steps > 0,
        "expected step rejections near the pole"
    );
    for s in &trajectory.samples {
        assert!(s.separations[0] < 1.0);
        assert!(
            s.hamiltonian <= h0 + 1e-6,
            "energy rose to {} from {h0} (worst step increase {})",
            s.hamiltonian,
            trajectory.max_energy_step_increase
        );
    }
}

#[test]
fn step_floor_turns_bounce_into_domain_violation() {
    let network = barrier_pair_2d(0.5);
    let initial = network
        .state(
            DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0]),
            DVector::from_vec(vec![-8.0, 0.0, 8.0, 0.0]),
        )
        .unwrap();
    let config = SimulationConfig {
        t_max: 2.0,
        min_dt: 5e-4,
        ..SimulationConfig::default()
    };
    let trajectory = network.simulate(&initial, &config).unwrap();
    assert!(
        matches!(
            trajectory.termination,
            Termination::DomainViolation { edge: 0 }
        ),
        "termination was {:?}",
        trajectory.termination
    );
}

#[test]
fn trajectory_bookkeeping_is_consistent() {
    let network = triangle(1.0);
    let trajectory = network
        .simulate(&triangle_start(&network), &SimulationConfig::default())
        .unwrap();

    let expanded = network.incidence().expanded().clone();
    let mut previous = f64::NEG_INFINITY;
    for s in &trajectory.samples {
        assert!(s.t > previous, "timestamps not strictly increasing");
        previous = s.t;

        let recomputed = network.hamiltonian(&s.state).unwrap();
        assert!((s.hamiltonian - recomputed).abs() <= 1e-12);

        let drift = (&expanded * s.state.positions() - s.state.relative_distances()).amax();
        assert!(drift <= 1e-10, "redundant state drifted by {drift}");

        let norm = s.state.positions().amax().max(s.state.momenta().amax());
        assert!(norm <= trajectory.max_state_norm());
    }
}

#[test]
fn total_momentum_is_conserved() {
    let network = triangle(1.0);
    let initial = triangle_start(&network);
    let trajectory = network
        .simulate(&initial, &SimulationConfig::default())
        .unwrap();
    let total = |p: &DVector<f64>, c: usize| (0..3).map(|i| p[i * 2 + c]).sum::<f64>();
    let p0 = initial.momenta();
    for s in &trajectory.samples {
        for c in 0..2 {
            let drift = (total(s.state.momenta(), c) - total(p0, c)).abs();
            assert!(drift <= 1e-12, "net momentum drifted by {drift}");
        }
    }
}

#[test]
fn translating_every_agent_changes_nothing_observable() {
    let network = triangle(1.0);
    let base = triangle_start(&network);
    let offset = [0.5, -0.25];
    let mut q = base.positions().clone();
    for i in 0..3 {
        for c in 0..2 {
            q[i * 2 + c] += offset[c];
        }
    }
    let shifted = network.state(q, base.momenta().clone()).unwrap();

    let config = SimulationConfig::default();
    let a = network.simulate(&base, &config).unwrap();
    let b = network.simulate(&shifted, &config).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        assert!((sa.hamiltonian - sb.hamiltonian).abs() <= 1e-10);
        assert!((sa.state.momenta() - sb.state.momenta()).amax() <= 1e-10);
        for (da, db) in sa.separations.iter().zip(&sb.separations) {
            assert!((da - db).abs() <= 1e-10);
        }
    }
}

#[test]
fn flipping_an_edge_orientation_changes_nothing_observable() {
    let damping = 1.0;
    let network = triangle(damping);
    let graph = ConstraintGraph::new(
        3,
        2,
        vec![Edge::new(1, 0), Edge::new(1, 2), Edge::new(0, 2)],
    )
    .unwrap();
    let coupling = |k: f64| Coupling {
        spring: SpringModel::constant(k, 0.6),
        damping: Damping::Scalar(damping),
    };
    let flipped = Network::new(graph, vec![coupling(1.0), coupling(1.5), coupling(0.8)]).unwrap();

    let initial = triangle_start(&network);
    let initial_flipped = flipped
        .state(initial.positions().clone(), initial.momenta().clone())
        .unwrap();

    let config = SimulationConfig::default();
    let a = network.simulate(&initial, &config).unwrap();
    let b = flipped.simulate(&initial_flipped, &config).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        assert!((sa.state.positions() - sb.state.positions()).amax() <= 1e-10);
        assert!((sa.state.momenta() - sb.state.momenta()).amax() <= 1e-10);
        assert!((sa.hamiltonian - sb.hamiltonian).abs() <= 1e-10);
    }
}

#[test]
fn infeasible_or_singular_starts_are_rejected_up_front() {
    let network = barrier_pair_2d(1.0);
    let stretched = network
        .state(
            DVector::from_vec(vec![0.0, 0.0, 1.5, 0.0]),
            DVector::zeros(4),
        )
        .unwrap();
    match network.simulate(&stretched, &SimulationConfig::default()) {
        Err(Error::InfeasibleStart { edge: 0, .. }) => {}
        other => panic!("expected infeasible-start rejection, got {other:?}"),
    }

    let coincident = network.state(DVector::zeros(4), DVector::zeros(4)).unwrap();
    match network.simulate(&coincident, &SimulationConfig::default()) {
        Err(Error::Spring {
            edge: 0,
            source: SpringError::Singular { .. },
        }) => {}
        other => panic!("expected singular rejection, got {other:?}"),
    }
}
