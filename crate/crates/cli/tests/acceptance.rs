//! End-to-end acceptance gate. Each test prints one PASS/FAIL line with its
//! measured figure; run with `--nocapture` to see the lines on success.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use springnet_cli::runner::{certify_final, run_scenario};
use springnet_cli::scenario::{resolve, Scenario};
use springnet_core::verify::{
    check_hamiltonian_gradient, check_passivity, check_pseudo_gradient, check_spring_gradients,
    sample_collective_where,
};
use springnet_core::{DecisionBounds, Network, NetworkState, PotentialGame};
use std::time::Instant;

fn mesh() -> (Scenario, Network, NetworkState) {
    let scenario = resolve("nine_agent_mesh").expect("bundled scenario loads");
    let (network, initial) = scenario.build().expect("bundled scenario builds");
    (scenario, network, initial)
}

fn report(line: usize, name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("[{line}/9] {name}: {status} ({detail})");
    assert!(passed, "{name}: {detail}");
}

// Unilateral deviations must change a player's cost exactly as much as they
// change the shared energy.
#[test]
fn unilateral_deviations_match_shared_energy() {
    let (_, network, initial) = mesh();
    let bounds = DecisionBounds::from_initial_state(&network, &initial).unwrap();
    let game = PotentialGame::new(&network, bounds).unwrap();
    let started = Instant::now();
    let check = game.check_exact_potential(1000, 42).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    report(
        1,
        "deviation cost equals shared-energy change",
        check.worst_deviation <= 1e-9 && elapsed < 1.0,
        &format!(
            "worst {:.3e} rel over {} deviations, {:.2}s",
            check.worst_deviation, check.samples, elapsed
        ),
    );
}

// Every hand-written derivative must agree with central differences.
#[test]
fn analytic_gradients_match_finite_differences() {
    let (scenario, network, initial) = mesh();
    let started = Instant::now();
    let spring = check_spring_gradients(&network, 1000, 1e-6, 11).unwrap();
    let hamiltonian = check_hamiltonian_gradient(&network, 1000, 1e-6, 12).unwrap();
    let bounds = scenario.decision_bounds(&network, &initial).unwrap();
    let game = PotentialGame::new(&network, bounds).unwrap();
    let pseudo = check_pseudo_gradient(&game, 1000, 1e-6, 13).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let worst = spring
        .worst_relative_error
        .max(hamiltonian.worst_relative_error)
        .max(pseudo.worst_relative_error);
    report(
        2,
        "gradients agree with finite differences",
        spring.passed && hamiltonian.passed && pseudo.passed && elapsed < 5.0,
        &format!("worst {worst:.3e} rel at 3x1000 points, {elapsed:.2}s"),
    );
}

// The closed loop must never gain energy, per step or in rate.
#[test]
fn energy_decreases_along_mesh_trajectory() {
    let (scenario, network, initial) = mesh();
    let config = scenario.simulation_config();
    let trajectory = network.simulate(&initial, &config).unwrap();
    let worst_rate = trajectory
        .samples
        .iter()
        .map(|s| network.dissipation_rate(&s.state))
        .fold(f64::NEG_INFINITY, f64::max);
    let passed = trajectory.max_energy_step_increase <= 1e-8 && worst_rate <= 0.0;
    report(
        3,
        "energy decreases along the mesh trajectory",
        passed,
        &format!(
            "max per-step increase {:.3e}, max energy rate {:.3e}",
            trajectory.max_energy_step_increase, worst_rate
        ),
    );
}

fn clustered_start(network: &Network, seed: u64) -> NetworkState {
    let dof = network.agent_dof();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'outer: loop {
        let mut q = DVector::zeros(dof);
        for v in q.iter_mut() {
            *v = rng.gen_range(-0.45..0.45);
        }
        let state = network.state(q, DVector::zeros(dof)).unwrap();
        for s in network.separations(&state) {
            if !(0.05..0.9).contains(&s) {
                continue 'outer;
            }
        }
        return state;
    }
}

// Random clustered starts must settle into certified equilibria with all
// separations inside the coupling domain the whole way down.
#[test]
fn random_starts_converge_and_certify() {
    let (scenario, network, _) = mesh();
    let mut config = scenario.simulation_config();
    // Shallow frustrated minima relax slowly; give stragglers room.
    config.t_max = 3000.0;
    let started = Instant::now();
    let mut detail = String::new();
    let mut all_passed = true;
    for seed in 1..=5u64 {
        let initial = clustered_start(&network, seed);
        let trajectory = network.simulate(&initial, &config).unwrap();
        let inside = trajectory
            .samples
            .iter()
            .all(|s| s.separations.iter().all(|&d| d < 1.0));
        let converged = trajectory.converged();
        let certificate = certify_final(&scenario, &network, &trajectory).unwrap();
        let settled = certificate.at_energy_minimum
            || (certificate.alternative_equilibrium && certificate.is_variational_equilibrium);
        let ok = inside && converged && certificate.is_variational_equilibrium && settled;
        all_passed &= ok;
        let tag = if certificate.at_energy_minimum {
            "min"
        } else {
            "alt"
        };
        detail.push_str(&format!("seed {seed}: {tag}; "));
    }
    let elapsed = started.elapsed().as_secs_f64();
    all_passed &= elapsed < 60.0;
    detail.push_str(&format!("{elapsed:.1}s total"));
    report(
        4,
        "random clustered starts settle and certify",
        all_passed,
        &detail,
    );
}

// An acyclic graph has no frustrated configurations: the run must reach the
// zero-energy minimum with every separation at rest.
#[test]
fn acyclic_path_reaches_rest_lengths() {
    let scenario = resolve("path4_acyclic").unwrap();
    let (network, _) = scenario.build().unwrap();
    let started = Instant::now();
    let output = run_scenario(&scenario, None).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let last = output.trajectory.samples.last().unwrap();
    let worst_rest = last
        .separations
        .iter()
        .zip(network.couplings())
        .map(|(s, c)| (s - c.spring.rest_length).abs())
        .fold(0.0f64, f64::max);
    let passed = last.hamiltonian <= 1e-8 && worst_rest <= 1e-4 && elapsed < 5.0;
    report(
        5,
        "acyclic path relaxes to rest lengths",
        passed,
        &format!(
            "final energy {:.3e}, worst rest offset {:.3e}, {:.2}s",
            last.hamiltonian, worst_rest, elapsed
        ),
    );
}

// With the couplings virtual, the open loop stores only kinetic energy; what
// it gains must never exceed what the input supplies.
#[test]
fn open_loop_is_passive() {
    let (_, network, initial) = mesh();
    let check = check_passivity(&network, &initial, 10, 5.0, 1e-3, 7).unwrap();
    report(
        6,
        "open loop is passive from kinetic storage",
        check.passed,
        &format!(
            "worst stored-minus-supplied excess {:.3e} over {} signals",
            check.worst_excess, check.signals
        ),
    );
}

// Residual-based detection and first-order certification must agree, and the
// stacked pseudo-gradient must match its factored form.
#[test]
fn detection_agrees_with_certification() {
    let mut all_passed = true;
    let mut detail = String::new();

    let mut agreements = 0usize;
    for name in ["triangle_cyclic", "path4_acyclic"] {
        let scenario = resolve(name).unwrap();
        let (network, initial) = scenario.build().unwrap();
        let config = scenario.simulation_config();
        let bounds = scenario.decision_bounds(&network, &initial).unwrap();
        let game = PotentialGame::new(&network, bounds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let start = perturbed_start(&network, &initial, &mut rng);
            let trajectory = network.simulate(&start, &config).unwrap();
            all_passed &= trajectory.converged();
            // Converged end state: both views must say equilibrium.
            let last = trajectory.samples.last().unwrap();
            let detected = network
                .detect_equilibrium(
                    &last.state,
                    config.momentum_tolerance,
                    config.force_tolerance,
                )
                .unwrap();
            let certificate = game
                .certify_equilibrium(&last.state.collective(), config.force_tolerance)
                .unwrap();
            all_passed &= detected.converged && certificate.is_variational_equilibrium;
            // A mid-transient state: both must say no.
            let mid = &trajectory.samples[trajectory.samples.len() / 4];
            let detected_mid = network
                .detect_equilibrium(
                    &mid.state,
                    config.momentum_tolerance,
                    config.force_tolerance,
                )
                .unwrap();
            let certificate_mid = game
                .certify_equilibrium(&mid.state.collective(), config.force_tolerance)
                .unwrap();
            all_passed &= !detected_mid.converged && !certificate_mid.is_variational_equilibrium;
            agreements += 2;
        }
    }
    detail.push_str(&format!("{agreements} detect/certify agreements; "));

    let (scenario, network, initial) = mesh();
    let bounds = scenario.decision_bounds(&network, &initial).unwrap();
    let game = PotentialGame::new(&network, bounds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let accept = |_: usize, s: f64| s > 1e-3 && s < 1.0 - 1e-3;
    let mut worst_factored = 0.0f64;
    for _ in 0..1000 {
        let x =
            sample_collective_where(&network, game.bounds(), &mut rng, &accept, 1.0, 1000).unwrap();
        let direct = game.pseudo_gradient(&x).unwrap();
        let factored = game.pseudo_gradient_factored(&x).unwrap();
        worst_factored = worst_factored.max((direct - factored).amax());
    }
    all_passed &= worst_factored <= 1e-12;
    detail.push_str(&format!(
        "factored-form gap {worst_factored:.3e} at 1000 states"
    ));
    report(
        7,
        "equilibrium detection matches certification",
        all_passed,
        &detail,
    );
}

fn perturbed_start(network: &Network, base: &NetworkState, rng: &mut ChaCha8Rng) -> NetworkState {
    let dof = network.agent_dof();
    let n = network.dimension();
    loop {
        let mut q = base.positions().clone_owned();
        for v in q.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        // Zero-sum momenta: the translation mode has no damping to kill it.
        let mut p = DVector::zeros(dof);
        let agents = dof / n;
        for c in 0..n {
            let mut total = 0.0;
            for a in 0..(agents - 1) {
                let v = rng.gen_range(-0.2..0.2);
                p[a * n + c] = v;
                total += v;
            }
            p[(agents - 1) * n + c] = -total;
        }
        let state = network.state(q, p).unwrap();
        if network.check_feasible_start(&state).is_ok()
            && network.separations(&state).iter().all(|&s| s > 0.05)
        {
            return state;
        }
    }
}

// Rigid translations and edge re-orientation are bookkeeping choices; the
// physics must not notice either.
#[test]
fn symmetries_leave_the_physics_alone() {
    let scenario = resolve("triangle_cyclic").unwrap();
    let (network, initial) = scenario.build().unwrap();
    let config = scenario.simulation_config();
    let base = network.simulate(&initial, &config).unwrap();

    // Dyadic offset: representable exactly, so drift is numerical, not input.
    let mut translated = scenario.clone();
    for pos in &mut translated.positions {
        pos[0] += 0.5;
        pos[1] -= 0.25;
    }
    let (t_network, t_initial) = translated.build().unwrap();
    let shifted = t_network.simulate(&t_initial, &config).unwrap();

    let mut flipped = scenario.clone();
    flipped.edges[1] = (flipped.edges[1].1, flipped.edges[1].0);
    let (f_network, f_initial) = flipped.build().unwrap();
    let reoriented = f_network.simulate(&f_initial, &config).unwrap();

    let mut worst = 0.0f64;
    for other in [&shifted, &reoriented] {
        assert_eq!(base.samples.len(), other.samples.len());
        for (a, b) in base.samples.iter().zip(&other.samples) {
            assert_eq!(a.t, b.t);
            worst = worst.max((a.hamiltonian - b.hamiltonian).abs());
            for (da, db) in a.separations.iter().zip(&b.separations) {
                worst = worst.max((da - db).abs());
            }
        }
    }
    report(
        8,
        "translation and edge flips leave energies and distances",
        worst <= 1e-10,
        &format!("worst drift {worst:.3e} across both symmetries"),
    );
}

// The same scenario must reproduce its outputs byte for byte, and survive a
// serialize/parse round trip unchanged.
#[test]
fn outputs_are_reproducible() {
    let scenario = resolve("triangle_cyclic").unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_scenario(&scenario, Some(dir_a.path())).unwrap();
    run_scenario(&scenario, Some(dir_b.path())).unwrap();
    let table_a = std::fs::read(dir_a.path().join("trajectory.csv")).unwrap();
    let table_b = std::fs::read(dir_b.path().join("trajectory.csv")).unwrap();
    let report_a = std::fs::read(dir_a.path().join("report.toml")).unwrap();
    let report_b = std::fs::read(dir_b.path().join("report.toml")).unwrap();
    let tables_identical = table_a == table_b && report_a == report_b;

    let mut round_trips = true;
    for name in [
        "nine_agent_mesh",
        "two_agent_linear",
        "path4_acyclic",
        "triangle_cyclic",
        "negative_control",
    ] {
        let original = resolve(name).unwrap();
        let reparsed = Scenario::parse(&original.serialize()).unwrap();
        round_trips &= reparsed == original;
    }
    report(
        9,
        "reruns are byte-identical and scenarios round-trip",
        tables_identical && round_trips,
        &format!("table bytes equal: {tables_identical}; round trips clean: {round_trips}"),
    );
}

// Keep the config plumbing honest: overriding dt through the scenario must
// change the step count accordingly.
#[test]
fn simulation_config_flows_through() {
    let mut scenario = resolve("two_agent_linear").unwrap();
    scenario.simulation.dt = 2e-3;
    scenario.simulation.t_max = 1.0;
    scenario.simulation.momentum_tolerance = 1e-30;
    let (network, initial) = scenario.build().unwrap();
    let trajectory = network
        .simulate(&initial, &scenario.simulation_config())
        .unwrap();
    assert_eq!(trajectory.steps, 500);
}
