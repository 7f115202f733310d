//! Self-checks runnable on any scenario: exact-potential alignment,
//! finite-difference gradient audits, and input-output passivity.

use crate::runner::RunError;
use crate::scenario::Scenario;
use serde::Serialize;
use springnet_core::verify::{
    check_hamiltonian_gradient, check_passivity, check_pseudo_gradient, check_spring_gradients,
    FD_STEP,
};
use springnet_core::PotentialGame;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Potential,
    Gradients,
    Passivity,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
struct ChecksFile {
    scenario: String,
    seed: u64,
    passed: bool,
    check: Vec<CheckOutcome>,
}

/// Run the requested checks; any failure flips the overall flag. With an
/// output directory the outcomes are also written as `checks.toml`.
pub fn run_checks(
    scenario: &Scenario,
    kind: CheckKind,
    samples: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<CheckOutcome>, RunError> {
    let (network, initial) = scenario.build()?;
    let mut outcomes = Vec::new();

    if matches!(kind, CheckKind::Potential | CheckKind::All) {
        let bounds = scenario.decision_bounds(&network, &initial)?;
        let game = PotentialGame::new(&network, bounds)?;
        let check = match scenario.objective_skew {
            None => game.check_exact_potential(samples, seed)?,
            // A deliberately skewed player: weight its coupling terms so the
            // deviation bookkeeping no longer matches the shared energy.
            Some(skew) => {
                let player = skew.player - 1;
                let factor = skew.factor;
                game.check_exact_potential_with(
                    move |g, i, x| {
                        let (kinetic, springs) = g.local_objective_split(i, x)?;
                        let weight = if i == player { factor } else { 1.0 };
                        Ok(kinetic + weight * springs)
                    },
                    samples,
                    seed,
                )?
            }
        };
        let skew_note = match scenario.objective_skew {
            Some(s) => format!(" (player {} springs weighted by {})", s.player, s.factor),
            None => String::new(),
        };
        outcomes.push(CheckOutcome {
            name: "exact_potential".into(),
            passed: check.passed,
            samples: check.samples,
            worst: check.worst_deviation,
            tolerance: check.tolerance,
            detail: format!(
                "worst relative deviation {:.3e}, worst player {}{skew_note}",
                check.worst_deviation,
                check.worst_player + 1
            ),
        });
    }

    if matches!(kind, CheckKind::Gradients | CheckKind::All) {
        let spring = check_spring_gradients(&network, samples, FD_STEP, seed)?;
        outcomes.push(gradient_outcome("spring_gradient", &spring));
        let hamiltonian = check_hamiltonian_gradient(&network, samples, FD_STEP, seed ^ 1)?;
        outcomes.push(gradient_outcome("hamiltonian_gradient", &hamiltonian));
        let bounds = scenario.decision_bounds(&network, &initial)?;
        let game = PotentialGame::new(&network, bounds)?;
        let pseudo = check_pseudo_gradient(&game, samples, FD_STEP, seed ^ 2)?;
        outcomes.push(gradient_outcome("pseudo_gradient", &pseudo));
    }

    if matches!(kind, CheckKind::Passivity | CheckKind::All) {
        let check = check_passivity(&network, &initial, 10, 5.0, 1e-3, seed)?;
        outcomes.push(CheckOutcome {
            name: "passivity".into(),
            passed: check.passed,
            samples: check.signals,
            worst: check.worst_excess,
            tolerance: check.tolerance,
            detail: format!(
                "worst stored-minus-supplied excess {:.3e} over {} input signals",
                check.worst_excess, check.signals
            ),
        });
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let file = ChecksFile {
            scenario: scenario.name.clone(),
            seed,
            passed: outcomes.iter().all(|o| o.passed),
            check: outcomes.clone(),
        };
        std::fs::write(
            dir.join("checks.toml"),
            toml::to_string_pretty(&file).expect("checks serialize"),
        )?;
    }

    Ok(outcomes)
}

fn gradient_outcome(name: &str, check: &springnet_core::verify::GradientCheck) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed: check.passed,
        samples: check.samples,
        worst: check.worst_relative_error,
        tolerance: check.tolerance,
        detail: format!(
            "worst relative error {:.3e} against central differences",
            check.worst_relative_error
        ),
    }
}
