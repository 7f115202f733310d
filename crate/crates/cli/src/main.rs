use clap::{Parser, Subcommand, ValueEnum};
use springnet_cli::checks::{run_checks, CheckKind};
use springnet_cli::runner::{run_scenario, RunError};
use springnet_cli::scenario::{resolve, Scenario, ScenarioError, BUNDLED};
use springnet_core::{Error as ModelError, SpringError, Termination};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_DOMAIN: u8 = 4;

/// Simulate networks of spring-coupled agents and certify where they settle.
#[derive(Parser)]
#[command(name = "springnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and certify the final configuration
    Run {
        /// Bundled scenario name or path to a scenario file
        scenario: String,
        /// Directory for trajectory.csv, report.toml, and summary.toml
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the integration step
        #[arg(long)]
        dt: Option<f64>,
        /// Override the time horizon
        #[arg(long)]
        t_max: Option<f64>,
        /// Override the sampling interval
        #[arg(long)]
        output_interval: Option<f64>,
        /// Override the momentum convergence tolerance
        #[arg(long)]
        momentum_tolerance: Option<f64>,
        /// Override the force convergence tolerance
        #[arg(long)]
        force_tolerance: Option<f64>,
    },
    /// Run self-checks against a scenario's network
    Check {
        /// Bundled scenario name or path to a scenario file
        scenario: String,
        /// Which checks to run
        #[arg(long, value_enum, default_value_t = CheckArg::All)]
        what: CheckArg,
        /// Sample count per check
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Override the scenario's sampling seed
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for checks.toml
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it
    Validate {
        /// Bundled scenario name or path to a scenario file
        scenario: String,
    },
    /// Inspect the scenarios shipped with the binary
    Scenarios {
        #[command(subcommand)]
        command: ScenariosCommand,
    },
}

#[derive(Subcommand)]
enum ScenariosCommand {
    /// List bundled scenarios
    List,
    /// Print a bundled scenario file to stdout
    Show { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    Potential,
    Gradients,
    Passivity,
    All,
}

impl From<CheckArg> for CheckKind {
    fn from(a: CheckArg) -> Self {
        match a {
            CheckArg::Potential => CheckKind::Potential,
            CheckArg::Gradients => CheckKind::Gradients,
            CheckArg::Passivity => CheckKind::Passivity,
            CheckArg::All => CheckKind::All,
        }
    }
}

fn model_exit(e: &ModelError) -> u8 {
    match e {
        ModelError::Spring {
            source: SpringError::Singular { .. },
            ..
        } => EXIT_DOMAIN,
        ModelError::Spring {
            source: SpringError::BeyondCritical { .. },
            ..
        } => EXIT_DOMAIN,
        _ => EXIT_INVALID,
    }
}

fn run_error_exit(e: &RunError) -> u8 {
    match e {
        RunError::Scenario(ScenarioError::Model(m)) => model_exit(m),
        RunError::Scenario(_) => EXIT_INVALID,
        RunError::Model(m) => model_exit(m),
        RunError::Io(_) => EXIT_CHECK_FAILED,
    }
}

fn load(input: &str) -> Result<Scenario, u8> {
    resolve(input).map_err(|e| {
        eprintln!("{e}");
        match &e {
            ScenarioError::Model(m) => model_exit(m),
            _ => EXIT_INVALID,
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            output_dir,
            dt,
            t_max,
            output_interval,
            momentum_tolerance,
            force_tolerance,
        } => {
            let mut scenario = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return ExitCode::from(code),
            };
            if let Some(v) = dt {
                scenario.simulation.dt = v;
            }
            if let Some(v) = t_max {
                scenario.simulation.t_max = v;
            }
            if let Some(v) = output_interval {
                scenario.simulation.output_interval = v;
            }
            if let Some(v) = momentum_tolerance {
                scenario.simulation.momentum_tolerance = v;
            }
            if let Some(v) = force_tolerance {
                scenario.simulation.force_tolerance = v;
            }
            cmd_run(&scenario, output_dir.as_deref())
        }
        Command::Check {
            scenario,
            what,
            samples,
            seed,
            output_dir,
        } => {
            let scenario = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return ExitCode::from(code),
            };
            let seed = seed.unwrap_or(scenario.seed);
            cmd_check(&scenario, what.into(), samples, seed, output_dir.as_deref())
        }
        Command::Validate { scenario } => match load(&scenario) {
            Ok(s) => {
                println!(
                    "ok: {} ({} agents, {} edges, dimension {})",
                    s.name,
                    s.agent_count(),
                    s.edges.len(),
                    s.dimension
                );
                EXIT_OK
            }
            Err(code) => code,
        },
        Command::Scenarios { command } => match command {
            ScenariosCommand::List => {
                for b in BUNDLED {
                    println!("{:<18} {}", b.name, b.summary);
                }
                EXIT_OK
            }
            ScenariosCommand::Show { name } => match BUNDLED.iter().find(|b| b.name == name) {
                Some(b) => {
                    print!("{}", b.text);
                    EXIT_OK
                }
                None => {
                    eprintln!("no bundled scenario named {name}");
                    EXIT_INVALID
                }
            },
        },
    };
    ExitCode::from(code)
}

fn cmd_run(scenario: &Scenario, out_dir: Option<&std::path::Path>) -> u8 {
    let output = match run_scenario(scenario, out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return run_error_exit(&e);
        }
    };
    let s = &output.summary;
    println!(
        "{}: {} after {} steps ({} rejected), t = {:.3}",
        s.scenario, s.termination, s.steps, s.rejected_steps, s.final_time
    );
    println!(
        "final energy {:.6e}, momentum {:.3e}, force {:.3e}",
        s.final_energy, s.final_momentum_norm, s.final_force_norm
    );
    let r = &output.report;
    if r.is_variational_equilibrium {
        let kind = if r.at_energy_minimum {
            "the zero-energy configuration"
        } else {
            "an alternative stationary configuration"
        };
        println!(
            "equilibrium certificate: variational equilibrium at {kind} \
             (pseudo-gradient {:.3e})",
            r.pseudo_gradient_norm
        );
    } else if r.boundary_active {
        println!("equilibrium certificate: indeterminate, decision bounds active");
    } else {
        println!("equilibrium certificate: not certified");
    }
    if let Some(dir) = out_dir {
        println!("wrote {}", dir.display());
    }
    match output.trajectory.termination {
        Termination::Converged => EXIT_OK,
        Termination::TMaxReached => {
            eprintln!("did not converge before t_max");
            EXIT_NOT_CONVERGED
        }
        Termination::DomainViolation { edge } => {
            eprintln!("edge {} left the coupling domain", edge + 1);
            EXIT_DOMAIN
        }
        Termination::SingularConfiguration { edge } => {
            eprintln!("edge {} reached a singular configuration", edge + 1);
            EXIT_DOMAIN
        }
    }
}

fn cmd_check(
    scenario: &Scenario,
    kind: CheckKind,
    samples: usize,
    seed: u64,
    out_dir: Option<&std::path::Path>,
) -> u8 {
    let outcomes = match run_checks(scenario, kind, samples, seed, out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return run_error_exit(&e);
        }
    };
    let mut all_passed = true;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {}", o.name, o.detail);
        all_passed &= o.passed;
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
