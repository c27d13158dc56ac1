use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multishape::config::{self, ExperimentConfig};
use multishape::{experiment, verify, Error, Result};

#[derive(Parser)]
#[command(name = "multishape", version, about = "Multi-shape optimization with deterministic and random coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `experiment.output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state on the target configuration and write `target.vtk`.
    GenerateTarget(Common),
    /// Run the configured experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override `experiment.snapshots`, e.g. `0,50,200,400`.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<usize>>,
    },
    /// Write coefficient realizations `kappa_<i>.vtk` on the initial mesh.
    SampleField {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        draws: usize,
    },
    /// Run the built-in numerical checks.
    Verify {
        /// Nodes per side of the two-shape verification mesh.
        #[arg(long, default_value_t = 23)]
        resolution: usize,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        Error::Config(vec![config::ConfigDiagnostic {
            line: None,
            key: common.config.display().to_string(),
            message: e.to_string(),
        }])
    })?;
    let mut cfg = config::parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenerateTarget(common) => {
            let cfg = load(&common)?;
            let target = experiment::generate_target_files(&cfg, &cfg.output)?;
            println!(
                "target: {} nodes, {} cells -> {}",
                target.mesh().n_nodes(),
                target.mesh().n_cells(),
                cfg.output.join("target.vtk").display()
            );
            Ok(true)
        }
        Command::Run { common, snapshots } => {
            let mut cfg = load(&common)?;
            if let Some(s) = snapshots {
                if let Some(&k) = s.iter().find(|&&k| k > cfg.iterations) {
                    return Err(Error::Config(vec![config::ConfigDiagnostic {
                        line: None,
                        key: "--snapshots".into(),
                        message: format!("snapshot {k} exceeds {} iterations", cfg.iterations),
                    }]));
                }
                cfg.snapshots = s;
            }
            let summary = experiment::run_experiment(&cfg)?;
            for run in &summary.runs {
                let name = if run.name.is_empty() { "run" } else { &run.name };
                let first = run.state.log.first();
                let last = run.state.log.last();
                if let (Some(a), Some(b)) = (first, last) {
                    println!(
                        "{name}: objective {:.6e} -> {:.6e}, grad norm {:.3e} -> {:.3e}",
                        a.objective, b.objective, a.grad_norm, b.grad_norm
                    );
                }
                for w in &run.state.warnings {
                    eprintln!("warning: {w}");
                }
                if let Some(Some(d)) = run.symmetric_difference.first() {
                    println!("{name}: symmetric difference {d:.6e}");
                }
            }
            Ok(true)
        }
        Command::SampleField { common, draws } => {
            let cfg = load(&common)?;
            for p in experiment::sample_field_files(&cfg, &cfg.output, draws)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Verify { resolution } => {
            let outcomes = verify::run_all(resolution)?;
            let mut ok = true;
            for o in &outcomes {
                println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                ok &= o.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the configuration exit code
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
