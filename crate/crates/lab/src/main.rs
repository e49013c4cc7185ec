use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmcf_lab::config::{self, Kind};
use hmcf_lab::output::RunDir;
use hmcf_lab::pipelines::{self, Outcome};
use hmcf_lab::{LabError, EXIT_NONCONVERGENCE, EXIT_NUMERIC, EXIT_OK};

#[derive(Parser)]
#[command(name = "hmcf-lab", version, about = "Harmonic mean curvature flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config key, e.g. `--set flow.stop_tol=1e-8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Flow a perturbed sphere to a constant-F leaf.
    Flow(RunArgs),
    /// Build leaves over the sigma list and check the lapse.
    Foliate(RunArgs),
    /// Stability spectra of leaves.
    Spectrum(RunArgs),
    /// Geometric and ADM centers of mass.
    Center(RunArgs),
    /// Identity and evolution-equation suite.
    Check(RunArgs),
    /// Tidy CSVs for plotting from a finished run directory.
    PlotData { run_dir: PathBuf },
    /// Continue an interrupted flow run from its last checkpoint.
    Resume {
        run_dir: PathBuf,
        /// Override a key of the stored config, e.g. to raise `flow.max_steps`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn execute(kind: Kind, args: &RunArgs) -> Result<i32, LabError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| LabError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = config::load(&text, &args.overrides)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate(kind)?;
    let mut dir = RunDir::create(cfg.output_path())?;
    let outcome = pipelines::run(kind, &cfg, &mut dir)?;
    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    finish(dir, &resolved.to_toml(), outcome)
}

fn finish(dir: RunDir, config_toml: &str, outcome: Outcome) -> Result<i32, LabError> {
    let code = status(&outcome);
    let path = dir.finish(config_toml, outcome.summary)?;
    eprintln!("wrote {}", path.display());
    Ok(code)
}

fn status(o: &Outcome) -> i32 {
    if !o.checks_passed {
        EXIT_NUMERIC
    } else if !o.converged {
        EXIT_NONCONVERGENCE
    } else {
        EXIT_OK
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Flow(a) => execute(Kind::Flow, a),
        Command::Foliate(a) => execute(Kind::Foliate, a),
        Command::Spectrum(a) => execute(Kind::Spectrum, a),
        Command::Center(a) => execute(Kind::Center, a),
        Command::Check(a) => execute(Kind::Check, a),
        Command::PlotData { run_dir } => pipelines::plot_data(run_dir).map(|files| {
            for f in files {
                eprintln!("wrote {}", run_dir.join(f).display());
            }
            EXIT_OK
        }),
        Command::Resume { run_dir, overrides } => pipelines::resume(run_dir, overrides)
            .and_then(|(cfg, outcome, dir)| finish(dir, &cfg.to_toml(), outcome)),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("hmcf-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
