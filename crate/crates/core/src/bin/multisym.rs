use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multisym::cli::{execute, load_spec, Command, ConnectionChoice, Flags};

/// Multisymplectic field-theory workbench: derive Legendre maps,
/// constraints and Hamilton-Cartan structures from a theory spec,
/// verify the structural identities, and run desk-scale evolutions.
#[derive(Parser)]
#[command(name = "multisym", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Theory spec file (JSON).
    spec: PathBuf,
    /// Sample count for regularity and zero tests.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Symbolic-numeric comparison tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// PDE-level tolerance for grid checks.
    #[arg(long, default_value_t = 1e-3)]
    tol_pde: f64,
    /// Which connection to use: the spec's or the trivial one.
    #[arg(long, default_value = "spec", value_parser = ["trivial", "spec"])]
    connection: String,
    /// Also write the JSON report to this path.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Include LaTeX renderings in the report.
    #[arg(long)]
    latex: bool,
    /// Solve grid override as TIME_STEPSxSPATIAL_POINTS, e.g. 64x200.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit momenta, Hessian, constraints, Hamiltonian and residual
    /// operators.
    Derive(Common),
    /// Classify the regularity of the Lagrangian.
    Classify(Common),
    /// Run the structural identity suite.
    Verify(Common),
    /// Evolve the field equations on the spec's grid.
    Solve(Common),
}

fn parse_grid(text: &str) -> Result<(usize, usize), String> {
    let mut parts = text.split('x');
    let t = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad --grid `{text}`, expected e.g. 64x200"))?;
    let x = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad --grid `{text}`, expected e.g. 64x200"))?;
    if parts.next().is_some() {
        return Err(format!("bad --grid `{text}`, expected e.g. 64x200"));
    }
    Ok((t, x))
}

fn run(command: Command, common: &Common) -> ExitCode {
    let grid = match common.grid.as_deref().map(parse_grid).transpose() {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let flags = Flags {
        samples: common.samples,
        tol: common.tol,
        tol_pde: common.tol_pde,
        connection: if common.connection == "trivial" {
            ConnectionChoice::Trivial
        } else {
            ConnectionChoice::Spec
        },
        latex: common.latex,
        grid,
    };
    let spec = match load_spec(&common.spec) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(command, &spec, &flags) {
        Ok(report) => {
            let json = report.to_json();
            println!("{json}");
            if let Some(path) = &common.json {
                if let Err(e) = std::fs::write(path, &json) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Cmd::Derive(c) => run(Command::Derive, c),
        Cmd::Classify(c) => run(Command::Classify, c),
        Cmd::Verify(c) => run(Command::Verify, c),
        Cmd::Solve(c) => run(Command::Solve, c),
    }
}
