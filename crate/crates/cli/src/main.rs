mod config;
mod eval;
mod oracle;
mod output;
mod scan;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Few-photon scattering off a local system coupled to a chiral waveguide.
#[derive(Debug, Parser)]
#[command(name = "wgqed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Connected density (and optionally every support) at one frequency configuration.
    Eval(eval::EvalArgs),
    /// Connected density along a total-detuning grid.
    Scan(scan::ScanArgs),
    /// Run named self-check suites.
    Verify(verify::VerifyArgs),
    /// Lattice wave-packet simulation compared against the closed forms.
    Oracle(oracle::OracleArgs),
}

pub enum Outcome {
    Success,
    ChecksFailed,
}

/// Thread count from `WGQED_THREADS`; rayon's default otherwise.
fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("WGQED_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("WGQED_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            anyhow::bail!("WGQED_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Eval(a) => eval::run(a),
        Command::Scan(a) => scan::run(a),
        Command::Verify(a) => verify::run(a),
        Command::Oracle(a) => oracle::run(a),
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
