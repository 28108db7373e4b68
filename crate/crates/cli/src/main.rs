use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bloomlab_cli::{run, Overrides, Subcommand as Cmd};

/// Finite dyadic-grid laboratory: exact Haar-calculus identity suites,
/// weighted commutator norm studies and lower-bound functionals on the unit
/// square.
#[derive(Parser)]
#[command(name = "bloomlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config file (sections: experiment fields, weights, operators, b).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid depth L (cells are 2^-L on a side).
    #[arg(long)]
    depth: Option<u32>,
    /// Integrability exponent p > 1 (norms are certified only at p = 2).
    #[arg(long)]
    p: Option<f64>,
    /// Master seed; every random quantity derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials.
    #[arg(long)]
    trials: Option<u32>,
    /// JSON report path (stdout when omitted). Written atomically.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV path with the fixed per-trial column layout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Product-BMO mode: auto | exact | greedy | rect.
    #[arg(long)]
    mode: Option<String>,
    /// Pin summation and scheduling order (runs are deterministic even
    /// without this; the flag records the contract in the config echo).
    #[arg(long)]
    reproducible: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Product-decomposition and commutator-decomposition identity suites.
    Identities(RunArgs),
    /// Square-function, maximal-function and paraproduct ratio studies.
    Lemmas(RunArgs),
    /// Nested-commutator norm over product-BMO norm, per trial.
    Bloom(RunArgs),
    /// Weak-type functional, little-bmo norm and sub-step checks.
    LowerBound(RunArgs),
    /// Coordinate-ascent search for ratio-extremal symbols.
    Extremize(RunArgs),
    /// H^1-BMO duality pairing ratios.
    Duality(RunArgs),
    /// Certified operator norms of the configured model operators.
    Norms(RunArgs),
}

fn to_overrides(a: &RunArgs) -> Overrides {
    Overrides {
        config: a.config.clone(),
        depth: a.depth,
        p: a.p,
        seed: a.seed,
        trials: a.trials,
        out: a.out.clone(),
        csv: a.csv.clone(),
        mode: a.mode.clone(),
        reproducible: a.reproducible,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("BLOOMLAB_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Command::Identities(a) => (Cmd::Identities, a),
        Command::Lemmas(a) => (Cmd::Lemmas, a),
        Command::Bloom(a) => (Cmd::Bloom, a),
        Command::LowerBound(a) => (Cmd::LowerBound, a),
        Command::Extremize(a) => (Cmd::Extremize, a),
        Command::Duality(a) => (Cmd::Duality, a),
        Command::Norms(a) => (Cmd::Norms, a),
    };
    ExitCode::from(run(cmd, &to_overrides(args)) as u8)
}
