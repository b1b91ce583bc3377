//! `mcurv`: curvature, entropy-flow and tensorization reports for reversible
//! Markov chains given as ChainSpec files or builder descriptors.

mod commands;
mod input;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use markov_curv::curvature::CurvatureOptions;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const STRUCTURAL: u8 = 2;
    pub const NONCONVERGENCE: u8 = 3;
    pub const RESIDUAL: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "mcurv", version, about = "Curvature and entropy-flow analysis of reversible Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check reversibility and irreducibility; print the rate table.
    Validate {
        /// ChainSpec path, or `family <name> <params...>`.
        #[arg(required = true, num_args = 1..)]
        input: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Bakry-Emery and Upsilon curvature at every vertex.
    Curvature {
        #[arg(required = true, num_args = 1..)]
        input: Vec<String>,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Heat flow trace with identity residuals and the entropy decay check.
    Flow {
        #[arg(required = true, num_args = 1..)]
        input: Vec<String>,
        /// Initial density: `stationary`, `random:<seed>`, or a JSON array file.
        #[arg(long)]
        rho0: Option<String>,
        /// Final time.
        #[arg(long = "T", default_value_t = 3.0)]
        t_end: f64,
        /// Grid step; defaults to min(0.01, 0.1 / max M1).
        #[arg(long)]
        grid: Option<f64>,
        /// Adds the power-entropy channels for this exponent in (1, 2].
        #[arg(long)]
        p: Option<f64>,
        /// Curvature used for the decay check; estimated when absent.
        #[arg(long)]
        kappa: Option<f64>,
        /// Also write the densities along the trace.
        #[arg(long)]
        densities: bool,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Modified log-Sobolev inequality on seeded sample densities.
    Mlsi {
        #[arg(required = true, num_args = 1..)]
        input: Vec<String>,
        /// Constant alpha; the estimated Upsilon curvature when absent.
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Beckner inequality of order p on seeded sample densities.
    Beckner {
        #[arg(required = true, num_args = 1..)]
        input: Vec<String>,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        kappa: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Curvature of a product chain at the smaller factor constant.
    Tensor {
        #[arg(required = true, num_args = 1..)]
        input: Vec<String>,
        /// Second factor: a ChainSpec path or a quoted `family <name> <params...>`.
        #[arg(long = "with")]
        with: String,
        /// Constant of the first factor; estimated when absent.
        #[arg(long)]
        kappa: Option<f64>,
        /// Constant of the second factor; estimated when absent.
        #[arg(long)]
        kappa2: Option<f64>,
        /// Random fields used for the superadditivity estimate.
        #[arg(long, default_value_t = 20)]
        fields: usize,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print the ChainSpec of a builder family.
    Family {
        name: String,
        #[arg(num_args = 0..)]
        params: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Output path prefix; writes <prefix>.json and, where applicable, <prefix>.csv.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug, Clone, Copy)]
struct SearchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "tol-slack")]
    tol_slack: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// Iteration cap of each quasi-Newton run.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
}

impl SearchArgs {
    fn options(&self) -> CurvatureOptions {
        let d = CurvatureOptions::default();
        CurvatureOptions {
            seed: self.seed,
            tol_slack: self.tol_slack.unwrap_or(d.tol_slack),
            starts: self.starts.unwrap_or(d.starts),
            amplitude: self.amplitude.unwrap_or(d.amplitude),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            ..d
        }
    }
}

fn run(cli: Cli) -> Result<u8, commands::Failure> {
    use commands::*;
    match cli.command {
        Command::Validate { input, out } => validate(&input, out.out.as_deref()),
        Command::Curvature { input, search, out } => curvature(&input, &search.options(), out.out.as_deref()),
        Command::Flow { input, rho0, t_end, grid, p, kappa, densities, search, out } => flow(
            &input,
            &FlowArgs { rho0, t_end, grid, p, kappa, densities, opts: search.options() },
            out.out.as_deref(),
        ),
        Command::Mlsi { input, kappa, samples, search, out } => {
            mlsi(&input, kappa, samples, &search.options(), out.out.as_deref())
        }
        Command::Beckner { input, p, kappa, samples, seed, out } => {
            beckner(&input, p, kappa, samples, seed, out.out.as_deref())
        }
        Command::Tensor { input, with, kappa, kappa2, fields, search, out } => {
            tensor(&input, &with, kappa, kappa2, fields, &search.options(), out.out.as_deref())
        }
        Command::Family { name, params, out } => family(&name, &params, out.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            print!("{}", output::to_json(&f.diagnostic));
            eprintln!("mcurv: {}", f.diagnostic.message);
            ExitCode::from(f.code)
        }
    }
}
