use std::io::Write;
use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};
use infosplit::{run_fit, run_simulate, run_verify, ExitCode, FitArgs, SimulateArgs, VerifyArgs};

/// REML variance-parameter estimation and identity checks for linear mixed models.
#[derive(Parser)]
#[command(name = "infosplit", version)]
struct Cli {
    /// Print a one-line summary to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the variance parameters of a dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// newton-raphson, fisher-scoring or average-information.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        no_intercept: bool,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the identity checks at a given parameter value.
    Verify {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated θ, sigma2 first.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            conflicts_with = "from_fit"
        )]
        theta: Option<Vec<f64>>,
        /// Use theta_hat (and the model) from a fit report.
        #[arg(long)]
        from_fit: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_intercept: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw datasets from a model, or average information matrices over draws.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Write one CSV per replicate into this directory instead of a report.
        #[arg(long)]
        write_datasets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit {
            data,
            config,
            method,
            max_iter,
            no_intercept,
            out,
        } => run_fit(&FitArgs {
            data,
            config,
            method,
            max_iter,
            no_intercept,
            out,
        }),
        Command::Verify {
            data,
            theta,
            from_fit,
            config,
            no_intercept,
            out,
        } => run_verify(&VerifyArgs {
            data,
            theta,
            from_fit,
            config,
            no_intercept,
            out,
        }),
        Command::Simulate {
            config,
            seed,
            replicates,
            write_datasets,
            out,
        } => run_simulate(&SimulateArgs {
            config,
            seed,
            replicates,
            write_datasets,
            out,
        }),
    };
    match outcome {
        Ok(outcome) => {
            if let Some(report) = outcome.report {
                let mut stdout = std::io::stdout().lock();
                if stdout.write_all(report.as_bytes()).is_err() {
                    process::exit(ExitCode::Io.code());
                }
            }
            if cli.verbose {
                eprintln!("{}", outcome.summary);
            }
            process::exit(outcome.exit.code());
        }
        Err(err) => {
            eprintln!("error: {err}");
            process::exit(err.exit_code().code());
        }
    }
}
