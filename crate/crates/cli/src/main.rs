//! `hidden-vi`: run experiments, self-checks and the experiment catalogue.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use hidden_vi_core::report::write_output;
use hidden_vi_core::verify::{run_verify, VerifyOptions};
use hidden_vi_core::{Error, ExperimentConfig, EXPERIMENTS};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BLOWUP: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hidden-vi",
    version,
    about = "Surrogate-loss solvers for hidden monotone VIs"
)]
struct Cli {
    /// Worker threads for per-seed parallelism.
    #[arg(long, global = true, env = "HIDDEN_VI_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in self-check suites.
    Verify {
        #[arg(long, hide = true)]
        corrupt_jacobian: bool,
    },
    /// List available experiments.
    List {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Verify { corrupt_jacobian } => cmd_verify(corrupt_jacobian),
        Command::List { json } => cmd_list(json),
    }
}

fn cmd_run(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let dir = out
        .or_else(|| cfg.output_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.spec.name()));
    let start = Instant::now();
    let output = match cfg.run() {
        Ok(o) => o,
        Err(
            e @ (Error::InvalidConfig(_)
            | Error::InvalidRegime(_)
            | Error::DimensionMismatch { .. }),
        ) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BLOWUP);
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let manifest = match write_output(&dir, &cfg, &output, wall_ms) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!(
        "{}: {} runs, {} files in {} ({:.0} ms)",
        manifest.experiment,
        manifest.runs.len(),
        manifest.files.len(),
        dir.display(),
        wall_ms
    );
    if manifest.blowups > 0 {
        eprintln!("error: {} runs hit a numerical blowup", manifest.blowups);
        return ExitCode::from(EXIT_BLOWUP);
    }
    ExitCode::SUCCESS
}

fn cmd_verify(corrupt_jacobian: bool) -> ExitCode {
    let report = run_verify(VerifyOptions { corrupt_jacobian });
    println!("{:<40} {:>12} {:>10}  result", "suite", "max_error", "tol");
    for s in &report.suites {
        println!(
            "{:<40} {:>12.3e} {:>10.1e}  {}",
            s.name,
            s.max_error,
            s.tol,
            if s.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed suites: {}", report.failures().join(", "));
        ExitCode::from(EXIT_VERIFY_FAILED)
    }
}

fn cmd_list(json: bool) -> ExitCode {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&EXPERIMENTS).expect("static catalogue")
        );
    } else {
        for e in &EXPERIMENTS {
            println!("{:<18} {:<11} {}", e.name, e.figure, e.description);
        }
    }
    ExitCode::SUCCESS
}
