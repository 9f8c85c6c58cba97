//! Command-line entry point.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand};

use osquant::cli::{
    merge_sections, run, run_subcommand, summary_lines, write_outputs, write_report, Context, Report, RunConfig,
    Subcommand, Verdict, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(
    name = "osquant",
    version,
    about = "Reflection-positivity quantization checks for the lattice free field"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration (defaults to the desk configuration).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or set OSQUANT_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Restrict to the named check key(s), e.g. --only C2 --only FE1.
    #[arg(long, global = true)]
    only: Vec<String>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(ClapSubcommand, Clone, Copy)]
enum Command {
    /// Run every check and write report.json and the CSV artifacts.
    Run,
    /// Hypotheses C1-C3: invariance, reflection positivity, growth.
    CheckRp,
    /// Transfer matrix, Hamiltonian, momenta and the spectral condition.
    Spectrum,
    /// Field energy bound and local field operators.
    Bounds,
    /// Derivative bound of regularized fields and complex-time continuation.
    Analyticity,
    /// Rank of localized generator families (density of the span).
    Density,
    /// Merge the sections written by the other subcommands into report.json.
    Report,
    /// Print the desk configuration as JSON.
    DefaultConfig,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> osquant::Result<ExitCode> {
    let args = Args::parse();
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    for key in &args.only {
        if Subcommand::owning(key).is_none() {
            return Err(osquant::Error::Config(format!(
                "unknown check {key}; known: {}",
                osquant::cli::all_checks().join(", ")
            )));
        }
    }

    let sub = match args.command {
        Command::DefaultConfig => {
            say(&serde_json::to_string_pretty(&RunConfig::default())?);
            return Ok(ExitCode::SUCCESS);
        }
        Command::Run => {
            let (report, ctx) = run(&config, &args.only)?;
            let section = osquant::cli::Section {
                checks: report.checks.clone(),
                constants: report.constants.clone(),
            };
            write_outputs(&out_dir, None, &section, &ctx)?;
            let path = write_report(&out_dir, &report)?;
            return Ok(finish(&report, Some(path)));
        }
        Command::Report => {
            let report = merge_sections(&config, &out_dir)?;
            let path = write_report(&out_dir, &report)?;
            return Ok(finish(&report, Some(path)));
        }
        Command::CheckRp => Subcommand::CheckRp,
        Command::Spectrum => Subcommand::Spectrum,
        Command::Bounds => Subcommand::Bounds,
        Command::Analyticity => Subcommand::Analyticity,
        Command::Density => Subcommand::Density,
    };
    let mut ctx = Context::new(&config)?;
    let section = run_subcommand(&mut ctx, sub, &args.only);
    write_outputs(&out_dir, Some(sub), &section, &ctx)?;
    let report = Report::new(&config, section);
    Ok(finish(&report, None))
}

fn finish(report: &Report, path: Option<PathBuf>) -> ExitCode {
    for line in summary_lines(&report.checks) {
        say(&line);
    }
    if let Some(p) = path {
        say(&format!("wrote {}", p.display()));
    }
    if report.checks.values().any(|c| c.verdict == Verdict::Fail) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

/// Print a line, ignoring a closed stdout (e.g. piped into `head`).
fn say(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}
