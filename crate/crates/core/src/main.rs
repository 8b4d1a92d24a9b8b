use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use surfevo::harness::{load_config, run, ExperimentKind};
use surfevo::Error;

#[derive(Parser)]
#[command(name = "surfevo", version, about = "Advection-diffusion on evolving surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and write VTK snapshots and diagnostics
    Solve(RunArgs),
    /// Refinement study against a closed-form solution
    Converge(RunArgs),
    /// Sensitivity to a perturbed reaction coefficient
    Perturb(RunArgs),
    /// Observed order of the trajectory integrators
    FlowTest(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Validation(format!("expected --key, got {arg:?}")));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| Error::Validation(format!("missing value for --{key}")))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: {kind}: {line}");
    ExitCode::from(if kind == "numerical" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("validation", &e.to_string().lines().next().unwrap_or("bad arguments").replace("error: ", ""));
        }
    };
    let (kind, args) = match cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Converge(a) => (ExperimentKind::Converge, a),
        Command::Perturb(a) => (ExperimentKind::Perturb, a),
        Command::FlowTest(a) => (ExperimentKind::FlowTest, a),
    };
    let result = parse_overrides(&args.overrides)
        .and_then(|o| load_config(args.config.as_deref(), args.out.as_deref(), &o))
        .and_then(|cfg| run(kind, &cfg));
    match result {
        Ok(summary) => {
            for line in summary.lines {
                println!("{line}");
            }
            for f in summary.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
