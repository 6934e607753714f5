use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use longsig::formats::read_input_text;
use longsig::{Error, Outcome, Pipeline, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "longsig", version, about = "Longitudinal signature and imaging pipeline on synthetic cohorts")]
struct Cli {
    /// `key = value` configuration file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; stage seeds not pinned in the config derive from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    threads: usize,
    /// Output tree; each stage writes into its own subdirectory.
    #[arg(long, global = true, value_name = "DIR", default_value = "longsig-out")]
    out: PathBuf,
    /// Rerun stages even when their inputs and settings are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cohort: events, scans, labels, sequences and ground truth.
    Synth,
    /// Build daily curves and sample cross-sections.
    Curves,
    /// Learn signatures and project scan-day cross-sections.
    Ica,
    /// Cross-validate every configured model.
    Train,
    /// AUCs, bootstrap intervals, Wilcoxon tests and reclassification.
    Eval,
    /// Finite-difference check of the full-size encoder (exit 3 on failure).
    Gradcheck,
    /// synth, curves, ica, train and eval in order, reusing current stages.
    Run,
    /// Print the resolved configuration.
    Config,
}

fn execute(cli: Cli) -> Result<(), Error> {
    let text = match &cli.config {
        Some(path) => read_input_text(path, "config").map_err(|e| match e {
            Error::MissingInput { path, .. } => Error::Usage(format!("config file `{}` not found", path.display())),
            other => other,
        })?,
        None => String::new(),
    };
    let config = RunConfig::parse(&text, cli.seed)?;
    let stage = match cli.command {
        Command::Config => {
            print!("{}", config.render());
            return Ok(());
        }
        Command::Synth => Stage::Synth,
        Command::Curves => Stage::Curves,
        Command::Ica => Stage::Ica,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Gradcheck => Stage::Gradcheck,
        Command::Run => {
            let pipeline = Pipeline::new(cli.out, config, cli.threads, cli.force)?;
            for (stage, outcome) in pipeline.run_all()? {
                if outcome == Outcome::Cached {
                    eprintln!("{}: up to date", stage.name());
                }
            }
            let report = pipeline.dir(Stage::Eval).join("report.txt");
            print!("{}", read_input_text(&report, "eval")?);
            return Ok(());
        }
    };
    let pipeline = Pipeline::new(cli.out, config, cli.threads, cli.force)?;
    if pipeline.run_stage(stage)? == Outcome::Cached {
        eprintln!("{}: up to date", stage.name());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
