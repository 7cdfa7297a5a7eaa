use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mufu_pipeline::{exit_code, Outcome, Pipeline, RunConfig, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "mufu", version, about = "Multilingual fused-prompt translation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Skip the stage when its manifest is still fresh.
    #[arg(long)]
    resume: bool,
    /// Print what would run without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Choose auxiliary languages for every target.
    Plan(StageArgs),
    /// Split the dev set and sample few-shot exemplars.
    Split(StageArgs),
    /// Generate auxiliary and draft translations with the teacher.
    TeacherRun(StageArgs),
    /// Render prompts for the train and eval splits.
    BuildPrompts(StageArgs),
    /// Translate the eval prompts with the student.
    StudentRun(StageArgs),
    /// Write finetuning records for the train split.
    ExportFinetune(StageArgs),
    /// Score student and teacher translations.
    Evaluate(StageArgs),
    /// Aggregate score tables.
    Report(StageArgs),
    /// Build the distillation pool and dataset.
    KdExport(StageArgs),
    /// Summarise attention dumps by prompt segment.
    AttnReport(StageArgs),
    /// Run one stage by name, or `all` in dependency order.
    Run {
        #[command(flatten)]
        args: StageArgs,
        #[arg(long, default_value = "all")]
        stage: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    let (args, stages) = match cli.command {
        Command::Plan(a) => (a, Some(Stage::Plan)),
        Command::Split(a) => (a, Some(Stage::Split)),
        Command::TeacherRun(a) => (a, Some(Stage::TeacherRun)),
        Command::BuildPrompts(a) => (a, Some(Stage::BuildPrompts)),
        Command::StudentRun(a) => (a, Some(Stage::StudentRun)),
        Command::ExportFinetune(a) => (a, Some(Stage::ExportFinetune)),
        Command::Evaluate(a) => (a, Some(Stage::Evaluate)),
        Command::Report(a) => (a, Some(Stage::Report)),
        Command::KdExport(a) => (a, Some(Stage::KdExport)),
        Command::AttnReport(a) => (a, Some(Stage::AttnReport)),
        Command::Run { args, stage } if stage == "all" => (args, None),
        Command::Run { args, stage } => {
            let stage = stage.parse()?;
            (args, Some(stage))
        }
    };
    let pipeline = Pipeline::new(RunConfig::load(&args.config)?)?;
    let stages = match stages {
        Some(s) => vec![s],
        None => pipeline.all_stages(),
    };
    let opts = RunOptions {
        resume: args.resume,
        dry_run: args.dry_run,
    };
    for stage in stages {
        match pipeline.run(stage, opts)? {
            Outcome::Ran { endpoint_calls } => println!("{stage}: done ({endpoint_calls} endpoint calls)"),
            Outcome::Skipped => println!("{stage}: up to date"),
            Outcome::DryRun => {}
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
