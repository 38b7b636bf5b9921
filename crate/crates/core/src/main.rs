use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mhbench::backends::{self, MockSpec};
use mhbench::corpus::{dataset_stats, tokens::HeuristicCounter, Record};
use mhbench::metrics::table::Table;
use mhbench::prompt::PromptEngine;
use mhbench::runner::{
    export_finetune, load_config, prepare_datasets, run_dir_for, run_experiment, write_report, ExperimentConfig,
    RunError, RunOptions, RunPlan,
};

const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_BACKEND: u8 = 4;

#[derive(Parser)]
#[command(name = "mhbench", version, about = "Prompted LLM evaluation on mental-health classification tasks")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Mock rule file answering for every model instead of its backend.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Keep scored records of an earlier run and only run missing cells.
    #[arg(long, global = true)]
    resume: bool,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config, data files and backend settings.
    Validate,
    /// Preview cell counts.
    Plan,
    /// Run the experiment matrix.
    Run,
    /// Re-render tables from a run directory.
    Report {
        /// Run directory; derived from the config when absent.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Export instruction-finetuning pairs and a manifest.
    ExportFt,
    /// Print dataset statistics.
    Stats,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure {
            code: if e.is_config() { EXIT_CONFIG } else { EXIT_ERROR },
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.to_string(),
    }
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, Option<MockSpec>), Failure> {
    let mut config = load_config(&cli.config).map_err(config_failure)?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let mock = match &cli.mock {
        Some(p) => Some(MockSpec::load(p).map_err(config_failure)?),
        None => None,
    };
    Ok((config, mock))
}

fn engine_for(config: &ExperimentConfig) -> Result<PromptEngine, Failure> {
    let catalog = match &config.catalog {
        Some(p) => mhbench::prompt::StrategyCatalog::load(p).map_err(|e| config_failure(format!("{}: {e}", p.display())))?,
        None => mhbench::prompt::StrategyCatalog::builtin(),
    };
    Ok(PromptEngine::new(catalog))
}

fn validate(cli: &Cli) -> Result<u8, Failure> {
    let (config, mock) = load(cli)?;
    engine_for(&config)?;
    for m in &config.models {
        backends::from_config(m, mock.as_ref()).map_err(config_failure)?;
    }
    let datasets = prepare_datasets(&config)?;
    for d in &datasets {
        println!(
            "dataset {} (task {}): {} train, {} test",
            d.name,
            d.task.task_id,
            d.split.train.len(),
            d.split.test.len()
        );
    }
    println!("config OK: {} dataset(s), {} model(s)", datasets.len(), config.models.len());
    Ok(0)
}

fn plan(cli: &Cli) -> Result<u8, Failure> {
    let (config, mock) = load(cli)?;
    let engine = engine_for(&config)?;
    let datasets = prepare_datasets(&config)?;
    let digest = config.digest(mock.as_ref()).map_err(config_failure)?;
    let plan = RunPlan::build(&config, &datasets, &engine, &digest);
    let mut table = Table::new(["row", "dataset", "variants", "repeats", "cells"].map(String::from).to_vec());
    for g in &plan.groups {
        table.push(vec![
            g.key.row_label(),
            format!("{} #{}", g.key.dataset, g.key.task),
            g.variants.to_string(),
            g.repeats.to_string(),
            g.expected.to_string(),
        ]);
    }
    print!("{}", table.to_text());
    println!("total cells: {}", plan.total_cells);
    println!("run directory: {}", config.output_dir.join(&digest[..16]).display());
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let (config, mock) = load(cli)?;
    let outcome = run_experiment(
        &config,
        &RunOptions {
            resume: cli.resume,
            mock,
        },
    )?;
    print!("{}", outcome.report.summary_text);
    println!();
    println!(
        "{}/{} cells scored ({} resumed), {} backend error(s); run directory {}",
        outcome.scored,
        outcome.total_cells,
        outcome.resumed,
        outcome.backend_errors,
        outcome.run_dir.display()
    );
    if !outcome.aborted_lanes.is_empty() {
        eprintln!("aborted model lanes: {}", outcome.aborted_lanes.join(", "));
        return Ok(EXIT_BACKEND);
    }
    Ok(if outcome.complete { 0 } else { EXIT_PARTIAL })
}

fn report(cli: &Cli, run_dir: Option<&Path>) -> Result<u8, Failure> {
    let dir = match run_dir {
        Some(d) => d.to_path_buf(),
        None => {
            let (config, mock) = load(cli)?;
            run_dir_for(&config, mock.as_ref())?
        }
    };
    let report = write_report(&dir)?;
    println!("{}", report.summary_text);
    println!("{}", report.deltas_text);
    print!("{}", report.best_text);
    Ok(0)
}

fn export_ft(cli: &Cli) -> Result<u8, Failure> {
    let (config, _) = load(cli)?;
    let digest = config.digest(None).map_err(config_failure)?;
    let dir = config.output_dir.join(format!("finetune-{}", &digest[..16]));
    let (summary, manifest) = export_finetune(&config, &dir)?;
    for s in &summary.sources {
        println!(
            "{} #{}: {} of {} train pairs, {} eval prompts",
            s.source, s.task_id, s.train_exported, s.train_available, s.test
        );
    }
    println!(
        "{} training lines, {} eval lines, epochs_hint {} -> {}",
        summary.train_lines,
        summary.eval_lines,
        manifest.epochs_hint,
        dir.display()
    );
    Ok(0)
}

fn stats(cli: &Cli) -> Result<u8, Failure> {
    let (config, _) = load(cli)?;
    let counter = HeuristicCounter::raw();
    let mut table = Table::new(["dataset", "split", "summary"].map(String::from).to_vec());
    for d in prepare_datasets(&config)? {
        let all: Vec<Record> = d.split.train.iter().chain(&d.split.test).cloned().collect();
        for (name, records) in [("train", &d.split.train), ("test", &d.split.test), ("all", &all)] {
            let line = match dataset_stats(records, &d.task, &counter) {
                Ok(s) => s.summary_line(),
                Err(e) => e.to_string(),
            };
            table.push(vec![format!("{} #{}", d.name, d.task.task_id), name.into(), line]);
        }
    }
    print!("{}", table.to_text());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate => validate(&cli),
        Command::Plan => plan(&cli),
        Command::Run => run(&cli),
        Command::Report { run_dir } => report(&cli, run_dir.as_deref()),
        Command::ExportFt => export_ft(&cli),
        Command::Stats => stats(&cli),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
