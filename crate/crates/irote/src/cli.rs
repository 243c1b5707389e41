//! Argument parsing and command dispatch.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Results go to
//! stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use irote_core::config::BackendKind;
use irote_core::trait_model::TraitSystemId;
use irote_core::RunConfig;

use crate::app;
use crate::report;
use crate::rundir::RunDir;
use crate::settings::{self, Overrides};

#[derive(Debug, Parser)]
#[command(name = "irote", version, about = "Optimize a compact self-reflection that evokes a target trait in a chat model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a starter irote.toml and sample item banks.
    Init {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Run the optimizer and write a run directory.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        /// Run directory (default runs/<SYSTEM>_<DIM>_s<SEED>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run stored in DIR.
        #[arg(long, value_name = "DIR", conflicts_with = "out")]
        resume: Option<PathBuf>,
        /// Administer the questionnaire under the final reflection.
        #[arg(long)]
        evaluate: bool,
    },
    /// Administer a questionnaire with a reflection injected.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Reflection text file, or a final/reflection.json. Omit for the
        /// no-reflection baseline.
        #[arg(long)]
        reflection: Option<PathBuf>,
        /// Item bank (default: the config's bank, else the bundled sample).
        #[arg(long)]
        questionnaire: Option<String>,
        /// Directory for evaluation.json and evaluation.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute every logged score from its terms and compare.
    Score {
        /// Run directory.
        run: PathBuf,
    },
    /// Print the iteration table of a run.
    Report {
        /// Run directory.
        run: PathBuf,
        /// Print the run log as JSON instead.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mock,
    Live,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Live => BackendKind::Live,
        }
    }
}

fn target(s: &str) -> Result<(TraitSystemId, String), String> {
    settings::parse_target(s)
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config file (see `irote init`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Target trait, e.g. STBHV:SEC.
    #[arg(long = "trait", value_name = "SYSTEM:DIM", value_parser = target)]
    pub target: Option<(TraitSystemId, String)>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Chat-completions URL for the live backend.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "T")]
    pub iterations: Option<usize>,
    #[arg(long = "word-budget", value_name = "N")]
    pub word_budget: Option<usize>,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            target: self.target.clone(),
            backend: self.backend.map(Into::into),
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            seed: self.seed,
            iterations: self.iterations,
            word_budget: self.word_budget,
            questionnaire: None,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        settings::resolve(self.config.as_deref(), &self.overrides())
    }
}

/// Parses `argv` and runs it. `api_key` stands in for the environment.
pub fn run(argv: impl IntoIterator<Item = OsString>, api_key: Option<&str>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command, api_key) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command, api_key: Option<&str>) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Command::Init { dir } => {
            let written = app::init(&dir)?;
            for p in &written {
                writeln!(stdout, "wrote {}", p.display())?;
            }
            if written.is_empty() {
                eprintln!("nothing written; every file already exists");
            }
        }
        Command::Optimize { run, out, resume, evaluate } => {
            let (config, out, resume) = match resume {
                Some(dir) => {
                    let snapshot = RunDir::new(&dir).config_path();
                    if !snapshot.exists() {
                        bail!("{} has no {} to resume from", dir.display(), crate::rundir::CONFIG_FILE);
                    }
                    let file = run.config.clone().unwrap_or(snapshot);
                    (settings::resolve(Some(&file), &run.overrides())?, dir, true)
                }
                None => {
                    let config = run.resolve()?;
                    let out = out.unwrap_or_else(|| app::default_out(&config));
                    (config, out, false)
                }
            };
            let outcome = app::optimize(&app::OptimizeOptions { config, out, resume, evaluate }, api_key)?;
            eprintln!(
                "run directory {}  (cache hits {}, misses {}, backend calls {})",
                outcome.run_dir.display(),
                outcome.cache.hits,
                outcome.cache.misses,
                outcome.inner_calls
            );
            writeln!(stdout, "{}", outcome.final_reflection.rendered)?;
            if let Some(report) = &outcome.evaluation {
                write!(stdout, "\n{}", report::dimension_table(&report.dimensions))?;
            }
        }
        Command::Evaluate { run, reflection, questionnaire, out } => {
            let config = run.resolve()?;
            let reflection = match reflection {
                Some(p) => app::read_reflection(&p)?,
                None => String::new(),
            };
            let (report, _) = app::evaluate(&app::EvaluateOptions { config, reflection, questionnaire, out }, api_key)?;
            write!(stdout, "{}", report::dimension_table(&report.dimensions))?;
        }
        Command::Score { run } => {
            let log = app::read_run(&run)?;
            let check = app::score(&log)?;
            if !check.mismatches.is_empty() {
                for m in &check.mismatches {
                    eprintln!("mismatch: {m}");
                }
                bail!("{} recomputed scores differ from the log", check.mismatches.len());
            }
            writeln!(
                stdout,
                "{} R2 records and {} compactness breakdowns reproduce exactly",
                check.r2_records, check.compactness_breakdowns
            )?;
            if let Some(best) = &log.best {
                writeln!(stdout, "best R2 {:.6}", best.total)?;
            }
        }
        Command::Report { run, json } => {
            let log = app::read_run(&run)?;
            if json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&log)?)?;
            } else {
                write!(stdout, "{}", report::run_summary(&log))?;
                let eval = RunDir::new(&run).evaluation_path("txt");
                if eval.exists() {
                    write!(stdout, "\n{}", std::fs::read_to_string(eval)?)?;
                }
            }
        }
    }
    Ok(())
}
