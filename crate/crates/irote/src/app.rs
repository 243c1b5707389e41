//! The workflows behind each command, independent of argument parsing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use irote_core::backend::{ChatBackend, Metered};
use irote_core::config::BackendKind;
use irote_core::evocativeness::Scored;
use irote_core::mock::MockBackend;
use irote_core::orchestrator::{Optimizer, RunLog};
use irote_core::trait_eval::{administer, AdministerReport, QuestionnaireEvaluator};
use irote_core::trait_model::{Questionnaire, TraitSystem, TraitSystemId};
use irote_core::RunConfig;

use crate::bank::{self, bundled};
use crate::cache::{CacheStats, Cached, ResponseCache};
use crate::gateway::Concurrent;
use crate::live::{LiveBackend, LiveConfig, API_KEY_VAR};
use crate::report::EvaluationExport;
use crate::rundir::{FinalReflection, RunDir};
use crate::settings;

/// Cache over bounded fan-out over a call counter over the real backend.
pub type Stack = Cached<Concurrent<Metered<Box<dyn ChatBackend>>>>;

/// Backend named by the config. The seeded mock needs no credentials.
pub fn base_backend(config: &RunConfig, api_key: Option<&str>) -> Result<Box<dyn ChatBackend>> {
    Ok(match config.backend.kind {
        BackendKind::Mock => Box::new(MockBackend::standard(config.seed)),
        BackendKind::Live => {
            let key = api_key.filter(|k| !k.trim().is_empty()).ok_or_else(|| {
                anyhow!("the live backend needs an API key: export {API_KEY_VAR}=<key>, or pass --backend mock")
            })?;
            Box::new(LiveBackend::new(LiveConfig::new(&config.backend.endpoint, &config.backend.model, key)))
        }
    })
}

pub fn stack(base: Box<dyn ChatBackend>, concurrency: usize, cache_dir: &Path) -> Result<Stack> {
    let cache = ResponseCache::open(cache_dir).with_context(|| format!("opening cache in {}", cache_dir.display()))?;
    Ok(Cached::new(Concurrent::new(Metered::new(base), concurrency), cache))
}

/// Calls that reached the backend below the cache.
pub fn inner_calls(stack: &Stack) -> u64 {
    stack.inner().inner().requests()
}

pub fn load_system(id: TraitSystemId) -> TraitSystem {
    bundled::system(id)
}

/// The bank at `path`, or the bundled sample bank of `system`.
pub fn load_questionnaire(path: Option<&str>, system: &TraitSystem) -> Result<Questionnaire> {
    match path {
        None => Ok(bundled::questionnaire(system.id)),
        Some(p) => {
            let text = bank::read(Path::new(p))?;
            Ok(bank::parse_questionnaire(&text, p, system)?)
        }
    }
}

pub fn default_out(config: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}_{}_s{}", config.system_id, config.dimension_id, config.seed))
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub config: RunConfig,
    pub out: PathBuf,
    pub resume: bool,
    pub evaluate: bool,
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub run_dir: PathBuf,
    pub log: RunLog,
    pub best: Scored,
    pub final_reflection: FinalReflection,
    pub evaluation: Option<AdministerReport>,
    pub cache: CacheStats,
    /// Calls that missed the cache.
    pub inner_calls: u64,
}

pub fn optimize(options: &OptimizeOptions, api_key: Option<&str>) -> Result<OptimizeOutcome> {
    let base = base_backend(&options.config, api_key)?;
    optimize_with(options, base)
}

/// [`optimize`] against a caller-supplied backend.
pub fn optimize_with(options: &OptimizeOptions, base: Box<dyn ChatBackend>) -> Result<OptimizeOutcome> {
    let config = &options.config;
    config.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
    let dir = RunDir::new(&options.out);
    let previous = if options.resume {
        if !dir.has_log() {
            bail!("{} holds no run log to resume", dir.root().display());
        }
        Some(dir.read_log()?)
    } else {
        if dir.has_log() {
            bail!("{} already holds a run; pass --resume {0} to continue it", dir.root().display());
        }
        None
    };
    dir.create()?;
    if previous.is_none() {
        dir.write_config(config)?;
    }

    let system = load_system(config.system_id);
    let questionnaire = load_questionnaire(config.questionnaire.as_deref(), &system)?;
    let evaluator = QuestionnaireEvaluator::new(&questionnaire).with_epsilon(config.cond_prob.epsilon);
    let backend = stack(base, config.backend.concurrency, &dir.cache_dir(config))?;

    let start = Instant::now();
    let clock = move || start.elapsed().as_millis() as u64;
    let mut optimizer = match previous {
        Some(log) => {
            let done = log.iterations.len();
            let opt = Optimizer::resume(&backend, config, &system, &evaluator, log)?;
            log::info!("resuming after iteration {done} of {}", config.iterations);
            opt
        }
        None => {
            let prompts = questionnaire.task_prompts(&config.dimension_id);
            Optimizer::new(&backend, config, &system, &prompts, &evaluator)?
        }
    }
    .with_clock(&clock);

    let result = drive(&mut optimizer, &dir);
    let log = optimizer.into_log();
    dir.write_log(&log)?;
    let best = result?;

    let final_reflection = dir.write_final(&best, &log)?;
    let evaluation = if options.evaluate {
        let report = administer(&backend, &system, &questionnaire, &best.reflection.render(), config.inference_params(), config.seed)?;
        dir.write_evaluation(&EvaluationExport::from(&report))?;
        Some(report)
    } else {
        None
    };
    Ok(OptimizeOutcome {
        run_dir: options.out.clone(),
        best,
        final_reflection,
        evaluation,
        cache: backend.stats(),
        inner_calls: inner_calls(&backend),
        log,
    })
}

fn drive(optimizer: &mut Optimizer<'_>, dir: &RunDir) -> Result<Scored> {
    if optimizer.log().initial.is_none() {
        optimizer.initialize()?;
        let init = optimizer.log().initial.as_ref().expect("initialized");
        dir.write_initial(init)?;
        dir.write_log(optimizer.log())?;
        log::info!("initialized: {} candidates", init.candidates.len());
    }
    while let Some(t) = optimizer.step()? {
        let it = optimizer.log().iterations.last().expect("step logged");
        dir.write_iteration(it)?;
        dir.write_log(optimizer.log())?;
        log::info!("iteration {t}: selected R2 {:.6}", it.selection().total);
    }
    optimizer.log().best.clone().ok_or_else(|| anyhow!("run finished without a best reflection"))
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub config: RunConfig,
    /// Reflection text; empty runs the no-reflection baseline.
    pub reflection: String,
    pub questionnaire: Option<String>,
    pub out: Option<PathBuf>,
}

pub fn evaluate(options: &EvaluateOptions, api_key: Option<&str>) -> Result<(AdministerReport, CacheStats)> {
    let base = base_backend(&options.config, api_key)?;
    evaluate_with(options, base)
}

pub fn evaluate_with(options: &EvaluateOptions, base: Box<dyn ChatBackend>) -> Result<(AdministerReport, CacheStats)> {
    let config = &options.config;
    let (system, questionnaire) = match &options.questionnaire {
        Some(path) => {
            let text = bank::read(Path::new(path))?;
            let system = load_system(bank::bank_system(&text, path)?);
            let q = bank::parse_questionnaire(&text, path, &system)?;
            (system, q)
        }
        None => {
            let system = load_system(config.system_id);
            let q = load_questionnaire(config.questionnaire.as_deref(), &system)?;
            (system, q)
        }
    };
    let cache_dir = match (&config.cache_dir, &options.out) {
        (Some(d), _) => PathBuf::from(d),
        (None, Some(out)) => out.join("cache"),
        (None, None) => std::env::temp_dir().join("irote-evaluate-cache"),
    };
    let backend = stack(base, config.backend.concurrency, &cache_dir)?;
    let report = administer(&backend, &system, &questionnaire, options.reflection.trim(), config.inference_params(), config.seed)?;
    if let Some(out) = &options.out {
        let dir = RunDir::new(out);
        dir.create()?;
        dir.write_evaluation(&EvaluationExport::from(&report))?;
    }
    Ok((report, backend.stats()))
}

/// Reads a reflection from plain text or from a `final/reflection.json`.
pub fn read_reflection(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let record: FinalReflection =
            serde_json::from_str(&text).with_context(|| format!("{} is not a reflection record", path.display()))?;
        return Ok(record.rendered);
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScoreCheck {
    pub r2_records: usize,
    pub compactness_breakdowns: usize,
    pub mismatches: Vec<String>,
}

/// Recomputes every logged R2 record and compactness breakdown from its
/// terms and compares the totals bit for bit.
pub fn score(log: &RunLog) -> Result<ScoreCheck> {
    let mut check = ScoreCheck::default();
    let mut r2 = |label: String, record: &irote_core::evocativeness::R2Record| -> Result<()> {
        let again = record.recompute()?;
        check.r2_records += 1;
        if again.total.to_bits() != record.total.to_bits() {
            check.mismatches.push(format!("{label}: logged {} recomputed {}", record.total, again.total));
        }
        Ok(())
    };
    if let Some(init) = &log.initial {
        for (i, c) in init.candidates.iter().enumerate() {
            r2(format!("init candidate {i}"), &c.record)?;
        }
    }
    for it in &log.iterations {
        for (i, c) in it.pool.iter().enumerate() {
            r2(format!("iteration {} pool {i}", it.iteration), &c.record)?;
        }
        for (i, c) in it.refined.iter().enumerate() {
            r2(format!("iteration {} refined {i}", it.iteration), &c.record)?;
        }
    }
    for it in &log.iterations {
        for (i, b) in it.compactness.breakdowns.iter().enumerate() {
            let again = b.recompute()?;
            check.compactness_breakdowns += 1;
            for (name, a, z) in [
                ("total", b.total, again.total),
                ("fidelity", b.fidelity_term, again.fidelity_term),
                ("contrast", b.contrast_term, again.contrast_term),
            ] {
                if a.to_bits() != z.to_bits() {
                    check.mismatches.push(format!("iteration {} summary {i} {name}: logged {a} recomputed {z}", it.iteration));
                }
            }
        }
    }
    Ok(check)
}

pub fn read_run(dir: &Path) -> Result<RunLog> {
    RunDir::new(dir).read_log()
}

/// Writes a starter config plus editable copies of the bundled sample banks. Existing files are left alone; returns what was written.
pub fn init(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(PathBuf, &str)> = vec![(dir.join("irote.toml"), settings::DEFAULT_CONFIG)];
    for (id, text) in bundled::BANKS {
        files.push((dir.join("banks").join(format!("{id}.toml")), text));
    }
    let mut written = Vec::new();
    for (path, text) in files {
        if path.exists() {
            log::warn!("{} exists, left unchanged", path.display());
            continue;
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
