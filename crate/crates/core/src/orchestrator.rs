//! The optimization loop.
//!
//! Initialization generates `init_pool` one-line reflections, samples task
//! responses with no reflection, and keeps the `working_set` best by R2. Each
//! iteration then
//!
//! 1. compacts the working set into one summary `ê`,
//! 2. samples task responses under `ê`,
//! 3. scores the working set plus `ê` on those responses,
//! 4. refines that scored pool into `init_pool` new candidates,
//! 5. scores them and keeps the `working_set` best, carrying the best
//!    reflection seen so far when enabled.
//!
//! The whole state lives in the [`RunLog`], so a run can be resumed from a
//! persisted log.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{ChatBackend, Metered};
use crate::compactness::{select_compact, CompactnessOutcome};
use crate::config::RunConfig;
use crate::context::Context;
use crate::error::{Error, Result};
use crate::evocativeness::{r2_score_many, refine, sample_responses, select_top, R2Record, RefineTrace, ResponseSet, Scored};
use crate::reflection::{generate_initial, Reflection};
use crate::trait_eval::TraitEvaluator;
use crate::trait_model::{TaskPrompt, TraitSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub reflection: Reflection,
    pub record: R2Record,
}

impl ScoredRecord {
    pub fn scored(&self) -> Scored {
        Scored::new(self.reflection.clone(), self.record.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedRecord {
    pub reflection: Reflection,
    pub record: R2Record,
    pub trace: RefineTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitLog {
    pub candidates: Vec<ScoredRecord>,
    pub responses: ResponseSet,
    pub working_set: Vec<Scored>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u32,
    /// Working set entering the iteration.
    pub working_set: Vec<Scored>,
    pub compactness: CompactnessOutcome,
    pub responses: ResponseSet,
    /// The working set followed by the compacted reflection.
    pub pool: Vec<ScoredRecord>,
    pub refined: Vec<RefinedRecord>,
    /// Working set leaving the iteration; its first member is this
    /// iteration's selection.
    pub selected: Vec<Scored>,
    /// The best reflection so far was forced into `selected`.
    pub carried: bool,
}

impl IterationLog {
    pub fn compact(&self) -> &Reflection {
        &self.compactness.selected
    }

    pub fn selection(&self) -> &Scored {
        &self.selected[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseTelemetry {
    pub wall_clock_ms: u64,
    pub backend_calls: u64,
}

/// Everything in a run log that legitimately differs between two otherwise
/// identical runs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Telemetry {
    pub initial: PhaseTelemetry,
    pub iterations: Vec<PhaseTelemetry>,
}

impl Telemetry {
    pub fn backend_calls(&self) -> u64 {
        self.initial.backend_calls + self.iterations.iter().map(|p| p.backend_calls).sum::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub config_digest: String,
    pub system_id: String,
    pub dimension_id: String,
    pub backend_id: String,
    pub prompts: Vec<TaskPrompt>,
    pub initial: Option<InitLog>,
    pub iterations: Vec<IterationLog>,
    /// Highest-scoring selection over all iterations so far.
    pub best: Option<Scored>,
    pub completed: bool,
    pub aborted: Option<String>,
    #[serde(default)]
    pub telemetry: Telemetry,
}

impl RunLog {
    pub fn new(config: &RunConfig, backend_id: &str, prompts: Vec<TaskPrompt>) -> Self {
        Self {
            config: config.clone(),
            config_digest: config.digest(),
            system_id: config.system_id.as_str().into(),
            dimension_id: config.dimension_id.clone(),
            backend_id: backend_id.into(),
            prompts,
            initial: None,
            iterations: Vec::new(),
            best: None,
            completed: false,
            aborted: None,
            telemetry: Telemetry::default(),
        }
    }

    /// The log with telemetry cleared, for reproducibility comparisons.
    pub fn without_telemetry(&self) -> Self {
        Self { telemetry: Telemetry::default(), ..self.clone() }
    }

    /// Selection score of every completed iteration, in order.
    pub fn selected_totals(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.selection().total).collect()
    }

    pub fn working_set(&self) -> Option<&[Scored]> {
        match self.iterations.last() {
            Some(it) => Some(&it.selected),
            None => self.initial.as_ref().map(|i| i.working_set.as_slice()),
        }
    }

    /// Structural checks on a log read back from disk.
    pub fn check(&self) -> Result<()> {
        let corrupt = |what: String| Err(Error::Input(format!("corrupt run log: {what}")));
        if self.config_digest != self.config.digest() {
            return corrupt("config digest does not match its snapshot".into());
        }
        if !self.iterations.is_empty() && self.initial.is_none() {
            return corrupt("iterations without initialization".into());
        }
        for (i, it) in self.iterations.iter().enumerate() {
            if it.iteration as usize != i + 1 {
                return corrupt(format!("iteration {} at position {}", it.iteration, i + 1));
            }
            if it.selected.is_empty() {
                return corrupt(format!("iteration {} selected nothing", it.iteration));
            }
        }
        if self.iterations.len() > self.config.iterations {
            return corrupt("more iterations than configured".into());
        }
        let max = self.selected_totals().into_iter().fold(f64::NEG_INFINITY, f64::max);
        match &self.best {
            Some(b) if b.total != max => corrupt("best does not hold the maximal selection score".into()),
            None if !self.iterations.is_empty() => corrupt("missing best".into()),
            _ => Ok(()),
        }
    }
}

/// Task prompts used for R2: the first `n` items of the target dimension.
pub fn select_prompts(all: &[TaskPrompt], n: usize) -> Result<Vec<TaskPrompt>> {
    if all.is_empty() {
        return Err(Error::Input("no task prompts for the target dimension".into()));
    }
    if all.len() < n {
        log::warn!("only {} task prompts available, {n} requested", all.len());
    }
    Ok(all.iter().take(n).cloned().collect())
}

type Clock<'a> = &'a dyn Fn() -> u64;

pub struct Optimizer<'a> {
    backend: Metered<&'a dyn ChatBackend>,
    config: &'a RunConfig,
    system_name: &'a str,
    trait_name: String,
    evaluator: &'a dyn TraitEvaluator,
    clock: Option<Clock<'a>>,
    log: RunLog,
}

impl<'a> Optimizer<'a> {
    /// `prompts` are the target dimension's task prompts, in bank order.
    pub fn new(
        backend: &'a dyn ChatBackend,
        config: &'a RunConfig,
        system: &'a TraitSystem,
        prompts: &[TaskPrompt],
        evaluator: &'a dyn TraitEvaluator,
    ) -> Result<Self> {
        config.validate()?;
        if system.id != config.system_id {
            return Err(Error::Config(format!("config targets {}, system is {}", config.system_id, system.id)));
        }
        let trait_name = system.dimension(&config.dimension_id)?.name.clone();
        let prompts = select_prompts(prompts, config.evocativeness.task_prompts)?;
        Ok(Self {
            backend: Metered::new(backend),
            config,
            system_name: system.id.display_name(),
            trait_name,
            evaluator,
            clock: None,
            log: RunLog::new(config, backend.backend_id(), prompts),
        })
    }

    /// Continues from a persisted log. The log must come from the same
    /// configuration.
    pub fn resume(
        backend: &'a dyn ChatBackend,
        config: &'a RunConfig,
        system: &'a TraitSystem,
        evaluator: &'a dyn TraitEvaluator,
        log: RunLog,
    ) -> Result<Self> {
        log.check()?;
        if log.config_digest != config.digest() {
            return Err(Error::Config(format!(
                "run was made with config {}, current config is {}",
                &log.config_digest[..12],
                &config.digest()[..12]
            )));
        }
        let mut me = Self::new(backend, config, system, &log.prompts, evaluator)?;
        me.log = log;
        me.log.aborted = None;
        Ok(me)
    }

    /// Millisecond clock for wall-clock telemetry.
    pub fn with_clock(mut self, clock: Clock<'a>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    pub fn is_done(&self) -> bool {
        self.log.initial.is_some() && self.log.iterations.len() >= self.config.iterations
    }

    fn now(&self) -> u64 {
        self.clock.map_or(0, |c| c())
    }

    fn ctx(&self, iteration: u32) -> Context<'_> {
        Context::new(&self.backend, self.config, self.system_name, &self.trait_name).at_iteration(iteration)
    }

    fn measure<T>(&mut self, f: impl FnOnce(&Self) -> Result<T>) -> Result<(T, PhaseTelemetry)> {
        let (t0, c0) = (self.now(), self.backend.requests());
        let out = f(self);
        if let Err(e) = &out {
            self.log.aborted = Some(e.to_string());
        }
        let phase = PhaseTelemetry {
            wall_clock_ms: self.now().saturating_sub(t0),
            backend_calls: self.backend.requests() - c0,
        };
        Ok((out?, phase))
    }

    /// Generates and scores the initial pool. No-op when already done.
    pub fn initialize(&mut self) -> Result<()> {
        if self.log.initial.is_some() {
            return Ok(());
        }
        let (init, phase) = self.measure(|me| {
            let cfg = me.config;
            let set = generate_initial(
                &me.backend,
                &me.trait_name,
                cfg.init_pool,
                cfg.word_budget,
                cfg.generation_params(),
                cfg.seed,
            )?;
            let ctx = me.ctx(0);
            let candidates = set.into_members();
            let responses = sample_responses(&ctx, &Reflection::empty(), &me.log.prompts, cfg.m2)?;
            let records = r2_score_many(&ctx, &candidates, &responses, me.evaluator)?;
            let candidates: Vec<ScoredRecord> = candidates
                .into_iter()
                .zip(records)
                .map(|(reflection, record)| ScoredRecord { reflection, record })
                .collect();
            let scored: Vec<Scored> = candidates.iter().map(ScoredRecord::scored).collect();
            let working_set = select_top(&scored, cfg.working_set, None);
            Ok(InitLog { candidates, responses, working_set })
        })?;
        self.log.initial = Some(init);
        self.log.telemetry.initial = phase;
        Ok(())
    }

    /// Runs the next iteration and returns its number, or `None` when all
    /// configured iterations are done.
    pub fn step(&mut self) -> Result<Option<u32>> {
        self.initialize()?;
        if self.is_done() {
            self.log.completed = true;
            return Ok(None);
        }
        let t = self.log.iterations.len() as u32 + 1;
        let working: Vec<Scored> = self.log.working_set().expect("initialized").to_vec();
        let carry = self
            .log
            .best
            .clone()
            .or_else(|| working.first().cloned())
            .filter(|_| self.config.carry_forward);

        let (entry, phase) = self.measure(|me| {
            let cfg = me.config;
            let ctx = me.ctx(t);
            let members: Vec<Reflection> = working.iter().map(|s| s.reflection.clone()).collect();
            let compactness = select_compact(&ctx, &members, &cfg.compactness_config())?;
            let responses = sample_responses(&ctx, &compactness.selected, &me.log.prompts, cfg.m2)?;

            let mut pool_members = members;
            pool_members.push(compactness.selected.clone());
            let pool_records = r2_score_many(&ctx, &pool_members, &responses, me.evaluator)?;
            let pool: Vec<ScoredRecord> = pool_members
                .into_iter()
                .zip(pool_records)
                .map(|(reflection, record)| ScoredRecord { reflection, record })
                .collect();
            let pool_scored: Vec<Scored> = pool.iter().map(ScoredRecord::scored).collect();

            let (new, traces): (Vec<Reflection>, Vec<RefineTrace>) =
                refine(&ctx, &pool_scored, cfg.init_pool)?.into_iter().unzip();
            let new_records = r2_score_many(&ctx, &new, &responses, me.evaluator)?;
            let refined: Vec<RefinedRecord> = new
                .into_iter()
                .zip(new_records)
                .zip(traces)
                .map(|((reflection, record), trace)| RefinedRecord { reflection, record, trace })
                .collect();
            let scored: Vec<Scored> =
                refined.iter().map(|r| Scored::new(r.reflection.clone(), r.record.total)).collect();
            let plain = select_top(&scored, cfg.working_set, None);
            let selected = select_top(&scored, cfg.working_set, carry.as_ref());
            let carried = selected != plain;
            Ok(IterationLog {
                iteration: t,
                working_set: working.clone(),
                compactness,
                responses,
                pool,
                refined,
                selected,
                carried,
            })
        })?;

        let pick = entry.selection().clone();
        if self.log.best.as_ref().is_none_or(|b| pick.total > b.total) {
            self.log.best = Some(pick);
        }
        self.log.iterations.push(entry);
        self.log.telemetry.iterations.push(phase);
        if self.is_done() {
            self.log.completed = true;
        }
        Ok(Some(t))
    }

    /// Runs to completion and returns the best reflection.
    pub fn run(&mut self) -> Result<Scored> {
        while self.step()?.is_some() {}
        self.log.best.clone().ok_or(Error::EmptyPool)
    }
}
