use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::{non_empty, ChatBackend, ChatRequest};
use crate::cond_prob::Estimator;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::reflection::Reflection;
use crate::seed;

/// Everything a pass needs to talk to the model.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub backend: &'a dyn ChatBackend,
    pub config: &'a RunConfig,
    /// Display name of the trait system, e.g. "Moral Foundations Theory".
    pub system_name: &'a str,
    /// Name of the target dimension, e.g. "Care".
    pub trait_name: &'a str,
    pub iteration: u32,
}

impl<'a> Context<'a> {
    pub fn new(backend: &'a dyn ChatBackend, config: &'a RunConfig, system_name: &'a str, trait_name: &'a str) -> Self {
        Self { backend, config, system_name, trait_name, iteration: 0 }
    }

    pub fn at_iteration(mut self, iteration: u32) -> Self {
        self.iteration = iteration;
        self
    }

    pub fn estimator(&self) -> Estimator<'a> {
        Estimator::new(self.backend, &self.config.cond_prob, self.config.scoring_params(), self.config.seed)
    }

    pub fn seed_for(&self, site: &str, path: &[u64]) -> u64 {
        let mut full = Vec::with_capacity(path.len() + 2);
        full.push(seed::site(site));
        full.push(u64::from(self.iteration));
        full.extend_from_slice(path);
        seed::derive(self.config.seed, &full)
    }

    /// Runs one generation request per prompt, parsing each answer into a
    /// budget-respecting reflection. Failures are regenerated once with a
    /// fresh seed; a second failure aborts.
    pub(crate) fn generate_reflections(
        &self,
        site: &str,
        prompts: &[(String, Vec<u64>)],
        budgets: &[usize],
        what: &'static str,
    ) -> Result<Vec<Reflection>> {
        let params = self.config.generation_params();
        let request = |i: usize, attempt: u64| {
            let (prompt, path) = &prompts[i];
            let mut p = path.clone();
            p.push(attempt);
            ChatRequest::single(prompt.clone(), params.with_seed(self.seed_for(site, &p)))
        };
        let accept = |text: String, budget: usize| -> Result<Option<Reflection>> {
            let text = non_empty(text)?;
            Ok(Reflection::parse(&text).ok().and_then(|r| r.enforce_budget(budget).ok()))
        };

        let first: Vec<_> = (0..prompts.len()).map(|i| request(i, 0)).collect();
        let mut out: Vec<Option<Reflection>> = Vec::with_capacity(prompts.len());
        for (i, r) in self.backend.complete_batch(&first).into_iter().enumerate() {
            out.push(accept(r?, budgets[i])?);
        }
        let failed: Vec<usize> = (0..out.len()).filter(|&i| out[i].is_none()).collect();
        if !failed.is_empty() {
            log::warn!("{what}: {} outputs unusable, regenerating", failed.len());
            let retry: Vec<_> = failed.iter().map(|&i| request(i, 1)).collect();
            for (&i, r) in failed.iter().zip(self.backend.complete_batch(&retry)) {
                out[i] = accept(r?, budgets[i])?;
            }
        }
        out.into_iter().map(|r| r.ok_or(Error::Unparseable { what })).collect()
    }
}
