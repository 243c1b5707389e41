//! Prompt-based estimation of P(text_1 | text_2) against a black-box model.
//!
//! Each (template, slot order) pair is one scoring call answered on a 0-10
//! scale; the mean score divided by 10, clamped to `[epsilon, 1]`, is the
//! probability.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{ChatBackend, ChatRequest, GenerationParams};
use crate::error::{Error, Result};
use crate::seed;
use crate::templates::{self, ProbabilityTemplate, SlotOrder};
use crate::text::first_integer_in_range;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondProbConfig {
    pub templates: Vec<ProbabilityTemplate>,
    pub orders: Vec<SlotOrder>,
    pub epsilon: f64,
}

impl Default for CondProbConfig {
    fn default() -> Self {
        Self {
            templates: ProbabilityTemplate::ALL.to_vec(),
            orders: SlotOrder::ALL.to_vec(),
            epsilon: crate::DEFAULT_EPSILON,
        }
    }
}

impl CondProbConfig {
    pub fn forward_only() -> Self {
        Self { orders: alloc::vec![SlotOrder::Forward], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() || self.orders.is_empty() {
            return Err(Error::Config("cond-prob needs at least one template and one order".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config("epsilon must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Scoring calls per estimate.
    pub fn calls_per_estimate(&self) -> usize {
        self.templates.len() * self.orders.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondProbQuery {
    pub text_1: String,
    pub text_2: String,
    pub template_ids: Vec<ProbabilityTemplate>,
    pub orders: Vec<SlotOrder>,
}

impl CondProbQuery {
    pub fn new(text_1: impl Into<String>, text_2: impl Into<String>, config: &CondProbConfig) -> Self {
        Self {
            text_1: text_1.into(),
            text_2: text_2.into(),
            template_ids: config.templates.clone(),
            orders: config.orders.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.text_1.trim().is_empty() || self.text_2.trim().is_empty() {
            return Err(Error::Input("cond-prob texts must be non-empty".into()));
        }
        if self.template_ids.is_empty() || self.orders.is_empty() {
            return Err(Error::Input("cond-prob query needs a template and an order".into()));
        }
        Ok(())
    }

    fn prompts(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.template_ids.len() * self.orders.len());
        for &t in &self.template_ids {
            for &o in &self.orders {
                out.push(templates::probability(t, o, &self.text_1, &self.text_2));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub raw_scores: Vec<f64>,
    pub mean_score: f64,
    pub probability: f64,
}

impl ProbabilityEstimate {
    /// `None` when `raw_scores` is empty.
    pub fn from_scores(raw_scores: Vec<f64>, epsilon: f64) -> Option<Self> {
        if raw_scores.is_empty() {
            return None;
        }
        let mean_score = raw_scores.iter().sum::<f64>() / raw_scores.len() as f64;
        let probability = (mean_score / 10.0).clamp(epsilon, 1.0);
        Some(Self { raw_scores, mean_score, probability })
    }

    pub fn log_prob(&self) -> f64 {
        libm::log(self.probability)
    }
}

pub fn parse_score(response: &str) -> Option<f64> {
    first_integer_in_range(response, 0, 10).map(|v| v as f64)
}

pub struct Estimator<'a> {
    backend: &'a dyn ChatBackend,
    config: &'a CondProbConfig,
    params: GenerationParams,
    run_seed: u64,
}

impl<'a> Estimator<'a> {
    /// `params` are the scoring-call parameters (low temperature).
    pub fn new(backend: &'a dyn ChatBackend, config: &'a CondProbConfig, params: GenerationParams, run_seed: u64) -> Self {
        Self { backend, config, params, run_seed }
    }

    pub fn config(&self) -> &CondProbConfig {
        self.config
    }

    pub fn estimate(&self, query: &CondProbQuery) -> Result<ProbabilityEstimate> {
        let mut out = self.estimate_many(core::slice::from_ref(query))?;
        Ok(out.pop().expect("one query in, one estimate out"))
    }

    pub fn log_prob(&self, query: &CondProbQuery) -> Result<f64> {
        Ok(self.estimate(query)?.log_prob())
    }

    pub fn estimate_pair(&self, text_1: &str, text_2: &str) -> Result<ProbabilityEstimate> {
        self.estimate(&CondProbQuery::new(text_1, text_2, self.config))
    }

    pub fn estimate_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<ProbabilityEstimate>> {
        let queries: Vec<_> = pairs.iter().map(|(a, b)| CondProbQuery::new(*a, *b, self.config)).collect();
        self.estimate_many(&queries)
    }

    /// Issues every scoring call for all queries as one batch. Unparseable
    /// responses are re-asked once with a fresh seed and then dropped.
    pub fn estimate_many(&self, queries: &[CondProbQuery]) -> Result<Vec<ProbabilityEstimate>> {
        for q in queries {
            q.validate()?;
        }
        let prompts: Vec<Vec<String>> = queries.iter().map(CondProbQuery::prompts).collect();
        let flat: Vec<(usize, usize)> = prompts
            .iter()
            .enumerate()
            .flat_map(|(qi, ps)| (0..ps.len()).map(move |pi| (qi, pi)))
            .collect();

        let request = |qi: usize, pi: usize, attempt: u64| {
            let s = seed::derive(self.run_seed, &[seed::site("score"), pi as u64, attempt]);
            ChatRequest::single(prompts[qi][pi].clone(), self.params.with_seed(s))
        };

        let first: Vec<ChatRequest> = flat.iter().map(|&(qi, pi)| request(qi, pi, 0)).collect();
        let mut scores: Vec<Option<f64>> = Vec::with_capacity(flat.len());
        for r in self.backend.complete_batch(&first) {
            scores.push(parse_score(&r?));
        }

        let retry_idx: Vec<usize> = (0..flat.len()).filter(|&i| scores[i].is_none()).collect();
        if !retry_idx.is_empty() {
            let retries: Vec<ChatRequest> =
                retry_idx.iter().map(|&i| request(flat[i].0, flat[i].1, 1)).collect();
            for (&i, r) in retry_idx.iter().zip(self.backend.complete_batch(&retries)) {
                scores[i] = parse_score(&r?);
                if scores[i].is_none() {
                    log::warn!("dropping unparseable score for query {}", flat[i].0);
                }
            }
        }

        let mut per_query: Vec<Vec<f64>> = alloc::vec![Vec::new(); queries.len()];
        for (&(qi, _), s) in flat.iter().zip(scores) {
            if let Some(s) = s {
                per_query[qi].push(s);
            }
        }
        per_query
            .into_iter()
            .map(|raw| ProbabilityEstimate::from_scores(raw, self.config.epsilon).ok_or(Error::AllScoresUnparseable))
            .collect()
    }
}
