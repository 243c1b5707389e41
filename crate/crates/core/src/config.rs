//! Run configuration.
//!
//! Every field has a default, so a partial config document deserializes into a
//! complete [`RunConfig`]. The defaults are the optimizer's reference settings:
//! 10 initial reflections, 3 summaries per candidate, 6 responses per task
//! prompt, beta 1.0, 5 iterations, a 50-word reflection budget and 1024-token
//! responses.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::GenerationParams;
use crate::cond_prob::CondProbConfig;
use crate::compactness::CompactnessConfig;
use crate::error::{Error, Result};
use crate::evocativeness::EvocativenessConfig;
use crate::trait_model::TraitSystemId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Full URL of the chat-completions endpoint (live only).
    pub endpoint: String,
    pub model: String,
    /// Maximum requests in flight.
    pub concurrency: usize,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: String::from("https://api.openai.com/v1/chat/completions"),
            model: String::from("gpt-4o-2024-11-20"),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Scorer calls.
    pub scoring_temperature: f64,
    /// Initialization, paraphrase, summary, refinement and response sampling.
    pub generation_temperature: f64,
    /// Questionnaire administration.
    pub inference_temperature: f64,
    pub top_p: f64,
    pub scoring_max_tokens: u32,
    pub generation_max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            scoring_temperature: 0.01,
            generation_temperature: 1.0,
            inference_temperature: 1.0,
            top_p: 1.0,
            scoring_max_tokens: 16,
            generation_max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompactnessKnobs {
    /// Paraphrases per working candidate (N1).
    pub candidate_paraphrases: usize,
    /// Paraphrases of the concatenated working set (N2).
    pub set_paraphrases: usize,
    /// Summaries sampled per set paraphrase; also sizes the contrastive
    /// denominator (at least 2).
    pub summaries_per_set: usize,
}

impl Default for CompactnessKnobs {
    fn default() -> Self {
        Self { candidate_paraphrases: 2, set_paraphrases: 2, summaries_per_set: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvocativenessKnobs {
    /// Task prompts (N) drawn in order from the target dimension's items.
    pub task_prompts: usize,
}

impl Default for EvocativenessKnobs {
    fn default() -> Self {
        Self { task_prompts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system_id: TraitSystemId,
    pub dimension_id: String,
    pub backend: BackendSpec,
    /// Initial reflections generated, and refinements produced per iteration (K).
    pub init_pool: usize,
    /// Candidates carried between iterations.
    pub working_set: usize,
    /// Summaries sampled per candidate paraphrase.
    pub m1: usize,
    /// Responses sampled per task prompt.
    pub m2: usize,
    pub iterations: usize,
    pub beta: f64,
    pub word_budget: usize,
    /// Token cap on sampled task responses.
    pub response_budget: u32,
    /// Keep the best reflection seen so far in the working set.
    pub carry_forward: bool,
    pub seed: u64,
    pub compactness: CompactnessKnobs,
    pub evocativeness: EvocativenessKnobs,
    pub cond_prob: CondProbConfig,
    pub sampling: SamplingConfig,
    /// Item bank supplying the task prompts; bundled sample bank when unset.
    pub questionnaire: Option<String>,
    pub cache_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system_id: TraitSystemId::Stbhv,
            dimension_id: String::from("SEC"),
            backend: BackendSpec::default(),
            init_pool: 10,
            working_set: 5,
            m1: 3,
            m2: 6,
            iterations: 5,
            beta: 1.0,
            word_budget: 50,
            response_budget: 1024,
            carry_forward: true,
            seed: 0,
            compactness: CompactnessKnobs::default(),
            evocativeness: EvocativenessKnobs::default(),
            cond_prob: CondProbConfig::default(),
            sampling: SamplingConfig::default(),
            questionnaire: None,
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("init_pool", self.init_pool),
            ("working_set", self.working_set),
            ("m1", self.m1),
            ("m2", self.m2),
            ("iterations", self.iterations),
            ("word_budget", self.word_budget),
            ("response_budget", self.response_budget as usize),
            ("compactness.candidate_paraphrases", self.compactness.candidate_paraphrases),
            ("compactness.set_paraphrases", self.compactness.set_paraphrases),
            ("evocativeness.task_prompts", self.evocativeness.task_prompts),
            ("backend.concurrency", self.backend.concurrency),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.compactness.summaries_per_set < 2 {
            return Err(Error::Config("compactness.summaries_per_set must be >= 2".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        if self.dimension_id.trim().is_empty() {
            return Err(Error::Config("dimension_id is empty".into()));
        }
        self.cond_prob.validate()?;
        self.generation_params().validate()?;
        self.scoring_params().validate()?;
        Ok(())
    }

    pub fn compactness_config(&self) -> CompactnessConfig {
        CompactnessConfig {
            n1: self.compactness.candidate_paraphrases,
            n2: self.compactness.set_paraphrases,
            m1: self.m1,
            m2: self.compactness.summaries_per_set,
        }
    }

    pub fn evocativeness_config(&self) -> EvocativenessConfig {
        EvocativenessConfig {
            m2: self.m2,
            n: self.evocativeness.task_prompts,
            beta: self.beta,
            top_k: self.working_set,
        }
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            max_tokens: self.sampling.generation_max_tokens,
            seed: None,
            temperature: self.sampling.generation_temperature,
            top_p: self.sampling.top_p,
        }
    }

    pub fn response_params(&self) -> GenerationParams {
        GenerationParams { max_tokens: self.response_budget, ..self.generation_params() }
    }

    pub fn scoring_params(&self) -> GenerationParams {
        GenerationParams {
            max_tokens: self.sampling.scoring_max_tokens,
            seed: None,
            temperature: self.sampling.scoring_temperature,
            top_p: self.sampling.top_p,
        }
    }

    pub fn inference_params(&self) -> GenerationParams {
        GenerationParams {
            max_tokens: self.response_budget,
            seed: None,
            temperature: self.sampling.inference_temperature,
            top_p: self.sampling.top_p,
        }
    }

    /// SHA-256 over the canonical JSON of every field that shapes the run.
    /// The cache directory and the backend endpoint/concurrency are excluded.
    pub fn digest(&self) -> String {
        let mut shaped = self.clone();
        shaped.cache_dir = None;
        shaped.backend.concurrency = 1;
        let bytes = serde_json::to_vec(&shaped).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            use core::fmt::Write;
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}
