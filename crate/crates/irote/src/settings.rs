//! Run configuration files and command-line overrides.
//!
//! Precedence is flags, then the config file, then built-in defaults. The
//! file is TOML with the same keys as [`RunConfig`]; see [`DEFAULT_CONFIG`].

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use irote_core::config::BackendKind;
use irote_core::trait_model::TraitSystemId;
use irote_core::RunConfig;

/// Commented config with every default spelled out; `init` writes it.
pub const DEFAULT_CONFIG: &str = r#"# Target trait: system (STBHV, MFT or BigFive) and dimension code.
system_id = "STBHV"
dimension_id = "SEC"

# Initial reflections generated, and refinements produced per iteration.
init_pool = 10
# Candidates kept between iterations.
working_set = 5
# Summaries sampled per candidate paraphrase.
m1 = 3
# Responses sampled per task prompt.
m2 = 6
iterations = 5
beta = 1.0
# Reflection length cap in words, and response length cap in tokens.
word_budget = 50
response_budget = 1024
# Keep the best reflection found so far in the working set.
carry_forward = true
seed = 0

# Item bank supplying task prompts. Defaults to the bundled sample bank.
# questionnaire = "banks/STBHV.toml"
# Shared response cache. Defaults to <run dir>/cache.
# cache_dir = "cache"

[backend]
kind = "mock"          # or "live"; live reads the key from IROTE_API_KEY
endpoint = "https://api.openai.com/v1/chat/completions"
model = "gpt-4o-2024-11-20"
concurrency = 4

[compactness]
candidate_paraphrases = 2
set_paraphrases = 2
summaries_per_set = 3

[evocativeness]
task_prompts = 4

[cond_prob]
templates = ["p1", "p2", "p3"]
orders = ["forward", "swapped"]
epsilon = 0.01

[sampling]
scoring_temperature = 0.01
generation_temperature = 1.0
inference_temperature = 1.0
top_p = 1.0
scoring_max_tokens = 16
generation_max_tokens = 1024
"#;

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub target: Option<(TraitSystemId, String)>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub word_budget: Option<usize>,
    pub questionnaire: Option<String>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some((system, dim)) = &self.target {
            config.system_id = *system;
            config.dimension_id = dim.clone();
        }
        if let Some(kind) = self.backend {
            config.backend.kind = kind;
        }
        if let Some(e) = &self.endpoint {
            config.backend.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            config.backend.model = m.clone();
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.iterations {
            config.iterations = t;
        }
        if let Some(w) = self.word_budget {
            config.word_budget = w;
        }
        if let Some(q) = &self.questionnaire {
            config.questionnaire = Some(q.clone());
        }
    }
}

/// Parses `SYSTEM:DIM`, e.g. `STBHV:SEC`.
pub fn parse_target(s: &str) -> Result<(TraitSystemId, String), String> {
    let (system, dim) = s.split_once(':').ok_or_else(|| format!("expected SYSTEM:DIM, got `{s}`"))?;
    let system: TraitSystemId = system.parse().map_err(|e: irote_core::Error| e.to_string())?;
    let dim = dim.trim();
    if dim.is_empty() {
        return Err(format!("missing dimension in `{s}`"));
    }
    Ok((system, dim.to_uppercase()))
}

pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| anyhow::anyhow!("{origin}: {}", e.to_string().trim_end()))
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text, &path.display().to_string())
}

pub fn config_to_toml(config: &RunConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

/// Defaults, then the file if given, then the overrides. The result is
/// validated.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match file {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    if let Err(e) = config.validate() {
        bail!("invalid configuration: {e}");
    }
    Ok(config)
}
