//! Trait evaluators and questionnaire administration.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{non_empty, ChatBackend, ChatRequest, GenerationParams};
use crate::error::{Error, Result};
use crate::reflection::injected_messages;
use crate::seed;
use crate::text::first_integer_in_range;
use crate::trait_model::{Questionnaire, QuestionnaireItem, TaskPrompt, TraitSystem};
use crate::DEFAULT_EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    QuestionnaireRule,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorId {
    pub id: String,
    pub kind: EvaluatorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub parsed_rating: Option<i64>,
    pub score_0_10: f64,
    /// `clamp(score_0_10 / 10, epsilon, 1)`.
    pub normalized: f64,
}

impl ItemScore {
    pub fn unparsed(&self) -> bool {
        self.parsed_rating.is_none()
    }
}

/// First standalone integer inside the item scale.
pub fn parse_rating(response: &str, scale_min: i64, scale_max: i64) -> Option<i64> {
    first_integer_in_range(response, scale_min, scale_max)
}

/// 0..=10 proximity of `rating` to the item's standard answer.
pub fn rating_score(item: &QuestionnaireItem, rating: i64) -> f64 {
    let r = if item.reversed { item.scale_min + item.scale_max - rating } else { rating };
    let span = (item.scale_max - item.scale_min) as f64;
    10.0 * (1.0 - (r - item.standard_answer).abs() as f64 / span)
}

pub fn score_item(item: &QuestionnaireItem, response: &str) -> ItemScore {
    score_item_with(item, response, DEFAULT_EPSILON)
}

pub fn score_item_with(item: &QuestionnaireItem, response: &str, epsilon: f64) -> ItemScore {
    let parsed_rating = parse_rating(response, item.scale_min, item.scale_max);
    let score_0_10 = parsed_rating.map_or(0.0, |r| rating_score(item, r));
    ItemScore {
        item_id: item.id.clone(),
        parsed_rating,
        score_0_10,
        normalized: (score_0_10 / 10.0).clamp(epsilon, 1.0),
    }
}

/// `q_omega`: how strongly a response to a task prompt expresses the target
/// dimension, in `[epsilon, 1]`.
pub trait TraitEvaluator: Sync {
    fn evaluator_id(&self) -> EvaluatorId;

    fn q_omega(&self, dimension_id: &str, response: &str, prompt: &TaskPrompt) -> Result<f64>;
}

/// Rule-based evaluator bound to one item bank. Task prompt ids are item ids.
#[derive(Debug, Clone)]
pub struct QuestionnaireEvaluator<'a> {
    questionnaire: &'a Questionnaire,
    epsilon: f64,
}

impl<'a> QuestionnaireEvaluator<'a> {
    pub fn new(questionnaire: &'a Questionnaire) -> Self {
        Self { questionnaire, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn item(&self, prompt: &TaskPrompt) -> Result<&'a QuestionnaireItem> {
        let own = self.questionnaire.evaluator_id();
        if prompt.evaluator_id != own {
            return Err(Error::EvaluatorMismatch(alloc::format!(
                "prompt `{}` wants `{}`, evaluator is `{own}`",
                prompt.id, prompt.evaluator_id
            )));
        }
        self.questionnaire
            .items
            .iter()
            .find(|i| i.id == prompt.id)
            .ok_or_else(|| Error::EvaluatorMismatch(alloc::format!("no item `{}` in `{own}`", prompt.id)))
    }
}

impl TraitEvaluator for QuestionnaireEvaluator<'_> {
    fn evaluator_id(&self) -> EvaluatorId {
        EvaluatorId { id: self.questionnaire.evaluator_id(), kind: EvaluatorKind::QuestionnaireRule }
    }

    fn q_omega(&self, dimension_id: &str, response: &str, prompt: &TaskPrompt) -> Result<f64> {
        let item = self.item(prompt)?;
        if item.dimension_id != dimension_id {
            return Err(Error::EvaluatorMismatch(alloc::format!(
                "item `{}` belongs to `{}`, not `{dimension_id}`",
                item.id, item.dimension_id
            )));
        }
        Ok(score_item_with(item, response, self.epsilon).normalized)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension_id: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single item.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub dimension_id: String,
    pub response: String,
    pub score: ItemScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdministerReport {
    pub questionnaire_id: String,
    pub system_id: String,
    pub reflection: String,
    pub dimensions: Vec<DimensionScore>,
    pub items: Vec<ItemResult>,
}

impl AdministerReport {
    pub fn dimension(&self, id: &str) -> Option<&DimensionScore> {
        self.dimensions.iter().find(|d| d.dimension_id == id)
    }
}

/// Order-independent sum.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub fn summarize_dimension(dimension_id: &str, scores: &[f64]) -> DimensionScore {
    let n = scores.len();
    let mut v = scores.to_vec();
    let mean = if n == 0 { 0.0 } else { sorted_sum(&mut v) / n as f64 };
    let sd = if n < 2 {
        0.0
    } else {
        let mut sq: Vec<f64> = scores.iter().map(|s| (s - mean) * (s - mean)).collect();
        libm::sqrt(sorted_sum(&mut sq) / (n - 1) as f64)
    };
    DimensionScore { dimension_id: dimension_id.into(), n, mean, sd }
}

/// Asks every item once under `reflection` and reports per-dimension means
/// on the 10-point scale, in the system's dimension order.
pub fn administer(
    backend: &dyn ChatBackend,
    system: &TraitSystem,
    questionnaire: &Questionnaire,
    reflection: &str,
    params: GenerationParams,
    run_seed: u64,
) -> Result<AdministerReport> {
    if questionnaire.items.is_empty() {
        return Err(Error::Input(alloc::format!("questionnaire `{}` has no items", questionnaire.id)));
    }
    let requests: Vec<ChatRequest> = questionnaire
        .items
        .iter()
        .map(|item| {
            let s = seed::derive(run_seed, &[seed::site("administer"), seed::site(&item.id)]);
            ChatRequest::new(injected_messages(reflection, &item.prompt_text()), params.with_seed(s))
        })
        .collect();
    let mut items = Vec::with_capacity(requests.len());
    for (item, response) in questionnaire.items.iter().zip(backend.complete_batch(&requests)) {
        let response = non_empty(response?)?;
        let score = score_item(item, &response);
        if score.unparsed() {
            log::warn!("item {}: no rating in response, scored 0", item.id);
        }
        items.push(ItemResult { dimension_id: item.dimension_id.clone(), response, score });
    }
    let dimensions = system
        .dimensions
        .iter()
        .filter_map(|d| {
            let scores: Vec<f64> =
                items.iter().filter(|i| i.dimension_id == d.id).map(|i| i.score.score_0_10).collect();
            (!scores.is_empty()).then(|| summarize_dimension(&d.id, &scores))
        })
        .collect();
    Ok(AdministerReport {
        questionnaire_id: questionnaire.id.clone(),
        system_id: String::from(questionnaire.system_id.as_str()),
        reflection: reflection.into(),
        dimensions,
        items,
    })
}
