//! Trait systems, questionnaire items and task prompts.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TraitSystemId {
    #[serde(rename = "STBHV")]
    Stbhv,
    #[serde(rename = "MFT")]
    Mft,
    #[serde(rename = "BigFive")]
    BigFive,
}

impl TraitSystemId {
    pub const ALL: [TraitSystemId; 3] = [TraitSystemId::Stbhv, TraitSystemId::Mft, TraitSystemId::BigFive];

    pub fn as_str(self) -> &'static str {
        match self {
            TraitSystemId::Stbhv => "STBHV",
            TraitSystemId::Mft => "MFT",
            TraitSystemId::BigFive => "BigFive",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TraitSystemId::Stbhv => "Schwartz Theory of Basic Human Values",
            TraitSystemId::Mft => "Moral Foundations Theory",
            TraitSystemId::BigFive => "Big Five Personality Model",
        }
    }

    pub fn dimension_count(self) -> usize {
        match self {
            TraitSystemId::Stbhv => 10,
            TraitSystemId::Mft | TraitSystemId::BigFive => 5,
        }
    }
}

impl fmt::Display for TraitSystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraitSystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TraitSystemId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownSystem(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitDimension {
    pub id: String,
    pub name: String,
    pub system_id: TraitSystemId,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitSystem {
    pub id: TraitSystemId,
    pub dimensions: Vec<TraitDimension>,
}

impl TraitSystem {
    /// Validates dimension ids, descriptions and the dimension count.
    pub fn new(id: TraitSystemId, dimensions: Vec<TraitDimension>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for d in &dimensions {
            if d.id.trim().is_empty() {
                return Err(Error::TraitModel(format!("{id}: dimension with empty id")));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(Error::TraitModel(format!("{id}: duplicate dimension id `{}`", d.id)));
            }
            if d.description.trim().is_empty() {
                return Err(Error::TraitModel(format!("{id}: dimension `{}` has no description", d.id)));
            }
            if d.system_id != id {
                return Err(Error::TraitModel(format!(
                    "dimension `{}` belongs to {}, not {id}",
                    d.id, d.system_id
                )));
            }
        }
        if dimensions.len() != id.dimension_count() {
            return Err(Error::TraitModel(format!(
                "{id} has {} dimensions, expected {}",
                dimensions.len(),
                id.dimension_count()
            )));
        }
        Ok(Self { id, dimensions })
    }

    pub fn dimension(&self, id: &str) -> Result<&TraitDimension> {
        self.dimensions
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::UnknownDimension { system: self.id.to_string(), dimension: id.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub id: String,
    pub statement: String,
    pub scale_min: i64,
    pub scale_max: i64,
    /// Expected answer on the positively keyed scale. For reversed items the
    /// response is reflected across the midpoint before comparison.
    pub standard_answer: i64,
    pub dimension_id: String,
    #[serde(default)]
    pub reversed: bool,
}

impl QuestionnaireItem {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Item { item: self.id.clone(), reason };
        if self.statement.trim().is_empty() {
            return Err(fail("empty statement".into()));
        }
        if self.scale_min >= self.scale_max {
            return Err(fail(format!("scale {}..{} is empty", self.scale_min, self.scale_max)));
        }
        if !(self.scale_min..=self.scale_max).contains(&self.standard_answer) {
            return Err(fail(format!(
                "standard answer {} outside scale {}..{}",
                self.standard_answer, self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }

    /// The prompt used to administer this item.
    pub fn prompt_text(&self) -> String {
        format!(
            "Rate how well the following statement describes you, on a scale from {min} (not at all) to {max} (very much). Answer with a single number.\n\nStatement: {statement}\nRating:",
            min = self.scale_min,
            max = self.scale_max,
            statement = self.statement.trim(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: String,
    pub system_id: TraitSystemId,
    pub items: Vec<QuestionnaireItem>,
}

impl Questionnaire {
    /// Validates every item and resolves its dimension against `system`.
    /// Item order is preserved.
    pub fn new(id: impl Into<String>, system: &TraitSystem, items: Vec<QuestionnaireItem>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for item in &items {
            item.validate()?;
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Item { item: item.id.clone(), reason: "duplicate item id".into() });
            }
            system.dimension(&item.dimension_id).map_err(|_| Error::Item {
                item: item.id.clone(),
                reason: format!("dangling dimension reference `{}`", item.dimension_id),
            })?;
        }
        Ok(Self { id: id.into(), system_id: system.id, items })
    }

    pub fn items_for<'a>(&'a self, dimension_id: &'a str) -> impl Iterator<Item = &'a QuestionnaireItem> + 'a {
        self.items.iter().filter(move |i| i.dimension_id == dimension_id)
    }

    pub fn evaluator_id(&self) -> String {
        format!("questionnaire:{}", self.id)
    }

    /// Task prompts for one dimension, scored by this questionnaire's rule.
    pub fn task_prompts(&self, dimension_id: &str) -> Vec<TaskPrompt> {
        self.items_for(dimension_id)
            .map(|item| TaskPrompt {
                id: item.id.clone(),
                text: item.prompt_text(),
                dimension_id: Some(item.dimension_id.clone()),
                evaluator_id: self.evaluator_id(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub id: String,
    pub text: String,
    pub dimension_id: Option<String>,
    pub evaluator_id: String,
}

impl TaskPrompt {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Input(format!("task prompt `{}` has empty text", self.id)));
        }
        Ok(())
    }
}
