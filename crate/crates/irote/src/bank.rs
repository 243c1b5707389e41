//! TOML documents for trait systems and item banks.
//!
//! A trait system:
//!
//! ```toml
//! id = "MFT"
//!
//! [[dimensions]]
//! id = "CAR"
//! name = "Care"
//! description = "..."
//! ```
//!
//! An item bank:
//!
//! ```toml
//! id = "mft-sample"
//! system = "MFT"
//!
//! [[items]]
//! id = "CAR1"
//! statement = "..."
//! scale_min = 0
//! scale_max = 5
//! standard_answer = 5     # on the positively keyed scale
//! dimension = "CAR"
//! reversed = false        # optional
//! catch = false           # optional; catch items are skipped on load
//! ```

use std::path::Path;

use irote_core::trait_model::{Questionnaire, QuestionnaireItem, TraitDimension, TraitSystem, TraitSystemId};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: {source}")]
    Invalid {
        origin: String,
        #[source]
        source: irote_core::Error,
    },
    #[error("{origin}: {source}")]
    Io {
        origin: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    id: String,
    dimensions: Vec<DimensionDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimensionDoc {
    id: String,
    name: String,
    description: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankDoc {
    id: String,
    system: String,
    items: Vec<ItemDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemDoc {
    id: String,
    statement: String,
    scale_min: i64,
    scale_max: i64,
    standard_answer: i64,
    dimension: String,
    #[serde(default, skip_serializing_if = "is_false")]
    reversed: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    catch: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, BankError> {
    toml::from_str(text).map_err(|e| BankError::Parse { origin: origin.into(), message: e.to_string().trim_end().into() })
}

fn invalid(origin: &str) -> impl Fn(irote_core::Error) -> BankError + '_ {
    move |source| BankError::Invalid { origin: origin.into(), source }
}

pub fn read(path: &Path) -> Result<String, BankError> {
    std::fs::read_to_string(path).map_err(|source| BankError::Io { origin: path.display().to_string(), source })
}

/// `origin` names the source in error messages.
pub fn parse_trait_system(text: &str, origin: &str) -> Result<TraitSystem, BankError> {
    let doc: SystemDoc = parse(text, origin)?;
    let id: TraitSystemId = doc.id.parse().map_err(invalid(origin))?;
    let dimensions = doc
        .dimensions
        .into_iter()
        .map(|d| TraitDimension { id: d.id, name: d.name, system_id: id, description: d.description })
        .collect();
    TraitSystem::new(id, dimensions).map_err(invalid(origin))
}

pub fn trait_system_to_toml(system: &TraitSystem) -> String {
    let doc = SystemDoc {
        id: system.id.as_str().into(),
        dimensions: system
            .dimensions
            .iter()
            .map(|d| DimensionDoc { id: d.id.clone(), name: d.name.clone(), description: d.description.clone() })
            .collect(),
    };
    toml::to_string(&doc).expect("trait system serializes")
}

/// Loads an item bank against `system`. Catch items are dropped; item order
/// is kept.
pub fn parse_questionnaire(text: &str, origin: &str, system: &TraitSystem) -> Result<Questionnaire, BankError> {
    let doc: BankDoc = parse(text, origin)?;
    let declared: TraitSystemId = doc.system.parse().map_err(invalid(origin))?;
    if declared != system.id {
        return Err(BankError::Invalid {
            origin: origin.into(),
            source: irote_core::Error::Config(format!("bank is for {declared}, system is {}", system.id)),
        });
    }
    let items = doc
        .items
        .into_iter()
        .filter(|i| !i.catch)
        .map(|i| QuestionnaireItem {
            id: i.id,
            statement: i.statement,
            scale_min: i.scale_min,
            scale_max: i.scale_max,
            standard_answer: i.standard_answer,
            dimension_id: i.dimension,
            reversed: i.reversed,
        })
        .collect();
    Questionnaire::new(doc.id, system, items).map_err(invalid(origin))
}

/// System id declared by a bank document, without validating its items.
pub fn bank_system(text: &str, origin: &str) -> Result<TraitSystemId, BankError> {
    #[derive(Deserialize)]
    struct Head {
        system: String,
    }
    let head: Head = parse(text, origin)?;
    head.system.parse().map_err(invalid(origin))
}

pub fn questionnaire_to_toml(q: &Questionnaire) -> String {
    let doc = BankDoc {
        id: q.id.clone(),
        system: q.system_id.as_str().into(),
        items: q
            .items
            .iter()
            .map(|i| ItemDoc {
                id: i.id.clone(),
                statement: i.statement.clone(),
                scale_min: i.scale_min,
                scale_max: i.scale_max,
                standard_answer: i.standard_answer,
                dimension: i.dimension_id.clone(),
                reversed: i.reversed,
                catch: false,
            })
            .collect(),
    };
    toml::to_string(&doc).expect("bank serializes")
}

pub mod bundled {
    //! Trait systems and small sample banks shipped with the binary.

    use super::*;

    pub const SYSTEMS: [(&str, &str); 3] = [
        ("STBHV", include_str!("../data/systems/STBHV.toml")),
        ("MFT", include_str!("../data/systems/MFT.toml")),
        ("BigFive", include_str!("../data/systems/BigFive.toml")),
    ];

    pub const BANKS: [(&str, &str); 3] = [
        ("STBHV", include_str!("../data/banks/STBHV.toml")),
        ("MFT", include_str!("../data/banks/MFT.toml")),
        ("BigFive", include_str!("../data/banks/BigFive.toml")),
    ];

    fn pick(table: &[(&str, &'static str)], id: TraitSystemId) -> &'static str {
        table.iter().find(|(k, _)| *k == id.as_str()).map(|(_, v)| *v).expect("every system is bundled")
    }

    pub fn system_text(id: TraitSystemId) -> &'static str {
        pick(&SYSTEMS, id)
    }

    pub fn bank_text(id: TraitSystemId) -> &'static str {
        pick(&BANKS, id)
    }

    pub fn system(id: TraitSystemId) -> TraitSystem {
        parse_trait_system(system_text(id), &format!("bundled {id} system")).expect("bundled system is valid")
    }

    pub fn questionnaire(id: TraitSystemId) -> Questionnaire {
        parse_questionnaire(bank_text(id), &format!("bundled {id} bank"), &system(id)).expect("bundled bank is valid")
    }
}
