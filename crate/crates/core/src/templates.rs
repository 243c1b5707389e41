//! Prompt templates and their placeholder substitution.
//!
//! The scorer, initialization, refinement and summarization templates are
//! bundled verbatim as data files; substitution is literal and single-pass,
//! so values containing `{...}` are never re-expanded.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const PROBABILITY_1: &str = include_str!("../templates/probability_1.txt");
pub const PROBABILITY_2: &str = include_str!("../templates/probability_2.txt");
pub const PROBABILITY_3: &str = include_str!("../templates/probability_3.txt");
pub const PROBABILITY_FRAME: &str = include_str!("../templates/probability_frame.txt");
pub const INITIALIZATION: &str = include_str!("../templates/initialization.txt");
pub const EVOCATIVENESS_STEP1: &str = include_str!("../templates/evocativeness_step1.txt");
pub const EVOCATIVENESS_STEP2: &str = include_str!("../templates/evocativeness_step2.txt");
pub const COMPACTNESS: &str = include_str!("../templates/compactness.txt");

pub const PARAPHRASE: &str = "Paraphrase the following policy. Keep its meaning and its number of lines, and keep every line in the format \"<number>. <reflection>, e.g.: <action comparison>\". The paraphrase should not exceed {num_words} words in total. Reply with the paraphrased policy only.\n\n[POLICY]\n{policy}";

/// Replaces each `{key}` in `template` with its value in one left-to-right pass.
/// Unknown `{...}` sequences are copied through.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            values.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilityTemplate {
    P1,
    P2,
    P3,
}

impl ProbabilityTemplate {
    pub const ALL: [ProbabilityTemplate; 3] = [Self::P1, Self::P2, Self::P3];

    pub fn text(self) -> &'static str {
        match self {
            Self::P1 => PROBABILITY_1,
            Self::P2 => PROBABILITY_2,
            Self::P3 => PROBABILITY_3,
        }
    }
}

/// Slot order of the two texts in the scorer prompt. `Swapped` shows Text 2
/// first; the labels stay attached to their texts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotOrder {
    Forward,
    Swapped,
}

impl SlotOrder {
    pub const ALL: [SlotOrder; 2] = [Self::Forward, Self::Swapped];
}

/// Scorer prompt asking for P(`text_1` | `text_2`) on a 0-10 scale.
pub fn probability(template: ProbabilityTemplate, order: SlotOrder, text_1: &str, text_2: &str) -> String {
    let (pos_a, text_a, pos_b, text_b) = match order {
        SlotOrder::Forward => ("1", text_1, "2", text_2),
        SlotOrder::Swapped => ("2", text_2, "1", text_1),
    };
    fill(
        PROBABILITY_FRAME,
        &[
            ("prompt", template.text()),
            ("Pos_a", pos_a),
            ("Text_a", text_a),
            ("Pos_b", pos_b),
            ("Text_b", text_b),
        ],
    )
}

pub fn initialization(case_number: usize, max_length: usize, dimension: &str) -> String {
    let case_number = alloc::format!("{case_number}");
    let max_length = alloc::format!("{max_length}");
    fill(
        INITIALIZATION,
        &[("case_number", &case_number), ("max_length", &max_length), ("dimension", dimension)],
    )
}

pub fn evocativeness_step1(system: &str, target_trait: &str, temporary_reflections: &str, num_words: usize) -> String {
    let num_words = alloc::format!("{num_words}");
    fill(
        EVOCATIVENESS_STEP1,
        &[
            ("system", system),
            ("target_trait", target_trait),
            ("temporary_reflections", temporary_reflections),
            ("num_words", &num_words),
        ],
    )
}

pub fn evocativeness_step2(num_words: usize) -> String {
    let num_words = alloc::format!("{num_words}");
    fill(EVOCATIVENESS_STEP2, &[("num_words", &num_words)])
}

pub fn compactness(system: &str, target_trait: &str, temporary_reflections: &str, num_words: usize) -> String {
    let num_words = alloc::format!("{num_words}");
    fill(
        COMPACTNESS,
        &[
            ("system", system),
            ("target_trait", target_trait),
            ("temporary_reflections", temporary_reflections),
            ("num_words", &num_words),
        ],
    )
}

pub fn paraphrase(policy: &str, num_words: usize) -> String {
    let num_words = alloc::format!("{num_words}");
    fill(PARAPHRASE, &[("policy", policy), ("num_words", &num_words)])
}

/// `[POLICY] - <index>` block, optionally followed by a `[SCORE]` block.
pub fn policy_block(index: usize, policy: &str, score: Option<&str>) -> String {
    let mut out = alloc::format!("[POLICY] - {index}\n{policy}");
    if let Some(score) = score {
        out.push_str("\n[SCORE]\n");
        out.push_str(score);
    }
    out
}

/// Blocks joined by blank lines.
pub fn policy_blocks<'a>(blocks: impl IntoIterator<Item = (&'a str, Option<&'a str>)>) -> String {
    blocks
        .into_iter()
        .enumerate()
        .map(|(i, (policy, score))| policy_block(i + 1, policy, score))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {x} b {y}", &[("x", "{y}"), ("y", "Y")]), "a {y} b Y");
        assert_eq!(fill("{unknown} {x", &[("x", "1")]), "{unknown} {x");
    }

    #[test]
    fn templates_have_no_trailing_newline() {
        for t in [PROBABILITY_FRAME, INITIALIZATION, EVOCATIVENESS_STEP1, EVOCATIVENESS_STEP2, COMPACTNESS] {
            assert!(!t.ends_with('\n'));
        }
    }

    #[test]
    fn swapped_order_keeps_labels() {
        let fwd = probability(ProbabilityTemplate::P1, SlotOrder::Forward, "AAA", "BBB");
        let swp = probability(ProbabilityTemplate::P1, SlotOrder::Swapped, "AAA", "BBB");
        assert!(fwd.contains("[Text 1]: \nAAA\n\n[Text 2]:\nBBB\n\nScore:"));
        assert!(swp.contains("[Text 2]: \nBBB\n\n[Text 1]:\nAAA\n\nScore:"));
    }

    #[test]
    fn num_words_substituted() {
        let t = compactness("MFT", "Care", "[POLICY] - 1\n1. x, e.g.: y", 50);
        assert!(t.contains("should not exceed 50 words in total"));
        assert!(!t.contains("{num_words}"));
    }
}
