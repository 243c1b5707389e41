//! Reflections in the combined `<statement>, e.g.: <behavior>` form.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{ChatBackend, ChatRequest, GenerationParams, Message};
use crate::error::{Error, Result};
use crate::seed;
use crate::templates;
use crate::text::{normalize, word_count};

pub const MARKER: &str = ", e.g.:";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReflectionLine {
    pub statement: String,
    pub behavior: String,
}

impl ReflectionLine {
    pub fn new(statement: impl Into<String>, behavior: impl Into<String>) -> Self {
        Self { statement: statement.into(), behavior: behavior.into() }
    }

    fn render_into(&self, index: usize, out: &mut String) {
        out.push_str(&format!("{index}. {}", self.statement));
        if !self.behavior.is_empty() {
            out.push_str(MARKER);
            out.push(' ');
            out.push_str(&self.behavior);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Initial,
    Refined,
    Summarized,
    Paraphrased,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub lines: Vec<ReflectionLine>,
    pub origin: Origin,
    pub iteration_born: u32,
}

impl Reflection {
    pub fn new(lines: Vec<ReflectionLine>, origin: Origin, iteration_born: u32) -> Self {
        Self { lines, origin, iteration_born }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Origin::Initial, 0)
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Numbered lines `N. <statement>, e.g.: <behavior>`, newline-separated.
    /// A line without a behavior renders as `N. <statement>`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, line) in self.lines.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            line.render_into(i + 1, &mut out);
        }
        out
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.render())
    }

    /// Key under which two reflections count as the same candidate.
    pub fn dedup_key(&self) -> String {
        normalize(&self.render())
    }

    pub fn with_origin(mut self, origin: Origin, iteration_born: u32) -> Self {
        self.origin = origin;
        self.iteration_born = iteration_born;
        self
    }

    /// Parses numbered lines out of free text.
    ///
    /// Text before the first numbered line is ignored. A non-numbered line
    /// directly following an entry continues it; blank lines and bracketed
    /// headers (`[POLICY] - 1`) end it. Within an entry the statement and
    /// behavior are split on the last `, e.g.:`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<String> = Vec::new();
        let mut open = false;
        for raw in text.lines() {
            let line = raw.trim();
            if let Some(body) = strip_number(line) {
                entries.push(String::from(body.trim()));
                open = true;
            } else if line.is_empty() || line.starts_with('[') || line.starts_with('#') {
                open = false;
            } else if open {
                let last = entries.last_mut().expect("open implies an entry");
                last.push(' ');
                last.push_str(line);
            }
        }

        let mut lines = Vec::new();
        for entry in entries {
            if entry.is_empty() {
                continue;
            }
            match entry.rfind(MARKER) {
                Some(at) => {
                    let statement = entry[..at].trim();
                    let behavior = entry[at + MARKER.len()..].trim();
                    if statement.is_empty() {
                        continue;
                    }
                    lines.push(ReflectionLine::new(statement, behavior));
                }
                None => {
                    log::warn!("reflection line without `, e.g.:` marker: {entry}");
                    lines.push(ReflectionLine::new(entry.as_str(), ""));
                }
            }
        }
        if lines.is_empty() {
            return Err(Error::NoParseableLines);
        }
        Ok(Self::new(lines, Origin::Initial, 0))
    }

    /// Drops whole trailing lines until the rendered text fits `word_budget`.
    pub fn enforce_budget(mut self, word_budget: usize) -> Result<Self> {
        if word_budget == 0 {
            return Err(Error::Config("word budget must be >= 1".into()));
        }
        if let Some(first) = self.lines.first() {
            let mut one = String::new();
            first.render_into(1, &mut one);
            let words = word_count(&one);
            if words > word_budget {
                return Err(Error::OverBudget { words, budget: word_budget });
            }
        }
        while self.word_count() > word_budget {
            self.lines.pop();
        }
        Ok(self)
    }
}

/// Strips a leading `12.` / `12)` list number, returning the rest.
fn strip_number(line: &str) -> Option<&str> {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest)
    } else {
        None
    }
}

/// An ordered pool of distinct reflections with a capacity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    members: Vec<Reflection>,
    capacity: usize,
}

impl CandidateSet {
    pub fn new(capacity: usize) -> Self {
        Self { members: Vec::new(), capacity: capacity.max(1) }
    }

    /// Builds a set, skipping duplicates and anything past `capacity`.
    pub fn from_members(capacity: usize, members: impl IntoIterator<Item = Reflection>) -> Self {
        let mut set = Self::new(capacity);
        for m in members {
            set.insert(m);
        }
        set
    }

    /// Adds `reflection` unless it duplicates a member or the set is full.
    pub fn insert(&mut self, reflection: Reflection) -> bool {
        if self.is_full() || self.contains(&reflection) {
            return false;
        }
        self.members.push(reflection);
        true
    }

    pub fn contains(&self, reflection: &Reflection) -> bool {
        let key = reflection.dedup_key();
        self.members.iter().any(|m| m.dedup_key() == key)
    }

    pub fn members(&self) -> &[Reflection] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Reflection> {
        self.members
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() >= self.capacity
    }

    /// Rendered members joined by blank lines.
    pub fn concatenated(&self) -> String {
        self.members.iter().map(Reflection::render).collect::<Vec<_>>().join("\n\n")
    }
}

/// Conversation for a task under a reflection: the reflection as a user
/// turn, an empty assistant reply, then the task. No reflection means the
/// task alone.
pub fn injected_messages(reflection: &str, task: &str) -> Vec<Message> {
    if reflection.trim().is_empty() {
        alloc::vec![Message::user(task)]
    } else {
        alloc::vec![Message::user(reflection), Message::assistant(""), Message::user(task)]
    }
}

/// Extra attempts after the first when too few lines come back.
pub const INIT_RETRIES: usize = 3;

/// Asks the model for `k` single-line reflections on `dimension_name`.
///
/// Every parsed line within `word_budget` becomes its own reflection. An
/// attempt yielding fewer than `k` distinct lines is discarded and retried.
pub fn generate_initial(
    backend: &dyn ChatBackend,
    dimension_name: &str,
    k: usize,
    word_budget: usize,
    params: GenerationParams,
    run_seed: u64,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::Config("initial pool size must be >= 1".into()));
    }
    let prompt = templates::initialization(k, word_budget, dimension_name);
    let mut best = 0;
    for attempt in 0..=INIT_RETRIES {
        let seed = seed::derive(run_seed, &[seed::site("init"), attempt as u64]);
        let request = ChatRequest::single(prompt.clone(), params.with_seed(seed));
        let text = crate::backend::non_empty(backend.complete(&request)?)?;
        let mut set = CandidateSet::new(k);
        if let Ok(parsed) = Reflection::parse(&text) {
            for line in parsed.lines {
                let single = Reflection::new(alloc::vec![line], Origin::Initial, 0);
                if single.word_count() <= word_budget {
                    set.insert(single);
                }
            }
        }
        if set.len() >= k {
            return Ok(set);
        }
        best = best.max(set.len());
        log::warn!("initial generation attempt {attempt}: {} of {k} lines", set.len());
    }
    Err(Error::UnderGeneration { wanted: k, got: best })
}
