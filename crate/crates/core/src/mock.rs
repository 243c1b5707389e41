//! Deterministic scripted backend.
//!
//! A [`MockScript`] is an ordered rule list; the first rule whose matcher
//! accepts the request produces the response. Responses are pure functions of
//! the request (including its seed), so results do not depend on call order
//! or concurrency.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::backend::{BackendError, ChatBackend, ChatRequest, Role};
use crate::reflection::{Reflection, ReflectionLine};
use crate::seed;

type Predicate = Arc<dyn Fn(&ChatRequest) -> bool + Send + Sync>;
type Generator = Arc<dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync>;

#[derive(Clone)]
pub enum Matcher {
    /// Last user message contains the needle.
    Contains(String),
    Predicate(Predicate),
    Always,
}

impl Matcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Contains(needle) => request.last_user_text().contains(needle.as_str()),
            Matcher::Predicate(p) => p(request),
            Matcher::Always => true,
        }
    }
}

#[derive(Clone)]
pub enum Response {
    Fixed(String),
    /// Picks `options[seed % len]`; a missing seed picks the first.
    BySeed(Vec<String>),
    Echo,
    Generate(Generator),
    Fail(BackendError),
}

impl Response {
    fn produce(&self, request: &ChatRequest) -> Result<String, BackendError> {
        match self {
            Response::Fixed(text) => Ok(text.clone()),
            Response::BySeed(options) => {
                let i = request.params.seed.unwrap_or(0) % options.len().max(1) as u64;
                Ok(options.get(i as usize).cloned().unwrap_or_default())
            }
            Response::Echo => Ok(request.last_user_text().to_string()),
            Response::Generate(g) => g(request),
            Response::Fail(e) => Err(e.clone()),
        }
    }
}

#[derive(Clone, Default)]
pub struct MockScript {
    rules: Vec<(Matcher, Response)>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, matcher: Matcher, response: Response) -> Self {
        self.rules.push((matcher, response));
        self
    }

    pub fn fixed(self, needle: &str, text: &str) -> Self {
        self.rule(Matcher::Contains(needle.into()), Response::Fixed(text.into()))
    }

    pub fn by_seed(self, needle: &str, options: &[&str]) -> Self {
        self.rule(
            Matcher::Contains(needle.into()),
            Response::BySeed(options.iter().map(|s| String::from(*s)).collect()),
        )
    }

    pub fn generator<F>(self, needle: &str, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.rule(Matcher::Contains(needle.into()), Response::Generate(Arc::new(f)))
    }

    pub fn when<P, F>(self, predicate: P, f: F) -> Self
    where
        P: Fn(&ChatRequest) -> bool + Send + Sync + 'static,
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.rule(Matcher::Predicate(Arc::new(predicate)), Response::Generate(Arc::new(f)))
    }

    pub fn error(self, needle: &str, error: BackendError) -> Self {
        self.rule(Matcher::Contains(needle.into()), Response::Fail(error))
    }

    pub fn catch_all(self, text: &str) -> Self {
        self.rule(Matcher::Always, Response::Fixed(text.into()))
    }

    pub fn catch_all_with<F>(self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.rule(Matcher::Always, Response::Generate(Arc::new(f)))
    }

    pub fn has_catch_all(&self) -> bool {
        self.rules.iter().any(|(m, _)| matches!(m, Matcher::Always))
    }

    pub fn respond(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.rules
            .iter()
            .find(|(m, _)| m.matches(request))
            .map(|(_, r)| r.produce(request))
            .unwrap_or_else(|| Err(BackendError::Script("no rule matched".into())))
    }

    /// A script that answers every prompt the optimizer issues with
    /// plausible, well-formed text derived from a hash of the request.
    pub fn standard(seed: u64) -> Self {
        Self::new()
            .when(is_probability, move |r| Ok(standard::score(r, seed)))
            .generator("demonstration sentences for the given dimension", move |r| {
                Ok(standard::initial(r, seed))
            })
            .generator("Paraphrase the following policy", move |r| Ok(standard::paraphrase(r, seed)))
            .generator("# CASE TO BE SUMMARIZED", move |r| Ok(standard::summarize(r, seed)))
            .generator("organize a new policy", move |r| Ok(standard::organize(r, seed)))
            .generator("Let's think step by step", move |r| Ok(standard::analyze(r, seed)))
            .when(|r| r.last_user_text().trim_end().ends_with("Rating:"), move |r| Ok(standard::rate(r, seed)))
            .catch_all("Understood.")
    }
}

fn is_probability(r: &ChatRequest) -> bool {
    let t = r.last_user_text();
    t.ends_with("Score:") && t.contains("[Text 1]") && t.contains("[Text 2]")
}

/// Counting backend over a [`MockScript`].
pub struct MockBackend {
    script: MockScript,
    id: String,
    calls: AtomicU64,
}

impl MockBackend {
    /// Panics if the script has no catch-all rule.
    pub fn new(script: MockScript) -> Self {
        Self::with_id(script, "mock")
    }

    pub fn with_id(script: MockScript, id: &str) -> Self {
        assert!(script.has_catch_all(), "mock script needs a catch-all rule");
        Self { script, id: id.into(), calls: AtomicU64::new(0) }
    }

    pub fn standard(seed: u64) -> Self {
        Self::new(MockScript::standard(seed))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        self.script.respond(request)
    }
}

/// Hash of the request mixed with the mock seed.
pub fn request_hash(request: &ChatRequest, mock_seed: u64) -> u64 {
    let bytes = request.canonical_bytes("mock");
    let fnv = bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    seed::derive(mock_seed, &[fnv])
}

mod standard {
    use super::*;
    use crate::text::first_integer_in_range;

    const VERBS: [&str; 6] = ["value", "care about", "commit to", "stand for", "protect", "seek"];
    const ACTS: [&str; 6] = [
        "I act on it even when nobody is watching",
        "I choose it over convenience at work",
        "I bring it up when my friends make plans",
        "I plan my week around it",
        "I defend it calmly in heated discussions",
        "I give up small comforts to keep it",
    ];
    const SWAPS: [(&str, &str); 8] = [
        ("value", "cherish"),
        ("care about", "prioritize"),
        ("commit to", "dedicate myself to"),
        ("stand for", "champion"),
        ("choose", "pick"),
        ("plan", "organize"),
        ("defend", "uphold"),
        ("keep", "preserve"),
    ];

    fn between<'t>(text: &'t str, start: &str, end: &str) -> Option<&'t str> {
        let from = text.find(start)? + start.len();
        let rest = &text[from..];
        let to = rest.find(end).unwrap_or(rest.len());
        Some(&rest[..to])
    }

    fn tag(h: u64) -> String {
        format!("(#{:04x})", h & 0xffff)
    }

    fn untag(statement: &str) -> &str {
        match statement.rfind(" (#") {
            Some(at) if statement.ends_with(')') => &statement[..at],
            _ => statement,
        }
    }

    fn words(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 2)
            .map(|w| w.to_lowercase())
            .collect()
    }

    fn budget_of(prompt: &str) -> usize {
        between(prompt, "not exceed ", " words")
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(50)
    }

    fn fit(mut lines: Vec<ReflectionLine>, budget: usize) -> String {
        loop {
            let r = Reflection::new(lines.clone(), Default::default(), 0);
            if r.word_count() <= budget || lines.len() <= 1 {
                return r.render();
            }
            lines.pop();
        }
    }

    pub fn score(r: &ChatRequest, seed: u64) -> String {
        let t = r.last_user_text();
        let (one, two) = if t.contains("[Text 1]: \n") {
            (between(t, "[Text 1]: \n", "\n\n[Text 2]").unwrap_or(""), between(t, "[Text 2]:\n", "\n\nScore:").unwrap_or(""))
        } else {
            (between(t, "[Text 1]:\n", "\n\nScore:").unwrap_or(""), between(t, "[Text 2]: \n", "\n\n[Text 1]").unwrap_or(""))
        };
        let a = words(one);
        let b = words(two);
        let overlap = if a.is_empty() { 0.0 } else { a.iter().filter(|w| b.contains(w)).count() as f64 / a.len() as f64 };
        let h = request_hash(r, seed);
        let jitter = (h % 3) as i64 - 1;
        let s = (libm::round(overlap * 10.0) as i64 + jitter).clamp(0, 10);
        format!("Score: {s}")
    }

    pub fn initial(r: &ChatRequest, seed: u64) -> String {
        let t = r.last_user_text();
        let n = between(t, "please write down ", " demonstration")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .unwrap_or(5);
        let dim = between(t, "for the given dimension: ", ".\n").unwrap_or("this trait").trim().to_lowercase();
        let h = request_hash(r, seed);
        (0..n)
            .map(|i| {
                let x = seed::mix(h ^ i as u64);
                format!(
                    "{}. I {} {dim} {}, e.g.: {}.",
                    i + 1,
                    VERBS[(x % 6) as usize],
                    tag(x >> 8),
                    ACTS[((x >> 24) % 6) as usize]
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn rewrite_line(line: &ReflectionLine, x: u64) -> ReflectionLine {
        let mut statement = String::from(untag(&line.statement));
        let mut behavior = line.behavior.clone();
        let (from, to) = SWAPS[(x % SWAPS.len() as u64) as usize];
        statement = statement.replacen(from, to, 1);
        behavior = behavior.replacen(from, to, 1);
        ReflectionLine::new(format!("{statement} {}", tag(x >> 16)), behavior)
    }

    pub fn paraphrase(r: &ChatRequest, seed: u64) -> String {
        let t = r.last_user_text();
        let policy = t.split_once("[POLICY]\n").map(|(_, p)| p).unwrap_or("");
        let h = request_hash(r, seed);
        policy
            .split("\n\n")
            .enumerate()
            .filter_map(|(bi, block)| {
                let parsed = Reflection::parse(block).ok()?;
                let lines = parsed
                    .lines
                    .iter()
                    .enumerate()
                    .map(|(li, l)| rewrite_line(l, seed::derive(h, &[bi as u64, li as u64])))
                    .collect();
                Some(Reflection::new(lines, Default::default(), 0).render())
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn summarize(r: &ChatRequest, seed: u64) -> String {
        let t = r.last_user_text();
        let case = between(t, "# CASE TO BE SUMMARIZED\n", "\nSo, you need to summarize").unwrap_or("");
        let budget = budget_of(t.rsplit("So, you need").next().unwrap_or(t));
        let all: Vec<ReflectionLine> = case
            .split("\n\n")
            .filter_map(|b| Reflection::parse(b).ok())
            .flat_map(|r| r.lines)
            .collect();
        let h = request_hash(r, seed);
        if all.is_empty() {
            return format!("1. I stay true to what matters {}, e.g.: I act on it daily.", tag(h));
        }
        let keep = 1 + (h % 3) as usize;
        let start = ((h >> 8) % all.len() as u64) as usize;
        let lines: Vec<_> = (0..keep.min(all.len()))
            .map(|i| rewrite_line(&all[(start + i) % all.len()], seed::mix(h ^ i as u64)))
            .collect();
        fit(lines, budget)
    }

    pub fn analyze(r: &ChatRequest, seed: u64) -> String {
        let h = request_hash(r, seed);
        format!(
            "The higher-scoring policies state the trait directly and pair it with concrete actions. \
             Lower-scoring ones are vague. A better policy keeps the concrete lines and drops filler (note {}).",
            tag(h)
        )
    }

    pub fn organize(r: &ChatRequest, seed: u64) -> String {
        let first = r
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        let budget = budget_of(r.last_user_text());
        let case = between(first, "# CASE TO BE OPTIMIZED\n", "\n\nNow please optimize").unwrap_or("");
        let mut scored: Vec<(f64, Vec<ReflectionLine>)> = case
            .split("[POLICY] - ")
            .filter_map(|block| {
                let (policy, score) = block.split_once("[SCORE]\n")?;
                let score = score.trim().parse::<f64>().unwrap_or(0.0);
                Reflection::parse(policy).ok().map(|r| (score, r.lines))
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));
        let h = request_hash(r, seed);
        let pool: Vec<ReflectionLine> = scored.into_iter().take(2).flat_map(|(_, l)| l).collect();
        if pool.is_empty() {
            return format!("1. I hold on to this trait {}, e.g.: I act on it every day.", tag(h));
        }
        let start = (h % pool.len() as u64) as usize;
        let keep = 1 + ((h >> 8) % 3) as usize;
        let lines: Vec<_> = (0..keep.min(pool.len()))
            .map(|i| rewrite_line(&pool[(start + i) % pool.len()], seed::mix(h ^ (i as u64 + 17))))
            .collect();
        fit(lines, budget)
    }

    pub fn rate(r: &ChatRequest, seed: u64) -> String {
        let t = r.last_user_text();
        let lo = between(t, "on a scale from ", " ").and_then(|s| s.parse::<i64>().ok()).unwrap_or(1);
        let hi = between(t, ") to ", " ").and_then(|s| s.parse::<i64>().ok()).unwrap_or(5);
        let span = (hi - lo).max(1) as u64;
        let h = request_hash(r, seed);
        let reflected = r.messages.len() > 1 && r.messages[0].text.contains("e.g.:");
        let rating = if reflected {
            let lines = r.messages[0].text.lines().count() as u64;
            hi - ((h % 2 + lines % 2) % (span + 1)) as i64
        } else {
            lo + (h % (span + 1)) as i64
        };
        let rating = first_integer_in_range(&format!("{rating}"), lo, hi).unwrap_or(lo);
        format!("I would say {rating}.")
    }
}
