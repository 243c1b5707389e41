//! Evocativeness: how strongly responses produced under a reflection express
//! the target trait.
//!
//! For task prompts `x_1..x_N` and responses `y_i^j` sampled under the
//! compacted reflection,
//!
//! ```text
//! R2(e) = 1/N sum_i sum_j p(y_i^j | e, x_i) * ln q(y_i^j, x_i)
//! ```
//!
//! with `p` from the prompt-based estimator and `q` from the trait evaluator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{non_empty, ChatRequest};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::reflection::{injected_messages, Origin, Reflection};
use crate::templates;
use crate::trait_eval::TraitEvaluator;
use crate::trait_model::TaskPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvocativenessConfig {
    /// Responses per task prompt.
    pub m2: usize,
    /// Task prompts used.
    pub n: usize,
    /// Weight of this score against compactness. The passes alternate, so it
    /// never enters a combined objective.
    pub beta: f64,
    /// Candidates carried to the next iteration.
    pub top_k: usize,
}

impl EvocativenessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m2 == 0 || self.n == 0 || self.top_k == 0 {
            return Err(Error::Config("evocativeness counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Responses to each task prompt, all drawn under one reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub reflection: String,
    pub prompts: Vec<TaskPrompt>,
    /// `responses[i][j]`: sample `j` for prompt `i`.
    pub responses: Vec<Vec<String>>,
}

impl ResponseSet {
    pub fn sample_count(&self) -> usize {
        self.responses.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTerm {
    pub prompt_id: String,
    pub sample_index: usize,
    pub p_weight: f64,
    pub q_value: f64,
    pub contribution: f64,
}

impl SampleTerm {
    pub fn new(prompt_id: impl Into<String>, sample_index: usize, p_weight: f64, q_value: f64) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            sample_index,
            p_weight,
            q_value,
            contribution: p_weight * libm::log(q_value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Record {
    pub per_sample: Vec<SampleTerm>,
    /// Number of task prompts.
    pub n: usize,
    pub total: f64,
}

impl R2Record {
    /// Contributions are summed in sorted order, so the total does not
    /// depend on the order of prompts or samples.
    pub fn from_terms(n: usize, per_sample: Vec<SampleTerm>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("R2 needs at least one task prompt".into()));
        }
        let mut c: Vec<f64> = per_sample.iter().map(|t| t.contribution).collect();
        c.sort_by(f64::total_cmp);
        let total = c.iter().sum::<f64>() / n as f64;
        Ok(Self { per_sample, n, total })
    }

    /// Rebuilds every contribution from `p_weight` and `q_value`.
    pub fn recompute(&self) -> Result<Self> {
        let terms = self
            .per_sample
            .iter()
            .map(|t| SampleTerm::new(t.prompt_id.clone(), t.sample_index, t.p_weight, t.q_value))
            .collect();
        Self::from_terms(self.n, terms)
    }
}

/// `m` responses to each prompt under `reflection` (empty means no
/// injection).
pub fn sample_responses(ctx: &Context<'_>, reflection: &Reflection, prompts: &[TaskPrompt], m: usize) -> Result<ResponseSet> {
    if m == 0 {
        return Err(Error::Input("sample count must be >= 1".into()));
    }
    if prompts.is_empty() {
        return Err(Error::Input("no task prompts".into()));
    }
    let rendered = reflection.render();
    let params = ctx.config.response_params();
    let mut requests = Vec::with_capacity(prompts.len() * m);
    for (i, p) in prompts.iter().enumerate() {
        p.validate()?;
        for j in 0..m {
            let s = ctx.seed_for("respond", &[i as u64, j as u64]);
            requests.push(ChatRequest::new(injected_messages(&rendered, &p.text), params.with_seed(s)));
        }
    }
    let mut flat = Vec::with_capacity(requests.len());
    for r in ctx.backend.complete_batch(&requests) {
        flat.push(non_empty(r?)?);
    }
    let mut it = flat.into_iter();
    let responses = prompts.iter().map(|_| (&mut it).take(m).collect()).collect();
    Ok(ResponseSet { reflection: rendered, prompts: prompts.to_vec(), responses })
}

/// The text a response is conditioned on: the reflection, then the prompt.
pub fn conditioning_text(reflection: &str, prompt: &str) -> String {
    if reflection.is_empty() {
        prompt.into()
    } else {
        format!("{reflection}\n\n{prompt}")
    }
}

/// R2 of each reflection over one shared response set. All scoring calls go
/// out as one batch; any failure aborts every record.
pub fn r2_score_many(
    ctx: &Context<'_>,
    reflections: &[Reflection],
    responses: &ResponseSet,
    evaluator: &dyn TraitEvaluator,
) -> Result<Vec<R2Record>> {
    let n = responses.prompts.len();
    if n == 0 {
        return Err(Error::Input("no task prompts".into()));
    }
    let own = evaluator.evaluator_id();
    if let Some(p) = responses.prompts.iter().find(|p| p.evaluator_id != own.id) {
        return Err(Error::EvaluatorMismatch(format!(
            "prompt `{}` wants `{}`, evaluator is `{}`",
            p.id, p.evaluator_id, own.id
        )));
    }
    let dimension = ctx.config.dimension_id.as_str();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (p, ys) in responses.prompts.iter().zip(&responses.responses) {
        q.push(ys.iter().map(|y| evaluator.q_omega(dimension, y, p)).collect::<Result<_>>()?);
    }

    let rendered: Vec<String> = reflections.iter().map(Reflection::render).collect();
    let conditions: Vec<Vec<String>> = rendered
        .iter()
        .map(|r| responses.prompts.iter().map(|p| conditioning_text(r, &p.text)).collect())
        .collect();
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for cond in &conditions {
        for (i, ys) in responses.responses.iter().enumerate() {
            for y in ys {
                pairs.push((y.as_str(), cond[i].as_str()));
            }
        }
    }
    let estimates = ctx.estimator().estimate_pairs(&pairs)?;
    let mut est = estimates.into_iter();
    let mut records = Vec::with_capacity(reflections.len());
    for _ in reflections {
        let mut terms = Vec::with_capacity(responses.sample_count());
        for (i, ys) in responses.responses.iter().enumerate() {
            for (j, &qj) in q[i].iter().enumerate().take(ys.len()) {
                let p = est.next().expect("one estimate per pair").probability;
                terms.push(SampleTerm::new(responses.prompts[i].id.clone(), j, p, qj));
            }
        }
        records.push(R2Record::from_terms(n, terms)?);
    }
    Ok(records)
}

pub fn r2_score(
    ctx: &Context<'_>,
    reflection: &Reflection,
    responses: &ResponseSet,
    evaluator: &dyn TraitEvaluator,
) -> Result<R2Record> {
    let mut v = r2_score_many(ctx, core::slice::from_ref(reflection), responses, evaluator)?;
    Ok(v.pop().expect("one record"))
}

/// Min-max mapping of totals onto 0..=10 (best 10, worst 0). A pool with a
/// single distinct total maps to 10 everywhere.
pub fn display_scores(totals: &[f64]) -> Vec<f64> {
    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    totals
        .iter()
        .map(|&t| if hi > lo { 10.0 * (t - lo) / (hi - lo) } else { 10.0 })
        .collect()
}

pub fn format_display_score(score: f64) -> String {
    format!("{score:.1}")
}

/// Refinement prompt for a scored pool.
pub fn refinement_prompt(ctx: &Context<'_>, pool: &[Scored]) -> String {
    let totals: Vec<f64> = pool.iter().map(|s| s.total).collect();
    let display: Vec<String> = display_scores(&totals).into_iter().map(format_display_score).collect();
    let rendered: Vec<String> = pool.iter().map(|s| s.reflection.render()).collect();
    let blocks = templates::policy_blocks(rendered.iter().zip(&display).map(|(r, d)| (r.as_str(), Some(d.as_str()))));
    templates::evocativeness_step1(ctx.system_name, ctx.trait_name, &blocks, ctx.config.word_budget)
}

/// Raw text of both refinement turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub analysis: String,
    pub policy: String,
}

/// `count` refinements of the scored pool. Each is a two-turn conversation:
/// analysis, then the organize instruction. An unusable second turn is
/// re-asked once.
pub fn refine(ctx: &Context<'_>, pool: &[Scored], count: usize) -> Result<Vec<(Reflection, RefineTrace)>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let step1 = refinement_prompt(ctx, pool);
    let step2 = templates::evocativeness_step2(ctx.config.word_budget);
    let params = ctx.config.generation_params();
    let budget = ctx.config.word_budget;

    let first: Vec<ChatRequest> = (0..count)
        .map(|r| ChatRequest::single(step1.clone(), params.with_seed(ctx.seed_for("analyze", &[r as u64]))))
        .collect();
    let mut analyses = Vec::with_capacity(count);
    for a in ctx.backend.complete_batch(&first) {
        analyses.push(non_empty(a?)?);
    }

    let second = |r: usize, attempt: u64| {
        let messages = alloc::vec![
            crate::Message::user(step1.clone()),
            crate::Message::assistant(analyses[r].clone()),
            crate::Message::user(step2.clone()),
        ];
        ChatRequest::new(messages, params.with_seed(ctx.seed_for("organize", &[r as u64, attempt])))
    };
    let accept = |text: &str| Reflection::parse(text).ok().and_then(|p| p.enforce_budget(budget).ok());

    let requests: Vec<ChatRequest> = (0..count).map(|r| second(r, 0)).collect();
    let mut texts = Vec::with_capacity(count);
    for t in ctx.backend.complete_batch(&requests) {
        texts.push(non_empty(t?)?);
    }
    let mut parsed: Vec<Option<Reflection>> = texts.iter().map(|t| accept(t)).collect();
    let failed: Vec<usize> = (0..count).filter(|&r| parsed[r].is_none()).collect();
    if !failed.is_empty() {
        log::warn!("refinement: {} policies unusable, asking again", failed.len());
        let retry: Vec<ChatRequest> = failed.iter().map(|&r| second(r, 1)).collect();
        for (&r, t) in failed.iter().zip(ctx.backend.complete_batch(&retry)) {
            texts[r] = non_empty(t?)?;
            parsed[r] = accept(&texts[r]);
        }
    }
    parsed
        .into_iter()
        .zip(analyses)
        .zip(texts)
        .map(|((p, analysis), policy)| {
            let p = p.ok_or(Error::Unparseable { what: "refined policy" })?;
            Ok((p.with_origin(Origin::Refined, ctx.iteration), RefineTrace { analysis, policy }))
        })
        .collect()
}

/// A reflection with its R2 total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub reflection: Reflection,
    pub total: f64,
}

impl Scored {
    pub fn new(reflection: Reflection, total: f64) -> Self {
        Self { reflection, total }
    }
}

/// Indices of the `k` best totals, descending, ties in input order.
pub fn top_k_indices(totals: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..totals.len()).collect();
    idx.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]));
    idx.truncate(k);
    idx
}

/// Top `k` distinct candidates by total. A `carry` is always kept with its
/// own total: candidates sharing its text are dropped, and it takes its rank
/// after equal totals, replacing the weakest member when it would fall out.
pub fn select_top(candidates: &[Scored], k: usize, carry: Option<&Scored>) -> Vec<Scored> {
    let carry_key = carry.map(|c| c.reflection.dedup_key());
    let totals: Vec<f64> = candidates.iter().map(|c| c.total).collect();
    let mut keys: Vec<String> = carry_key.iter().cloned().collect();
    let mut out: Vec<Scored> = Vec::new();
    for i in top_k_indices(&totals, totals.len()) {
        if out.len() == k {
            break;
        }
        let key = candidates[i].reflection.dedup_key();
        if !keys.contains(&key) {
            keys.push(key);
            out.push(candidates[i].clone());
        }
    }
    if let Some(best) = carry {
        if k > 0 {
            if out.len() == k {
                out.pop();
            }
            let at = out.iter().position(|s| s.total < best.total).unwrap_or(out.len());
            out.insert(at, best.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::mock::{MockBackend, MockScript};
    use crate::trait_eval::{EvaluatorId, EvaluatorKind};
    use alloc::vec;
    use proptest::prelude::*;

    fn refl(s: &str) -> Reflection {
        Reflection::parse(&format!("1. {s}, e.g.: b")).unwrap()
    }

    #[test]
    fn worked_r2() {
        let r = R2Record::from_terms(2, vec![SampleTerm::new("x1", 0, 0.9, 0.8), SampleTerm::new("x2", 0, 0.8, 0.5)])
            .unwrap();
        let oracle = 0.5 * (0.9 * std::primitive::f64::ln(0.8) + 0.8 * std::primitive::f64::ln(0.5));
        assert!((r.total - oracle).abs() < 1e-15);
        assert!((r.total - (-0.377_673_470_315_372_5)).abs() < 1e-12);
        assert_eq!(r.recompute().unwrap(), r);
    }

    #[test]
    fn q_of_one_gives_zero() {
        let r = R2Record::from_terms(1, vec![SampleTerm::new("x", 0, 0.3, 1.0), SampleTerm::new("x", 1, 0.9, 1.0)])
            .unwrap();
        assert_eq!(r.total, 0.0);
    }

    proptest! {
        #[test]
        fn r2_permutation_invariant(
            terms in proptest::collection::vec((0.01f64..=1.0, 0.01f64..=1.0), 1..12),
            rot in 0usize..12,
        ) {
            let build = |v: &[(f64, f64)]| {
                R2Record::from_terms(3, v.iter().enumerate().map(|(j, &(p, q))| SampleTerm::new("x", j, p, q)).collect())
                    .unwrap()
                    .total
            };
            let mut shuffled = terms.clone();
            shuffled.rotate_left(rot % terms.len());
            shuffled.reverse();
            prop_assert_eq!(build(&terms).to_bits(), build(&shuffled).to_bits());
        }

        #[test]
        fn raising_q_increases_total(p in 0.01f64..=1.0, q in 0.01f64..0.9, bump in 0.01f64..0.1) {
            let a = R2Record::from_terms(1, vec![SampleTerm::new("x", 0, p, q), SampleTerm::new("y", 0, 0.5, 0.5)]).unwrap();
            let b = R2Record::from_terms(1, vec![SampleTerm::new("x", 0, p, q + bump), SampleTerm::new("y", 0, 0.5, 0.5)]).unwrap();
            prop_assert!(b.total > a.total);
        }

        #[test]
        fn select_top_matches_brute_force(totals in proptest::collection::vec(-5i32..5, 1..8), k in 1usize..9) {
            let cands: Vec<Scored> = totals.iter().enumerate()
                .map(|(i, &t)| Scored::new(refl(&format!("c{i}")), f64::from(t) / 4.0)).collect();
            let got: Vec<f64> = select_top(&cands, k, None).iter().map(|s| s.total).collect();
            // brute force: repeatedly take the first maximum
            let mut left: Vec<(usize, f64)> = cands.iter().map(|c| c.total).enumerate().collect();
            let mut want = Vec::new();
            while want.len() < k && !left.is_empty() {
                let mut b = 0;
                for i in 1..left.len() {
                    if left[i].1 > left[b].1 { b = i; }
                }
                want.push(left.remove(b).1);
            }
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn select_top_examples() {
        let c = vec![Scored::new(refl("a"), -0.3), Scored::new(refl("b"), -0.1), Scored::new(refl("c"), -0.5)];
        let got = select_top(&c, 2, None);
        assert_eq!(got[0].reflection, refl("b"));
        assert_eq!(got[1].reflection, refl("a"));
        assert_eq!(select_top(&c, 10, None).len(), 3);

        let best = Scored::new(refl("old"), -0.05);
        let got = select_top(&c, 2, Some(&best));
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], best);
        assert_eq!(got[1].reflection, refl("b"));

        let carried = select_top(&c, 2, Some(&c[1]));
        assert_eq!(carried, select_top(&c, 2, None));

        // rescored lower this round: the carried total wins
        let earlier = Scored::new(refl("c"), -0.2);
        let got = select_top(&c, 2, Some(&earlier));
        assert_eq!(got, vec![c[1].clone(), earlier.clone()]);
        let got = select_top(&c, 3, Some(&earlier));
        assert_eq!(got, vec![c[1].clone(), earlier, c[0].clone()]);
    }

    #[test]
    fn display_mapping() {
        assert_eq!(display_scores(&[-0.5, -0.1, -0.3]), vec![0.0, 10.0, 5.0]);
        assert_eq!(display_scores(&[-0.2, -0.2]), vec![10.0, 10.0]);
        assert_eq!(format_display_score(5.0), "5.0");
    }

    struct Fixed(f64);

    impl TraitEvaluator for Fixed {
        fn evaluator_id(&self) -> EvaluatorId {
            EvaluatorId { id: "fixed".into(), kind: EvaluatorKind::External }
        }

        fn q_omega(&self, _: &str, _: &str, _: &TaskPrompt) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn prompts(n: usize) -> Vec<TaskPrompt> {
        (0..n)
            .map(|i| TaskPrompt { id: format!("x{i}"), text: format!("task {i}"), dimension_id: None, evaluator_id: "fixed".into() })
            .collect()
    }

    #[test]
    fn sampling_injects_reflection() {
        let mock = MockBackend::new(MockScript::new().catch_all_with(|r| Ok(format!("{} turns", r.messages.len()))));
        let cfg = RunConfig::default();
        let ctx = Context::new(&mock, &cfg, "S", "T");
        let set = sample_responses(&ctx, &refl("a"), &prompts(2), 6).unwrap();
        assert_eq!(mock.calls(), 12);
        assert!(set.responses.iter().flatten().all(|r| r == "3 turns"));
        let bare = sample_responses(&ctx, &Reflection::empty(), &prompts(1), 1).unwrap();
        assert_eq!(bare.responses, vec![vec![String::from("1 turns")]]);
    }

    #[test]
    fn r2_through_estimator() {
        // p scripted by the prompt index in the conditioning text
        let mock = MockBackend::new(
            MockScript::new()
                .generator("Score:", |r| Ok(if r.last_user_text().contains("task 0") { "9".into() } else { "8".into() }))
                .catch_all("resp"),
        );
        let cfg = RunConfig::default();
        let ctx = Context::new(&mock, &cfg, "S", "T");
        let set = ResponseSet {
            reflection: String::new(),
            prompts: prompts(2),
            responses: vec![vec!["y0".into()], vec!["y1".into()]],
        };
        let r = r2_score(&ctx, &refl("a"), &set, &Fixed(0.5)).unwrap();
        assert_eq!(mock.calls(), 12);
        let oracle = 0.5 * (0.9 * std::primitive::f64::ln(0.5) + 0.8 * std::primitive::f64::ln(0.5));
        assert!((r.total - oracle).abs() < 1e-12);

        let mut wrong = set.clone();
        wrong.prompts[1].evaluator_id = "other".into();
        assert!(matches!(r2_score(&ctx, &refl("a"), &wrong, &Fixed(0.5)), Err(Error::EvaluatorMismatch(_))));
    }

    #[test]
    fn refine_two_turns() {
        let mock = MockBackend::new(
            MockScript::new()
                .fixed("organize a new policy", "1. I guard my family, e.g.: I check the locks.")
                .fixed("Let's think step by step", "analysis")
                .catch_all("?"),
        );
        let cfg = RunConfig::default();
        let ctx = Context::new(&mock, &cfg, "S", "T").at_iteration(2);
        let pool = vec![Scored::new(refl("a"), -0.4), Scored::new(refl("b"), -0.2)];
        let out = refine(&ctx, &pool, 1).unwrap();
        assert_eq!(mock.calls(), 2);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0.render(), "1. I guard my family, e.g.: I check the locks.");
        assert_eq!(out[0].0.origin, Origin::Refined);
        assert_eq!(out[0].1.analysis, "analysis");
        let prompt = refinement_prompt(&ctx, &pool);
        assert!(prompt.contains("[POLICY] - 1\n1. a, e.g.: b\n[SCORE]\n0.0\n\n[POLICY] - 2\n1. b, e.g.: b\n[SCORE]\n10.0"));
    }

    #[test]
    fn refine_truncates_and_retries() {
        let long = (1..=6).map(|i| format!("{i}. {} here, e.g.: x", "w ".repeat(10).trim())).collect::<Vec<_>>().join("\n");
        let mock = MockBackend::new(
            MockScript::new().fixed("organize a new policy", &long).fixed("step by step", "a").catch_all("?"),
        );
        let cfg = RunConfig::default();
        let ctx = Context::new(&mock, &cfg, "S", "T");
        let out = refine(&ctx, &[Scored::new(refl("a"), 0.0)], 1).unwrap();
        assert!(out[0].0.word_count() <= 50);
        assert_eq!(out[0].0.lines.len(), 3);

        let bad = MockBackend::new(
            MockScript::new().fixed("organize a new policy", "no policy").fixed("step by step", "a").catch_all("?"),
        );
        let ctx = Context::new(&bad, &cfg, "S", "T");
        assert_eq!(refine(&ctx, &[Scored::new(refl("a"), 0.0)], 1), Err(Error::Unparseable { what: "refined policy" }));
        assert_eq!(bad.calls(), 3);
    }
}
