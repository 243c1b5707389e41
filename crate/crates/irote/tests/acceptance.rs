//! Acceptance suite: one PASS/FAIL line per criterion, mock backend only.
//!
//! Run with `cargo test -p irote --test acceptance`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use irote::app::{self, OptimizeOptions};
use irote::bank::bundled;
use irote_core::compactness::{
    compactness_score, select_compact, CompactnessBreakdown, CompactnessOutcome, ContrastTerm, FidelityTerm, PoolSource,
};
use irote_core::cond_prob::{CondProbConfig, Estimator, ProbabilityEstimate};
use irote_core::context::Context;
use irote_core::evocativeness::{
    conditioning_text, r2_score, refinement_prompt, select_top, R2Record, ResponseSet, SampleTerm, Scored,
};
use irote_core::mock::{MockBackend, MockScript};
use irote_core::orchestrator::Optimizer;
use irote_core::templates::{self, ProbabilityTemplate, SlotOrder};
use irote_core::trait_eval::{score_item, EvaluatorId, EvaluatorKind, TraitEvaluator};
use irote_core::trait_model::{QuestionnaireItem, TaskPrompt, TraitSystemId};
use irote_core::{ChatRequest, GenerationParams, Reflection, RunConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn ln(x: f64) -> f64 {
    x.ln()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Splits a scorer prompt back into (text 1, text 2).
fn scorer_texts(prompt: &str) -> Option<(String, String)> {
    let cut = |s: &str, a: &str, b: &str| -> Option<String> {
        let from = s.find(a)? + a.len();
        let rest = &s[from..];
        Some(rest[..rest.find(b)?].to_string())
    };
    if prompt.contains("[Text 1]: \n") {
        Some((cut(prompt, "[Text 1]: \n", "\n\n[Text 2]:\n")?, cut(prompt, "[Text 2]:\n", "\n\nScore:")?))
    } else {
        Some((cut(prompt, "[Text 1]:\n", "\n\nScore:")?, cut(prompt, "[Text 2]: \n", "\n\n[Text 1]:\n")?))
    }
}

fn is_scorer(r: &ChatRequest) -> bool {
    r.last_user_text().ends_with("Score:")
}

/// Mock whose scorer answers `score(text 1, text 2)`.
fn scorer_mock<F>(score: F) -> MockBackend
where
    F: Fn(&str, &str) -> u8 + Send + Sync + 'static,
{
    MockBackend::new(
        MockScript::new()
            .when(is_scorer, move |r| {
                let (a, b) = scorer_texts(r.last_user_text()).expect("scorer prompt");
                Ok(format!("Score: {}", score(&a, &b)))
            })
            .catch_all("ok"),
    )
}

struct PerPrompt(Vec<(&'static str, f64)>);

impl TraitEvaluator for PerPrompt {
    fn evaluator_id(&self) -> EvaluatorId {
        EvaluatorId { id: "scripted".into(), kind: EvaluatorKind::External }
    }

    fn q_omega(&self, _: &str, _: &str, prompt: &TaskPrompt) -> irote_core::Result<f64> {
        Ok(self.0.iter().find(|(id, _)| *id == prompt.id).map_or(0.5, |(_, q)| *q))
    }
}

fn prompt(id: &str, text: &str) -> TaskPrompt {
    TaskPrompt { id: id.into(), text: text.into(), dimension_id: None, evaluator_id: "scripted".into() }
}

fn refl(text: &str) -> Reflection {
    Reflection::parse(text).expect("reflection parses")
}

// 1 ------------------------------------------------------------------------

fn score_oracles() -> Check {
    // R2, N = 2, M2 = 1: p = {0.9, 0.8}, q = {0.8, 0.5}
    let r2_oracle = 0.5 * (0.9 * ln(0.8) + 0.8 * ln(0.5));
    let direct = R2Record::from_terms(2, vec![SampleTerm::new("x1", 0, 0.9, 0.8), SampleTerm::new("x2", 0, 0.8, 0.5)])
        .map_err(|e| e.to_string())?;

    let mock = scorer_mock(|_, b| if b.contains("first task") { 9 } else { 8 });
    let config = RunConfig::default();
    let ctx = Context::new(&mock, &config, "S", "T");
    let e = refl("1. I keep things in order, e.g.: I file receipts the same day.");
    let set = ResponseSet {
        reflection: String::new(),
        prompts: vec![prompt("x1", "the first task"), prompt("x2", "the second task")],
        responses: vec![vec!["answer one".into()], vec!["answer two".into()]],
    };
    let via = r2_score(&ctx, &e, &set, &PerPrompt(vec![("x1", 0.8), ("x2", 0.5)])).map_err(|e| e.to_string())?;
    for (name, v) in [("R2 from terms", direct.total), ("R2 through estimator", via.total)] {
        ensure!(close(v, r2_oracle, 1e-12), "{name} {v} vs oracle {r2_oracle}");
        ensure!((v - r2_oracle).abs().le(&1e-9), "{name} off by more than 1e-9");
        ensure!(format!("{v:.4}") == "-0.3777", "{name} {v} does not round to -0.3777");
    }

    // Compactness, K = N1 = N2 = 1, M2 = 2
    let c_oracle = 0.8 * ln(0.9) - 0.7 * (ln(0.6) - ln(0.3));
    let direct = CompactnessBreakdown::from_terms(
        1,
        vec![FidelityTerm { candidate: 0, variant: 0, p_summary_given_variant: 0.8, q_variant_given_summary: 0.9 }],
        vec![ContrastTerm {
            set_variant: 0,
            p_summary_given_set: 0.7,
            p_set_given_summary: 0.6,
            p_set_given_alternatives: vec![0.3],
        }],
    )
    .map_err(|e| e.to_string())?;
    let table = [(("E", "C"), 8u8), (("C", "E"), 9), (("E", "S"), 7), (("S", "E"), 6), (("S", "A"), 3)];
    let mock = scorer_mock(move |a, b| table.iter().find(|((x, y), _)| *x == a && *y == b).map_or(5, |(_, s)| *s));
    let cp = CondProbConfig::default();
    let est = Estimator::new(&mock, &cp, GenerationParams::new(0.01, 16), 0);
    let via = compactness_score(&est, "E", &[vec!["C".into()]], &["S".into()], &["E".into(), "A".into()], 2)
        .map_err(|e| e.to_string())?;
    ensure!(direct.total == direct.fidelity_term - direct.contrast_term, "breakdown total is not fidelity - contrast");
    for (name, v) in [("compactness from terms", direct.total), ("compactness through estimator", via.total)] {
        ensure!(close(v, c_oracle, 1e-12), "{name} {v} vs oracle {c_oracle}");
        ensure!((v - c_oracle).abs().le(&1e-9), "{name} off by more than 1e-9");
        ensure!(format!("{v:.4}") == "-0.5695", "{name} {v} does not round to -0.5695");
    }
    Ok(format!("R2 {r2_oracle:.12}, compactness {c_oracle:.12}"))
}

// 2 ------------------------------------------------------------------------

fn hash_of(parts: &[&dyn Fn(&mut DefaultHasher)]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in parts {
        p(&mut h);
    }
    h.finish()
}

/// Brute-force compactness totals straight from the scripted table.
fn compact_oracle(out: &CompactnessOutcome, m2: usize, p: &dyn Fn(&str, &str) -> f64) -> Vec<f64> {
    let texts: Vec<String> = out.pool.iter().map(|m| m.reflection.render()).collect();
    let n1 = out.candidate_variants[0].len() as f64;
    let n2 = out.set_variants.len() as f64;
    let mut totals = Vec::new();
    for (idx, e) in texts.iter().enumerate() {
        let mut fidelity = 0.0;
        for row in &out.candidate_variants {
            let mut inner = 0.0;
            for v in row {
                inner += p(e, v) * ln(p(v, e));
            }
            fidelity += inner / n1;
        }
        let mut contrast = 0.0;
        for (n, s) in out.set_variants.iter().enumerate() {
            // alternatives: same set variant first, then anything else, in pool order
            let mut alts: Vec<usize> = (0..texts.len())
                .filter(|&j| j != idx && matches!(out.pool[j].source, PoolSource::Set { variant, .. } if variant == n))
                .take(m2 - 1)
                .collect();
            for j in 0..texts.len() {
                if alts.len() < m2 - 1 && j != idx && !alts.contains(&j) {
                    alts.push(j);
                }
            }
            alts.sort();
            let mean = alts.iter().map(|&a| ln(p(s, &texts[a]))).sum::<f64>() / alts.len() as f64;
            contrast += p(e, s) * (ln(p(s, e)) - mean);
        }
        totals.push(fidelity - contrast / n2);
    }
    totals
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn selection_equivalence() -> Check {
    let mut runner = TestRunner::new(PtConfig { cases: 200, failure_persistence: None, ..PtConfig::default() });
    let sizes = std::cell::Cell::new([0usize; 7]);
    let ties = std::cell::Cell::new(0usize);
    let shape = (1usize..=2, 1usize..=2, 1usize..=2, 1usize..=2, 2usize..=3, 2usize..=6, any::<u64>());
    let result = runner.run(&shape, |(w, n1, m1, n2, mc, target, salt)| {
        let total = w * n1 * m1 + n2 * mc;
        let target = target.max(mc);
        prop_assume!(total >= target);
        let levels = [0u8, 3, 5, 10];
        // every fourth case is a flat table, so all totals tie
        let flat = salt % 4 == 0;
        let score = move |a: &str, b: &str| if flat { 5 } else { levels[(hash_of(&[&|h| salt.hash(h), &|h| a.hash(h), &|h| b.hash(h)]) % 4) as usize] };
        let summaries = Arc::new(AtomicUsize::new(0));
        let counter = summaries.clone();
        let mock = MockBackend::new(
            MockScript::new()
                .when(is_scorer, move |r| {
                    let (a, b) = scorer_texts(r.last_user_text()).expect("scorer prompt");
                    Ok(format!("{}", score(&a, &b)))
                })
                .generator("Paraphrase the following policy", |r| {
                    Ok(format!("1. I stay steady {}, e.g.: I keep a routine.", r.params.seed.unwrap_or(0) % 100_000))
                })
                .generator("# CASE TO BE SUMMARIZED", move |_| {
                    let c = counter.fetch_add(1, Ordering::SeqCst) % target;
                    Ok(format!("1. I keep order {c}, e.g.: I tidy up."))
                })
                .catch_all("?"),
        );
        let mut config = RunConfig::default();
        config.compactness.candidate_paraphrases = n1;
        config.compactness.set_paraphrases = n2;
        config.compactness.summaries_per_set = mc;
        config.m1 = m1;
        let ctx = Context::new(&mock, &config, "S", "T");
        let candidates: Vec<Reflection> = (0..w).map(|i| refl(&format!("1. I plan ahead {i}, e.g.: I pack early."))).collect();
        let out = select_compact(&ctx, &candidates, &config.compactness_config()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let eps = config.cond_prob.epsilon;
        let p = |a: &str, b: &str| (f64::from(score(a, b)) / 10.0).clamp(eps, 1.0);
        let oracle = compact_oracle(&out, mc, &p);
        prop_assert_eq!(out.pool.len(), target);
        for (got, want) in out.breakdowns.iter().zip(&oracle) {
            prop_assert!(close(got.total, *want, 1e-12), "{} vs {}", got.total, want);
        }
        let want = first_max(&oracle);
        prop_assert_eq!(out.selected_index, want);
        prop_assert_eq!(&out.selected, &out.pool[want].reflection);
        let mut seen = sizes.get();
        seen[target] += 1;
        sizes.set(seen);
        ties.set(ties.get() + usize::from(oracle.iter().filter(|&&t| t == oracle[want]).count() > 1));
        Ok(())
    });
    result.map_err(|e| format!("select_compact: {e}"))?;

    // select_top against a full ranking
    let mut runner = TestRunner::new(PtConfig { cases: 200, failure_persistence: None, ..PtConfig::default() });
    let shape = (proptest::collection::vec(-3i32..3, 2..=6), 1usize..=7, 0u8..3, -3i32..3, any::<prop::sample::Index>());
    let top_ties = std::cell::Cell::new(0usize);
    runner
        .run(&shape, |(totals, k, carry_kind, carry_total, pick)| {
            let cands: Vec<Scored> = totals
                .iter()
                .enumerate()
                .map(|(i, &t)| Scored::new(refl(&format!("1. c{i}, e.g.: b")), f64::from(t)))
                .collect();
            let carry = match carry_kind {
                0 => None,
                1 => Some(Scored::new(refl("1. carried, e.g.: b"), f64::from(carry_total))),
                _ => Some(Scored::new(cands[pick.index(cands.len())].reflection.clone(), f64::from(carry_total))),
            };
            let got = select_top(&cands, k, carry.as_ref());

            // entries: (total, order); the carry sorts after equal totals
            let mut entries: Vec<(f64, usize, Scored)> = cands
                .iter()
                .enumerate()
                .filter(|(_, c)| carry.as_ref().is_none_or(|b| b.reflection != c.reflection))
                .map(|(i, c)| (c.total, i, c.clone()))
                .collect();
            let rank = |e: &(f64, usize, Scored), all: &[(f64, usize, Scored)]| {
                all.iter().filter(|o| o.0 > e.0 || (o.0 == e.0 && o.1 < e.1)).count()
            };
            let want: Vec<Scored> = match &carry {
                None => {
                    let mut r: Vec<(usize, Scored)> = entries.iter().map(|e| (rank(e, &entries), e.2.clone())).collect();
                    r.sort_by_key(|x| x.0);
                    r.into_iter().filter(|x| x.0 < k).map(|x| x.1).collect()
                }
                Some(b) => {
                    let plain: Vec<(f64, usize, Scored)> = entries.clone();
                    entries.push((b.total, usize::MAX, b.clone()));
                    let carry_rank = rank(entries.last().unwrap(), &entries);
                    if carry_rank < k {
                        let mut r: Vec<(usize, Scored)> = entries.iter().map(|e| (rank(e, &entries), e.2.clone())).collect();
                        r.sort_by_key(|x| x.0);
                        r.into_iter().filter(|x| x.0 < k).map(|x| x.1).collect()
                    } else {
                        let mut r: Vec<(usize, Scored)> = plain.iter().map(|e| (rank(e, &plain), e.2.clone())).collect();
                        r.sort_by_key(|x| x.0);
                        let mut v: Vec<Scored> = r.into_iter().filter(|x| x.0 + 1 < k).map(|x| x.1).collect();
                        v.push(b.clone());
                        v
                    }
                }
            };
            prop_assert_eq!(got, want);
            let mut sorted = totals.clone();
            sorted.sort();
            sorted.dedup();
            top_ties.set(top_ties.get() + usize::from(sorted.len() < totals.len()));
            Ok(())
        })
        .map_err(|e| format!("select_top: {e}"))?;
    let (sizes, ties, top_ties) = (sizes.get(), ties.get(), top_ties.get());
    ensure!(sizes[2..=6].iter().all(|&n| n > 0), "pool sizes not all exercised: {sizes:?}");
    ensure!(ties > 0 && top_ties > 0, "no ties exercised");
    Ok(format!("pool sizes 2..6 {:?}, {ties} compact ties, {top_ties} top-k ties", &sizes[2..=6]))
}

// 3 ------------------------------------------------------------------------

fn item(min: i64, max: i64, standard: i64, reversed: bool) -> QuestionnaireItem {
    QuestionnaireItem {
        id: "i".into(),
        statement: "s".into(),
        scale_min: min,
        scale_max: max,
        standard_answer: standard,
        dimension_id: "D".into(),
        reversed,
    }
}

fn questionnaire_mapping() -> Check {
    let it = item(1, 5, 5, false);
    let got: Vec<f64> = ["5", "4", "3", "2", "1"].iter().map(|r| score_item(&it, r).score_0_10).collect();
    ensure!(got == [10.0, 7.5, 5.0, 2.5, 0.0], "1-5 mapping gave {got:?}");
    let mut checked = 0;
    for (min, max) in [(1, 5), (1, 6), (1, 7)] {
        for standard in min..=max {
            for r in min..=max {
                let rev = score_item(&item(min, max, standard, true), &r.to_string());
                let plain = score_item(&item(min, max, standard, false), &(min + max - r).to_string());
                ensure!(rev.score_0_10 == plain.score_0_10 && rev.normalized == plain.normalized, "scale {min}-{max} standard {standard} response {r}: {rev:?} vs {plain:?}");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} reversed cases"))
}

// 4 ------------------------------------------------------------------------

fn cond_prob_contract() -> Check {
    let scores = [7u8, 8, 9, 6, 7, 8];
    let direct = ProbabilityEstimate::from_scores(scores.iter().map(|&s| f64::from(s)).collect(), 0.01).unwrap();
    let next = Arc::new(AtomicUsize::new(0));
    let n = next.clone();
    let mock = MockBackend::new(MockScript::new().catch_all_with(move |_| Ok(format!("{}", scores[n.fetch_add(1, Ordering::SeqCst) % 6]))));
    let cp = CondProbConfig::default();
    let est = Estimator::new(&mock, &cp, GenerationParams::new(0.01, 16), 0);
    let via = est.estimate_pair("a text", "another text").map_err(|e| e.to_string())?;
    ensure!(mock.calls() == 6, "{} scorer calls, expected 6", mock.calls());
    for e in [&direct, &via] {
        ensure!(e.mean_score == 7.5 && e.probability == 0.75, "got mean {} probability {}", e.mean_score, e.probability);
    }
    let floor = ProbabilityEstimate::from_scores(vec![0.0; 6], 0.01).unwrap();
    ensure!(floor.probability == 0.01, "floor gave {}", floor.probability);
    ensure!(floor.log_prob().is_finite(), "log of floor is not finite");

    let mut runner = TestRunner::new(PtConfig { cases: 1000, failure_persistence: None, ..PtConfig::default() });
    runner
        .run(&(proptest::collection::vec(0u8..=10, 1..=6), any::<prop::sample::Index>(), 1u8..=10), |(v, at, bump)| {
            let i = at.index(v.len());
            let mut raised = v.clone();
            raised[i] = (raised[i] + bump).min(10);
            let p = |s: &[u8]| ProbabilityEstimate::from_scores(s.iter().map(|&x| f64::from(x)).collect(), 0.01).unwrap().probability;
            prop_assert!(p(&raised) >= p(&v));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("6 calls, mean 7.5, probability 0.75; 1000 monotonicity cases".into())
}

// 5 ------------------------------------------------------------------------

fn end_to_end_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = RunConfig::default();
    ensure!(config.iterations == 5, "default T is {}", config.iterations);
    let run = |name: &str| {
        app::optimize(&OptimizeOptions { config: config.clone(), out: tmp.path().join(name), resume: false, evaluate: false }, None)
            .map_err(|e| format!("{e:#}"))
    };
    let a = run("a")?;
    let b = run("b")?;
    ensure!(a.log.backend_id == "mock" && b.log.backend_id == "mock", "not the mock backend");
    ensure!(a.log.iterations.len() == 5 && a.log.completed, "run incomplete");
    let bytes = |log: &irote_core::orchestrator::RunLog| serde_json::to_vec(&log.without_telemetry()).unwrap();
    ensure!(bytes(&a.log) == bytes(&b.log), "two executions differ");
    ensure!(a.log.telemetry.backend_calls() == a.cache.hits + a.cache.misses, "telemetry disagrees with the cache counters");
    ensure!(a.inner_calls == a.cache.misses, "{} backend calls for {} cache misses", a.inner_calls, a.cache.misses);

    // warm cache: same config, cache copied from run a
    let warm = tmp.path().join("warm");
    std::fs::create_dir_all(warm.join("cache")).unwrap();
    std::fs::copy(tmp.path().join("a/cache/responses.jsonl"), warm.join("cache/responses.jsonl")).unwrap();
    let c = run("warm")?;
    ensure!(c.inner_calls == 0, "warm rerun made {} backend calls", c.inner_calls);
    ensure!(c.cache.misses == 0, "warm rerun had {} cache misses", c.cache.misses);
    ensure!(bytes(&c.log) == bytes(&a.log), "warm rerun log differs");
    Ok(format!("{} calls cold, 0 warm, logs identical", a.inner_calls))
}

// 6 ------------------------------------------------------------------------

/// Level of the best refinement produced in each iteration.
const PEAKS: [u8; 10] = [3, 2, 3, 1, 2, 5, 4, 7, 6, 8];

fn level_of(text: &str) -> Option<u8> {
    text.split("level ").skip(1).filter_map(|s| s.split(|c: char| !c.is_ascii_digit()).next()?.parse().ok()).max()
}

fn carry_run(carry_forward: bool) -> Result<(Vec<f64>, f64), String> {
    let k = 3;
    let organized = Arc::new(AtomicUsize::new(0));
    let summaries = Arc::new(AtomicUsize::new(0));
    let (o, s) = (organized.clone(), summaries.clone());
    let mock = MockBackend::new(
        MockScript::new()
            .when(is_scorer, |r| {
                let (_, given) = scorer_texts(r.last_user_text()).expect("scorer prompt");
                Ok(format!("{}", level_of(&given).map_or(5, |l| 10 - l)))
            })
            .generator("demonstration sentences", move |_| {
                Ok((0..k).map(|i| format!("{}. I stay careful at level 0 seed {i}, e.g.: I lock up.", i + 1)).collect::<Vec<_>>().join("\n"))
            })
            .generator("Paraphrase the following policy", |r| {
                let t = r.last_user_text();
                Ok(t[t.find("[POLICY]\n").unwrap() + 9..].to_string())
            })
            .generator("# CASE TO BE SUMMARIZED", move |_| {
                Ok(format!("1. I stay careful summary {}, e.g.: I lock up.", s.fetch_add(1, Ordering::SeqCst)))
            })
            .generator("organize a new policy", move |_| {
                let c = o.fetch_add(1, Ordering::SeqCst);
                let (t, r) = (c / k, c % k);
                let level = if r == 0 { PEAKS[t] } else { PEAKS[t].saturating_sub(1) };
                Ok(format!("1. I stay careful at level {level} round {t} draft {r}, e.g.: I lock up."))
            })
            .generator("Let's think step by step", |_| Ok("Careful habits score higher.".into()))
            .catch_all("I would plan it carefully."),
    );
    let mut config = RunConfig::default();
    config.init_pool = k;
    config.working_set = 2;
    config.m1 = 1;
    config.m2 = 1;
    config.iterations = PEAKS.len();
    config.carry_forward = carry_forward;
    config.evocativeness.task_prompts = 1;
    config.compactness.candidate_paraphrases = 1;
    config.compactness.set_paraphrases = 1;
    config.compactness.summaries_per_set = 2;
    let system = bundled::system(TraitSystemId::Stbhv);
    let prompts = [prompt("x0", "How would you plan a trip abroad?")];
    let q = PerPrompt(vec![("x0", 0.5)]);
    let mut opt = Optimizer::new(&mock, &config, &system, &prompts, &q).map_err(|e| e.to_string())?;
    let best = opt.run().map_err(|e| e.to_string())?;
    Ok((opt.log().selected_totals(), best.total))
}

fn monotone_carry_forward() -> Check {
    let (seq, best) = carry_run(true)?;
    ensure!(seq.len() == 10, "{} iterations logged", seq.len());
    ensure!(seq.windows(2).all(|w| w[1] >= w[0]), "selected R2 decreased: {seq:?}");
    // one prompt, one sample, q = 0.5, p = (10 - level) / 10
    let top = *PEAKS.iter().max().unwrap();
    let scripted_max = f64::from(10 - top) / 10.0 * ln(0.5);
    ensure!(close(best, scripted_max, 1e-12), "best {best} vs scripted maximum {scripted_max}");
    ensure!(seq.last() == Some(&best), "final selection {:?} is not the best {best}", seq.last());
    let (raw, _) = carry_run(false)?;
    ensure!(raw.windows(2).any(|w| w[1] < w[0]), "scenario never regresses without carry-forward: {raw:?}");
    Ok(format!("best {best:.6} = scripted maximum; without carry-forward the sequence regresses"))
}

// 7 ------------------------------------------------------------------------

fn call_budget() -> Check {
    let mut config = RunConfig::default();
    config.init_pool = 3;
    config.working_set = 2;
    config.m1 = 1;
    config.m2 = 2;
    config.iterations = 2;
    config.evocativeness.task_prompts = 2;
    config.compactness.candidate_paraphrases = 1;
    config.compactness.set_paraphrases = 1;
    config.compactness.summaries_per_set = 2;
    let mock = MockBackend::standard(config.seed);
    let system = bundled::system(TraitSystemId::Stbhv);
    let bank = bundled::questionnaire(TraitSystemId::Stbhv);
    let prompts = bank.task_prompts(&config.dimension_id);
    let eval = irote_core::trait_eval::QuestionnaireEvaluator::new(&bank);
    let mut opt = Optimizer::new(&mock, &config, &system, &prompts, &eval).map_err(|e| e.to_string())?;
    opt.run().map_err(|e| e.to_string())?;

    let (k, w, t) = (config.init_pool, config.working_set, config.iterations);
    let (n1, n2, m1, mc) = (
        config.compactness.candidate_paraphrases,
        config.compactness.set_paraphrases,
        config.m1,
        config.compactness.summaries_per_set,
    );
    let (m2, n) = (config.m2, config.evocativeness.task_prompts);
    let s = config.cond_prob.templates.len() * config.cond_prob.orders.len();
    let pool = w * n1 * m1 + n2 * mc;
    let per_iteration = (w * n1 + n2) // paraphrases
        + pool // summaries
        + pool * (2 * w * n1 + 2 * n2) * s // compactness tables
        + n * m2 // responses under the compacted reflection
        + (w + 1) * n * m2 * s // R2 of working set plus compacted
        + 2 * k // two-step refinement
        + k * n * m2 * s; // R2 of the refinements
    let expected = 1 + n * m2 + k * n * m2 * s + t * per_iteration;

    for it in &opt.log().iterations {
        ensure!(it.compactness.pool.len() == pool, "iteration {} pool collapsed to {}", it.iteration, it.compactness.pool.len());
    }
    ensure!(mock.calls() as usize == expected, "{} calls, closed form {expected}", mock.calls());
    ensure!(opt.log().telemetry.backend_calls() as usize == expected, "telemetry {} calls", opt.log().telemetry.backend_calls());
    Ok(format!("{expected} calls"))
}

// 8 ------------------------------------------------------------------------

fn format_fidelity() -> Check {
    let golden = |name: &str| {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
        std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
    };
    let mut rendered: Vec<(String, String)> = Vec::new();
    rendered.push(("initialization.txt".into(), templates::initialization(10, 50, "Security")));

    let t1 = "I double-check the locks every night.";
    let t2 = conditioning_text("1. I value security, e.g.: I save before I spend.", "Describe your ideal weekend.");
    for (tid, tname) in ProbabilityTemplate::ALL.iter().zip(["p1", "p2", "p3"]) {
        for (order, oname) in SlotOrder::ALL.iter().zip(["forward", "swapped"]) {
            rendered.push((format!("probability_{tname}_{oname}.txt"), templates::probability(*tid, *order, t1, &t2)));
        }
    }

    let mock = MockBackend::standard(0);
    let config = RunConfig::default();
    let system = TraitSystemId::Stbhv.display_name();
    let ctx = Context::new(&mock, &config, system, "Security");
    let pool = [
        Scored::new(refl("1. I keep my home safe, e.g.: I check the locks before bed rather than leave it to chance."), -0.1),
        Scored::new(refl("1. I save for hard times, e.g.: I put money aside instead of buying a new phone."), -0.9),
    ];
    rendered.push(("evocativeness_step1.txt".into(), refinement_prompt(&ctx, &pool)));
    rendered.push(("evocativeness_step2.txt".into(), templates::evocativeness_step2(50)));
    let policy = format!("{}\n{}", pool[0].reflection.render(), pool[1].reflection.render().replacen("1.", "2.", 1));
    rendered.push((
        "compactness.txt".into(),
        templates::compactness(system, "Security", &templates::policy_block(1, &policy, None), 50),
    ));
    for (name, text) in &rendered {
        let want = golden(name);
        if *text != want {
            let at = text.bytes().zip(want.bytes()).position(|(a, b)| a != b).unwrap_or(text.len().min(want.len()));
            return Err(format!("{name} differs from golden at byte {at}"));
        }
    }
    Ok(format!("{} renderings byte-identical", rendered.len()))
}

// 9 ------------------------------------------------------------------------

fn default_snapshot() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_irote"))
        .arg("optimize")
        .current_dir(tmp.path())
        .env_remove("IROTE_API_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "optimize exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let log: serde_json::Value = serde_json::from_slice(
        &std::fs::read(tmp.path().join("runs/STBHV_SEC_s0/run_log.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let c = &log["config"];
    let want = serde_json::json!({
        "init_pool": 10, "m1": 3, "m2": 6, "beta": 1.0, "iterations": 5, "word_budget": 50, "response_budget": 1024
    });
    for (key, value) in want.as_object().unwrap() {
        ensure!(&c[key] == value, "{key} = {} in the run log, expected {value}", c[key]);
    }
    Ok("K=10 M1=3 M2=6 beta=1.0 T=5 words=50 tokens=1024".into())
}

type Criterion = (u8, &'static str, fn() -> Check, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "score oracles", score_oracles, Duration::from_secs(1)),
        (2, "selection equivalence", selection_equivalence, Duration::from_secs(10)),
        (3, "questionnaire mapping", questionnaire_mapping, Duration::from_secs(1)),
        (4, "cond-prob contract", cond_prob_contract, Duration::from_secs(1)),
        (5, "end-to-end determinism", end_to_end_determinism, Duration::from_secs(30)),
        (6, "monotone carry-forward", monotone_carry_forward, Duration::from_secs(10)),
        (7, "call-budget audit", call_budget, Duration::from_secs(10)),
        (8, "format fidelity", format_fidelity, Duration::MAX),
        (9, "default config snapshot", default_snapshot, Duration::MAX),
    ];
    let mut failed = 0;
    for (n, name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > limit => Err(format!("took {took:.2?}, limit {limit:.0?}")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL  {name} ({took:.2?}): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
