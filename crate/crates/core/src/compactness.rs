//! Compactness selection.
//!
//! Each working candidate gets a neighborhood of paraphrases, and so does the
//! concatenated working set. Summaries are sampled from every paraphrase; the
//! union is the pool. A pool member `e` scores
//!
//! ```text
//! fidelity = sum_k 1/N1 sum_i p(e | c_k^i) * ln q(c_k^i | e)
//! contrast = 1/N2 sum_n p(e | S^n) * [ ln p(S^n | e) - mean_{e' != e} ln p(S^n | e') ]
//! total    = fidelity - contrast
//! ```
//!
//! where `c_k^i` are candidate paraphrases, `S^n` set paraphrases and `e'`
//! range over `M2 - 1` other pool members. All probabilities come from the
//! prompt-based estimator; `q` is the same model as `p`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::hex_digest;
use crate::cond_prob::{Estimator, ProbabilityEstimate};
use crate::context::Context;
use crate::error::{Error, Result};
use crate::reflection::{Origin, Reflection};
use crate::templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactnessConfig {
    /// Paraphrases per candidate.
    pub n1: usize,
    /// Paraphrases of the concatenated set.
    pub n2: usize,
    /// Summaries per candidate paraphrase.
    pub m1: usize,
    /// Summaries per set paraphrase; `m2 - 1` alternatives form the contrast.
    pub m2: usize,
}

impl Default for CompactnessConfig {
    fn default() -> Self {
        Self { n1: 2, n2: 2, m1: 3, m2: 3 }
    }
}

impl CompactnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.m1 == 0 {
            return Err(Error::Config("compactness counts must be >= 1".into()));
        }
        if self.m2 < 2 {
            return Err(Error::Config("compactness m2 must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityTerm {
    pub candidate: usize,
    pub variant: usize,
    pub p_summary_given_variant: f64,
    pub q_variant_given_summary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastTerm {
    pub set_variant: usize,
    pub p_summary_given_set: f64,
    pub p_set_given_summary: f64,
    pub p_set_given_alternatives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactnessBreakdown {
    pub fidelity_term: f64,
    pub contrast_term: f64,
    /// `fidelity_term - contrast_term`.
    pub total: f64,
    /// Paraphrases per candidate (the fidelity normalizer).
    pub n1: usize,
    pub fidelity: Vec<FidelityTerm>,
    pub contrast: Vec<ContrastTerm>,
}

impl CompactnessBreakdown {
    /// Evaluates the score from raw probabilities. Fidelity terms must be
    /// grouped by candidate.
    pub fn from_terms(n1: usize, fidelity: Vec<FidelityTerm>, contrast: Vec<ContrastTerm>) -> Result<Self> {
        if n1 == 0 {
            return Err(Error::Input("n1 must be >= 1".into()));
        }
        let mut fidelity_term = 0.0;
        let mut group: Option<usize> = None;
        let mut inner = 0.0;
        for t in &fidelity {
            if group.is_some_and(|g| g != t.candidate) {
                fidelity_term += inner / n1 as f64;
                inner = 0.0;
            }
            group = Some(t.candidate);
            inner += t.p_summary_given_variant * libm::log(t.q_variant_given_summary);
        }
        if group.is_some() {
            fidelity_term += inner / n1 as f64;
        }

        let mut contrast_sum = 0.0;
        for c in &contrast {
            if c.p_set_given_alternatives.is_empty() {
                return Err(Error::PoolTooSmall { needed: 2, have: 1 });
            }
            let alt = c.p_set_given_alternatives.iter().map(|&p| libm::log(p)).sum::<f64>()
                / c.p_set_given_alternatives.len() as f64;
            contrast_sum += c.p_summary_given_set * (libm::log(c.p_set_given_summary) - alt);
        }
        let contrast_term = if contrast.is_empty() { 0.0 } else { contrast_sum / contrast.len() as f64 };

        Ok(Self {
            fidelity_term,
            contrast_term,
            total: fidelity_term - contrast_term,
            n1,
            fidelity,
            contrast,
        })
    }

    /// Re-evaluates from the stored probabilities.
    pub fn recompute(&self) -> Result<Self> {
        Self::from_terms(self.n1, self.fidelity.clone(), self.contrast.clone())
    }
}

/// First index of the maximum; `None` for an empty slice.
pub fn argmax_first(totals: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &t) in totals.iter().enumerate() {
        if best.is_none_or(|b| t > totals[b]) {
            best = Some(i);
        }
    }
    best
}

/// Probabilities that involve one pool member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberProbabilities {
    /// `[k][i]`: p(member | candidate paraphrase).
    pub p_member_given_variant: Vec<Vec<f64>>,
    /// `[k][i]`: q(candidate paraphrase | member).
    pub q_variant_given_member: Vec<Vec<f64>>,
    /// `[n]`: p(member | set paraphrase).
    pub p_member_given_set: Vec<f64>,
    /// `[n]`: p(set paraphrase | member).
    pub p_set_given_member: Vec<f64>,
}

/// Scores `tables[member]` using `alternatives[n]` (indices into `tables`)
/// for the contrastive term of set paraphrase `n`.
pub fn breakdown_for(
    n1: usize,
    tables: &[MemberProbabilities],
    member: usize,
    alternatives: &[Vec<usize>],
) -> Result<CompactnessBreakdown> {
    let t = &tables[member];
    let mut fidelity = Vec::new();
    for (k, row) in t.p_member_given_variant.iter().enumerate() {
        for (i, &p) in row.iter().enumerate() {
            fidelity.push(FidelityTerm {
                candidate: k,
                variant: i,
                p_summary_given_variant: p,
                q_variant_given_summary: t.q_variant_given_member[k][i],
            });
        }
    }
    let contrast = (0..t.p_member_given_set.len())
        .map(|n| ContrastTerm {
            set_variant: n,
            p_summary_given_set: t.p_member_given_set[n],
            p_set_given_summary: t.p_set_given_member[n],
            p_set_given_alternatives: alternatives[n].iter().map(|&a| tables[a].p_set_given_member[n]).collect(),
        })
        .collect();
    CompactnessBreakdown::from_terms(n1, fidelity, contrast)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "lowercase")]
pub enum PoolSource {
    Candidate { candidate: usize, variant: usize, sample: usize },
    Set { variant: usize, sample: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub reflection: Reflection,
    pub source: PoolSource,
    /// SHA-256 of the rendered summary.
    pub digest: String,
    /// `[n]`: pool indices used as contrastive alternatives.
    pub alternatives: Vec<Vec<usize>>,
}

/// Contrastive alternatives for `member` under set paraphrase `n`: the other
/// summaries of that paraphrase in pool order, then other pool members in
/// pool order, `count` in total.
pub fn contrast_alternatives(pool: &[PoolSource], member: usize, n: usize, count: usize) -> Result<Vec<usize>> {
    let same_group = |j: usize| matches!(pool[j], PoolSource::Set { variant, .. } if variant == n);
    let mut chosen: Vec<usize> = (0..pool.len()).filter(|&j| j != member && same_group(j)).take(count).collect();
    for j in 0..pool.len() {
        if chosen.len() >= count {
            break;
        }
        if j != member && !chosen.contains(&j) {
            chosen.push(j);
        }
    }
    if chosen.len() < count {
        return Err(Error::PoolTooSmall { needed: count + 1, have: pool.len() });
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Score of one text `e` against explicit paraphrase neighborhoods. The
/// contrast uses the first `m2 - 1` members of `pool` other than `e`.
pub fn compactness_score(
    estimator: &Estimator<'_>,
    e: &str,
    candidate_variants: &[Vec<String>],
    set_variants: &[String],
    pool: &[String],
    m2: usize,
) -> Result<CompactnessBreakdown> {
    let n1 = candidate_variants.first().map_or(0, Vec::len).max(1);
    let alternatives: Vec<&str> =
        pool.iter().map(String::as_str).filter(|&p| p != e).take(m2.saturating_sub(1)).collect();
    if alternatives.len() < m2.saturating_sub(1) || m2 < 2 {
        return Err(Error::PoolTooSmall { needed: m2.max(2), have: alternatives.len() + 1 });
    }
    let mut texts: Vec<&str> = alloc::vec![e];
    texts.extend(alternatives.iter().copied());
    let tables = member_tables(estimator, &texts, candidate_variants, set_variants)?;
    let alt_idx: Vec<usize> = (1..texts.len()).collect();
    let per_set: Vec<Vec<usize>> = set_variants.iter().map(|_| alt_idx.clone()).collect();
    breakdown_for(n1, &tables, 0, &per_set)
}

/// Every probability needed for `members`, estimated in one batch.
/// Alternatives only need `p(S^n | member)`, but the full table is cheap to
/// reason about and is what the call budget counts.
fn member_tables(
    estimator: &Estimator<'_>,
    members: &[&str],
    candidate_variants: &[Vec<String>],
    set_variants: &[String],
) -> Result<Vec<MemberProbabilities>> {
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for &m in members {
        for row in candidate_variants {
            for v in row {
                pairs.push((m, v.as_str()));
            }
        }
        for row in candidate_variants {
            for v in row {
                pairs.push((v.as_str(), m));
            }
        }
        for s in set_variants {
            pairs.push((m, s.as_str()));
        }
        for s in set_variants {
            pairs.push((s.as_str(), m));
        }
    }
    let estimates = estimator.estimate_pairs(&pairs)?;
    let mut it = estimates.iter().map(|e: &ProbabilityEstimate| e.probability);
    let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
    let mut tables = Vec::with_capacity(members.len());
    for _ in members {
        let p = candidate_variants.iter().map(|row| take(row.len())).collect();
        let q = candidate_variants.iter().map(|row| take(row.len())).collect();
        let ps = take(set_variants.len());
        let sp = take(set_variants.len());
        tables.push(MemberProbabilities {
            p_member_given_variant: p,
            q_variant_given_member: q,
            p_member_given_set: ps,
            p_set_given_member: sp,
        });
    }
    Ok(tables)
}

/// Full record of one compactness pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactnessOutcome {
    pub selected: Reflection,
    pub selected_index: usize,
    pub candidate_variants: Vec<Vec<String>>,
    pub set_variants: Vec<String>,
    /// SHA-256 of each text in `candidate_variants` and `set_variants`.
    pub candidate_variant_digests: Vec<Vec<String>>,
    pub set_variant_digests: Vec<String>,
    pub pool: Vec<PoolMember>,
    pub breakdowns: Vec<CompactnessBreakdown>,
}

/// `n` paraphrases of `text`, each parsed and cut to `word_budget`.
pub fn paraphrase(ctx: &Context<'_>, text: &str, n: usize, word_budget: usize, tag: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Input("paraphrase count must be >= 1".into()));
    }
    let prompt = templates::paraphrase(text, word_budget);
    let prompts: Vec<_> = (0..n).map(|i| (prompt.clone(), alloc::vec![tag, i as u64])).collect();
    let budgets = alloc::vec![word_budget; n];
    Ok(ctx
        .generate_reflections("paraphrase", &prompts, &budgets, "paraphrase")?
        .iter()
        .map(Reflection::render)
        .collect())
}

/// `m` summaries of `policy` from the summarization template.
pub fn summarize(ctx: &Context<'_>, policy: &str, m: usize, tag: u64) -> Result<Vec<Reflection>> {
    if m == 0 {
        return Err(Error::Input("summary count must be >= 1".into()));
    }
    let prompt = summary_prompt(ctx, policy);
    let prompts: Vec<_> = (0..m).map(|j| (prompt.clone(), alloc::vec![tag, j as u64])).collect();
    let budgets = alloc::vec![ctx.config.word_budget; m];
    Ok(ctx
        .generate_reflections("summary", &prompts, &budgets, "summary")?
        .into_iter()
        .map(|r| r.with_origin(Origin::Summarized, ctx.iteration))
        .collect())
}

fn summary_prompt(ctx: &Context<'_>, policy: &str) -> String {
    templates::compactness(
        ctx.system_name,
        ctx.trait_name,
        &templates::policy_block(1, policy, None),
        ctx.config.word_budget,
    )
}

/// One compactness pass over the working candidates.
pub fn select_compact(ctx: &Context<'_>, candidates: &[Reflection], config: &CompactnessConfig) -> Result<CompactnessOutcome> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    let budget = ctx.config.word_budget;
    let k = candidates.len();

    // Paraphrase neighborhoods, all in one batch.
    let set_text = candidates.iter().map(Reflection::render).collect::<Vec<_>>().join("\n\n");
    let set_budget = budget * k;
    let mut prompts = Vec::new();
    let mut budgets = Vec::new();
    for (ci, c) in candidates.iter().enumerate() {
        let prompt = templates::paraphrase(&c.render(), budget);
        for i in 0..config.n1 {
            prompts.push((prompt.clone(), alloc::vec![0, ci as u64, i as u64]));
            budgets.push(budget);
        }
    }
    let set_prompt = templates::paraphrase(&set_text, set_budget);
    for n in 0..config.n2 {
        prompts.push((set_prompt.clone(), alloc::vec![1, n as u64]));
        budgets.push(set_budget);
    }
    let variants: Vec<String> = ctx
        .generate_reflections("paraphrase", &prompts, &budgets, "paraphrase")?
        .iter()
        .map(Reflection::render)
        .collect();
    let candidate_variants: Vec<Vec<String>> =
        (0..k).map(|ci| variants[ci * config.n1..(ci + 1) * config.n1].to_vec()).collect();
    let set_variants: Vec<String> = variants[k * config.n1..].to_vec();

    // Summaries of every paraphrase, one batch.
    let mut prompts = Vec::new();
    let mut sources = Vec::new();
    for (ci, row) in candidate_variants.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let prompt = summary_prompt(ctx, v);
            for j in 0..config.m1 {
                prompts.push((prompt.clone(), alloc::vec![0, ci as u64, i as u64, j as u64]));
                sources.push(PoolSource::Candidate { candidate: ci, variant: i, sample: j });
            }
        }
    }
    for (n, v) in set_variants.iter().enumerate() {
        let prompt = summary_prompt(ctx, v);
        for m in 0..config.m2 {
            prompts.push((prompt.clone(), alloc::vec![1, n as u64, m as u64]));
            sources.push(PoolSource::Set { variant: n, sample: m });
        }
    }
    let budgets = alloc::vec![budget; prompts.len()];
    let summaries = ctx.generate_reflections("summary", &prompts, &budgets, "summary")?;

    let mut pool: Vec<PoolMember> = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    for (r, source) in summaries.into_iter().zip(sources) {
        let key = r.dedup_key();
        if keys.contains(&key) {
            continue;
        }
        keys.push(key);
        let digest = hex_digest(r.render().as_bytes());
        pool.push(PoolMember {
            reflection: r.with_origin(Origin::Summarized, ctx.iteration),
            source,
            digest,
            alternatives: Vec::new(),
        });
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if pool.len() < config.m2 {
        return Err(Error::PoolTooSmall { needed: config.m2, have: pool.len() });
    }

    let rendered: Vec<String> = pool.iter().map(|m| m.reflection.render()).collect();
    let texts: Vec<&str> = rendered.iter().map(String::as_str).collect();
    let estimator = ctx.estimator();
    let tables = member_tables(&estimator, &texts, &candidate_variants, &set_variants)?;

    let sources: Vec<PoolSource> = pool.iter().map(|m| m.source).collect();
    let mut breakdowns = Vec::with_capacity(pool.len());
    for (member, m) in pool.iter_mut().enumerate() {
        let alternatives = (0..config.n2)
            .map(|n| contrast_alternatives(&sources, member, n, config.m2 - 1))
            .collect::<Result<Vec<_>>>()?;
        breakdowns.push(breakdown_for(config.n1, &tables, member, &alternatives)?);
        m.alternatives = alternatives;
    }
    let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let selected_index = argmax_first(&totals).ok_or(Error::EmptyPool)?;

    Ok(CompactnessOutcome {
        selected: pool[selected_index].reflection.clone(),
        selected_index,
        candidate_variant_digests: candidate_variants
            .iter()
            .map(|row| row.iter().map(|v| hex_digest(v.as_bytes())).collect())
            .collect(),
        set_variant_digests: set_variants.iter().map(|v| hex_digest(v.as_bytes())).collect(),
        candidate_variants,
        set_variants,
        pool,
        breakdowns,
    })
}
