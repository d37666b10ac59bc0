//! Verifiers built by reweighting a reference distribution on correct
//! responses, and the generation probability they leave behind.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::CompensatedSum;
use crate::rewards::RewardFn;
use crate::seqmodel::{PolicyState, TokenId, TokenSeq};
use crate::tasks::{
    decode_permutation, encode_ham_prompt, encode_permutation, for_each_permutation,
    is_hamiltonian_cycle, Graph, HamVocab,
};

/// One prompt with its finite response universe and correctness labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptUniverse {
    pub prompt: TokenSeq,
    pub responses: Vec<TokenSeq>,
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub universes: Vec<PromptUniverse>,
}

/// Largest per-prompt universe the exact routines will enumerate.
pub const DEFAULT_ENUMERATION_CAP: usize = 40_320;

impl Task {
    pub fn new(name: impl Into<String>, universes: Vec<PromptUniverse>) -> Result<Self> {
        for (i, u) in universes.iter().enumerate() {
            if u.responses.len() != u.correct.len() {
                return Err(LabError::Input(format!("prompt {i}: labels and responses differ in length")));
            }
            if !u.correct.iter().any(|&c| c) || u.correct.iter().all(|&c| c) {
                return Err(LabError::Input(format!(
                    "prompt {i} needs at least one correct and one incorrect response"
                )));
            }
        }
        if universes.is_empty() {
            return Err(LabError::Input("task has no prompts".into()));
        }
        Ok(Task {
            name: name.into(),
            universes,
        })
    }

    /// Responses `{a, b}` to a single prompt, with `a` correct.
    pub fn two_response_toy() -> Self {
        Task::new(
            "two_response_toy",
            vec![PromptUniverse {
                prompt: TokenSeq::single(0),
                responses: vec![TokenSeq::single(1), TokenSeq::single(2)],
                correct: vec![true, false],
            }],
        )
        .expect("toy task is well formed")
    }

    /// Every vertex ordering of every graph, labelled by whether it closes
    /// into a Hamiltonian cycle.
    pub fn hamiltonian(graphs: &[Graph], vocab: &HamVocab, cap: usize) -> Result<Self> {
        let mut universes = Vec::with_capacity(graphs.len());
        for g in graphs {
            let size = (1..=g.n()).try_fold(1usize, |acc, k| acc.checked_mul(k));
            if size.is_none_or(|s| s > cap) {
                return Err(LabError::Capability(format!(
                    "{}! orderings exceed the enumeration cap {cap}; use the sampled estimate instead",
                    g.n()
                )));
            }
            let mut responses = Vec::new();
            let mut correct = Vec::new();
            let mut perm: Vec<usize> = (0..g.n()).collect();
            let mut err = None;
            for_each_permutation(&mut perm, 0, &mut |p| match encode_permutation(p, vocab) {
                Ok(seq) => {
                    responses.push(seq);
                    correct.push(is_hamiltonian_cycle(g, p));
                }
                Err(e) => err = Some(e),
            });
            if let Some(e) = err {
                return Err(e);
            }
            universes.push(PromptUniverse {
                prompt: encode_ham_prompt(g, vocab)?,
                responses,
                correct,
            });
        }
        Task::new("hamiltonian", universes)
    }

    fn locate(&self, prompt: &TokenSeq, response: &TokenSeq) -> Option<(usize, usize)> {
        let i = self.universes.iter().position(|u| &u.prompt == prompt)?;
        let j = self.universes[i].responses.iter().position(|r| r == response)?;
        Some((i, j))
    }
}

/// Explicit per-prompt probability table aligned with a task's universes.
/// Sequences outside a universe carry zero mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDistribution {
    pub tables: Vec<Vec<f64>>,
}

impl SequenceDistribution {
    pub fn uniform(task: &Task) -> Self {
        SequenceDistribution {
            tables: task
                .universes
                .iter()
                .map(|u| vec![1.0 / u.responses.len() as f64; u.responses.len()])
                .collect(),
        }
    }

    /// Puts all mass on the first correct response of each prompt.
    pub fn first_correct(task: &Task) -> Self {
        SequenceDistribution {
            tables: task
                .universes
                .iter()
                .map(|u| {
                    let first = u.correct.iter().position(|&c| c).expect("task invariant");
                    (0..u.responses.len()).map(|j| if j == first { 1.0 } else { 0.0 }).collect()
                })
                .collect(),
        }
    }

    pub fn validate(&self, task: &Task) -> Result<()> {
        if self.tables.len() != task.universes.len() {
            return Err(LabError::Input("distribution and task have different prompt counts".into()));
        }
        for (i, (t, u)) in self.tables.iter().zip(&task.universes).enumerate() {
            if t.len() != u.responses.len() {
                return Err(LabError::Input(format!("prompt {i}: table size does not match universe")));
            }
            if t.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(LabError::Input(format!("prompt {i}: probabilities must be non-negative")));
            }
            let mut s = CompensatedSum::new();
            t.iter().for_each(|p| s.add(*p));
            if (s.value() - 1.0).abs() > 1e-9 {
                return Err(LabError::Input(format!("prompt {i}: probabilities sum to {}", s.value())));
            }
        }
        Ok(())
    }
}

/// Reweighted distribution together with its per-prompt normalizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierPolicy {
    pub distribution: SequenceDistribution,
    /// `Z(x) = Σ_{C(x)} π_ref e^{δ/β} + Σ_{¬C(x)} π_ref`
    pub normalizers: Vec<f64>,
    pub delta: f64,
    pub beta: f64,
}

/// `π(y|x) ∝ π_ref(y|x) e^{δ/β}` on correct responses and `∝ π_ref(y|x)` elsewhere.
pub fn construct_verifier_policy(
    reference: &SequenceDistribution,
    task: &Task,
    delta: f64,
    beta: f64,
) -> Result<VerifierPolicy> {
    reference.validate(task)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(LabError::config("delta", "must be positive"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(LabError::config("beta", "must be positive"));
    }
    let boost = (delta / beta).exp();
    let mut tables = Vec::with_capacity(task.universes.len());
    let mut normalizers = Vec::with_capacity(task.universes.len());
    for (i, (t, u)) in reference.tables.iter().zip(&task.universes).enumerate() {
        if let Some(j) = t.iter().position(|&p| p <= 0.0) {
            return Err(LabError::Input(format!(
                "reference gives zero probability to response {j} of prompt {i}"
            )));
        }
        let weights: Vec<f64> = t
            .iter()
            .zip(&u.correct)
            .map(|(&p, &c)| if c { p * boost } else { p })
            .collect();
        let mut z = CompensatedSum::new();
        weights.iter().for_each(|w| z.add(*w));
        let z = z.value();
        tables.push(weights.iter().map(|w| w / z).collect());
        normalizers.push(z);
    }
    Ok(VerifierPolicy {
        distribution: SequenceDistribution { tables },
        normalizers,
        delta,
        beta,
    })
}

/// `β (ln π(y|x) − ln π_ref(y|x))` read from two probability tables.
pub struct TabularImplicitReward<'a> {
    pub task: &'a Task,
    pub policy: &'a SequenceDistribution,
    pub reference: &'a SequenceDistribution,
    pub beta: f64,
}

impl RewardFn for TabularImplicitReward<'_> {
    fn reward(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        let (i, j) = self
            .task
            .locate(prompt, response)
            .ok_or_else(|| LabError::Input("response outside the task's universe".into()))?;
        let p = self.policy.tables[i][j];
        let q = self.reference.tables[i][j];
        if p <= 0.0 || q <= 0.0 {
            return Err(LabError::Input("log-ratio undefined for zero probability".into()));
        }
        Ok(self.beta * (p.ln() - q.ln()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub delta: f64,
    pub is_verifier: bool,
    /// `min_x [min_{y∈C(x)} r(x,y) − max_{y∉C(x)} r(x,y)]`
    pub measured_min_margin: f64,
    /// accuracy over every (correct, incorrect) pair of every prompt
    pub all_pairs_accuracy: f64,
    /// `π(C(x)|x) / π_ref(C(x)|x)`, filled when distributions are known
    pub probability_ratio_per_prompt: Vec<f64>,
    /// `e^{δ/β}`, filled when distributions are known
    pub bound: Option<f64>,
    /// `max_x |π(C|x) Z(x) − π_ref(C|x) e^{δ/β}|`
    pub identity_residual: Option<f64>,
    pub normalizers: Vec<f64>,
    pub note: String,
}

const MARGIN_TOL: f64 = 1e-9;

/// Exact margin of `reward` over every prompt's universe.
pub fn verify_margin(reward: &(impl RewardFn + ?Sized), task: &Task, delta: f64) -> Result<VerifierReport> {
    let mut min_margin = f64::INFINITY;
    let (mut wins, mut pairs) = (0.0, 0usize);
    for u in &task.universes {
        let scores: Vec<f64> = u
            .responses
            .iter()
            .map(|r| reward.reward(&u.prompt, r))
            .collect::<Result<_>>()?;
        let mut lo_correct = f64::INFINITY;
        let mut hi_wrong = f64::NEG_INFINITY;
        for (s, &c) in scores.iter().zip(&u.correct) {
            if c {
                lo_correct = lo_correct.min(*s);
            } else {
                hi_wrong = hi_wrong.max(*s);
            }
        }
        min_margin = min_margin.min(lo_correct - hi_wrong);
        for (a, &ca) in scores.iter().zip(&u.correct) {
            if !ca {
                continue;
            }
            for (b, &cb) in scores.iter().zip(&u.correct) {
                if !cb {
                    pairs += 1;
                    wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
        }
    }
    Ok(VerifierReport {
        delta,
        is_verifier: min_margin >= delta - MARGIN_TOL,
        measured_min_margin: min_margin,
        all_pairs_accuracy: wins / pairs as f64,
        probability_ratio_per_prompt: Vec::new(),
        bound: None,
        identity_residual: None,
        normalizers: Vec::new(),
        note: "universal quantifiers are checked over the listed prompts only".into(),
    })
}

/// Builds the reweighted policy, measures its implicit-reward margin, and
/// checks the generation-probability bound and identity per prompt.
pub fn verifier_report(
    reference: &SequenceDistribution,
    task: &Task,
    delta: f64,
    beta: f64,
) -> Result<(VerifierPolicy, VerifierReport)> {
    let policy = construct_verifier_policy(reference, task, delta, beta)?;
    let reward = TabularImplicitReward {
        task,
        policy: &policy.distribution,
        reference,
        beta,
    };
    let mut report = verify_margin(&reward, task, delta)?;
    let boost = (delta / beta).exp();
    let mut residual: f64 = 0.0;
    for (i, z) in policy.normalizers.iter().enumerate() {
        let p = generation_probability(&policy.distribution, task, i)?;
        let q = generation_probability(reference, task, i)?;
        report.probability_ratio_per_prompt.push(p / q);
        residual = residual.max((p * z - q * boost).abs());
    }
    report.bound = Some(boost);
    report.identity_residual = Some(residual);
    report.normalizers = policy.normalizers.clone();
    report.note = "sequences outside each prompt's universe carry zero mass; \
                   universal quantifiers are checked over the listed prompts only"
        .into();
    Ok((policy, report))
}

/// `π(C(x)|x)` by exact summation over the prompt's universe.
pub fn generation_probability(dist: &SequenceDistribution, task: &Task, prompt_index: usize) -> Result<f64> {
    let u = task
        .universes
        .get(prompt_index)
        .ok_or_else(|| LabError::Input(format!("no prompt {prompt_index}")))?;
    let t = dist
        .tables
        .get(prompt_index)
        .filter(|t| t.len() == u.responses.len())
        .ok_or_else(|| LabError::Input("distribution does not match the task".into()))?;
    let mut s = CompensatedSum::new();
    for (p, &c) in t.iter().zip(&u.correct) {
        if c {
            s.add(*p);
        }
    }
    Ok(s.value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub prompt_len: usize,
    pub prompts: usize,
    pub min_probability: f64,
    /// `α⁻¹ |x|⁻ᵏ`
    pub threshold: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyTable {
    pub k: f64,
    pub alpha: f64,
    pub rows: Vec<EfficiencyRow>,
    pub largest_failing_len: Option<usize>,
    /// the finite family the check ran over
    pub family: String,
}

/// Checks `π(C(x)|x) ≥ α⁻¹ |x|⁻ᵏ` for every prompt, grouped by prompt length.
pub fn efficient_generator_check(
    dist: &SequenceDistribution,
    task: &Task,
    k: f64,
    alpha: f64,
) -> Result<EfficiencyTable> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(LabError::config("alpha", "must be positive"));
    }
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for i in 0..task.universes.len() {
        let p = generation_probability(dist, task, i)?;
        let e = groups.entry(task.universes[i].prompt.len()).or_insert((0, f64::INFINITY));
        e.0 += 1;
        e.1 = e.1.min(p);
    }
    let rows: Vec<EfficiencyRow> = groups
        .into_iter()
        .map(|(len, (count, min_p))| {
            let threshold = 1.0 / (alpha * (len as f64).powf(k));
            EfficiencyRow {
                prompt_len: len,
                prompts: count,
                min_probability: min_p,
                threshold,
                passes: min_p >= threshold,
            }
        })
        .collect();
    Ok(EfficiencyTable {
        k,
        alpha,
        largest_failing_len: rows.iter().filter(|r| !r.passes).map(|r| r.prompt_len).max(),
        rows,
        family: format!("{} prompts of task {}", task.universes.len(), task.name),
    })
}

/// Next-token marginal of a table distribution after `prefix`, for sampling
/// the table autoregressively. Empty when no response extends the prefix.
pub fn marginal_next_token(
    dist: &SequenceDistribution,
    task: &Task,
    prompt_index: usize,
    prefix: &[TokenId],
) -> BTreeMap<TokenId, f64> {
    let u = &task.universes[prompt_index];
    let mut mass: BTreeMap<TokenId, f64> = BTreeMap::new();
    let mut total = 0.0;
    for (r, &p) in u.responses.iter().zip(&dist.tables[prompt_index]) {
        let t = r.tokens();
        if t.len() > prefix.len() && t.starts_with(prefix) && p > 0.0 {
            *mass.entry(t[prefix.len()]).or_insert(0.0) += p;
            total += p;
        }
    }
    mass.values_mut().for_each(|v| *v /= total);
    mass
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidRateEstimate {
    pub valid: usize,
    pub total: usize,
    pub rate: f64,
    /// Wilson 95% interval
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Samples `per_graph` responses at temperature 1 for each graph and counts
/// the ones that decode to a Hamiltonian cycle.
pub fn estimate_valid_cycle_rate<R: Rng + ?Sized>(
    policy: &PolicyState,
    graphs: &[Graph],
    vocab: &HamVocab,
    per_graph: usize,
    rng: &mut R,
) -> Result<ValidRateEstimate> {
    let mut valid = 0;
    for g in graphs {
        let prompt = encode_ham_prompt(g, vocab)?;
        for _ in 0..per_graph {
            let y = policy.sample_response(&prompt, 2 * g.n(), None, rng)?;
            if decode_permutation(&y, vocab).is_some_and(|p| is_hamiltonian_cycle(g, &p)) {
                valid += 1;
            }
        }
    }
    let total = graphs.len() * per_graph;
    let n = total as f64;
    let rate = if total == 0 { 0.0 } else { valid as f64 / n };
    let z = 1.96f64;
    let (lo, hi) = if total == 0 {
        (0.0, 1.0)
    } else {
        let den = 1.0 + z * z / n;
        let centre = (rate + z * z / (2.0 * n)) / den;
        let half = z * (rate * (1.0 - rate) / n + z * z / (4.0 * n * n)).sqrt() / den;
        ((centre - half).max(0.0), (centre + half).min(1.0))
    };
    Ok(ValidRateEstimate {
        valid,
        total,
        rate,
        ci_low: lo,
        ci_high: hi,
    })
}
