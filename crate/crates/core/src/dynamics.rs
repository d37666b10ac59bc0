//! First-order predictions of how one gradient step on a single training
//! preference moves the reward of an unrelated evaluation pair.
//!
//! For a linear head the prediction is exact. For the implicit reward and
//! the generative verifier the reward is nonlinear in the unembedding, so
//! the prediction carries an `O(η²)` remainder.

use serde::{Deserialize, Serialize};

use crate::dataset::{PreferenceDataset, PreferenceExample};
use crate::error::{LabError, Result};
use crate::linalg::{dot, sigmoid, sub, CompensatedSum};
use crate::rewards::{mean_response_representation, GrmTemplate, LinearHead, RewardScorer, ScorerKind};
use crate::seqmodel::{PolicyState, RepresentationProvider, TokenSeq};
use crate::training::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsQuery {
    pub train_example: PreferenceExample,
    pub eval_prompt: TokenSeq,
    pub eval_response: TokenSeq,
    pub eta: f64,
}

impl DynamicsQuery {
    pub fn new(
        train_example: PreferenceExample,
        eval_prompt: TokenSeq,
        eval_response: TokenSeq,
        eta: f64,
    ) -> Result<Self> {
        let q = DynamicsQuery {
            train_example,
            eval_prompt,
            eval_response,
            eta,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(LabError::Input(format!("step size must be non-negative, got {}", self.eta)));
        }
        if self.eval_response.is_empty() {
            return Err(LabError::Input("evaluation response must be non-empty".into()));
        }
        self.train_example.validate()
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        DynamicsQuery {
            eta,
            ..self.clone()
        }
    }
}

/// Which training response a coefficient pairs the evaluation response with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Chosen,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub side: Side,
    /// position in the evaluation response
    pub k: usize,
    /// position in the training response
    pub l: usize,
    /// ρ for the implicit reward, γ for the generative verifier, `g` for a linear head
    pub value: f64,
    /// inner product of the two representations the coefficient multiplies
    pub inner_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub variant: ScorerKind,
    pub eta: f64,
    pub predicted_delta: f64,
    pub actual_delta: f64,
    /// `actual_delta − predicted_delta`
    pub residual: f64,
    pub coefficient_table: Vec<Coefficient>,
}

/// Reward change of the evaluation pair after one gradient step of size η
/// on the training example's own loss. The scorer is left untouched.
pub fn actual_delta(scorer: &RewardScorer, query: &DynamicsQuery) -> Result<f64> {
    query.validate()?;
    if query.eta == 0.0 {
        return Ok(0.0);
    }
    let single = PreferenceDataset::new("update", vec![query.train_example.clone()]);
    let objective = Objective::for_scorer(scorer, &single)?;
    let grad = objective
        .evaluate(&scorer.params(), true)?
        .grad
        .expect("gradient requested");
    let mut updated = scorer.clone();
    updated.step(-query.eta, &grad)?;
    if !updated.params().is_finite() {
        return Err(LabError::Numeric("updated parameters are not finite".into()));
    }
    let (x, y) = (&query.eval_prompt, &query.eval_response);
    match (&updated, scorer) {
        // score the updated policy against the old one directly so the two
        // normalizers are differenced per prefix rather than after summation
        (RewardScorer::Im { policy, beta, .. }, RewardScorer::Im { policy: old, .. }) => {
            RewardScorer::im(policy.clone(), old.clone(), *beta)?.score(x, y)
        }
        (RewardScorer::ImNoRef { policy }, RewardScorer::ImNoRef { policy: old }) => {
            RewardScorer::im(policy.clone(), old.clone(), 1.0)?.score(x, y)
        }
        _ => Ok(updated.score(x, y)? - scorer.score(x, y)?),
    }
}

/// `g = σ(r(x,y⁻) − r(x,y⁺))` at the current parameters.
fn preference_weight(scorer: &RewardScorer, ex: &PreferenceExample) -> Result<f64> {
    Ok(sigmoid(-scorer.reward_difference(&ex.prompt, &ex.chosen, &ex.rejected)?))
}

/// `η g ⟨h_{x̄,ȳ}, h_{x,y⁺} − h_{x,y⁻}⟩`
pub fn predict_delta_ex(
    query: &DynamicsQuery,
    head: &LinearHead,
    reps: &RepresentationProvider,
) -> Result<f64> {
    let scorer = RewardScorer::ex(head.clone(), std::sync::Arc::new(reps.clone()))?;
    Ok(linear_prediction(&scorer, query)?.0)
}

fn linear_prediction(scorer: &RewardScorer, query: &DynamicsQuery) -> Result<(f64, Vec<Coefficient>)> {
    query.validate()?;
    let reps = scorer.reps();
    let ex = &query.train_example;
    let features = |x: &TokenSeq, y: &TokenSeq| -> Result<Vec<f64>> {
        match scorer {
            RewardScorer::Ex { .. } => reps.representation(&x.concat(y)),
            RewardScorer::ExAllRepr { .. } => mean_response_representation(reps, x, y),
            _ => Err(LabError::Contract("linear prediction needs a linear head".into())),
        }
    };
    let h_eval = features(&query.eval_prompt, &query.eval_response)?;
    let diff = sub(&features(&ex.prompt, &ex.chosen)?, &features(&ex.prompt, &ex.rejected)?);
    let g = preference_weight(scorer, ex)?;
    let ip = dot(&h_eval, &diff);
    Ok((
        ip * query.eta * g,
        vec![Coefficient {
            side: Side::Chosen,
            k: 0,
            l: 0,
            value: g,
            inner_product: ip,
        }],
    ))
}

/// `ρ = 1{ȳ_k = v_l} − π(ȳ_k | x, v_<l) − π(v_l | x̄, ȳ_<k) + ⟨π(·|x̄,ȳ_<k), π(·|x,v_<l)⟩`
/// with `v` the chosen or rejected training response and positions counted from zero.
pub fn rho(
    k: usize,
    l: usize,
    side: Side,
    policy: &PolicyState,
    query: &DynamicsQuery,
) -> Result<f64> {
    let ex = &query.train_example;
    let v = match side {
        Side::Chosen => &ex.chosen,
        Side::Rejected => &ex.rejected,
    };
    let ybar = &query.eval_response;
    if k >= ybar.len() || l >= v.len() {
        return Err(LabError::Input(format!(
            "position ({k}, {l}) outside responses of lengths ({}, {})",
            ybar.len(),
            v.len()
        )));
    }
    let p_eval = policy.next_token_distribution(&query.eval_prompt.concat_prefix(ybar, k))?;
    let p_train = policy.next_token_distribution(&ex.prompt.concat_prefix(v, l))?;
    Ok(rho_from_distributions(
        &p_eval,
        &p_train,
        ybar.tokens()[k] as usize,
        v.tokens()[l] as usize,
    ))
}

/// ρ from the two next-token distributions and the two tokens, evaluated as
/// `Σ_v (1{v=ȳ_k} − π̄_v)(1{v=v_l} − π_v)`, which expands to the four terms
/// above and keeps rounding inside the bounds.
pub fn rho_from_distributions(
    eval_dist: &[f64],
    train_dist: &[f64],
    eval_token: usize,
    train_token: usize,
) -> f64 {
    centered_product(eval_dist, eval_token, train_dist, train_token)
}

/// `Σ_v (1{v=a} − p_v)(1{v=b} − q_v)`
fn centered_product(p: &[f64], a: usize, q: &[f64], b: usize) -> f64 {
    let mut s = CompensatedSum::new();
    for (v, (pv, qv)) in p.iter().zip(q).enumerate() {
        let x = if v == a { 1.0 - pv } else { -pv };
        let y = if v == b { 1.0 - qv } else { -qv };
        s.add(x * y);
    }
    s.value()
}

/// The same-token case of ρ written as a product plus a sum of non-negative
/// terms, which makes its positivity evident.
pub fn rho_same_token(eval_dist: &[f64], train_dist: &[f64], token: usize) -> f64 {
    let mut rest = CompensatedSum::new();
    for (v, (a, b)) in eval_dist.iter().zip(train_dist).enumerate() {
        if v != token {
            rest.add(a * b);
        }
    }
    (1.0 - train_dist[token]) * (1.0 - eval_dist[token]) + rest.value()
}

/// `η g β² [Σ_{k,l} ρ_kl(y⁺) ⟨h̄_k, h⁺_l⟩ − Σ_{k,l} ρ_kl(y⁻) ⟨h̄_k, h⁻_l⟩]`
pub fn predict_delta_im(scorer: &RewardScorer, query: &DynamicsQuery) -> Result<f64> {
    Ok(im_prediction(scorer, query)?.0)
}

fn im_prediction(scorer: &RewardScorer, query: &DynamicsQuery) -> Result<(f64, Vec<Coefficient>)> {
    query.validate()?;
    let (policy, beta) = match scorer {
        RewardScorer::Im { policy, beta, .. } => (policy, *beta),
        RewardScorer::ImNoRef { policy } => (policy, 1.0),
        _ => return Err(LabError::Contract("implicit prediction needs an IM scorer".into())),
    };
    let reps = policy.reps();
    let ex = &query.train_example;
    let g = preference_weight(scorer, ex)?;
    let ybar = &query.eval_response;
    let eval_steps: Vec<(Vec<f64>, Vec<f64>)> = (0..ybar.len())
        .map(|k| {
            let h = reps.representation(&query.eval_prompt.concat_prefix(ybar, k))?;
            let p = policy.distribution_for(&h)?;
            Ok((h, p))
        })
        .collect::<Result<_>>()?;
    let mut table = Vec::new();
    let mut total = CompensatedSum::new();
    for (side, v, sign) in [(Side::Chosen, &ex.chosen, 1.0), (Side::Rejected, &ex.rejected, -1.0)] {
        for l in 0..v.len() {
            let h = reps.representation(&ex.prompt.concat_prefix(v, l))?;
            let p = policy.distribution_for(&h)?;
            for (k, (hk, pk)) in eval_steps.iter().enumerate() {
                let value = rho_from_distributions(
                    pk,
                    &p,
                    ybar.tokens()[k] as usize,
                    v.tokens()[l] as usize,
                );
                let ip = dot(hk, &h);
                total.add(sign * value * ip);
                table.push(Coefficient {
                    side,
                    k,
                    l,
                    value,
                    inner_product: ip,
                });
            }
        }
    }
    Ok((query.eta * g * beta * beta * total.value(), table))
}

/// `γ(y⁺) = 1 − π(yes|Ī) − π(yes|I⁺) + ⟨π(·|Ī), π(·|I⁺)⟩`
pub fn gamma_plus(query: &DynamicsQuery, policy: &PolicyState, template: &GrmTemplate) -> Result<f64> {
    let (p_eval, p_plus, _) = verdict_distributions(query, policy, template)?;
    Ok(gamma_plus_from(&p_eval, &p_plus, template.yes() as usize))
}

/// `γ(y⁻) = −π(no|Ī) − π(yes|I⁻) + ⟨π(·|Ī), π(·|I⁻)⟩`
pub fn gamma_minus(query: &DynamicsQuery, policy: &PolicyState, template: &GrmTemplate) -> Result<f64> {
    let (p_eval, _, p_minus) = verdict_distributions(query, policy, template)?;
    Ok(gamma_minus_from(
        &p_eval,
        &p_minus,
        template.yes() as usize,
        template.no() as usize,
    ))
}

/// γ(y⁺) as `(e_yes − π̄)ᵀ(e_yes − π⁺)`, a sum of non-negative terms.
pub fn gamma_plus_from(eval_dist: &[f64], chosen_dist: &[f64], yes: usize) -> f64 {
    centered_product(eval_dist, yes, chosen_dist, yes)
}

/// γ(y⁻) as `(e_yes − π̄)ᵀ(e_no − π⁻)`.
pub fn gamma_minus_from(eval_dist: &[f64], rejected_dist: &[f64], yes: usize, no: usize) -> f64 {
    centered_product(eval_dist, yes, rejected_dist, no)
}

type Dist = Vec<f64>;

fn verdict_distributions(
    query: &DynamicsQuery,
    policy: &PolicyState,
    template: &GrmTemplate,
) -> Result<(Dist, Dist, Dist)> {
    let ex = &query.train_example;
    Ok((
        policy.next_token_distribution(&template.build_input(&query.eval_prompt, &query.eval_response))?,
        policy.next_token_distribution(&template.build_input(&ex.prompt, &ex.chosen))?,
        policy.next_token_distribution(&template.build_input(&ex.prompt, &ex.rejected))?,
    ))
}

/// `η π(yes|Ī) [γ(y⁺) ⟨h_Ī, h_{I⁺}⟩ + γ(y⁻) ⟨h_Ī, h_{I⁻}⟩]`
pub fn predict_delta_exgrm(
    query: &DynamicsQuery,
    policy: &PolicyState,
    template: &GrmTemplate,
) -> Result<f64> {
    Ok(grm_prediction(query, policy, template)?.0)
}

fn grm_prediction(
    query: &DynamicsQuery,
    policy: &PolicyState,
    template: &GrmTemplate,
) -> Result<(f64, Vec<Coefficient>)> {
    query.validate()?;
    let reps = policy.reps();
    let ex = &query.train_example;
    let h_eval = reps.representation(&template.build_input(&query.eval_prompt, &query.eval_response))?;
    let h_plus = reps.representation(&template.build_input(&ex.prompt, &ex.chosen))?;
    let h_minus = reps.representation(&template.build_input(&ex.prompt, &ex.rejected))?;
    let p_eval = policy.distribution_for(&h_eval)?;
    let (yes, no) = (template.yes() as usize, template.no() as usize);
    let gp = gamma_plus_from(&p_eval, &policy.distribution_for(&h_plus)?, yes);
    let gm = gamma_minus_from(&p_eval, &policy.distribution_for(&h_minus)?, yes, no);
    let (ip_plus, ip_minus) = (dot(&h_eval, &h_plus), dot(&h_eval, &h_minus));
    let pred = query.eta * p_eval[yes] * (gp * ip_plus + gm * ip_minus);
    let table = vec![
        Coefficient {
            side: Side::Chosen,
            k: 0,
            l: 0,
            value: gp,
            inner_product: ip_plus,
        },
        Coefficient {
            side: Side::Rejected,
            k: 0,
            l: 0,
            value: gm,
            inner_product: ip_minus,
        },
    ];
    Ok((pred, table))
}

/// Prediction, measured change, and the coefficients behind the prediction.
pub fn dynamics_report(scorer: &RewardScorer, query: &DynamicsQuery) -> Result<DynamicsReport> {
    let (predicted_delta, coefficient_table) = match scorer {
        RewardScorer::Ex { .. } | RewardScorer::ExAllRepr { .. } => linear_prediction(scorer, query)?,
        RewardScorer::Im { .. } | RewardScorer::ImNoRef { .. } => im_prediction(scorer, query)?,
        RewardScorer::ExGrm { policy, template } => grm_prediction(query, policy, template)?,
    };
    let actual = actual_delta(scorer, query)?;
    Ok(DynamicsReport {
        variant: scorer.kind(),
        eta: query.eta,
        predicted_delta,
        actual_delta: actual,
        residual: actual - predicted_delta,
        coefficient_table,
    })
}
