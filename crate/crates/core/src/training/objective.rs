//! Training objectives evaluated on cached representations.
//!
//! Representations are fixed, so every prefix vector an objective needs is
//! looked up once when the objective is built. Evaluation then only touches
//! the trainable parameters.

use crate::dataset::{PreferenceDataset, PreferenceExample};
use crate::error::{LabError, Result};
use crate::linalg::{axpy, dot, log_sum_exp, neg_log_sigmoid, sigmoid, CompensatedSum, Matrix};
use crate::rewards::{mean_response_representation, Params, RewardScorer, ScorerKind};
use crate::seqmodel::{softmax, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean `−ln σ(r⁺ − r⁻)`.
    BradleyTerry,
    /// Mean `−ln π(yes|I[x,y⁺]) − ln π(no|I[x,y⁻])`.
    Verdict,
}

#[derive(Debug, Clone)]
struct SeqStep {
    token: TokenId,
    h: Vec<f64>,
    ref_logit: f64,
    ref_lse: f64,
    /// normalizer cancels against the other response at the same prefix
    shared: bool,
}

#[derive(Debug, Clone)]
enum Prepared {
    Linear { h_plus: Vec<f64>, h_minus: Vec<f64> },
    Sequence { plus: Vec<SeqStep>, minus: Vec<SeqStep> },
    Verdict { h_plus: Vec<f64>, h_minus: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Objective {
    beta: f64,
    yes: TokenId,
    no: TokenId,
    examples: Vec<Prepared>,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loss: f64,
    pub grad: Option<Params>,
    /// wins + ½·ties over the examples
    pub accuracy: f64,
}

impl Objective {
    pub fn new(scorer: &RewardScorer, dataset: &PreferenceDataset, loss: Loss) -> Result<Self> {
        dataset.require_non_empty()?;
        dataset.validate(scorer.vocab_size())?;
        let reps = scorer.reps();
        let mut examples = Vec::with_capacity(dataset.len());
        let (mut beta, mut yes, mut no) = (1.0, 0, 0);
        match (scorer, loss) {
            (RewardScorer::Ex { .. }, Loss::BradleyTerry) => {
                for ex in &dataset.examples {
                    examples.push(Prepared::Linear {
                        h_plus: reps.representation(&ex.prompt.concat(&ex.chosen))?,
                        h_minus: reps.representation(&ex.prompt.concat(&ex.rejected))?,
                    });
                }
            }
            (RewardScorer::ExAllRepr { .. }, Loss::BradleyTerry) => {
                for ex in &dataset.examples {
                    examples.push(Prepared::Linear {
                        h_plus: mean_response_representation(reps, &ex.prompt, &ex.chosen)?,
                        h_minus: mean_response_representation(reps, &ex.prompt, &ex.rejected)?,
                    });
                }
            }
            (RewardScorer::Im { reference, beta: b, .. }, Loss::BradleyTerry) => {
                beta = *b;
                for ex in &dataset.examples {
                    examples.push(prepare_sequence(ex, |h, t| {
                        let z0 = reference.logits_for(h);
                        (z0[t as usize], log_sum_exp(&z0))
                    }, scorer)?);
                }
            }
            (RewardScorer::ImNoRef { .. }, Loss::BradleyTerry) => {
                for ex in &dataset.examples {
                    examples.push(prepare_sequence(ex, |_, _| (0.0, 0.0), scorer)?);
                }
            }
            (RewardScorer::ExGrm { template, .. }, Loss::Verdict) => {
                yes = template.yes();
                no = template.no();
                for ex in &dataset.examples {
                    examples.push(Prepared::Verdict {
                        h_plus: reps.representation(&template.build_input(&ex.prompt, &ex.chosen))?,
                        h_minus: reps
                            .representation(&template.build_input(&ex.prompt, &ex.rejected))?,
                    });
                }
            }
            (s, l) => {
                return Err(LabError::Contract(format!(
                    "{l:?} loss is not available for the {} scorer",
                    s.kind()
                )))
            }
        }
        Ok(Objective {
            beta,
            yes,
            no,
            examples,
        })
    }

    pub fn for_scorer(scorer: &RewardScorer, dataset: &PreferenceDataset) -> Result<Self> {
        let loss = if scorer.kind() == ScorerKind::ExGrm {
            Loss::Verdict
        } else {
            Loss::BradleyTerry
        };
        Self::new(scorer, dataset, loss)
    }

    pub fn evaluate(&self, params: &Params, with_grad: bool) -> Result<Evaluation> {
        let n = self.examples.len() as f64;
        let mut grad = if with_grad { Some(params.zeros_like()) } else { None };
        let mut loss = CompensatedSum::new();
        let mut correct = 0.0;
        for ex in &self.examples {
            match (ex, params) {
                (Prepared::Linear { h_plus, h_minus }, Params::Head(u)) => {
                    let d = dot(u, h_plus) - dot(u, h_minus);
                    loss.add(neg_log_sigmoid(d));
                    correct += win(d);
                    if let Some(Params::Head(gv)) = grad.as_mut() {
                        let g = sigmoid(-d);
                        axpy(gv, -g / n, h_plus);
                        axpy(gv, g / n, h_minus);
                    }
                }
                (Prepared::Sequence { plus, minus }, Params::Unembedding(u)) => {
                    let fp = forward_steps(u, plus, with_grad)?;
                    let fm = forward_steps(u, minus, with_grad)?;
                    let mut logit_part = CompensatedSum::new();
                    let mut norm_part = CompensatedSum::new();
                    for (s, f) in plus.iter().zip(&fp) {
                        logit_part.add(f.logit - s.ref_logit);
                    }
                    for (s, f) in minus.iter().zip(&fm) {
                        logit_part.add(-(f.logit - s.ref_logit));
                    }
                    for (s, f) in plus.iter().zip(&fp) {
                        if !s.shared {
                            norm_part.add(f.lse - s.ref_lse);
                        }
                    }
                    for (s, f) in minus.iter().zip(&fm) {
                        if !s.shared {
                            norm_part.add(-(f.lse - s.ref_lse));
                        }
                    }
                    let d = self.beta * (logit_part.value() - norm_part.value());
                    loss.add(neg_log_sigmoid(d));
                    correct += win(d);
                    if let Some(Params::Unembedding(gm)) = grad.as_mut() {
                        let c = -sigmoid(-d) * self.beta / n;
                        accumulate_log_prob_grad(gm, plus, &fp, c);
                        accumulate_log_prob_grad(gm, minus, &fm, -c);
                    }
                }
                (Prepared::Verdict { h_plus, h_minus }, Params::Unembedding(u)) => {
                    let zp = u.mul_vec(h_plus);
                    let zm = u.mul_vec(h_minus);
                    check_finite(&zp)?;
                    check_finite(&zm)?;
                    let lp = log_sum_exp(&zp);
                    let lm = log_sum_exp(&zm);
                    loss.add(-(zp[self.yes as usize] - lp) - (zm[self.no as usize] - lm));
                    let pp = softmax(&zp);
                    let pm = softmax(&zm);
                    correct += win(pp[self.yes as usize] - pm[self.yes as usize]);
                    if let Some(Params::Unembedding(gm)) = grad.as_mut() {
                        // −(e_yes − p⁺) h⁺ᵀ − (e_no − p⁻) h⁻ᵀ
                        for (v, &p) in pp.iter().enumerate() {
                            let e = if v == self.yes as usize { 1.0 } else { 0.0 };
                            gm.add_to_row(v, -(e - p) / n, h_plus);
                        }
                        for (v, &p) in pm.iter().enumerate() {
                            let e = if v == self.no as usize { 1.0 } else { 0.0 };
                            gm.add_to_row(v, -(e - p) / n, h_minus);
                        }
                    }
                }
                _ => return Err(LabError::Contract("parameter kind does not match objective".into())),
            }
        }
        let loss = loss.value() / n;
        if !loss.is_finite() {
            return Err(LabError::Numeric("loss is not finite".into()));
        }
        Ok(Evaluation {
            loss,
            grad,
            accuracy: correct / n,
        })
    }
}

fn win(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d == 0.0 {
        0.5
    } else {
        0.0
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Numeric("non-finite logits".into()))
    }
}

fn prepare_sequence(
    ex: &PreferenceExample,
    reference: impl Fn(&[f64], TokenId) -> (f64, f64),
    scorer: &RewardScorer,
) -> Result<Prepared> {
    let reps = scorer.reps();
    let lcp = ex
        .chosen
        .tokens()
        .iter()
        .zip(ex.rejected.tokens())
        .take_while(|(a, b)| a == b)
        .count();
    let build = |resp: &crate::seqmodel::TokenSeq, other_len: usize| -> Result<Vec<SeqStep>> {
        let mut prefix = ex.prompt.clone();
        let mut steps = Vec::with_capacity(resp.len());
        for (k, &t) in resp.tokens().iter().enumerate() {
            let h = reps.representation(&prefix)?;
            let (ref_logit, ref_lse) = reference(&h, t);
            steps.push(SeqStep {
                token: t,
                h,
                ref_logit,
                ref_lse,
                shared: k <= lcp && k < other_len,
            });
            prefix.push(t);
        }
        Ok(steps)
    };
    Ok(Prepared::Sequence {
        plus: build(&ex.chosen, ex.rejected.len())?,
        minus: build(&ex.rejected, ex.chosen.len())?,
    })
}

struct StepForward {
    logit: f64,
    lse: f64,
    probs: Option<Vec<f64>>,
}

fn forward_steps(u: &Matrix, steps: &[SeqStep], with_probs: bool) -> Result<Vec<StepForward>> {
    steps
        .iter()
        .map(|s| {
            let z = u.mul_vec(&s.h);
            check_finite(&z)?;
            Ok(StepForward {
                logit: z[s.token as usize],
                lse: log_sum_exp(&z),
                probs: with_probs.then(|| softmax(&z)),
            })
        })
        .collect()
}

/// `grad += c · Σ_k (e_{y_k} − π(·|prefix_k)) h_kᵀ`
fn accumulate_log_prob_grad(grad: &mut Matrix, steps: &[SeqStep], fwd: &[StepForward], c: f64) {
    for (s, f) in steps.iter().zip(fwd) {
        let p = f.probs.as_ref().expect("probabilities requested");
        for (v, &pv) in p.iter().enumerate() {
            let e = if v == s.token as usize { 1.0 } else { 0.0 };
            grad.add_to_row(v, c * (e - pv), &s.h);
        }
    }
}
