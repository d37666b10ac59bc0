//! Reward parameterizations behind one scoring interface.
//!
//! * `Ex`: linear head on the representation of the full prompt-response pair.
//! * `ExAllRepr`: linear head on the mean representation over all response prefixes.
//! * `Im`: `β (ln π(y|x) − ln π_ref(y|x))`.
//! * `ImNoRef`: `ln π(y|x)`.
//! * `ExGrm`: probability of the "yes" token after a verification-formatted input.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{dot, log_sum_exp, CompensatedSum, Matrix};
use crate::seqmodel::{PolicyState, RepresentationProvider, TokenId, TokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
}

impl LinearHead {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LabError::Numeric("linear head has non-finite weights".into()));
        }
        Ok(LinearHead { weights })
    }

    pub fn zeros(dim: usize) -> Self {
        LinearHead {
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

pub type GrmInputHook = Arc<dyn Fn(&TokenSeq, &TokenSeq) -> TokenSeq + Send + Sync>;

#[derive(Clone)]
pub enum GrmInput {
    /// `prompt ∥ [sep] ∥ response ∥ [sep]`
    Separated { separator: TokenId },
    Custom(GrmInputHook),
}

impl fmt::Debug for GrmInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrmInput::Separated { separator } => write!(f, "Separated({separator})"),
            GrmInput::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

/// Verification wrapper `I[x, y]` plus the verdict tokens.
#[derive(Debug, Clone)]
pub struct GrmTemplate {
    input: GrmInput,
    yes: TokenId,
    no: TokenId,
}

impl GrmTemplate {
    pub fn new(input: GrmInput, yes: TokenId, no: TokenId) -> Result<Self> {
        if yes == no {
            return Err(LabError::Input("yes and no tokens must differ".into()));
        }
        Ok(GrmTemplate { input, yes, no })
    }

    pub fn separated(separator: TokenId, yes: TokenId, no: TokenId) -> Result<Self> {
        Self::new(GrmInput::Separated { separator }, yes, no)
    }

    pub fn yes(&self) -> TokenId {
        self.yes
    }

    pub fn no(&self) -> TokenId {
        self.no
    }

    pub fn input(&self) -> &GrmInput {
        &self.input
    }

    pub fn build_input(&self, prompt: &TokenSeq, response: &TokenSeq) -> TokenSeq {
        match &self.input {
            GrmInput::Separated { separator } => {
                let mut v = Vec::with_capacity(prompt.len() + response.len() + 2);
                v.extend_from_slice(prompt.tokens());
                v.push(*separator);
                v.extend_from_slice(response.tokens());
                v.push(*separator);
                TokenSeq::new(v)
            }
            GrmInput::Custom(f) => f(prompt, response),
        }
    }

    /// Checks that distinct `(prompt, response)` pairs map to distinct inputs.
    pub fn check_injective<'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a TokenSeq, &'a TokenSeq)>,
    ) -> Result<()> {
        let mut seen: HashMap<TokenSeq, (&TokenSeq, &TokenSeq)> = HashMap::new();
        for (x, y) in pairs {
            let input = self.build_input(x, y);
            if let Some(&(px, py)) = seen.get(&input) {
                if px != x || py != y {
                    return Err(LabError::Input(format!(
                        "template maps two different pairs to {:?}",
                        input.tokens()
                    )));
                }
            } else {
                seen.insert(input, (x, y));
            }
        }
        Ok(())
    }
}

/// Discriminant of [`RewardScorer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Ex,
    ExAllRepr,
    Im,
    ImNoRef,
    ExGrm,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScorerKind::Ex => "ex",
            ScorerKind::ExAllRepr => "ex_all_repr",
            ScorerKind::Im => "im",
            ScorerKind::ImNoRef => "im_no_ref",
            ScorerKind::ExGrm => "ex_grm",
        };
        f.write_str(s)
    }
}

/// Trainable parameters of a scorer under fixed representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Params {
    Head(Vec<f64>),
    Unembedding(Matrix),
}

impl Params {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Params::Head(v) => v,
            Params::Unembedding(m) => m.as_slice(),
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            Params::Head(v) => v,
            Params::Unembedding(m) => m.as_mut_slice(),
        }
    }

    pub fn zeros_like(&self) -> Params {
        match self {
            Params::Head(v) => Params::Head(vec![0.0; v.len()]),
            Params::Unembedding(m) => Params::Unembedding(Matrix::zeros(m.rows(), m.cols())),
        }
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(self.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        crate::linalg::axpy(self.as_mut_slice(), alpha, other.as_slice());
    }
}

/// Anything that assigns a real reward to a prompt-response pair.
pub trait RewardFn {
    fn reward(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64>;

    fn reward_difference(&self, prompt: &TokenSeq, a: &TokenSeq, b: &TokenSeq) -> Result<f64> {
        Ok(self.reward(prompt, a)? - self.reward(prompt, b)?)
    }
}

/// Adapts a closure into a [`RewardFn`].
pub struct FnReward<F>(pub F);

impl<F: Fn(&TokenSeq, &TokenSeq) -> f64> RewardFn for FnReward<F> {
    fn reward(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        Ok((self.0)(prompt, response))
    }
}

/// Applies a scalar map to another reward's outputs.
pub struct MappedReward<'a, R: ?Sized, F> {
    pub inner: &'a R,
    pub map: F,
}

impl<R: RewardFn + ?Sized, F: Fn(f64) -> f64> RewardFn for MappedReward<'_, R, F> {
    fn reward(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        Ok((self.map)(self.inner.reward(prompt, response)?))
    }
}

#[derive(Debug, Clone)]
pub enum RewardScorer {
    Ex {
        head: LinearHead,
        reps: Arc<RepresentationProvider>,
    },
    ExAllRepr {
        head: LinearHead,
        reps: Arc<RepresentationProvider>,
    },
    Im {
        policy: PolicyState,
        reference: PolicyState,
        beta: f64,
    },
    ImNoRef {
        policy: PolicyState,
    },
    ExGrm {
        policy: PolicyState,
        template: GrmTemplate,
    },
}

impl RewardScorer {
    pub fn ex(head: LinearHead, reps: Arc<RepresentationProvider>) -> Result<Self> {
        check_head(&head, &reps)?;
        Ok(RewardScorer::Ex { head, reps })
    }

    pub fn ex_all_repr(head: LinearHead, reps: Arc<RepresentationProvider>) -> Result<Self> {
        check_head(&head, &reps)?;
        Ok(RewardScorer::ExAllRepr { head, reps })
    }

    pub fn im(policy: PolicyState, reference: PolicyState, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(LabError::Input(format!("beta must be positive, got {beta}")));
        }
        if !policy.reps().same_as(reference.reps()) {
            return Err(LabError::Input(
                "policy and reference must share one representation provider".into(),
            ));
        }
        Ok(RewardScorer::Im {
            policy,
            reference,
            beta,
        })
    }

    /// IM scorer whose reference is a frozen copy of the given policy.
    pub fn im_from_init(policy: PolicyState, beta: f64) -> Result<Self> {
        let reference = policy.clone();
        Self::im(policy, reference, beta)
    }

    pub fn im_no_ref(policy: PolicyState) -> Self {
        RewardScorer::ImNoRef { policy }
    }

    pub fn ex_grm(policy: PolicyState, template: GrmTemplate) -> Result<Self> {
        let v = policy.vocab_size();
        if template.yes() as usize >= v || template.no() as usize >= v {
            return Err(LabError::Input("verdict token outside vocabulary".into()));
        }
        Ok(RewardScorer::ExGrm { policy, template })
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            RewardScorer::Ex { .. } => ScorerKind::Ex,
            RewardScorer::ExAllRepr { .. } => ScorerKind::ExAllRepr,
            RewardScorer::Im { .. } => ScorerKind::Im,
            RewardScorer::ImNoRef { .. } => ScorerKind::ImNoRef,
            RewardScorer::ExGrm { .. } => ScorerKind::ExGrm,
        }
    }

    pub fn reps(&self) -> &Arc<RepresentationProvider> {
        match self {
            RewardScorer::Ex { reps, .. } | RewardScorer::ExAllRepr { reps, .. } => reps,
            RewardScorer::Im { policy, .. }
            | RewardScorer::ImNoRef { policy }
            | RewardScorer::ExGrm { policy, .. } => policy.reps(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.reps().vocab_size()
    }

    /// β for IM, 1 for the reference-free variant, `None` otherwise.
    pub fn beta(&self) -> Option<f64> {
        match self {
            RewardScorer::Im { beta, .. } => Some(*beta),
            RewardScorer::ImNoRef { .. } => Some(1.0),
            _ => None,
        }
    }

    pub fn params(&self) -> Params {
        match self {
            RewardScorer::Ex { head, .. } | RewardScorer::ExAllRepr { head, .. } => {
                Params::Head(head.weights.clone())
            }
            RewardScorer::Im { policy, .. }
            | RewardScorer::ImNoRef { policy }
            | RewardScorer::ExGrm { policy, .. } => {
                Params::Unembedding(policy.unembedding().clone())
            }
        }
    }

    pub fn set_params(&mut self, params: Params) -> Result<()> {
        if !params.is_finite() {
            return Err(LabError::Numeric("parameters became non-finite".into()));
        }
        match (self, params) {
            (
                RewardScorer::Ex { head, .. } | RewardScorer::ExAllRepr { head, .. },
                Params::Head(w),
            ) => {
                if w.len() != head.dim() {
                    return Err(LabError::Input("head dimension mismatch".into()));
                }
                head.weights = w;
                Ok(())
            }
            (
                RewardScorer::Im { policy, .. }
                | RewardScorer::ImNoRef { policy }
                | RewardScorer::ExGrm { policy, .. },
                Params::Unembedding(u),
            ) => {
                *policy = policy.with_unembedding(u)?;
                Ok(())
            }
            _ => Err(LabError::Contract("parameter kind does not match scorer".into())),
        }
    }

    /// In-place `θ ← θ + alpha · direction`.
    pub(crate) fn step(&mut self, alpha: f64, direction: &Params) -> Result<()> {
        match (self, direction) {
            (
                RewardScorer::Ex { head, .. } | RewardScorer::ExAllRepr { head, .. },
                Params::Head(d),
            ) => crate::linalg::axpy(&mut head.weights, alpha, d),
            (
                RewardScorer::Im { policy, .. }
                | RewardScorer::ImNoRef { policy }
                | RewardScorer::ExGrm { policy, .. },
                Params::Unembedding(d),
            ) => policy.unembedding_mut().axpy(alpha, d),
            _ => return Err(LabError::Contract("parameter kind does not match scorer".into())),
        }
        Ok(())
    }

    pub fn score(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        if response.is_empty() {
            return Err(LabError::Input("response must be non-empty".into()));
        }
        prompt.validate(self.vocab_size())?;
        response.validate(self.vocab_size())?;
        match self {
            RewardScorer::Ex { head, reps } => {
                let h = reps.representation(&prompt.concat(response))?;
                Ok(dot(&head.weights, &h))
            }
            RewardScorer::ExAllRepr { head, reps } => {
                let h = mean_response_representation(reps, prompt, response)?;
                Ok(dot(&head.weights, &h))
            }
            RewardScorer::Im {
                policy,
                reference,
                beta,
            } => {
                let terms = im_token_terms(policy, reference, prompt, response)?;
                let mut s = CompensatedSum::new();
                for t in &terms {
                    s.add(t.logit_shift);
                    s.add(-t.normalizer_shift);
                }
                Ok(beta * s.value())
            }
            RewardScorer::ImNoRef { policy } => policy.sequence_log_prob(prompt, response),
            RewardScorer::ExGrm { policy, template } => {
                let input = template.build_input(prompt, response);
                let p = policy.next_token_distribution(&input)?;
                Ok(p[template.yes() as usize])
            }
        }
    }

    /// `score(a) − score(b)`. For IM scorers the per-prefix normalizers of
    /// prefixes shared by `a` and `b` are cancelled before summation, so two
    /// responses whose unembedding rows still equal the reference rows yield
    /// exactly zero.
    pub fn reward_difference(
        &self,
        prompt: &TokenSeq,
        a: &TokenSeq,
        b: &TokenSeq,
    ) -> Result<f64> {
        match self {
            RewardScorer::Im {
                policy,
                reference,
                beta,
            } => {
                if a.is_empty() || b.is_empty() {
                    return Err(LabError::Input("response must be non-empty".into()));
                }
                prompt.validate(self.vocab_size())?;
                a.validate(self.vocab_size())?;
                b.validate(self.vocab_size())?;
                if a == b {
                    return Ok(0.0);
                }
                let lcp = a
                    .tokens()
                    .iter()
                    .zip(b.tokens())
                    .take_while(|(x, y)| x == y)
                    .count();
                let ta = im_token_terms(policy, reference, prompt, a)?;
                let tb = im_token_terms(policy, reference, prompt, b)?;
                let mut logit_part = CompensatedSum::new();
                let mut norm_part = CompensatedSum::new();
                for (k, t) in ta.iter().enumerate() {
                    logit_part.add(t.logit_shift);
                    // prefixes x∥y_<k with k <= lcp are shared by both responses
                    if k > lcp || k >= tb.len() {
                        norm_part.add(t.normalizer_shift);
                    }
                }
                for (k, t) in tb.iter().enumerate() {
                    logit_part.add(-t.logit_shift);
                    if k > lcp || k >= ta.len() {
                        norm_part.add(-t.normalizer_shift);
                    }
                }
                Ok(beta * (logit_part.value() - norm_part.value()))
            }
            _ => Ok(self.score(prompt, a)? - self.score(prompt, b)?),
        }
    }
}

impl RewardFn for RewardScorer {
    fn reward(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        self.score(prompt, response)
    }

    fn reward_difference(&self, prompt: &TokenSeq, a: &TokenSeq, b: &TokenSeq) -> Result<f64> {
        RewardScorer::reward_difference(self, prompt, a, b)
    }
}

fn check_head(head: &LinearHead, reps: &RepresentationProvider) -> Result<()> {
    if head.dim() != reps.dim() {
        return Err(LabError::Input(format!(
            "head has dimension {}, representations have {}",
            head.dim(),
            reps.dim()
        )));
    }
    Ok(())
}

/// Mean of `h_{x, y≤k}` over `k = 1..=|y|`.
pub fn mean_response_representation(
    reps: &RepresentationProvider,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; reps.dim()];
    for k in 1..=response.len() {
        let h = reps.representation(&prompt.concat_prefix(response, k))?;
        crate::linalg::axpy(&mut acc, 1.0, &h);
    }
    let n = response.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

struct ImTerm {
    /// `⟨U_{y_k} − U⁰_{y_k}, h_k⟩`
    logit_shift: f64,
    /// `lse(U h_k) − lse(U⁰ h_k)`
    normalizer_shift: f64,
}

fn im_token_terms(
    policy: &PolicyState,
    reference: &PolicyState,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<Vec<ImTerm>> {
    let mut prefix = prompt.clone();
    let mut out = Vec::with_capacity(response.len());
    for &t in response.tokens() {
        let h = policy.reps().representation(&prefix)?;
        let z = policy.logits_for(&h);
        let z0 = reference.logits_for(&h);
        if z.iter().chain(&z0).any(|v| !v.is_finite()) {
            return Err(LabError::Numeric("non-finite logits".into()));
        }
        let row = t as usize;
        out.push(ImTerm {
            logit_shift: z[row] - z0[row],
            normalizer_shift: log_sum_exp(&z) - log_sum_exp(&z0),
        });
        prefix.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(v: usize, d: usize, seed: u64) -> Arc<RepresentationProvider> {
        Arc::new(RepresentationProvider::seeded(v, d, seed).unwrap())
    }

    fn t(v: &[u32]) -> TokenSeq {
        TokenSeq::new(v.to_vec())
    }

    #[test]
    fn ex_zero_head_and_hand_value() {
        let reps = seeded(5, 3, 1);
        let s = RewardScorer::ex(LinearHead::zeros(3), reps).unwrap();
        assert_eq!(s.score(&t(&[1]), &t(&[2, 3])).unwrap(), 0.0);

        let mut table = HashMap::new();
        table.insert(t(&[0, 1]), vec![3.0, -1.0]);
        let reps = Arc::new(RepresentationProvider::table(2, 2, table).unwrap());
        let s = RewardScorer::ex(LinearHead::new(vec![1.0, 2.0]).unwrap(), reps).unwrap();
        assert_eq!(s.score(&t(&[0]), &t(&[1])).unwrap(), 1.0);
    }

    #[test]
    fn dimension_and_empty_response_errors() {
        let reps = seeded(5, 3, 1);
        assert!(RewardScorer::ex(LinearHead::zeros(2), reps.clone()).is_err());
        let s = RewardScorer::ex(LinearHead::zeros(3), reps).unwrap();
        assert!(matches!(s.score(&t(&[1]), &t(&[])), Err(LabError::Input(_))));
    }

    #[test]
    fn im_identity_and_beta_linearity() {
        let reps = seeded(6, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pol = PolicyState::random(reps.clone(), 1.0, &mut rng);
        let s = RewardScorer::im_from_init(pol.clone(), 0.7).unwrap();
        assert_eq!(s.score(&t(&[1]), &t(&[2, 3, 4])).unwrap(), 0.0);

        let other = PolicyState::random(reps, 1.0, &mut rng);
        let s1 = RewardScorer::im(other.clone(), pol.clone(), 0.5).unwrap();
        let s2 = RewardScorer::im(other, pol, 1.0).unwrap();
        let r1 = s1.score(&t(&[1]), &t(&[2, 3])).unwrap();
        let r2 = s2.score(&t(&[1]), &t(&[2, 3])).unwrap();
        assert_eq!(2.0 * r1, r2);
        assert!(RewardScorer::im(s1.params_policy(), s1.params_policy(), 0.0).is_err());
    }

    impl RewardScorer {
        fn params_policy(&self) -> PolicyState {
            match self {
                RewardScorer::Im { policy, .. } => policy.clone(),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn im_matches_log_prob_route() {
        let reps = seeded(7, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pol = PolicyState::random(reps.clone(), 1.0, &mut rng);
        let refp = PolicyState::random(reps, 1.0, &mut rng);
        let s = RewardScorer::im(pol.clone(), refp.clone(), 0.3).unwrap();
        let (x, y) = (t(&[1, 2]), t(&[3, 0, 6]));
        let direct = 0.3
            * (pol.sequence_log_prob(&x, &y).unwrap() - refp.sequence_log_prob(&x, &y).unwrap());
        assert!((s.score(&x, &y).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn im_shift_invariance() {
        let reps = seeded(5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pol = PolicyState::random(reps.clone(), 1.0, &mut rng);
        let refp = PolicyState::random(reps, 1.0, &mut rng);
        let s = RewardScorer::im(pol.clone(), refp.clone(), 1.0).unwrap();
        let mut u = pol.unembedding().clone();
        let c = [0.4, -1.3, 2.2];
        for i in 0..u.rows() {
            crate::linalg::axpy(u.row_mut(i), 1.0, &c);
        }
        let shifted = RewardScorer::im(pol.with_unembedding(u).unwrap(), refp, 1.0).unwrap();
        let (x, y) = (t(&[0]), t(&[1, 2, 3]));
        assert!((s.score(&x, &y).unwrap() - shifted.score(&x, &y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn differences() {
        let reps = seeded(6, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = LinearHead::new(vec![0.3, -0.2, 1.0, 0.5]).unwrap();
        let ex = RewardScorer::ex(head.clone(), reps.clone()).unwrap();
        let x = t(&[1]);
        assert_eq!(ex.reward_difference(&x, &t(&[2]), &t(&[2])).unwrap(), 0.0);
        let ha = reps.representation(&t(&[1, 2])).unwrap();
        let hb = reps.representation(&t(&[1, 3])).unwrap();
        let expect = dot(&head.weights, &crate::linalg::sub(&ha, &hb));
        assert!((ex.reward_difference(&x, &t(&[2]), &t(&[3])).unwrap() - expect).abs() < 1e-12);

        // IM single-token closed form β⟨ΔU_a − ΔU_b, h_x⟩
        let init = PolicyState::random(reps.clone(), 1.0, &mut rng);
        let moved = PolicyState::random(reps.clone(), 1.0, &mut rng);
        let im = RewardScorer::im(moved.clone(), init.clone(), 0.8).unwrap();
        let hx = reps.representation(&x).unwrap();
        let du = |tok: usize| {
            crate::linalg::sub(moved.unembedding().row(tok), init.unembedding().row(tok))
        };
        let closed = 0.8 * dot(&crate::linalg::sub(&du(2), &du(3)), &hx);
        let got = im.reward_difference(&x, &t(&[2]), &t(&[3])).unwrap();
        assert!((got - closed).abs() < 1e-10);
        let via_scores = im.score(&x, &t(&[2])).unwrap() - im.score(&x, &t(&[3])).unwrap();
        assert!((got - via_scores).abs() < 1e-10);
        assert_eq!(im.reward_difference(&x, &t(&[2, 1]), &t(&[2, 1])).unwrap(), 0.0);
    }

    #[test]
    fn im_unseen_rows_tie_exactly() {
        let reps = seeded(8, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = PolicyState::random(reps.clone(), 0.5, &mut rng);
        let mut u = init.unembedding().clone();
        // perturb rows 0..4 only
        for i in 0..4 {
            for j in 0..6 {
                u.set(i, j, u.get(i, j) + 0.37 * (i + j) as f64);
            }
        }
        let im = RewardScorer::im(init.with_unembedding(u).unwrap(), init, 2.0).unwrap();
        for p in 0..8u32 {
            let x = t(&[p, 7]);
            assert_eq!(im.reward_difference(&x, &t(&[5]), &t(&[6])).unwrap(), 0.0);
            assert_eq!(im.reward_difference(&x, &t(&[6]), &t(&[4])).unwrap(), 0.0);
        }
    }

    #[test]
    fn grm_scores_in_unit_interval() {
        let reps = seeded(6, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pol = PolicyState::random(reps, 3.0, &mut rng);
        let tmpl = GrmTemplate::separated(0, 4, 5).unwrap();
        let s = RewardScorer::ex_grm(pol, tmpl).unwrap();
        for y in 1..4u32 {
            let r = s.score(&t(&[1, 2]), &t(&[y])).unwrap();
            assert!(r > 0.0 && r < 1.0);
        }
        assert!(GrmTemplate::separated(0, 4, 4).is_err());
    }

    #[test]
    fn separated_template_layout_and_injectivity() {
        let tmpl = GrmTemplate::separated(9, 1, 2).unwrap();
        assert_eq!(tmpl.build_input(&t(&[3, 4]), &t(&[5])).tokens(), &[3, 4, 9, 5, 9]);
        let (x1, y1, x2, y2) = (t(&[3]), t(&[9, 4]), t(&[3, 9]), t(&[4]));
        assert!(tmpl.check_injective([(&x1, &y1), (&x2, &y2)]).is_err());
        assert!(tmpl.check_injective([(&x1, &y2), (&x1, &y2)]).is_ok());
    }

    #[test]
    fn all_repr_is_mean_of_prefixes() {
        let reps = seeded(5, 3, 8);
        let head = LinearHead::new(vec![1.0, -1.0, 0.5]).unwrap();
        let s = RewardScorer::ex_all_repr(head.clone(), reps.clone()).unwrap();
        let (x, y) = (t(&[0]), t(&[1, 2]));
        let h1 = reps.representation(&t(&[0, 1])).unwrap();
        let h2 = reps.representation(&t(&[0, 1, 2])).unwrap();
        let expect = 0.5 * (dot(&head.weights, &h1) + dot(&head.weights, &h2));
        assert!((s.score(&x, &y).unwrap() - expect).abs() < 1e-14);
    }
}
