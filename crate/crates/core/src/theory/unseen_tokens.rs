//! Train an explicit and an implicit reward side by side on single-token
//! responses from one half of the vocabulary, then evaluate both on
//! responses from the other half.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{PreferenceDataset, PreferenceExample};
use crate::error::{LabError, Result};
use crate::linalg::{cosine, dot, norm};
use crate::metrics::accuracy;
use crate::rewards::{LinearHead, Params, RewardScorer, ScorerKind};
use crate::seqmodel::{sub_seed, PolicyState, RepresentationProvider, TokenId, TokenSeq};
use crate::training::{
    check_realizability, gd_train_observed, max_margin_separator, smoothness_and_lr_bound,
    Realizability, RealizabilityMode, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPrompts {
    /// prompts not used in training
    Fresh,
    /// prompts reused from the training set
    Seen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnseenTokenConfig {
    pub vocab_size: usize,
    /// responses in training use tokens `0..train_tokens`; evaluation uses the rest
    pub train_tokens: usize,
    pub dim: usize,
    pub train_count: usize,
    pub eval_count: usize,
    pub prompt_len: usize,
    pub beta: f64,
    pub steps: usize,
    pub record_every: usize,
    /// learning rate as a fraction of the convergence bound
    pub lr_fraction: f64,
    pub init_scale: f64,
    pub eval_prompts: EvalPrompts,
    pub seed: u64,
}

impl Default for UnseenTokenConfig {
    fn default() -> Self {
        UnseenTokenConfig {
            vocab_size: 40,
            train_tokens: 20,
            dim: 16,
            train_count: 30,
            eval_count: 20,
            prompt_len: 3,
            beta: 1.0,
            steps: 5000,
            record_every: 50,
            lr_fraction: 0.9,
            init_scale: 0.1,
            eval_prompts: EvalPrompts::Fresh,
            seed: 0,
        }
    }
}

impl UnseenTokenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_tokens < 2 || self.vocab_size < self.train_tokens + 2 {
            return Err(LabError::config(
                "train_tokens",
                "need at least two seen and two unseen tokens",
            ));
        }
        if self.dim == 0 {
            return Err(LabError::config("dim", "must be positive"));
        }
        if self.train_count == 0 || self.eval_count == 0 {
            return Err(LabError::config("train_count", "both splits must be non-empty"));
        }
        if self.prompt_len == 0 {
            return Err(LabError::config("prompt_len", "must be positive"));
        }
        if !(self.lr_fraction > 0.0 && self.lr_fraction < 1.0) {
            return Err(LabError::config("lr_fraction", "must lie strictly between 0 and 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LabError::config("beta", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(LabError::config("record_every", "must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(LabError::config("init_scale", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenTokenRecord {
    pub step: usize,
    pub ex_train_loss: f64,
    pub ex_train_accuracy: f64,
    pub ex_eval_accuracy: f64,
    pub im_train_loss: f64,
    pub im_train_accuracy: f64,
    pub im_eval_accuracy: f64,
    /// largest |IM reward difference| over the evaluation pairs
    pub im_eval_max_abs_difference: f64,
    pub unseen_rows_identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenTokenReport {
    pub config: UnseenTokenConfig,
    pub learning_rate: f64,
    pub lr_bound: f64,
    pub max_norm: f64,
    pub ex_realizability: Realizability,
    pub im_realizability: Realizability,
    /// eval accuracy of the max-margin head, the guaranteed floor for the trained head
    pub max_margin_eval_accuracy: f64,
    pub records: Vec<UnseenTokenRecord>,
    /// IM reward differences on the evaluation pairs after the last step
    pub im_eval_differences: Vec<f64>,
    pub final_head_cosine_to_max_margin: f64,
    /// first recorded step at which the EX eval accuracy reached the floor
    pub first_step_at_floor: Option<usize>,
    pub unseen_rows_identical_throughout: bool,
}

struct Instance {
    reps: Arc<RepresentationProvider>,
    train: PreferenceDataset,
    eval: PreferenceDataset,
}

fn build_instance(config: &UnseenTokenConfig) -> Result<Instance> {
    let reps = Arc::new(RepresentationProvider::seeded(
        config.vocab_size,
        config.dim,
        sub_seed(config.seed, &[1]),
    )?);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, &[2]));
    let teacher: Vec<f64> = (0..config.dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut used = HashSet::new();
    let mut fresh_prompt = |rng: &mut ChaCha8Rng| loop {
        let p: Vec<TokenId> = (0..config.prompt_len)
            .map(|_| rng.random_range(0..config.vocab_size) as TokenId)
            .collect();
        if used.insert(p.clone()) {
            return TokenSeq::new(p);
        }
    };
    let labelled = |rng: &mut ChaCha8Rng, prompt: TokenSeq, lo: usize, hi: usize| -> Result<PreferenceExample> {
        let a = rng.random_range(lo..hi) as TokenId;
        let b = loop {
            let b = rng.random_range(lo..hi) as TokenId;
            if b != a {
                break b;
            }
        };
        let (ya, yb) = (TokenSeq::single(a), TokenSeq::single(b));
        let sa = dot(&teacher, &reps.representation(&prompt.concat(&ya))?);
        let sb = dot(&teacher, &reps.representation(&prompt.concat(&yb))?);
        if sa >= sb {
            PreferenceExample::new(prompt, ya, yb)
        } else {
            PreferenceExample::new(prompt, yb, ya)
        }
    };
    let mut train = Vec::with_capacity(config.train_count);
    for _ in 0..config.train_count {
        let p = fresh_prompt(&mut rng);
        train.push(labelled(&mut rng, p, 0, config.train_tokens)?);
    }
    let mut eval = Vec::with_capacity(config.eval_count);
    for i in 0..config.eval_count {
        let p = match config.eval_prompts {
            EvalPrompts::Fresh => fresh_prompt(&mut rng),
            EvalPrompts::Seen => train[i % train.len()].prompt.clone(),
        };
        eval.push(labelled(&mut rng, p, config.train_tokens, config.vocab_size)?);
    }
    Ok(Instance {
        reps,
        train: PreferenceDataset::new("unseen_train", train).with_seed(config.seed),
        eval: PreferenceDataset::new("unseen_eval", eval).with_seed(config.seed),
    })
}

pub fn run_unseen_token_experiment(config: &UnseenTokenConfig) -> Result<UnseenTokenReport> {
    config.validate()?;
    let inst = build_instance(config)?;
    let ex_real = check_realizability(&inst.train, &inst.reps, RealizabilityMode::Ex)?;
    let im_real = check_realizability(&inst.train, &inst.reps, RealizabilityMode::Im)?;
    if !ex_real.is_separable() || !im_real.is_separable() {
        return Err(LabError::Task(format!(
            "training set is not verified realizable (ex: {ex_real:?}, im: {im_real:?})"
        )));
    }
    let bound = smoothness_and_lr_bound(&inst.train, &inst.reps, config.beta)?;
    let lr = config.lr_fraction * bound.bound;

    let u_star = max_margin_separator(&inst.train, &inst.reps)?.separator;
    let star_scorer = RewardScorer::ex(LinearHead::new(u_star.clone())?, inst.reps.clone())?;
    let floor = accuracy(&star_scorer, &inst.eval)?;

    let train_cfg = |variant| TrainConfig {
        learning_rate: lr,
        steps: config.steps,
        beta: config.beta,
        record_every: config.record_every,
        variant,
        strict_lr: true,
        snapshot_params: false,
    };

    let mut ex_eval = Vec::new();
    let ex = gd_train_observed(
        &train_cfg(ScorerKind::Ex),
        &inst.train,
        RewardScorer::ex(LinearHead::zeros(config.dim), inst.reps.clone())?,
        |_, s| {
            ex_eval.push(accuracy(s, &inst.eval)?);
            Ok(())
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, &[4]));
    let init = PolicyState::random(inst.reps.clone(), config.init_scale, &mut rng);
    let unseen_rows: Vec<Vec<u64>> = (config.train_tokens..config.vocab_size)
        .map(|r| init.unembedding().row(r).iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut im_eval = Vec::new();
    let mut last_diffs = Vec::new();
    let im = gd_train_observed(
        &train_cfg(ScorerKind::Im),
        &inst.train,
        RewardScorer::im_from_init(init, config.beta)?,
        |_, s| {
            let Params::Unembedding(u) = s.params() else {
                unreachable!("IM parameters are an unembedding")
            };
            let identical = (config.train_tokens..config.vocab_size).zip(&unseen_rows).all(|(r, bits)| {
                u.row(r).iter().map(|v| v.to_bits()).eq(bits.iter().copied())
            });
            let diffs: Vec<f64> = inst
                .eval
                .examples
                .iter()
                .map(|e| s.reward_difference(&e.prompt, &e.chosen, &e.rejected))
                .collect::<Result<_>>()?;
            let max_abs = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            im_eval.push((accuracy(s, &inst.eval)?, max_abs, identical));
            last_diffs = diffs;
            Ok(())
        },
    )?;

    let records: Vec<UnseenTokenRecord> = ex
        .trajectory
        .records
        .iter()
        .zip(&im.trajectory.records)
        .zip(ex_eval.iter().zip(&im_eval))
        .map(|((er, ir), (&ea, &(ia, max_abs, identical)))| UnseenTokenRecord {
            step: er.step,
            ex_train_loss: er.loss,
            ex_train_accuracy: er.train_accuracy,
            ex_eval_accuracy: ea,
            im_train_loss: ir.loss,
            im_train_accuracy: ir.train_accuracy,
            im_eval_accuracy: ia,
            im_eval_max_abs_difference: max_abs,
            unseen_rows_identical: identical,
        })
        .collect();
    let Params::Head(u_final) = &ex.trajectory.final_params else {
        unreachable!("EX parameters are a head")
    };
    let cos = if norm(u_final) > 0.0 { cosine(u_final, &u_star) } else { 0.0 };
    Ok(UnseenTokenReport {
        config: config.clone(),
        learning_rate: lr,
        lr_bound: bound.bound,
        max_norm: bound.max_norm,
        ex_realizability: ex_real,
        im_realizability: im_real,
        max_margin_eval_accuracy: floor,
        first_step_at_floor: records.iter().find(|r| r.ex_eval_accuracy >= floor).map(|r| r.step),
        unseen_rows_identical_throughout: records.iter().all(|r| r.unseen_rows_identical),
        records,
        im_eval_differences: last_diffs,
        final_head_cosine_to_max_margin: cos,
    })
}
